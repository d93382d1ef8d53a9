// Copyright 2026 The LMTD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "lmtd/core.hpp"
#include "lmtd/dynamics.hpp"
#include "lmtd/domain.hpp"
#include "lmtd/executor.hpp"
#include "lmtd/feedback.hpp"
#include "lmtd/json_io.hpp"
#include "lmtd/lipschitz.hpp"
#include "lmtd/model.hpp"
#include "lmtd/nn_index.hpp"
#include "lmtd/pipeline.hpp"
#include "lmtd/planner.hpp"
#include "lmtd/plot.hpp"
