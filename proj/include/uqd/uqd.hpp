// Copyright 2026 The uqd Authors.
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

#include "uqd/backends.hpp"
#include "uqd/collect.hpp"
#include "uqd/commands.hpp"
#include "uqd/config.hpp"
#include "uqd/entropy.hpp"
#include "uqd/equivalence.hpp"
#include "uqd/errors.hpp"
#include "uqd/eval.hpp"
#include "uqd/pipeline.hpp"
#include "uqd/records.hpp"
#include "uqd/sequence_probability.hpp"
#include "uqd/textmetrics.hpp"
