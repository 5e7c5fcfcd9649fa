// Copyright 2026 The ntpd-cascade Authors
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

#include "ntpd/conditioner.hpp"
#include "ntpd/coupling.hpp"
#include "ntpd/ensemble.hpp"
#include "ntpd/errors.hpp"
#include "ntpd/fock.hpp"
#include "ntpd/integrator.hpp"
#include "ntpd/master.hpp"
#include "ntpd/model.hpp"
#include "ntpd/pipeline.hpp"
#include "ntpd/rng.hpp"
#include "ntpd/scenario.hpp"
#include "ntpd/snapshot.hpp"
#include "ntpd/temporal_modes.hpp"
#include "ntpd/trajectory.hpp"
#include "ntpd/verify.hpp"
#include "ntpd/witness.hpp"
