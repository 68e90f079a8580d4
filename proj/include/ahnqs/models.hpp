// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ahnqs/models/checkpoint.hpp"
#include "ahnqs/models/forward.hpp"
#include "ahnqs/models/params.hpp"
