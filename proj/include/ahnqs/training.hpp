// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ahnqs/training/backward.hpp"
#include "ahnqs/training/gradcheck.hpp"
#include "ahnqs/training/optimizer.hpp"
#include "ahnqs/training/top1.hpp"
#include "ahnqs/training/trainer.hpp"
