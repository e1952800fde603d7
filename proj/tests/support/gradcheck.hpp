#pragma once

#include "qad/nn/gradcheck.hpp"

namespace qad::testing {
using nn::gradcheck;
using nn::GradCheckResult;
}  // namespace qad::testing
