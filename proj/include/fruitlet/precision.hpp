#pragma once

// The learning stack is compiled once with float32 scalars for training and
// inference, and once with float64 for finite-difference gradient checks. The
// inline namespace keeps the two builds' symbols apart.
#if defined(FRUITLET_AD_DOUBLE)
#define FRUITLET_PRECISION_BEGIN inline namespace f64 {
#else
#define FRUITLET_PRECISION_BEGIN inline namespace f32 {
#endif
#define FRUITLET_PRECISION_END }

namespace fruitlet {
FRUITLET_PRECISION_BEGIN
namespace ad {
#if defined(FRUITLET_AD_DOUBLE)
using Real = double;
#else
using Real = float;
#endif
}  // namespace ad
FRUITLET_PRECISION_END
}  // namespace fruitlet
