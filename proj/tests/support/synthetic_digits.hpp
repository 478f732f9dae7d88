#pragma once

// Deterministic stand-in for a handwritten-digit corpus: 10 fixed blob
// templates on a dark background, drawn with per-sample translation and
// pixel noise. Used by data-dependent tests because no real image corpus
// ships with the repository.

#include <cstdint>

#include "momentflow/data.hpp"

namespace testsupport {

/// n samples of 1x28x28 images over 10 classes, values in [0, 1].
momentflow::Dataset make_synthetic_digits(size_t n, uint64_t seed);

}  // namespace testsupport
