#pragma once

#include <vector>

#include "tsp/geometry.hpp"

namespace tsp {

// Sinusoidal positional encodings over normalized coordinates.
// pe_scalar interleaves sin/cos: out[2i] = sin(x / 10000^(2i/d)),
// out[2i+1] = cos(x / 10000^(2i/d)). Multi-coordinate encodings concatenate
// equal-length pe_scalar blocks, one per coordinate.
//
// two_pi scales x by 2*pi before the sinusoid (off by default; kept as a
// switch because detection transformers disagree on this).
std::vector<double> pe_scalar(double x, int d, bool two_pi = false);

// [PE(x) : PE(y)], halves of length d_model / 2. d_model % 4 == 0.
std::vector<double> pe_point(double x, double y, int d_model, bool two_pi = false);

// [PE(cx) : PE(cy) : PE(w) : PE(h)], quarters of length d_model / 4.
// Quarters must themselves have even length, so d_model % 8 == 0.
std::vector<double> pe_box(const Box& b, int d_model, bool two_pi = false);

}  // namespace tsp
