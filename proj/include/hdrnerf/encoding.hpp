#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "hdrnerf/error.hpp"

namespace hdrnerf {

struct EncodingConfig {
  int levels_position = 10;
  int levels_direction = 4;
  bool include_input = true;

  void validate() const {
    if (levels_position < 1 || levels_direction < 1) throw InputError("encoding levels must be >= 1");
  }
};

// Values emitted per input scalar.
constexpr std::size_t encoded_width(int levels, bool include_input) {
  return 2 * static_cast<std::size_t>(levels) + (include_input ? 1 : 0);
}

/// Fourier-feature encoding appended to `out`. For each component p the
/// layout is [p,] sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p).
inline void positional_encode_into(std::span<const double> x, int levels, bool include_input, std::vector<double>& out) {
  if (levels < 1) throw InputError("positional encoding needs at least one level");
  for (double p : x) {
    if (!std::isfinite(p)) throw NumericError("positional encoding of non-finite value");
    if (include_input) out.push_back(p);
    double freq = std::numbers::pi;
    for (int l = 0; l < levels; ++l, freq *= 2.0) {
      out.push_back(std::sin(freq * p));
      out.push_back(std::cos(freq * p));
    }
  }
}

inline std::vector<double> positional_encode(std::span<const double> x, int levels, bool include_input) {
  std::vector<double> out;
  out.reserve(x.size() * encoded_width(levels, include_input));
  positional_encode_into(x, levels, include_input, out);
  return out;
}

}  // namespace hdrnerf
