#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "../points.hpp"
#include "../tokenizer.hpp"

namespace diffsr {

/// Encodes every number of a point (x_1..x_D, y) as [sign, mantissa, exponent] ids in a
/// small numeric vocabulary. Slots for absent dimensions are filled with the pad id, and y
/// always occupies the last slot.
class PointTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMinExponent = -100;
  static constexpr int kMaxExponent = 100;

  explicit PointTokenizer(int max_dims = 3, int mantissa_digits = 2) : max_dims_(max_dims), digits_(mantissa_digits) {
    if (max_dims < 1 || mantissa_digits < 1 || mantissa_digits > 4)
      throw std::invalid_argument("PointTokenizer: bad configuration");
    mantissas_ = 1;
    for (int i = 0; i < digits_; ++i) mantissas_ *= 10;
  }

  int max_dims() const noexcept { return max_dims_; }
  int mantissa_digits() const noexcept { return digits_; }
  int tokens_per_point() const noexcept { return 3 * (max_dims_ + 1); }
  int vocab_size() const noexcept { return 3 + mantissas_ + (kMaxExponent - kMinExponent + 1); }

  void encode_number(double v, int* out) const {
    if (!std::isfinite(v)) throw std::invalid_argument("PointTokenizer: non-finite value");
    if (std::fabs(v) < 1e-99) v = 0.0;
    std::array<std::string, 3> parts;
    try {
      parts = encode_constant(v, digits_, kMinExponent, kMaxExponent);
    } catch (const ConstantEncodingError& e) {
      throw std::invalid_argument(std::string("PointTokenizer: ") + e.what());
    }
    out[0] = parts[0] == "+" ? 1 : 2;
    out[1] = 3 + std::stoi(parts[1].substr(1));
    out[2] = 3 + mantissas_ + (std::stoi(parts[2].substr(1)) - kMinExponent);
  }

  /// Appends tokens_per_point() ids per row of `pts`.
  void encode(const PointSet& pts, std::vector<int>& out) const {
    if (static_cast<int>(pts.dims) > max_dims_) throw std::invalid_argument("PointTokenizer: too many input dimensions");
    const int per = tokens_per_point();
    for (std::size_t r = 0; r < pts.size(); ++r) {
      std::size_t base = out.size();
      out.resize(base + static_cast<std::size_t>(per), kPad);
      auto row = pts.row(r);
      for (std::size_t j = 0; j < pts.dims; ++j) encode_number(row[j], &out[base + 3 * j]);
      encode_number(pts.targets[r], &out[base + static_cast<std::size_t>(3 * max_dims_)]);
    }
  }

  std::vector<int> encode(const PointSet& pts) const {
    std::vector<int> out;
    encode(pts, out);
    return out;
  }

 private:
  int max_dims_;
  int digits_;
  int mantissas_;
};

}  // namespace diffsr
