#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstddef>

namespace hale::detail {

// Branch-free exp over an array, written so the compiler can vectorize it
// (Cody-Waite range reduction, degree-13 Horner on [-ln2/2, ln2/2], exponent
// reassembled through the bit pattern). Max observed error is around 1 ulp;
// inputs are clamped to the finite double range of exp.
inline void exp_inplace(double* v, std::size_t n) {
  constexpr double kLog2E = 1.4426950408889634074;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kLo = -708.0, kHi = 709.0;
  for (std::size_t i = 0; i < n; ++i) {
    double x = v[i];
    x = x < kLo ? kLo : (x > kHi ? kHi : x);
    const double kd = std::nearbyint(x * kLog2E);
    const double r = (x - kd * kLn2Hi) - kd * kLn2Lo;
    double p = 1.0 / 6227020800.0;  // 1/13!
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const auto k = static_cast<std::int64_t>(kd);
    const double scale =
        std::bit_cast<double>(static_cast<std::uint64_t>(k + 1023) << 52);
    v[i] = p * scale;
  }
}

}  // namespace hale::detail
