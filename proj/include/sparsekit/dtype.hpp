#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsekit/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "sparsekit assumes a little-endian host");

namespace sparsekit {

enum class DType { f16, bf16, f32, f64 };

constexpr std::size_t byte_width(DType t) noexcept {
  switch (t) {
    case DType::f16:
    case DType::bf16:
      return 2;
    case DType::f32:
      return 4;
    case DType::f64:
      return 8;
  }
  return 0;
}

constexpr std::string_view dtype_tag(DType t) noexcept {
  switch (t) {
    case DType::f16:
      return "F16";
    case DType::bf16:
      return "BF16";
    case DType::f32:
      return "F32";
    case DType::f64:
      return "F64";
  }
  return "?";
}

inline std::optional<DType> parse_dtype(std::string_view tag) noexcept {
  if (tag == "F16") return DType::f16;
  if (tag == "BF16") return DType::bf16;
  if (tag == "F32") return DType::f32;
  if (tag == "F64") return DType::f64;
  return std::nullopt;
}

namespace detail {

// Decodes an IEEE-754 binary interchange value with the given field widths.
// Every such value is exactly representable as a double.
inline double decode_minifloat(std::uint32_t bits, int exp_bits, int man_bits) {
  const std::uint32_t man_mask = (1u << man_bits) - 1;
  const std::uint32_t exp_mask = (1u << exp_bits) - 1;
  const bool negative = (bits >> (exp_bits + man_bits)) & 1u;
  const std::uint32_t exponent = (bits >> man_bits) & exp_mask;
  const std::uint32_t mantissa = bits & man_mask;
  const int bias = (1 << (exp_bits - 1)) - 1;

  double magnitude;
  if (exponent == exp_mask) {
    magnitude = mantissa ? std::nan("") : INFINITY;
  } else if (exponent == 0) {
    magnitude = std::ldexp(static_cast<double>(mantissa), 1 - bias - man_bits);
  } else {
    magnitude = std::ldexp(static_cast<double>(mantissa | (1u << man_bits)),
                           static_cast<int>(exponent) - bias - man_bits);
  }
  return negative ? -magnitude : magnitude;
}

// Round-to-nearest-even encoding of a double into a narrower binary format.
inline std::uint32_t encode_minifloat(double value, int exp_bits, int man_bits) {
  const std::uint32_t exp_mask = (1u << exp_bits) - 1;
  const std::uint32_t sign = std::signbit(value) ? 1u << (exp_bits + man_bits) : 0u;
  const int bias = (1 << (exp_bits - 1)) - 1;
  const double mag = std::fabs(value);

  if (std::isnan(value)) {
    return sign | (exp_mask << man_bits) | (1u << (man_bits - 1));
  }
  if (std::isinf(mag)) return sign | (exp_mask << man_bits);
  if (mag == 0.0) return sign;

  const int min_normal_exp = 1 - bias;
  int e2 = 0;
  const double frac = std::frexp(mag, &e2);  // mag = frac * 2^e2, frac in [0.5, 1)
  const int unbiased = e2 - 1;

  if (unbiased < min_normal_exp) {
    // Subnormal range: units of 2^(min_normal_exp - man_bits).
    const double q = std::nearbyint(std::ldexp(mag, man_bits - min_normal_exp));
    return sign | static_cast<std::uint32_t>(q);  // q == 2^man_bits rolls into the min normal
  }

  double q = std::nearbyint(std::ldexp(frac, man_bits + 1));  // in [2^man, 2^(man+1)]
  int biased = unbiased + bias;
  if (q == std::ldexp(1.0, man_bits + 1)) {
    q = std::ldexp(1.0, man_bits);
    ++biased;
  }
  if (biased >= static_cast<int>(exp_mask)) return sign | (exp_mask << man_bits);
  const auto man = static_cast<std::uint32_t>(q) - (1u << man_bits);
  return sign | (static_cast<std::uint32_t>(biased) << man_bits) | man;
}

template <class T>
T load_le(const std::byte* p) noexcept {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void store_le(std::byte* p, T v) noexcept {
  std::memcpy(p, &v, sizeof(T));
}

}  // namespace detail

inline double decode_f16(std::uint16_t bits) { return detail::decode_minifloat(bits, 5, 10); }

inline double decode_bf16(std::uint16_t bits) {
  return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16));
}

inline std::uint16_t encode_f16(double v) {
  return static_cast<std::uint16_t>(detail::encode_minifloat(v, 5, 10));
}

inline std::uint16_t encode_bf16(double v) {
  return static_cast<std::uint16_t>(detail::encode_minifloat(v, 8, 7));
}

/// Decodes `out.size()` little-endian elements of type `t` from `bytes`.
inline void decode_values(DType t, std::span<const std::byte> bytes, std::span<double> out) {
  const std::size_t w = byte_width(t);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::byte* p = bytes.data() + i * w;
    switch (t) {
      case DType::f16:
        out[i] = decode_f16(detail::load_le<std::uint16_t>(p));
        break;
      case DType::bf16:
        out[i] = decode_bf16(detail::load_le<std::uint16_t>(p));
        break;
      case DType::f32:
        out[i] = static_cast<double>(detail::load_le<float>(p));
        break;
      case DType::f64:
        out[i] = detail::load_le<double>(p);
        break;
    }
  }
}

/// Encodes values into `t` with round-to-nearest-even narrowing.
inline std::vector<std::byte> encode_values(DType t, std::span<const double> values) {
  const std::size_t w = byte_width(t);
  std::vector<std::byte> out(values.size() * w);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::byte* p = out.data() + i * w;
    switch (t) {
      case DType::f16:
        detail::store_le(p, encode_f16(values[i]));
        break;
      case DType::bf16:
        detail::store_le(p, encode_bf16(values[i]));
        break;
      case DType::f32:
        detail::store_le(p, static_cast<float>(values[i]));
        break;
      case DType::f64:
        detail::store_le(p, values[i]);
        break;
    }
  }
  return out;
}

}  // namespace sparsekit
