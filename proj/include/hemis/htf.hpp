#pragma once

#include <iosfwd>
#include <string>

#include "hemis/tensor.hpp"

namespace hemis {

/// HTF tensor file format (bit-exact):
///   bytes 0-3   magic "HTF1"
///   byte 4      dtype code (1 = f32, 2 = f64)
///   byte 5      rank R (at most 8)
///   8*R bytes   little-endian u64 dimension sizes
///   payload     row-major little-endian IEEE-754 values
///
/// Loading validates the magic, dtype code, rank, dimensions, payload length
/// and payload finiteness; load(save(t)) reproduces t bitwise.

inline constexpr std::size_t kHtfMaxRank = 8;

template <typename T>
void save_htf(const Tensor<T>& t, std::ostream& out);

template <typename T>
void save_htf(const Tensor<T>& t, const std::string& path);

template <typename T>
Tensor<T> load_htf(std::istream& in);

template <typename T>
Tensor<T> load_htf(const std::string& path);

}  // namespace hemis
