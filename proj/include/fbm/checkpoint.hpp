#pragma once

// Flat little-endian tensor container:
//   "FBMCKPT1" | u32 header_len | header (UTF-8 key=value lines)
//   | u32 count | count x { u32 name_len | name | u32 rank | rank x u32 dim | f64 values }
// Tensors keep the order in which they were written.

#include "fbm/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fbm::checkpoint {

inline constexpr char kMagic[] = "FBMCKPT1";

struct Container {
    std::string header;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

/// Throws DataError if the file cannot be written.
void save(const std::string& path, const Container& container);

/// Throws FormatError on a bad magic, truncation, or trailing bytes; DataError if unreadable.
Container load(const std::string& path);

/// key=value lines; blank lines and lines starting with '#' are skipped.
std::vector<std::pair<std::string, std::string>> parse_header(const std::string& header);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& text);

} // namespace fbm::checkpoint
