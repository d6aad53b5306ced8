// SPDX-License-Identifier: Apache-2.0
//
// Canonical Huffman coding for u32 symbol streams. The code table travels
// in-stream, so a block decodes with no side channel.

#pragma once

#include <cstdint>
#include <vector>

namespace memwall {

/// Block layout (little-endian, bit order MSB-first within bytes):
///   u32 symbol count
///   u16 distinct-symbol count          (absent when the stream is empty)
///   (u32 symbol, u8 code length) * distinct, in canonical (length, symbol) order
///   packed code bits
/// A single-symbol alphabet gets a one-bit code.
std::vector<std::uint8_t> huffman_encode(const std::vector<std::uint32_t>& symbols);

/// Inverse of huffman_encode over an exact block slice. Throws DecodeError
/// on truncation or an invalid code; reported offsets are relative to the
/// block start plus base_offset.
std::vector<std::uint32_t> huffman_decode(const std::uint8_t* data, std::size_t size,
                                          std::size_t base_offset = 0);

} // namespace memwall
