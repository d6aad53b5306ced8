// SPDX-License-Identifier: Apache-2.0
//
// Channel-wise mixed activation compression. Channels are split on a
// 3-sigma outlier rule: normal channels take per-channel affine
// quantization; outlier-rich channels take a nonzero mask, block
// partition, and per-block CSR (sparse) or error-bounded predictive
// coding (dense). Decompression is exact-contract: quantized dense
// entries land within eps, everything else reconstructs exactly.

#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "memwall/errors.hpp"

namespace memwall {

struct ActivationTensor {
    int c = 0, h = 0, w = 0;
    std::vector<float> data; // channel-major c*h*w

    float at(int ci, int i, int j) const { return data[(static_cast<std::size_t>(ci) * h + i) * w + j]; }
    float& at(int ci, int i, int j) { return data[(static_cast<std::size_t>(ci) * h + i) * w + j]; }
    const float* channel(int ci) const { return data.data() + static_cast<std::size_t>(ci) * h * w; }
    float* channel(int ci) { return data.data() + static_cast<std::size_t>(ci) * h * w; }
    std::uint64_t bytes() const { return data.size() * sizeof(float); }
};

struct CodecConfig {
    int bits = 8;      // quantizer width, 4 or 8
    int block = 4;     // n: partition side length
    double tau = 0.25; // block sparsity threshold
    double eps = 1e-2; // dense-block absolute error bound

    void validate(int h, int w) const; // throws SchemaError
};

struct ChannelClass {
    double mu = 0.0, sigma = 0.0;             // tensor-global statistics
    std::vector<std::uint8_t> salient;         // per channel, 1 = outlier-rich
};

/// A channel is salient iff it holds at least one element with
/// |x - mu| > 3 sigma. A constant tensor (sigma = 0) has no outliers.
ChannelClass classify_channels(const ActivationTensor& tensor);

struct QuantParams {
    double zero_point = 0.0; // channel min
    double scale = 0.0;      // step; 0 encodes a constant channel
};

struct QuantChannel {
    QuantParams params;
    std::vector<std::uint8_t> codes; // one per element, unpacked
};

/// Affine min-max quantization. Reconstruction error is at most half a
/// step: |x^ - x| <= (max - min) / (2 (2^bits - 1)).
QuantChannel quantize_channel(const float* data, std::size_t count, int bits);
void dequantize_channel(const QuantChannel& q, std::size_t count, float* out);

struct BlockPartition {
    int n = 0;
    int grid_h = 0, grid_w = 0;
    std::vector<std::uint8_t> mask;  // h*w nonzero map
    std::vector<std::uint8_t> dense; // grid_h*grid_w block classes, 1 = dense
};

/// Average-pools the nonzero mask over n x n windows (zero-padded at the
/// ragged edge) and marks a block Sparse iff its pooled mean is < tau.
BlockPartition partition_blocks(const float* channel, int h, int w, int n, double tau);

struct CsrBlock {
    std::vector<std::uint32_t> row_ptr; // rows + 1 entries
    std::vector<std::uint16_t> col_idx;
    std::vector<float> values;
};

/// Textbook CSR over a strided 2D block; zeros drop out, values are kept
/// verbatim, so the round trip is bit-exact.
CsrBlock csr_encode(const float* block, int rows, int cols, int stride);
void csr_decode(const CsrBlock& csr, int rows, int cols, float* out, int stride);

struct LorenzoBlock {
    std::array<std::int8_t, 3> stencil = {1, 1, -1}; // left, up, up-left weights
    std::vector<std::uint32_t> codes;                // zigzagged, one per coded element
    std::vector<std::pair<std::uint16_t, float>> outliers; // (flat offset, exact value)
};

/// Raster-scan predictive coding: each element is predicted from already
/// reconstructed neighbors (out-of-bounds count as 0); a residual inside
/// eps is quantized, anything else is kept verbatim as an outlier. When a
/// mask is given, zero positions are skipped entirely and reconstruct to
/// exactly 0. The encoder mirrors the decoder's arithmetic, so
/// |x^ - x| <= eps holds for every coded element unconditionally.
LorenzoBlock lorenzo_compress_block(const float* block, int rows, int cols, int stride,
                                    double eps, const std::uint8_t* mask = nullptr,
                                    int mask_stride = 0);
void lorenzo_decompress_block(const LorenzoBlock& lb, int rows, int cols, double eps, float* out,
                              int stride, const std::uint8_t* mask = nullptr,
                              int mask_stride = 0);

/// Self-describing bitstream; see the format notes at the top of codec.cpp.
std::vector<std::uint8_t> compress_tensor(const ActivationTensor& tensor,
                                          const CodecConfig& config);
ActivationTensor decompress_tensor(const std::uint8_t* data, std::size_t size);
ActivationTensor decompress_tensor(const std::vector<std::uint8_t>& bitstream);

struct CodecBenchResult {
    double mean_ratio = 0.0;          // original / compressed, averaged per tensor
    double compress_mb_per_s = 0.0;   // throughput over the whole corpus
    double decompress_mb_per_s = 0.0;
    double max_coded_error = 0.0;     // worst |x^ - x| seen anywhere
    std::uint64_t original_bytes = 0;
    std::uint64_t compressed_bytes = 0;
};

CodecBenchResult bench_codec(const std::vector<ActivationTensor>& corpus,
                             const CodecConfig& config);

} // namespace memwall
