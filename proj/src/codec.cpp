// SPDX-License-Identifier: Apache-2.0
//
// Bitstream format (little-endian; bit-packed fields fill bytes LSB-first):
//
//   magic "MWAC", version u8=1, bits u8, n u16, C u32, H u32, W u32,
//   tau f64, eps f64,
//   channel-class bits (ceil(C/8); 1 = salient),
//   per normal channel:  zero_point f64, scale f64,
//   per salient channel: block-class bits over the ceil(H/n) x ceil(W/n)
//                        grid (ceil(grid/8); 1 = dense),
//   then per-channel payloads in channel order:
//     normal:  quant codes, `bits` per element, packed LSB-first
//     salient: nonzero-mask RLE (u32 run count, then u32 runs, zeros first),
//              then per block in raster order:
//                sparse: row_ptr u32 x (rows+1), col_idx u16 x nnz, values f32 x nnz
//                dense:  stencil i8 x 3, outlier count u16,
//                        (offset u16, value f32) x count,
//                        coded-block length u32, coded block (see huffman.hpp)

#include "memwall/codec.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>

#include "memwall/huffman.hpp"

namespace memwall {

namespace {

constexpr char kMagic[4] = {'M', 'W', 'A', 'C'};
constexpr std::uint8_t kVersion = 1;

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }
    void u16(std::uint16_t v) {
        buf_.push_back(static_cast<std::uint8_t>(v));
        buf_.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const std::uint8_t* data, std::size_t n) { buf_.insert(buf_.end(), data, data + n); }

    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::uint8_t u8() {
        need(1, "u8");
        return data_[pos_++];
    }
    std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
    std::uint16_t u16() {
        need(2, "u16");
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    const std::uint8_t* span(std::size_t n, const char* what) {
        need(n, what);
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > size_) {
            throw DecodeError(std::string("bitstream truncated reading ") + what, pos_);
        }
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

std::uint32_t zigzag(std::int32_t v) {
    return (static_cast<std::uint32_t>(v) << 1) ^ static_cast<std::uint32_t>(v >> 31);
}

std::int32_t unzigzag(std::uint32_t v) {
    return static_cast<std::int32_t>(v >> 1) ^ -static_cast<std::int32_t>(v & 1);
}

double predict(const float* recon, int i, int j, int stride,
               const std::array<std::int8_t, 3>& st) {
    double left = j > 0 ? recon[i * stride + (j - 1)] : 0.0;
    double up = i > 0 ? recon[(i - 1) * stride + j] : 0.0;
    double diag = (i > 0 && j > 0) ? recon[(i - 1) * stride + (j - 1)] : 0.0;
    return st[0] * left + st[1] * up + st[2] * diag;
}

} // namespace

void CodecConfig::validate(int h, int w) const {
    if (bits != 4 && bits != 8) {
        throw SchemaError("quantizer width must be 4 or 8, got " + std::to_string(bits));
    }
    if (block < 1 || block > std::min(h, w) || block > 255) {
        throw SchemaError("block side " + std::to_string(block) + " out of range for " +
                          std::to_string(h) + "x" + std::to_string(w) + " maps");
    }
    if (tau < 0.0 || tau > 1.0) throw SchemaError("sparsity threshold must lie in [0, 1]");
    if (!(eps > 0.0)) throw SchemaError("error bound must be positive");
}

ChannelClass classify_channels(const ActivationTensor& t) {
    ChannelClass out;
    const std::size_t n = t.data.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += (t.data[i] - mean) / static_cast<double>(i + 1);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = t.data[i] - mean;
        var += d * d;
    }
    out.mu = mean;
    out.sigma = std::sqrt(var / static_cast<double>(n));

    const double bar = 3.0 * out.sigma;
    out.salient.assign(t.c, 0);
    const std::size_t plane = static_cast<std::size_t>(t.h) * t.w;
    for (int c = 0; c < t.c; ++c) {
        const float* p = t.channel(c);
        for (std::size_t i = 0; i < plane; ++i) {
            if (std::abs(p[i] - out.mu) > bar) {
                out.salient[c] = 1;
                break;
            }
        }
    }
    return out;
}

QuantChannel quantize_channel(const float* data, std::size_t count, int bits) {
    QuantChannel q;
    double lo = data[0], hi = data[0];
    for (std::size_t i = 1; i < count; ++i) {
        lo = std::min(lo, static_cast<double>(data[i]));
        hi = std::max(hi, static_cast<double>(data[i]));
    }
    const int max_code = (1 << bits) - 1;
    q.params.zero_point = lo;
    q.params.scale = (hi - lo) / max_code;
    q.codes.resize(count);
    if (q.params.scale == 0.0) return q; // constant channel: codes stay 0

    for (std::size_t i = 0; i < count; ++i) {
        double x = data[i];
        long c = std::lround((x - lo) / q.params.scale);
        c = std::clamp(c, 0l, static_cast<long>(max_code));
        // Snap to whichever adjacent level reconstructs closer; keeps the
        // half-step contract immune to rounding at the midpoints.
        double best = std::abs(lo + static_cast<double>(c) * q.params.scale - x);
        for (long alt : {c - 1, c + 1}) {
            if (alt < 0 || alt > max_code) continue;
            double err = std::abs(lo + static_cast<double>(alt) * q.params.scale - x);
            if (err < best) {
                best = err;
                c = alt;
            }
        }
        q.codes[i] = static_cast<std::uint8_t>(c);
    }
    return q;
}

void dequantize_channel(const QuantChannel& q, std::size_t count, float* out) {
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = static_cast<float>(q.params.zero_point + q.codes[i] * q.params.scale);
    }
}

BlockPartition partition_blocks(const float* channel, int h, int w, int n, double tau) {
    BlockPartition part;
    part.n = n;
    part.grid_h = (h + n - 1) / n;
    part.grid_w = (w + n - 1) / n;
    part.mask.assign(static_cast<std::size_t>(h) * w, 0);
    for (std::size_t i = 0; i < part.mask.size(); ++i) part.mask[i] = channel[i] != 0.0f;

    part.dense.assign(static_cast<std::size_t>(part.grid_h) * part.grid_w, 0);
    for (int bi = 0; bi < part.grid_h; ++bi) {
        for (int bj = 0; bj < part.grid_w; ++bj) {
            int nnz = 0;
            for (int i = bi * n; i < std::min(h, (bi + 1) * n); ++i) {
                for (int j = bj * n; j < std::min(w, (bj + 1) * n); ++j) {
                    nnz += part.mask[static_cast<std::size_t>(i) * w + j];
                }
            }
            // Ragged blocks pool over the zero-padded full window.
            double mean = static_cast<double>(nnz) / (n * n);
            part.dense[static_cast<std::size_t>(bi) * part.grid_w + bj] = mean >= tau;
        }
    }
    return part;
}

CsrBlock csr_encode(const float* block, int rows, int cols, int stride) {
    CsrBlock csr;
    csr.row_ptr.assign(rows + 1, 0);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            float v = block[i * stride + j];
            if (v != 0.0f) {
                csr.col_idx.push_back(static_cast<std::uint16_t>(j));
                csr.values.push_back(v);
            }
        }
        csr.row_ptr[i + 1] = static_cast<std::uint32_t>(csr.values.size());
    }
    return csr;
}

void csr_decode(const CsrBlock& csr, int rows, int cols, float* out, int stride) {
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out[i * stride + j] = 0.0f;
    }
    for (int i = 0; i < rows; ++i) {
        for (std::uint32_t k = csr.row_ptr[i]; k < csr.row_ptr[i + 1]; ++k) {
            out[i * stride + csr.col_idx[k]] = csr.values[k];
        }
    }
}

LorenzoBlock lorenzo_compress_block(const float* block, int rows, int cols, int stride,
                                    double eps, const std::uint8_t* mask, int mask_stride) {
    LorenzoBlock lb;
    std::vector<float> recon(static_cast<std::size_t>(rows) * cols, 0.0f);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            if (mask && !mask[i * mask_stride + j]) continue; // reconstructs to 0
            double x = block[i * stride + j];
            double p = predict(recon.data(), i, j, cols, lb.stencil);
            double delta = p - x;
            if (std::abs(delta) < eps) {
                auto code = static_cast<std::int32_t>(std::lround(delta / (2.0 * eps)));
                auto xhat = static_cast<float>(p - 2.0 * eps * code);
                if (std::abs(static_cast<double>(xhat) - x) <= eps) {
                    lb.codes.push_back(zigzag(code));
                    recon[static_cast<std::size_t>(i) * cols + j] = xhat;
                    continue;
                }
            }
            lb.outliers.emplace_back(static_cast<std::uint16_t>(i * cols + j),
                                     block[i * stride + j]);
            recon[static_cast<std::size_t>(i) * cols + j] = block[i * stride + j];
        }
    }
    return lb;
}

void lorenzo_decompress_block(const LorenzoBlock& lb, int rows, int cols, double eps, float* out,
                              int stride, const std::uint8_t* mask, int mask_stride) {
    std::vector<float> recon(static_cast<std::size_t>(rows) * cols, 0.0f);
    std::size_t code_at = 0, outlier_at = 0;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            float v = 0.0f;
            if (!mask || mask[i * mask_stride + j]) {
                auto offset = static_cast<std::uint16_t>(i * cols + j);
                if (outlier_at < lb.outliers.size() && lb.outliers[outlier_at].first == offset) {
                    v = lb.outliers[outlier_at++].second;
                } else {
                    if (code_at >= lb.codes.size()) {
                        throw DecodeError("coded block shorter than its mask", 0);
                    }
                    std::int32_t code = unzigzag(lb.codes[code_at++]);
                    double p = predict(recon.data(), i, j, cols, lb.stencil);
                    v = static_cast<float>(p - 2.0 * eps * code);
                }
            }
            recon[static_cast<std::size_t>(i) * cols + j] = v;
            out[i * stride + j] = v;
        }
    }
    if (code_at != lb.codes.size() || outlier_at != lb.outliers.size()) {
        throw DecodeError("coded block longer than its mask", 0);
    }
}

namespace {

void write_rle_mask(ByteWriter& out, const std::uint8_t* mask, std::size_t count) {
    std::vector<std::uint32_t> runs;
    std::uint8_t current = 0; // runs alternate starting from zeros
    std::uint32_t len = 0;
    for (std::size_t i = 0; i < count; ++i) {
        if (mask[i] == current) {
            ++len;
        } else {
            runs.push_back(len);
            current ^= 1;
            len = 1;
        }
    }
    runs.push_back(len);
    out.u32(static_cast<std::uint32_t>(runs.size()));
    for (std::uint32_t r : runs) out.u32(r);
}

std::vector<std::uint8_t> read_rle_mask(ByteReader& in, std::size_t count) {
    std::uint32_t nruns = in.u32();
    std::vector<std::uint8_t> mask;
    mask.reserve(count);
    std::uint8_t current = 0;
    for (std::uint32_t r = 0; r < nruns; ++r) {
        std::uint32_t len = in.u32();
        if (mask.size() + len > count) {
            throw DecodeError("mask runs overrun the channel", in.pos());
        }
        mask.insert(mask.end(), len, current);
        current ^= 1;
    }
    if (mask.size() != count) {
        throw DecodeError("mask runs do not cover the channel", in.pos());
    }
    return mask;
}

void pack_codes(ByteWriter& out, const std::vector<std::uint8_t>& codes, int bits) {
    if (bits == 8) {
        out.bytes(codes.data(), codes.size());
        return;
    }
    for (std::size_t i = 0; i < codes.size(); i += 2) {
        std::uint8_t byte = static_cast<std::uint8_t>(codes[i] & 0x0f);
        if (i + 1 < codes.size()) byte |= static_cast<std::uint8_t>((codes[i + 1] & 0x0f) << 4);
        out.u8(byte);
    }
}

std::vector<std::uint8_t> unpack_codes(ByteReader& in, std::size_t count, int bits) {
    std::vector<std::uint8_t> codes(count);
    if (bits == 8) {
        const std::uint8_t* p = in.span(count, "quant codes");
        std::copy(p, p + count, codes.begin());
        return codes;
    }
    const std::uint8_t* p = in.span((count + 1) / 2, "quant codes");
    for (std::size_t i = 0; i < count; ++i) {
        codes[i] = (i % 2 == 0) ? (p[i / 2] & 0x0f) : (p[i / 2] >> 4);
    }
    return codes;
}

void write_bitset(ByteWriter& out, const std::vector<std::uint8_t>& flags) {
    std::uint8_t byte = 0;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        if (flags[i]) byte |= static_cast<std::uint8_t>(1u << (i % 8));
        if (i % 8 == 7) {
            out.u8(byte);
            byte = 0;
        }
    }
    if (flags.size() % 8 != 0) out.u8(byte);
}

std::vector<std::uint8_t> read_bitset(ByteReader& in, std::size_t count) {
    const std::uint8_t* p = in.span((count + 7) / 8, "class bits");
    std::vector<std::uint8_t> flags(count);
    for (std::size_t i = 0; i < count; ++i) flags[i] = (p[i / 8] >> (i % 8)) & 1;
    return flags;
}

} // namespace

std::vector<std::uint8_t> compress_tensor(const ActivationTensor& t, const CodecConfig& cfg) {
    if (t.c < 1 || t.h < 1 || t.w < 1 ||
        t.data.size() != static_cast<std::size_t>(t.c) * t.h * t.w) {
        throw SchemaError("activation tensor dimensions do not match its data");
    }
    cfg.validate(t.h, t.w);
    for (float v : t.data) {
        if (!std::isfinite(v)) throw SchemaError("activation tensor holds non-finite values");
    }

    const std::size_t plane = static_cast<std::size_t>(t.h) * t.w;
    ChannelClass classes = classify_channels(t);

    std::vector<QuantChannel> quant(t.c);
    std::vector<BlockPartition> parts(t.c);
    for (int c = 0; c < t.c; ++c) {
        if (classes.salient[c]) {
            parts[c] = partition_blocks(t.channel(c), t.h, t.w, cfg.block, cfg.tau);
        } else {
            quant[c] = quantize_channel(t.channel(c), plane, cfg.bits);
        }
    }

    ByteWriter out;
    out.bytes(reinterpret_cast<const std::uint8_t*>(kMagic), 4);
    out.u8(kVersion);
    out.u8(static_cast<std::uint8_t>(cfg.bits));
    out.u16(static_cast<std::uint16_t>(cfg.block));
    out.u32(static_cast<std::uint32_t>(t.c));
    out.u32(static_cast<std::uint32_t>(t.h));
    out.u32(static_cast<std::uint32_t>(t.w));
    out.f64(cfg.tau);
    out.f64(cfg.eps);
    write_bitset(out, classes.salient);
    for (int c = 0; c < t.c; ++c) {
        if (!classes.salient[c]) {
            out.f64(quant[c].params.zero_point);
            out.f64(quant[c].params.scale);
        }
    }
    for (int c = 0; c < t.c; ++c) {
        if (classes.salient[c]) write_bitset(out, parts[c].dense);
    }

    for (int c = 0; c < t.c; ++c) {
        if (!classes.salient[c]) {
            pack_codes(out, quant[c].codes, cfg.bits);
            continue;
        }
        const BlockPartition& part = parts[c];
        write_rle_mask(out, part.mask.data(), plane);
        const float* chan = t.channel(c);
        for (int bi = 0; bi < part.grid_h; ++bi) {
            for (int bj = 0; bj < part.grid_w; ++bj) {
                int rows = std::min(cfg.block, t.h - bi * cfg.block);
                int cols = std::min(cfg.block, t.w - bj * cfg.block);
                const float* block = chan + static_cast<std::size_t>(bi) * cfg.block * t.w +
                                     bj * cfg.block;
                const std::uint8_t* mask = part.mask.data() +
                                           static_cast<std::size_t>(bi) * cfg.block * t.w +
                                           bj * cfg.block;
                if (part.dense[static_cast<std::size_t>(bi) * part.grid_w + bj]) {
                    LorenzoBlock lb =
                        lorenzo_compress_block(block, rows, cols, t.w, cfg.eps, mask, t.w);
                    for (std::int8_t s : lb.stencil) out.i8(s);
                    out.u16(static_cast<std::uint16_t>(lb.outliers.size()));
                    for (const auto& [offset, value] : lb.outliers) {
                        out.u16(offset);
                        out.f32(value);
                    }
                    std::vector<std::uint8_t> coded = huffman_encode(lb.codes);
                    out.u32(static_cast<std::uint32_t>(coded.size()));
                    out.bytes(coded.data(), coded.size());
                } else {
                    CsrBlock csr = csr_encode(block, rows, cols, t.w);
                    for (std::uint32_t rp : csr.row_ptr) out.u32(rp);
                    for (std::uint16_t ci : csr.col_idx) out.u16(ci);
                    for (float v : csr.values) out.f32(v);
                }
            }
        }
    }
    return out.take();
}

ActivationTensor decompress_tensor(const std::uint8_t* data, std::size_t size) {
    ByteReader in(data, size);
    const std::uint8_t* magic = in.span(4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw DecodeError("bad magic; not a compressed activation stream", 0);
    }
    std::uint8_t version = in.u8();
    if (version != kVersion) {
        throw DecodeError("unsupported stream version " + std::to_string(version), in.pos() - 1);
    }
    int bits = in.u8();
    if (bits != 4 && bits != 8) {
        throw DecodeError("invalid quantizer width " + std::to_string(bits), in.pos() - 1);
    }
    int n = in.u16();
    ActivationTensor t;
    t.c = static_cast<int>(in.u32());
    t.h = static_cast<int>(in.u32());
    t.w = static_cast<int>(in.u32());
    if (t.c < 1 || t.h < 1 || t.w < 1 || n < 1 || n > std::min(t.h, t.w)) {
        throw DecodeError("inconsistent stream geometry", in.pos());
    }
    in.f64(); // tau: informational after encoding
    double eps = in.f64();
    if (!(eps > 0.0)) throw DecodeError("invalid error bound in stream", in.pos() - 8);

    const std::size_t plane = static_cast<std::size_t>(t.h) * t.w;
    t.data.assign(static_cast<std::size_t>(t.c) * plane, 0.0f);

    std::vector<std::uint8_t> salient = read_bitset(in, t.c);
    std::vector<QuantParams> params(t.c);
    for (int c = 0; c < t.c; ++c) {
        if (!salient[c]) {
            params[c].zero_point = in.f64();
            params[c].scale = in.f64();
        }
    }
    const int grid_h = (t.h + n - 1) / n, grid_w = (t.w + n - 1) / n;
    std::vector<std::vector<std::uint8_t>> dense(t.c);
    for (int c = 0; c < t.c; ++c) {
        if (salient[c]) dense[c] = read_bitset(in, static_cast<std::size_t>(grid_h) * grid_w);
    }

    for (int c = 0; c < t.c; ++c) {
        float* chan = t.channel(c);
        if (!salient[c]) {
            QuantChannel q;
            q.params = params[c];
            q.codes = unpack_codes(in, plane, bits);
            dequantize_channel(q, plane, chan);
            continue;
        }
        std::vector<std::uint8_t> mask = read_rle_mask(in, plane);
        for (int bi = 0; bi < grid_h; ++bi) {
            for (int bj = 0; bj < grid_w; ++bj) {
                int rows = std::min(n, t.h - bi * n);
                int cols = std::min(n, t.w - bj * n);
                float* block = chan + static_cast<std::size_t>(bi) * n * t.w + bj * n;
                const std::uint8_t* bmask =
                    mask.data() + static_cast<std::size_t>(bi) * n * t.w + bj * n;
                if (dense[c][static_cast<std::size_t>(bi) * grid_w + bj]) {
                    LorenzoBlock lb;
                    std::size_t stencil_at = in.pos();
                    lb.stencil = {in.i8(), in.i8(), in.i8()};
                    if (lb.stencil[0] + lb.stencil[1] + lb.stencil[2] != 1) {
                        throw DecodeError("predictor stencil does not sum to 1", stencil_at);
                    }
                    std::uint16_t n_outliers = in.u16();
                    lb.outliers.reserve(n_outliers);
                    std::size_t outlier_pos = in.pos();
                    for (int k = 0; k < n_outliers; ++k) {
                        std::uint16_t offset = in.u16();
                        float value = in.f32();
                        if (!lb.outliers.empty() && offset <= lb.outliers.back().first) {
                            throw DecodeError("outlier offsets out of order", outlier_pos);
                        }
                        lb.outliers.emplace_back(offset, value);
                    }
                    std::uint32_t coded_len = in.u32();
                    std::size_t coded_at = in.pos();
                    const std::uint8_t* coded = in.span(coded_len, "coded block");
                    lb.codes = huffman_decode(coded, coded_len, coded_at);
                    try {
                        lorenzo_decompress_block(lb, rows, cols, eps, block, t.w, bmask, t.w);
                    } catch (const DecodeError&) {
                        throw DecodeError("coded block does not cover its mask", coded_at);
                    }
                } else {
                    CsrBlock csr;
                    csr.row_ptr.resize(rows + 1);
                    std::size_t rp_at = in.pos();
                    for (int r = 0; r <= rows; ++r) csr.row_ptr[r] = in.u32();
                    std::uint32_t nnz = csr.row_ptr[rows];
                    if (csr.row_ptr[0] != 0 || nnz > static_cast<std::uint32_t>(rows) * cols) {
                        throw DecodeError("corrupt row pointers", rp_at);
                    }
                    for (int r = 0; r < rows; ++r) {
                        if (csr.row_ptr[r] > csr.row_ptr[r + 1]) {
                            throw DecodeError("corrupt row pointers", rp_at);
                        }
                    }
                    csr.col_idx.resize(nnz);
                    std::size_t ci_at = in.pos();
                    for (std::uint32_t k = 0; k < nnz; ++k) {
                        csr.col_idx[k] = in.u16();
                        if (csr.col_idx[k] >= cols) {
                            throw DecodeError("column index out of range", ci_at + 2 * k);
                        }
                    }
                    csr.values.resize(nnz);
                    for (std::uint32_t k = 0; k < nnz; ++k) csr.values[k] = in.f32();
                    csr_decode(csr, rows, cols, block, t.w);
                }
            }
        }
    }
    return t;
}

ActivationTensor decompress_tensor(const std::vector<std::uint8_t>& bitstream) {
    return decompress_tensor(bitstream.data(), bitstream.size());
}

CodecBenchResult bench_codec(const std::vector<ActivationTensor>& corpus,
                             const CodecConfig& config) {
    using clock = std::chrono::steady_clock;
    CodecBenchResult r;
    double ratio_sum = 0.0;
    double compress_s = 0.0, decompress_s = 0.0;
    for (const ActivationTensor& t : corpus) {
        auto t0 = clock::now();
        std::vector<std::uint8_t> bs = compress_tensor(t, config);
        auto t1 = clock::now();
        ActivationTensor back = decompress_tensor(bs);
        auto t2 = clock::now();

        compress_s += std::chrono::duration<double>(t1 - t0).count();
        decompress_s += std::chrono::duration<double>(t2 - t1).count();
        r.original_bytes += t.bytes();
        r.compressed_bytes += bs.size();
        ratio_sum += static_cast<double>(t.bytes()) / static_cast<double>(bs.size());
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            r.max_coded_error = std::max(
                r.max_coded_error,
                std::abs(static_cast<double>(back.data[i]) - static_cast<double>(t.data[i])));
        }
    }
    if (!corpus.empty()) {
        r.mean_ratio = ratio_sum / static_cast<double>(corpus.size());
        double mb = static_cast<double>(r.original_bytes) / (1024.0 * 1024.0);
        r.compress_mb_per_s = mb / compress_s;
        r.decompress_mb_per_s = mb / decompress_s;
    }
    return r;
}

} // namespace memwall
