// SPDX-License-Identifier: Apache-2.0

#include "memwall/huffman.hpp"

#include <algorithm>
#include <map>
#include <queue>

#include "memwall/errors.hpp"

namespace memwall {

namespace {

struct SymbolCode {
    std::uint32_t symbol;
    std::uint8_t length;
};

// Tree merge over (count, insertion sequence) so equal counts resolve the
// same way on every platform.
std::vector<SymbolCode> code_lengths(const std::map<std::uint32_t, std::uint64_t>& freq) {
    struct Node {
        std::uint64_t count;
        std::uint64_t seq;
        int left = -1, right = -1;
        std::uint32_t symbol = 0;
    };
    std::vector<Node> nodes;
    auto cmp = [&](std::size_t a, std::size_t b) {
        if (nodes[a].count != nodes[b].count) return nodes[a].count > nodes[b].count;
        return nodes[a].seq > nodes[b].seq;
    };
    std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(cmp)> heap(cmp);

    std::uint64_t seq = 0;
    for (const auto& [sym, count] : freq) {
        nodes.push_back({count, seq++, -1, -1, sym});
        heap.push(nodes.size() - 1);
    }
    if (nodes.size() == 1) {
        return {{nodes[0].symbol, 1}};
    }
    while (heap.size() > 1) {
        std::size_t a = heap.top();
        heap.pop();
        std::size_t b = heap.top();
        heap.pop();
        nodes.push_back({nodes[a].count + nodes[b].count, seq++, static_cast<int>(a),
                         static_cast<int>(b), 0});
        heap.push(nodes.size() - 1);
    }

    std::vector<SymbolCode> out;
    // Depth-first length assignment, iteratively.
    std::vector<std::pair<std::size_t, std::uint8_t>> stack{{heap.top(), 0}};
    while (!stack.empty()) {
        auto [idx, depth] = stack.back();
        stack.pop_back();
        const Node& n = nodes[idx];
        if (n.left < 0) {
            out.push_back({n.symbol, depth});
        } else {
            stack.push_back({static_cast<std::size_t>(n.left), static_cast<std::uint8_t>(depth + 1)});
            stack.push_back({static_cast<std::size_t>(n.right), static_cast<std::uint8_t>(depth + 1)});
        }
    }
    std::sort(out.begin(), out.end(), [](const SymbolCode& a, const SymbolCode& b) {
        if (a.length != b.length) return a.length < b.length;
        return a.symbol < b.symbol;
    });
    return out;
}

class BitWriter {
public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void put(std::uint64_t code, int nbits) {
        for (int i = nbits - 1; i >= 0; --i) {
            if (fill_ == 0) {
                out_.push_back(0);
                fill_ = 8;
            }
            --fill_;
            if ((code >> i) & 1) out_.back() |= static_cast<std::uint8_t>(1u << fill_);
        }
    }

private:
    std::vector<std::uint8_t>& out_;
    int fill_ = 0;
};

class BitReader {
public:
    BitReader(const std::uint8_t* data, std::size_t size, std::size_t base)
        : data_(data), size_(size), base_(base) {}

    int next() {
        std::size_t byte = pos_ >> 3;
        if (byte >= size_) {
            throw DecodeError("coded stream truncated", base_ + byte);
        }
        int bit = (data_[byte] >> (7 - (pos_ & 7))) & 1;
        ++pos_;
        return bit;
    }

    std::size_t byte_pos() const { return base_ + (pos_ >> 3); }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

} // namespace

std::vector<std::uint8_t> huffman_encode(const std::vector<std::uint32_t>& symbols) {
    std::vector<std::uint8_t> out;
    put_u32(out, static_cast<std::uint32_t>(symbols.size()));
    if (symbols.empty()) return out;

    std::map<std::uint32_t, std::uint64_t> freq;
    for (std::uint32_t s : symbols) ++freq[s];
    std::vector<SymbolCode> table = code_lengths(freq);

    put_u16(out, static_cast<std::uint16_t>(table.size()));
    for (const SymbolCode& sc : table) {
        put_u32(out, sc.symbol);
        out.push_back(sc.length);
    }

    // Canonical code assignment in (length, symbol) order.
    std::map<std::uint32_t, std::pair<std::uint64_t, int>> codes; // symbol -> (code, len)
    std::uint64_t code = 0;
    int prev_len = table.front().length;
    for (const SymbolCode& sc : table) {
        code <<= (sc.length - prev_len);
        prev_len = sc.length;
        codes[sc.symbol] = {code, sc.length};
        ++code;
    }

    BitWriter bits(out);
    for (std::uint32_t s : symbols) {
        auto [c, len] = codes.at(s);
        bits.put(c, len);
    }
    return out;
}

std::vector<std::uint32_t> huffman_decode(const std::uint8_t* data, std::size_t size,
                                          std::size_t base_offset) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > size) {
            throw DecodeError("coded block header truncated", base_offset + size);
        }
    };
    auto get_u32 = [&] {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos++]) << (8 * i);
        return v;
    };
    auto get_u16 = [&] {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(data[pos] | (data[pos + 1] << 8));
        pos += 2;
        return v;
    };

    std::uint32_t count = get_u32();
    if (count == 0) return {};

    std::uint16_t distinct = get_u16();
    if (distinct == 0) {
        throw DecodeError("coded block declares symbols but no alphabet", base_offset + pos);
    }
    std::vector<SymbolCode> table(distinct);
    std::uint8_t max_len = 0;
    for (SymbolCode& sc : table) {
        sc.symbol = get_u32();
        need(1);
        sc.length = data[pos++];
        if (sc.length == 0 || sc.length > 63) {
            throw DecodeError("invalid code length", base_offset + pos - 1);
        }
        max_len = std::max(max_len, sc.length);
    }

    // first_code[l] / base index per length from the canonical ordering.
    std::vector<std::uint64_t> first_code(max_len + 1, 0);
    std::vector<std::uint32_t> length_count(max_len + 1, 0), base_index(max_len + 1, 0);
    for (std::size_t i = 1; i < table.size(); ++i) {
        if (table[i].length < table[i - 1].length) {
            throw DecodeError("alphabet not in canonical order", base_offset + pos);
        }
    }
    for (const SymbolCode& sc : table) ++length_count[sc.length];
    std::uint64_t code = 0;
    std::uint32_t index = 0;
    for (int l = 1; l <= max_len; ++l) {
        code <<= 1;
        first_code[l] = code;
        base_index[l] = index;
        code += length_count[l];
        index += length_count[l];
    }
    if (code > (1ull << max_len)) {
        throw DecodeError("over-subscribed code table", base_offset + pos);
    }

    BitReader bits(data + pos, size - pos, base_offset + pos);
    std::vector<std::uint32_t> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint64_t c = 0;
        int len = 0;
        while (true) {
            c = (c << 1) | static_cast<unsigned>(bits.next());
            ++len;
            if (len > max_len) {
                throw DecodeError("invalid code in stream", bits.byte_pos());
            }
            if (length_count[len] != 0 && c - first_code[len] < length_count[len]) {
                out.push_back(table[base_index[len] + (c - first_code[len])].symbol);
                break;
            }
        }
    }
    return out;
}

} // namespace memwall
