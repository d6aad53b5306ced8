// SPDX-License-Identifier: Apache-2.0
//
// Tensor computation graphs: operator/tensor specs, lifetimes under a
// device's sequential schedule, and layout-transformation chains.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "memwall/errors.hpp"

namespace memwall {

using TensorId = int;
using OpId = int;

inline constexpr OpId kNoOp = -1;

enum class TensorLayout { RowMajorNCHW, Packed4, Flat };

enum class OpKind { Conv, MatMul, ReLU, Pool, Reshape, Transpose, Gather, Norm, Add, Other };

const char* to_string(OpKind kind);
const char* to_string(TensorLayout layout);
std::optional<OpKind> op_kind_from_string(const std::string& name);
std::optional<TensorLayout> layout_from_string(const std::string& name);

/// Reshape/Transpose/Gather move data between memory layouts by default.
bool default_layout_transform(OpKind kind);

struct TensorSpec {
    TensorId id = -1;
    std::vector<std::int64_t> shape;
    std::uint64_t bytes = 0;        // product(shape) * element_width
    OpId producer = kNoOp;          // kNoOp for graph inputs
    std::vector<OpId> consumers;    // ordered by schedule step
    TensorLayout layout = TensorLayout::RowMajorNCHW;
    OpId origin_op = kNoOp;         // original (non-transform) producer index

    bool is_graph_input() const { return producer == kNoOp; }
    bool is_graph_output() const { return consumers.empty(); }
};

struct OpSpec {
    OpId id = -1;
    OpKind kind = OpKind::Other;
    std::vector<TensorId> inputs;
    std::vector<TensorId> outputs;
    double base_time_us = 0.0;      // reference-device execution time
    bool is_layout_transform = false;
    bool crosses_processor = false; // CPU/GPU boundary
};

/// Per-kind time multipliers relative to the graph's reference-device
/// base times. A kind missing from the map is an incomplete profile.
struct DeviceProfile {
    std::string name = "reference";
    std::map<OpKind, double> kind_scale;

    static DeviceProfile reference();
    /// Uniform multiplier across every kind.
    static DeviceProfile scaled(double factor, std::string name = "scaled");

    double op_time_us(const OpSpec& op) const;
};

/// Immutable after load; construction is single-threaded, reads are free.
struct ComputationGraph {
    std::vector<OpSpec> ops;              // topological order; index == step
    std::map<TensorId, TensorSpec> tensors;
    int element_width = 4;

    int step_of(OpId op) const;           // schedule lookup
    const OpSpec& op(OpId id) const;
    const TensorSpec& tensor(TensorId id) const;
    std::size_t num_steps() const { return ops.size(); }

    /// Peak of the untreated live set (every tensor resident from first to
    /// last use), in bytes. The planner's "nothing to do" threshold.
    std::uint64_t untreated_peak_bytes() const;

private:
    std::map<OpId, int> schedule_;
    friend ComputationGraph load_graph(const std::string&);
};

struct TensorLifetime {
    int first_use = 0;               // step the tensor comes alive
    int last_use = 0;                // step of its final consumer
    double freed_lifetime_us = 0.0;  // gap between producer finish and next consumer start
};

/// Parses and validates the graph document (JSON text). Ops are
/// topologically sorted (stable on file order); a cycle, a dangling tensor
/// reference, or a non-positive size raises SchemaError naming the id.
ComputationGraph load_graph(const std::string& json_text);
ComputationGraph load_graph_file(const std::string& path);
std::string serialize_graph(const ComputationGraph& graph);

/// Sequential single-stream execution at device speeds. freed_lifetime is
/// the wall time between the producer finishing and the first consumer
/// starting; graph inputs count from time zero, and tensors with no
/// consumers persist to the end of the schedule with zero freed lifetime.
std::map<TensorId, TensorLifetime> compute_lifetimes(const ComputationGraph& graph,
                                                     const DeviceProfile& device);

/// Layout-transform operators reachable from `tensor_id` through
/// transform-only paths, in depth-first order. Empty when the tensor feeds
/// its consumers directly.
std::vector<OpId> annotate_layout_chain(const ComputationGraph& graph, TensorId tensor_id);

} // namespace memwall
