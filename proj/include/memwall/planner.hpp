// SPDX-License-Identifier: Apache-2.0
//
// Budget-constrained execution planning. Tensors are scored by memory
// reduced per second (reward = bytes saved x freed lifetime, divided by
// purge + regain cost); when an allocation would overflow the budget the
// planner greedily discards the highest-scoring resident tensor, choosing
// between eviction (free now, recompute later) and compression (shrink
// now, decompress later) per tensor.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "memwall/graph.hpp"

namespace memwall {

struct MpsScore {
    std::uint64_t saved_memory = 0; // bytes freed by the action
    double freed_lifetime_us = 0.0; // how long the bytes stay free
    double purge_cost_us = 0.0;     // time to discard
    double regain_cost_us = 0.0;    // time to restore
    double reward = 0.0;            // saved_memory * freed_lifetime_us
    double mps = 0.0;               // reward / (purge + regain)
};

/// Computes the derived fields; purge + regain must be positive unless the
/// action is impossible (regain_cost_us = infinity scores zero).
MpsScore make_mps_score(std::uint64_t saved_memory, double freed_lifetime_us,
                        double purge_cost_us, double regain_cost_us);

/// Per-producer-kind calibration of the activation codec: how small the
/// bitstream gets and how fast both directions run. Filled from bench
/// measurements on the synthetic corpus; constants are pinned so planning
/// is reproducible across hosts.
struct CodecModel {
    struct Entry {
        double ratio = 3.2;              // original / compressed
        double compress_mb_s = 190.0;    // MB = 1e6 bytes
        double decompress_mb_s = 1700.0;
    };
    std::map<OpKind, Entry> per_kind;
    Entry fallback;

    static CodecModel defaults();
    /// Same ratios with both throughputs divided by `time_factor`; used to
    /// model slower device tiers.
    CodecModel scaled(double time_factor) const;

    const Entry& entry(OpKind kind) const;
    std::uint64_t predicted_bytes(OpKind kind, std::uint64_t full_bytes) const;
    double compress_us(OpKind kind, std::uint64_t full_bytes) const;
    double decompress_us(OpKind kind, std::uint64_t full_bytes) const;
};

enum class TensorState { Live, Evicted, Compressed };

struct TensorRuntimeState {
    TensorState state = TensorState::Evicted;
    std::uint64_t address = 0;        // pool offset, valid iff resident
    std::uint64_t resident_bytes = 0; // full if Live, compressed if Compressed, 0 if Evicted
};

/// Byte-accounting pool. Offsets are virtual (monotone, never reused);
/// fragmentation is out of scope. The pool itself never refuses an
/// allocation — budget enforcement is the planner's job.
class MemoryPoolSim {
public:
    explicit MemoryPoolSim(std::uint64_t budget) : budget_(budget) {}

    std::uint64_t alloc(TensorId id, std::uint64_t bytes);
    void release(TensorId id);
    bool resident(TensorId id) const { return map_.count(id) != 0; }
    std::uint64_t resident_bytes(TensorId id) const;

    std::uint64_t budget() const { return budget_; }
    std::uint64_t used() const { return used_; }
    std::uint64_t peak() const { return peak_; }

private:
    std::uint64_t budget_ = 0;
    std::uint64_t used_ = 0;
    std::uint64_t peak_ = 0;
    std::uint64_t next_offset_ = 0;
    std::map<TensorId, std::pair<std::uint64_t, std::uint64_t>> map_; // id -> (offset, bytes)
};

enum class PlanAction { Evict, Compress, Decompress, Recompute, Alloc };

const char* to_string(PlanAction action);

struct PlannedAction {
    int step = 0; // schedule index the action precedes (or equals, for Alloc)
    TensorId tensor = -1;
    PlanAction action = PlanAction::Alloc;
};

struct ExecutionPlan {
    std::vector<PlannedAction> actions;
    double est_latency_us = 0.0;
    std::uint64_t peak_memory = 0;
    std::uint64_t budget = 0;
};

enum class PlanStrategy { Hybrid, EvictOnly, CompressOnly };

/// Time to rebuild a tensor: producer op time plus the layout-transform
/// chain hanging off it, doubled when the chain hops processors. Costs of
/// re-materializing the producer's own missing inputs accrue separately at
/// plan time. Throws SchemaError for graph inputs (nothing to re-run).
double recompute_cost(const ComputationGraph& graph, TensorId tensor_id,
                      const DeviceProfile& device);

/// Static per-tensor scores for both discard techniques, using the
/// tensor's scheduled freed lifetime. Eviction saves the full buffer at
/// zero purge cost; compression saves the predicted delta at codec cost.
/// Graph inputs cannot be recomputed: their eviction score is zero with
/// infinite regain cost.
std::pair<MpsScore, MpsScore> score_tensor(const ComputationGraph& graph, TensorId tensor_id,
                                           const DeviceProfile& device,
                                           const CodecModel& codec_model);

struct ReclaimCandidate {
    TensorId tensor = -1;
    MpsScore evict;    // saved = resident bytes now
    MpsScore compress; // meaningful only when compressible
    bool can_evict = false;
    bool can_compress = false;
};

struct ReclaimChoice {
    TensorId tensor = -1;
    PlanAction action = PlanAction::Evict;
};

/// Picks the candidate with the highest best-technique score; ties go to
/// the larger saving, then the lower tensor id. Per tensor, eviction wins
/// only when it scores strictly higher than compression. Throws
/// InfeasibleBudgetError when no candidate is usable.
ReclaimChoice max_mps_tensor(const std::vector<ReclaimCandidate>& candidates);

/// Lower bound on workable budgets: the running op's working set plus
/// everything that cannot shrink below its predicted compressed size. No
/// plan exists below this; the greedy search may still reject budgets
/// slightly above it. A device-independent byte property of (graph, codec).
std::uint64_t min_feasible_budget(const ComputationGraph& graph, const CodecModel& codec_model);

/// Walks the schedule, re-materializing discarded inputs and allocating
/// outputs; on overflow, reclaims best-scoring tensors until the
/// allocation fits. The returned plan replays cleanly within budget.
/// Throws InfeasibleBudgetError (with the minimum workable budget) when a
/// pinned working set alone cannot fit.
ExecutionPlan generate_plan(const ComputationGraph& graph, const DeviceProfile& device,
                            std::uint64_t budget, const CodecModel& codec_model,
                            PlanStrategy strategy = PlanStrategy::Hybrid);

struct ReplayReport {
    std::uint64_t peak_memory = 0;
    double latency_us = 0.0;
    std::vector<std::string> violations;
};

/// Deterministic re-execution of a plan through the pool simulator.
/// Feasibility problems (reading a discarded tensor, exceeding budget)
/// are reported as violations, not exceptions. For plans from
/// generate_plan the latency matches est_latency_us exactly.
ReplayReport replay_plan(const ExecutionPlan& plan, const ComputationGraph& graph,
                         const DeviceProfile& device,
                         const CodecModel& codec_model = CodecModel::defaults());

std::string serialize_plan(const ExecutionPlan& plan);
ExecutionPlan parse_plan(const std::string& json_text);

} // namespace memwall
