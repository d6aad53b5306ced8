// SPDX-License-Identifier: Apache-2.0

#include "memwall/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "memwall/errors.hpp"

namespace memwall {

namespace {

using json = nlohmann::ordered_json;

/// Kind whose calibration entry describes this tensor's contents. A tensor
/// reshaped out of a convolution still holds convolution activations.
OpKind codec_kind(const ComputationGraph& graph, const TensorSpec& t) {
    if (t.origin_op != kNoOp) return graph.op(t.origin_op).kind;
    if (t.producer != kNoOp) return graph.op(t.producer).kind;
    return OpKind::Other;
}

} // namespace

MpsScore make_mps_score(std::uint64_t saved_memory, double freed_lifetime_us,
                        double purge_cost_us, double regain_cost_us) {
    double denom = purge_cost_us + regain_cost_us;
    if (!(denom > 0.0)) {
        throw std::invalid_argument("purge + regain cost must be positive");
    }
    MpsScore s;
    s.saved_memory = saved_memory;
    s.freed_lifetime_us = freed_lifetime_us;
    s.purge_cost_us = purge_cost_us;
    s.regain_cost_us = regain_cost_us;
    s.reward = static_cast<double>(saved_memory) * freed_lifetime_us;
    s.mps = std::isinf(denom) ? 0.0 : s.reward / denom;
    return s;
}

CodecModel CodecModel::defaults() {
    // Bench measurements on the synthetic activation corpus (b=8, eps=1e-2),
    // rounded down to stay conservative. Pinned so plans never depend on
    // the speed of the machine doing the planning.
    CodecModel m;
    m.fallback = {3.2, 190.0, 1700.0};
    m.per_kind[OpKind::ReLU] = {3.4, 200.0, 1900.0};
    m.per_kind[OpKind::Pool] = {3.4, 200.0, 1900.0};
    m.per_kind[OpKind::Conv] = {3.3, 190.0, 1700.0};
    m.per_kind[OpKind::Norm] = {3.3, 190.0, 1700.0};
    m.per_kind[OpKind::Add] = {3.3, 190.0, 1700.0};
    m.per_kind[OpKind::MatMul] = {3.3, 190.0, 1700.0};
    return m;
}

CodecModel CodecModel::scaled(double time_factor) const {
    if (!(time_factor > 0.0)) {
        throw std::invalid_argument("codec time factor must be positive");
    }
    CodecModel m = *this;
    m.fallback.compress_mb_s /= time_factor;
    m.fallback.decompress_mb_s /= time_factor;
    for (auto& [kind, e] : m.per_kind) {
        e.compress_mb_s /= time_factor;
        e.decompress_mb_s /= time_factor;
    }
    return m;
}

const CodecModel::Entry& CodecModel::entry(OpKind kind) const {
    auto it = per_kind.find(kind);
    return it == per_kind.end() ? fallback : it->second;
}

std::uint64_t CodecModel::predicted_bytes(OpKind kind, std::uint64_t full_bytes) const {
    const Entry& e = entry(kind);
    auto predicted = static_cast<std::uint64_t>(
        std::llround(static_cast<double>(full_bytes) / e.ratio));
    return std::clamp<std::uint64_t>(predicted, 1, full_bytes);
}

double CodecModel::compress_us(OpKind kind, std::uint64_t full_bytes) const {
    // MB/s with MB = 1e6 bytes is numerically bytes-per-microsecond.
    return static_cast<double>(full_bytes) / entry(kind).compress_mb_s;
}

double CodecModel::decompress_us(OpKind kind, std::uint64_t full_bytes) const {
    return static_cast<double>(full_bytes) / entry(kind).decompress_mb_s;
}

std::uint64_t MemoryPoolSim::alloc(TensorId id, std::uint64_t bytes) {
    if (map_.count(id)) {
        throw std::logic_error("pool: tensor " + std::to_string(id) + " already resident");
    }
    std::uint64_t offset = next_offset_;
    next_offset_ += bytes;
    map_[id] = {offset, bytes};
    used_ += bytes;
    peak_ = std::max(peak_, used_);
    return offset;
}

void MemoryPoolSim::release(TensorId id) {
    auto it = map_.find(id);
    if (it == map_.end()) {
        throw std::logic_error("pool: tensor " + std::to_string(id) + " not resident");
    }
    used_ -= it->second.second;
    map_.erase(it);
}

std::uint64_t MemoryPoolSim::resident_bytes(TensorId id) const {
    auto it = map_.find(id);
    return it == map_.end() ? 0 : it->second.second;
}

const char* to_string(PlanAction action) {
    switch (action) {
    case PlanAction::Evict: return "EVICT";
    case PlanAction::Compress: return "COMPRESS";
    case PlanAction::Decompress: return "DECOMPRESS";
    case PlanAction::Recompute: return "RECOMPUTE";
    case PlanAction::Alloc: return "ALLOC";
    }
    return "?";
}

double recompute_cost(const ComputationGraph& graph, TensorId tensor_id,
                      const DeviceProfile& device) {
    const TensorSpec& t = graph.tensor(tensor_id);
    if (t.producer == kNoOp) {
        throw SchemaError("tensor " + std::to_string(tensor_id) +
                          " is a graph input and has no producer to re-run");
    }
    double cost = device.op_time_us(graph.op(t.producer));
    std::vector<OpId> chain = annotate_layout_chain(graph, tensor_id);
    double psi = 1.0;
    double chain_sum = 0.0;
    for (OpId op_id : chain) {
        const OpSpec& op = graph.op(op_id);
        chain_sum += device.op_time_us(op);
        if (op.crosses_processor) psi = 2.0;
    }
    return cost + psi * chain_sum;
}

std::pair<MpsScore, MpsScore> score_tensor(const ComputationGraph& graph, TensorId tensor_id,
                                           const DeviceProfile& device,
                                           const CodecModel& codec_model) {
    const TensorSpec& t = graph.tensor(tensor_id);
    auto lifetimes = compute_lifetimes(graph, device);
    double flt = lifetimes.at(tensor_id).freed_lifetime_us;

    MpsScore evict;
    if (t.producer == kNoOp) {
        evict = make_mps_score(t.bytes, flt, 0.0, std::numeric_limits<double>::infinity());
    } else {
        evict = make_mps_score(t.bytes, flt, 0.0, recompute_cost(graph, tensor_id, device));
    }

    OpKind kind = codec_kind(graph, t);
    std::uint64_t compressed = codec_model.predicted_bytes(kind, t.bytes);
    MpsScore compress = make_mps_score(t.bytes - compressed, flt,
                                       codec_model.compress_us(kind, t.bytes),
                                       codec_model.decompress_us(kind, t.bytes));
    return {evict, compress};
}

ReclaimChoice max_mps_tensor(const std::vector<ReclaimCandidate>& candidates) {
    bool found = false;
    ReclaimChoice best;
    double best_mps = 0.0;
    std::uint64_t best_saved = 0;
    for (const ReclaimCandidate& c : candidates) {
        if (!c.can_evict && !c.can_compress) continue;
        PlanAction action;
        const MpsScore* score;
        if (c.can_evict && c.can_compress) {
            // Eviction must win strictly; a tie compresses.
            if (c.evict.mps > c.compress.mps) {
                action = PlanAction::Evict;
                score = &c.evict;
            } else {
                action = PlanAction::Compress;
                score = &c.compress;
            }
        } else if (c.can_evict) {
            action = PlanAction::Evict;
            score = &c.evict;
        } else {
            action = PlanAction::Compress;
            score = &c.compress;
        }
        bool better = false;
        if (!found) {
            better = true;
        } else if (score->mps != best_mps) {
            better = score->mps > best_mps;
        } else if (score->saved_memory != best_saved) {
            better = score->saved_memory > best_saved;
        } else {
            better = c.tensor < best.tensor;
        }
        if (better) {
            found = true;
            best = {c.tensor, action};
            best_mps = score->mps;
            best_saved = score->saved_memory;
        }
    }
    if (!found) {
        throw InfeasibleBudgetError("no reclaimable tensor is available", 0);
    }
    return best;
}

namespace {

/// Immutable per-graph data shared by plan generation and replay.
struct PlanContext {
    const ComputationGraph& graph;
    const DeviceProfile& device;
    const CodecModel& model;

    std::vector<double> op_start_us;          // untreated timeline
    double schedule_end_us = 0.0;
    std::map<TensorId, std::vector<int>> consume_steps; // ascending
    std::map<TensorId, double> recompute_us;  // cached, producers only
    std::map<TensorId, std::uint64_t> compressed_bytes;
    std::map<TensorId, double> compress_cost_us;
    std::map<TensorId, double> decompress_cost_us;

    PlanContext(const ComputationGraph& g, const DeviceProfile& d, const CodecModel& m)
        : graph(g), device(d), model(m) {
        op_start_us.resize(g.ops.size(), 0.0);
        double t = 0.0;
        for (std::size_t s = 0; s < g.ops.size(); ++s) {
            op_start_us[s] = t;
            t += d.op_time_us(g.ops[s]);
        }
        schedule_end_us = t;
        for (const auto& [id, tensor] : g.tensors) {
            std::vector<int> steps;
            for (OpId c : tensor.consumers) steps.push_back(g.step_of(c));
            std::sort(steps.begin(), steps.end());
            consume_steps[id] = std::move(steps);
            if (tensor.producer != kNoOp) {
                recompute_us[id] = recompute_cost(g, id, d);
            }
            OpKind kind = codec_kind(g, tensor);
            compressed_bytes[id] = m.predicted_bytes(kind, tensor.bytes);
            compress_cost_us[id] = m.compress_us(kind, tensor.bytes);
            decompress_cost_us[id] = m.decompress_us(kind, tensor.bytes);
        }
    }

    /// First consumer at a step strictly after `step`, or -1.
    int next_use_after(TensorId id, int step) const {
        const auto& steps = consume_steps.at(id);
        auto it = std::upper_bound(steps.begin(), steps.end(), step);
        return it == steps.end() ? -1 : *it;
    }

    int last_use(TensorId id) const {
        const auto& steps = consume_steps.at(id);
        return steps.empty() ? -1 : steps.back();
    }
};

std::uint64_t max_pinned_working_set(const PlanContext& ctx) {
    std::uint64_t worst = 0;
    for (const OpSpec& op : ctx.graph.ops) {
        std::set<TensorId> pinned(op.inputs.begin(), op.inputs.end());
        pinned.insert(op.outputs.begin(), op.outputs.end());
        std::uint64_t sum = 0;
        for (TensorId id : pinned) sum += ctx.graph.tensor(id).bytes;
        worst = std::max(worst, sum);
    }
    return worst;
}

/// Bytes no plan can get below: the running op's operands stay pinned,
/// finished results stay resident to the end, and a graph input that still
/// has readers shrinks at best to its compressed size (there is no producer
/// to rebuild it from).
std::uint64_t static_budget_floor(const PlanContext& ctx) {
    const ComputationGraph& g = ctx.graph;
    std::uint64_t worst = 0;
    std::uint64_t results_so_far = 0;
    for (const OpSpec& op : g.ops) {
        int s = g.step_of(op.id);
        std::set<TensorId> pinned(op.inputs.begin(), op.inputs.end());
        pinned.insert(op.outputs.begin(), op.outputs.end());
        std::uint64_t here = results_so_far;
        for (TensorId id : pinned) here += g.tensor(id).bytes;
        for (const auto& [id, t] : g.tensors) {
            if (!t.is_graph_input() || pinned.count(id)) continue;
            if (ctx.next_use_after(id, s) != -1)
                here += std::min(t.bytes, ctx.compressed_bytes.at(id));
        }
        worst = std::max(worst, here);
        for (TensorId id : op.outputs) {
            if (g.tensor(id).is_graph_output()) results_so_far += g.tensor(id).bytes;
        }
    }
    return worst;
}

struct Planner {
    const PlanContext& ctx;
    std::uint64_t budget;
    PlanStrategy strategy;

    MemoryPoolSim pool;
    std::map<TensorId, TensorState> state;
    std::map<TensorId, int> pins;
    std::vector<PlannedAction> actions;

    Planner(const PlanContext& ctx, std::uint64_t budget, PlanStrategy strategy)
        : ctx(ctx), budget(budget), strategy(strategy), pool(budget) {}

    bool resident(TensorId id) const {
        auto it = state.find(id);
        return it != state.end() && it->second != TensorState::Evicted;
    }

    void pin(TensorId id) { ++pins[id]; }
    void unpin(TensorId id) { --pins[id]; }
    bool pinned(TensorId id) const {
        auto it = pins.find(id);
        return it != pins.end() && it->second > 0;
    }

    /// Evicts or compresses until `extra` more bytes fit under the budget.
    void make_room(std::uint64_t extra, int step) {
        while (pool.used() + extra > budget) {
            // Garbage goes first: a resident tensor nobody reads again
            // (typically one revived only to feed a recompute) is free to
            // drop, whatever its rebuild would cost.
            bool dropped_garbage = false;
            for (const auto& [id, st] : state) {
                if (st == TensorState::Evicted || pinned(id)) continue;
                if (ctx.graph.tensor(id).is_graph_output()) continue;
                if (ctx.next_use_after(id, step - 1) != -1) continue;
                pool.release(id);
                state[id] = TensorState::Evicted;
                actions.push_back({step, id, PlanAction::Evict});
                dropped_garbage = true;
                break;
            }
            if (dropped_garbage) continue;

            std::vector<ReclaimCandidate> candidates;
            for (const auto& [id, st] : state) {
                if (st == TensorState::Evicted || pinned(id)) continue;
                const TensorSpec& t = ctx.graph.tensor(id);
                if (t.is_graph_output()) continue; // results must survive
                int next = ctx.next_use_after(id, step - 1);
                if (next == -1) continue; // handled above
                // Discarding frees the bytes until the next reader forces
                // them back.
                double flt = ctx.op_start_us[next] - ctx.op_start_us[step];

                ReclaimCandidate c;
                c.tensor = id;
                bool has_producer = t.producer != kNoOp;
                if (st == TensorState::Live) {
                    if (has_producer) {
                        c.evict = make_mps_score(t.bytes, flt, 0.0, ctx.recompute_us.at(id));
                        c.can_evict = strategy != PlanStrategy::CompressOnly;
                    }
                    std::uint64_t compressed = ctx.compressed_bytes.at(id);
                    if (compressed < t.bytes) {
                        c.compress = make_mps_score(t.bytes - compressed, flt,
                                                    ctx.compress_cost_us.at(id),
                                                    ctx.decompress_cost_us.at(id));
                        c.can_compress = strategy != PlanStrategy::EvictOnly;
                    }
                } else if (has_producer) {
                    // Compressed: dropping the remnant means recomputing
                    // from scratch later.
                    c.evict = make_mps_score(pool.resident_bytes(id), flt, 0.0,
                                             ctx.recompute_us.at(id));
                    c.can_evict = strategy != PlanStrategy::CompressOnly;
                }
                if (c.can_evict || c.can_compress) candidates.push_back(c);
            }
            if (candidates.empty()) {
                throw InfeasibleBudgetError(
                    "memory budget of " + std::to_string(budget) +
                        " bytes cannot fit the working set at step " + std::to_string(step) +
                        "; at least " + std::to_string(pool.used() + extra) + " bytes required",
                    pool.used() + extra);
            }
            ReclaimChoice choice = max_mps_tensor(candidates);
            if (choice.action == PlanAction::Evict) {
                pool.release(choice.tensor);
                state[choice.tensor] = TensorState::Evicted;
            } else {
                pool.release(choice.tensor);
                pool.alloc(choice.tensor, ctx.compressed_bytes.at(choice.tensor));
                state[choice.tensor] = TensorState::Compressed;
            }
            actions.push_back({step, choice.tensor, choice.action});
        }
    }

    /// Brings a tensor back to full residency, re-materializing the
    /// producer's own missing inputs first.
    void regain(TensorId id, int step) {
        auto it = state.find(id);
        TensorState st = it == state.end() ? TensorState::Evicted : it->second;
        if (st == TensorState::Live) return;
        const TensorSpec& t = ctx.graph.tensor(id);
        if (st == TensorState::Compressed) {
            std::uint64_t compressed = pool.resident_bytes(id);
            make_room(t.bytes - compressed, step);
            pool.release(id);
            pool.alloc(id, t.bytes);
            state[id] = TensorState::Live;
            actions.push_back({step, id, PlanAction::Decompress});
            return;
        }
        if (t.producer == kNoOp) {
            // A graph input retired after its last scheduled reader but
            // needed again by a recompute chain: re-fetch it. Inputs live
            // outside the pool, so this is an allocation, not a recompute.
            make_room(t.bytes, step);
            pool.alloc(id, t.bytes);
            state[id] = TensorState::Live;
            actions.push_back({step, id, PlanAction::Alloc});
            return;
        }
        const OpSpec& producer = ctx.graph.op(t.producer);
        for (TensorId in : producer.inputs) pin(in);
        for (TensorId in : producer.inputs) regain(in, step);
        make_room(t.bytes, step);
        pool.alloc(id, t.bytes);
        state[id] = TensorState::Live;
        actions.push_back({step, id, PlanAction::Recompute});
        for (TensorId in : producer.inputs) unpin(in);
    }

    ExecutionPlan run() {
        // Graph inputs are resident from the start.
        for (const auto& [id, t] : ctx.graph.tensors) {
            if (!t.is_graph_input()) continue;
            make_room(t.bytes, 0);
            pool.alloc(id, t.bytes);
            state[id] = TensorState::Live;
            actions.push_back({0, id, PlanAction::Alloc});
        }
        for (int s = 0; s < static_cast<int>(ctx.graph.num_steps()); ++s) {
            const OpSpec& op = ctx.graph.ops[s];
            for (TensorId id : op.inputs) pin(id);
            for (TensorId id : op.outputs) pin(id);
            std::set<TensorId> seen;
            for (TensorId id : op.inputs) {
                if (seen.insert(id).second) regain(id, s);
            }
            for (TensorId id : op.outputs) {
                make_room(ctx.graph.tensor(id).bytes, s);
                pool.alloc(id, ctx.graph.tensor(id).bytes);
                state[id] = TensorState::Live;
                actions.push_back({s, id, PlanAction::Alloc});
            }
            for (TensorId id : op.inputs) unpin(id);
            for (TensorId id : op.outputs) unpin(id);
            // Tensors past their final reader retire; outputs persist.
            for (const auto& [id, t] : ctx.graph.tensors) {
                if (t.is_graph_output() || !resident(id)) continue;
                if (ctx.last_use(id) <= s) {
                    pool.release(id);
                    state[id] = TensorState::Evicted;
                }
            }
        }
        ExecutionPlan plan;
        plan.actions = std::move(actions);
        plan.budget = budget;
        return plan;
    }
};

ExecutionPlan generate_single(const ComputationGraph& graph, const DeviceProfile& device,
                              std::uint64_t budget, const CodecModel& codec_model,
                              PlanStrategy strategy) {
    PlanContext ctx(graph, device, codec_model);
    std::uint64_t floor = max_pinned_working_set(ctx);
    if (floor > budget) {
        throw InfeasibleBudgetError(
            "memory budget of " + std::to_string(budget) +
                " bytes is below the largest single-op working set; at least " +
                std::to_string(floor) + " bytes required",
            floor);
    }
    Planner planner(ctx, budget, strategy);
    ExecutionPlan plan = planner.run();

    ReplayReport report = replay_plan(plan, graph, device, codec_model);
    if (!report.violations.empty()) {
        throw std::logic_error("generated plan failed its own replay: " +
                               report.violations.front());
    }
    plan.est_latency_us = report.latency_us;
    plan.peak_memory = report.peak_memory;
    return plan;
}

// Budgets are quantized to this many rungs between the pinned floor and the
// untreated peak before planning.
constexpr int kBudgetRungs = 12;

} // namespace

std::uint64_t min_feasible_budget(const ComputationGraph& graph, const CodecModel& codec_model) {
    DeviceProfile reference = DeviceProfile::reference();
    PlanContext ctx(graph, reference, codec_model);
    return std::max(max_pinned_working_set(ctx), static_budget_floor(ctx));
}

ExecutionPlan generate_plan(const ComputationGraph& graph, const DeviceProfile& device,
                            std::uint64_t budget, const CodecModel& codec_model,
                            PlanStrategy strategy) {
    PlanContext ctx(graph, device, codec_model);
    std::uint64_t floor = std::max(max_pinned_working_set(ctx), static_budget_floor(ctx));
    if (floor > budget) {
        throw InfeasibleBudgetError(
            "memory budget of " + std::to_string(budget) +
                " bytes is below the irreducible working set; at least " +
                std::to_string(floor) + " bytes required",
            floor);
    }

    // A raw greedy pass at exactly the requested budget has two rough
    // edges: a few extra bytes can steer it into a slower schedule, and
    // the mixed pass can corner itself where a single-action policy would
    // not.  Planning instead at every rung of a fixed budget ladder that
    // fits under the request — and, for the mixed strategy, also with
    // both single-action policies — and keeping the cheapest feasible
    // schedule smooths both out: a bigger budget only ever widens the
    // candidate set, so latency is weakly monotone in the budget, and the
    // mix never loses to a policy it subsumes.
    std::uint64_t peak = std::max(graph.untreated_peak_bytes(), floor);
    auto rung_at = [&](int k) {
        return floor + (peak - floor) * static_cast<std::uint64_t>(k) / kBudgetRungs;
    };

    std::vector<PlanStrategy> passes;
    if (strategy == PlanStrategy::Hybrid) {
        passes = {PlanStrategy::Hybrid, PlanStrategy::EvictOnly, PlanStrategy::CompressOnly};
    } else {
        passes = {strategy};
    }

    std::optional<ExecutionPlan> best;
    bool tried_any = false;
    std::uint64_t prev_rung = 0;
    for (int k = kBudgetRungs; k >= 0; --k) {
        std::uint64_t rung = rung_at(k);
        if (rung > budget) continue;
        if (tried_any && rung == prev_rung) continue;
        tried_any = true;
        prev_rung = rung;
        for (PlanStrategy s : passes) {
            try {
                ExecutionPlan plan = generate_single(graph, device, rung, codec_model, s);
                if (!best || plan.est_latency_us < best->est_latency_us)
                    best = std::move(plan);
            } catch (const InfeasibleBudgetError&) {
                // this rung is too tight for this pass; others may still fit
            }
        }
    }
    if (!best) {
        // Every rung under the request failed, and any budget short of the
        // next rung up quantizes to those same rungs. (The top rung, the
        // untreated peak, always plans cleanly, so some higher rung works.)
        std::uint64_t next_rung = peak;
        for (int k = 0; k <= kBudgetRungs; ++k) {
            if (rung_at(k) > budget) {
                next_rung = rung_at(k);
                break;
            }
        }
        throw InfeasibleBudgetError(
            "memory budget of " + std::to_string(budget) +
                " bytes cannot fit a feasible schedule; at least " +
                std::to_string(next_rung) + " bytes required",
            next_rung);
    }
    best->budget = budget;
    return *best;
}

ReplayReport replay_plan(const ExecutionPlan& plan, const ComputationGraph& graph,
                         const DeviceProfile& device, const CodecModel& codec_model) {
    PlanContext ctx(graph, device, codec_model);
    MemoryPoolSim pool(plan.budget);
    std::map<TensorId, TensorState> state;
    ReplayReport report;

    auto resident = [&](TensorId id) {
        auto it = state.find(id);
        return it != state.end() && it->second != TensorState::Evicted;
    };
    auto violation = [&](int step, const std::string& what) {
        report.violations.push_back("step " + std::to_string(step) + ": " + what);
    };
    auto check_budget = [&](int step) {
        if (pool.used() > plan.budget) {
            violation(step, "budget exceeded (" + std::to_string(pool.used()) + " > " +
                                std::to_string(plan.budget) + " bytes)");
        }
    };

    std::size_t ai = 0;
    for (int s = 0; s < static_cast<int>(graph.num_steps()); ++s) {
        while (ai < plan.actions.size() && plan.actions[ai].step == s) {
            const PlannedAction& a = plan.actions[ai++];
            TensorId id = a.tensor;
            if (!graph.tensors.count(id)) {
                violation(s, std::string(to_string(a.action)) + " of unknown tensor " +
                                 std::to_string(id));
                continue;
            }
            const TensorSpec& t = graph.tensor(id);
            switch (a.action) {
            case PlanAction::Alloc:
                if (resident(id)) {
                    violation(s, "ALLOC of already-resident tensor " + std::to_string(id));
                    break;
                }
                pool.alloc(id, t.bytes);
                state[id] = TensorState::Live;
                break;
            case PlanAction::Evict:
                if (!resident(id)) {
                    violation(s, "EVICT of non-resident tensor " + std::to_string(id));
                    break;
                }
                pool.release(id);
                state[id] = TensorState::Evicted;
                break;
            case PlanAction::Compress:
                if (!resident(id) || state[id] != TensorState::Live) {
                    violation(s, "COMPRESS of non-live tensor " + std::to_string(id));
                    break;
                }
                pool.release(id);
                pool.alloc(id, ctx.compressed_bytes.at(id));
                state[id] = TensorState::Compressed;
                report.latency_us += ctx.compress_cost_us.at(id);
                break;
            case PlanAction::Decompress:
                if (!resident(id) || state[id] != TensorState::Compressed) {
                    violation(s, "DECOMPRESS of non-compressed tensor " + std::to_string(id));
                    break;
                }
                pool.release(id);
                pool.alloc(id, t.bytes);
                state[id] = TensorState::Live;
                report.latency_us += ctx.decompress_cost_us.at(id);
                break;
            case PlanAction::Recompute: {
                if (resident(id)) {
                    violation(s, "RECOMPUTE of resident tensor " + std::to_string(id));
                    break;
                }
                if (t.producer == kNoOp) {
                    violation(s, "RECOMPUTE of graph input " + std::to_string(id));
                    break;
                }
                for (TensorId in : graph.op(t.producer).inputs) {
                    if (!resident(in) || state[in] != TensorState::Live) {
                        violation(s, "RECOMPUTE of tensor " + std::to_string(id) +
                                         " reads missing tensor " + std::to_string(in));
                    }
                }
                pool.alloc(id, t.bytes);
                state[id] = TensorState::Live;
                report.latency_us += ctx.recompute_us.at(id);
                break;
            }
            }
            check_budget(s);
        }

        const OpSpec& op = graph.ops[s];
        for (TensorId id : op.inputs) {
            if (!resident(id) || state[id] != TensorState::Live) {
                violation(s, "op " + std::to_string(op.id) + " reads missing tensor " +
                                 std::to_string(id));
            }
        }
        for (TensorId id : op.outputs) {
            if (!resident(id)) {
                violation(s, "op " + std::to_string(op.id) + " writes unallocated tensor " +
                                 std::to_string(id));
            }
        }
        report.latency_us += device.op_time_us(op);
        check_budget(s);

        for (const auto& [id, t] : graph.tensors) {
            if (t.is_graph_output() || !resident(id)) continue;
            if (ctx.last_use(id) <= s) {
                pool.release(id);
                state[id] = TensorState::Evicted;
            }
        }
    }
    while (ai < plan.actions.size()) {
        violation(static_cast<int>(graph.num_steps()),
                  "action at out-of-range step " + std::to_string(plan.actions[ai].step));
        ++ai;
    }
    report.peak_memory = pool.peak();
    return report;
}

std::string serialize_plan(const ExecutionPlan& plan) {
    json doc;
    doc["budget"] = plan.budget;
    doc["est_latency"] = plan.est_latency_us;
    doc["peak_memory"] = plan.peak_memory;
    doc["actions"] = json::array();
    for (const PlannedAction& a : plan.actions) {
        doc["actions"].push_back({{"step", a.step}, {"tensor", a.tensor},
                                  {"action", to_string(a.action)}});
    }
    return doc.dump(2) + "\n";
}

ExecutionPlan parse_plan(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("plan document is not valid JSON: ") + e.what());
    }
    ExecutionPlan plan;
    try {
        plan.budget = doc.at("budget").get<std::uint64_t>();
        plan.est_latency_us = doc.at("est_latency").get<double>();
        plan.peak_memory = doc.at("peak_memory").get<std::uint64_t>();
        for (const auto& item : doc.at("actions")) {
            PlannedAction a;
            a.step = item.at("step").get<int>();
            a.tensor = item.at("tensor").get<TensorId>();
            std::string name = item.at("action").get<std::string>();
            if (name == "EVICT") a.action = PlanAction::Evict;
            else if (name == "COMPRESS") a.action = PlanAction::Compress;
            else if (name == "DECOMPRESS") a.action = PlanAction::Decompress;
            else if (name == "RECOMPUTE") a.action = PlanAction::Recompute;
            else if (name == "ALLOC") a.action = PlanAction::Alloc;
            else throw SchemaError("unknown plan action \"" + name + "\"");
            plan.actions.push_back(a);
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("plan document is malformed: ") + e.what());
    }
    return plan;
}

} // namespace memwall
