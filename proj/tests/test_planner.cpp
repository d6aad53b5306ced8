// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "memwall/errors.hpp"
#include "memwall/planner.hpp"
#include "memwall/synth.hpp"

using namespace memwall;

namespace {

std::string fixture(const std::string& name) {
    return std::string(MEMWALL_FIXTURE_DIR) + "/" + name;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// All tensors 16x16x16 float = 16384 bytes.
constexpr std::uint64_t kS = 16384;

// A skip-heavy block: the ReLU output sits idle across the widest step and
// is the cheap thing to rebuild.
const char* kSkipGraph = R"({
  "element_width": 4,
  "ops": [
    {"id": 0, "kind": "ReLU", "inputs": [0], "outputs": [1], "base_time_us": 50.0},
    {"id": 1, "kind": "Conv", "inputs": [0], "outputs": [2], "base_time_us": 1000.0},
    {"id": 2, "kind": "Norm", "inputs": [0], "outputs": [3], "base_time_us": 120.0},
    {"id": 3, "kind": "Add",  "inputs": [2, 3], "outputs": [5], "base_time_us": 70.0},
    {"id": 4, "kind": "Add",  "inputs": [1, 5], "outputs": [6], "base_time_us": 90.0}
  ],
  "tensors": [
    {"id": 0, "shape": [16, 16, 16]},
    {"id": 1, "shape": [16, 16, 16]},
    {"id": 2, "shape": [16, 16, 16]},
    {"id": 3, "shape": [16, 16, 16]},
    {"id": 5, "shape": [16, 16, 16]},
    {"id": 6, "shape": [16, 16, 16]}
  ]
})";

// Here the idle tensor costs 50 ms to recompute, so shrinking it in place
// beats dropping it.
const char* kExpensiveProducerGraph = R"({
  "element_width": 4,
  "ops": [
    {"id": 0, "kind": "Conv", "inputs": [0], "outputs": [1], "base_time_us": 50000.0},
    {"id": 1, "kind": "Conv", "inputs": [0], "outputs": [2], "base_time_us": 900.0},
    {"id": 2, "kind": "Add",  "inputs": [0, 2], "outputs": [3], "base_time_us": 120.0},
    {"id": 3, "kind": "Add",  "inputs": [1, 3], "outputs": [4], "base_time_us": 70.0}
  ],
  "tensors": [
    {"id": 0, "shape": [16, 16, 16]},
    {"id": 1, "shape": [16, 16, 16]},
    {"id": 2, "shape": [16, 16, 16]},
    {"id": 3, "shape": [16, 16, 16]},
    {"id": 4, "shape": [16, 16, 16]}
  ]
})";

int count_actions(const ExecutionPlan& plan, PlanAction kind) {
    int n = 0;
    for (const auto& a : plan.actions) n += a.action == kind;
    return n;
}

// ---------------------------------------------------------------------------
// Independent replay oracle: walks a plan with its own bookkeeping, derived
// from the documented contract rather than from the planner's code.
// ---------------------------------------------------------------------------
struct OracleReplay {
    bool feasible = true;
    std::uint64_t peak = 0;
    double latency = 0.0;
};

OpKind oracle_codec_kind(const ComputationGraph& g, TensorId id) {
    const TensorSpec& t = g.tensor(id);
    if (t.origin_op != kNoOp) return g.op(t.origin_op).kind;
    if (t.producer != kNoOp) return g.op(t.producer).kind;
    return OpKind::Other;
}

OracleReplay oracle_replay(const ExecutionPlan& plan, const ComputationGraph& g,
                           const DeviceProfile& dev, const CodecModel& model) {
    enum Form { Gone, Comp, Full };
    std::map<TensorId, Form> form;
    std::map<TensorId, int> last_use;
    for (const auto& [id, t] : g.tensors) {
        int last = -1;
        for (OpId c : t.consumers) last = std::max(last, g.step_of(c));
        last_use[id] = last;
        form[id] = Gone;
    }
    auto full = [&](TensorId id) { return g.tensor(id).bytes; };
    auto comp = [&](TensorId id) {
        return model.predicted_bytes(oracle_codec_kind(g, id), full(id));
    };

    OracleReplay out;
    std::uint64_t used = 0;
    auto track = [&] {
        out.peak = std::max(out.peak, used);
        if (used > plan.budget) out.feasible = false;
    };

    std::size_t ai = 0;
    for (int s = 0; s < static_cast<int>(g.num_steps()); ++s) {
        for (; ai < plan.actions.size() && plan.actions[ai].step == s; ++ai) {
            const PlannedAction& a = plan.actions[ai];
            TensorId id = a.tensor;
            OpKind kind = oracle_codec_kind(g, id);
            switch (a.action) {
            case PlanAction::Alloc:
                if (form[id] != Gone) { out.feasible = false; break; }
                used += full(id);
                form[id] = Full;
                break;
            case PlanAction::Evict:
                if (form[id] == Gone) { out.feasible = false; break; }
                used -= form[id] == Full ? full(id) : comp(id);
                form[id] = Gone;
                break;
            case PlanAction::Compress:
                if (form[id] != Full) { out.feasible = false; break; }
                used -= full(id) - comp(id);
                form[id] = Comp;
                out.latency += model.compress_us(kind, full(id));
                break;
            case PlanAction::Decompress:
                if (form[id] != Comp) { out.feasible = false; break; }
                used += full(id) - comp(id);
                form[id] = Full;
                out.latency += model.decompress_us(kind, full(id));
                break;
            case PlanAction::Recompute:
                if (form[id] != Gone || g.tensor(id).producer == kNoOp) {
                    out.feasible = false;
                    break;
                }
                for (TensorId in : g.op(g.tensor(id).producer).inputs) {
                    if (form[in] != Full) out.feasible = false;
                }
                used += full(id);
                form[id] = Full;
                out.latency += recompute_cost(g, id, dev);
                break;
            }
            track();
        }
        const OpSpec& op = g.ops[s];
        for (TensorId id : op.inputs) {
            if (form[id] != Full) out.feasible = false;
        }
        for (TensorId id : op.outputs) {
            if (form[id] != Full) out.feasible = false;
        }
        out.latency += dev.op_time_us(op);
        track();
        for (const auto& [id, t] : g.tensors) {
            if (t.is_graph_output() || form[id] == Gone) continue;
            if (last_use[id] <= s) {
                used -= form[id] == Full ? full(id) : comp(id);
                form[id] = Gone;
            }
        }
    }
    if (ai != plan.actions.size()) out.feasible = false;
    return out;
}

// ---------------------------------------------------------------------------
// Static-assignment oracle: every discardable tensor gets a fixed policy
// (keep / drop after use / shrink after use); exhaustive search over all
// assignments gives the best static cost for small graphs.
// ---------------------------------------------------------------------------
struct StaticSim {
    const ComputationGraph& g;
    const DeviceProfile& dev;
    const CodecModel& model;
    std::uint64_t budget;

    enum Form { Gone, Comp, Full };
    std::map<TensorId, Form> form;
    std::map<TensorId, int> last_use;
    std::uint64_t used = 0;
    bool ok = true;
    double latency = 0.0;

    StaticSim(const ComputationGraph& g, const DeviceProfile& dev, const CodecModel& model,
              std::uint64_t budget)
        : g(g), dev(dev), model(model), budget(budget) {
        for (const auto& [id, t] : g.tensors) {
            form[id] = Gone;
            int last = -1;
            for (OpId c : t.consumers) last = std::max(last, g.step_of(c));
            last_use[id] = last;
        }
    }

    std::uint64_t full(TensorId id) { return g.tensor(id).bytes; }
    std::uint64_t comp(TensorId id) {
        return model.predicted_bytes(oracle_codec_kind(g, id), full(id));
    }
    void add(std::uint64_t b) {
        used += b;
        if (used > budget) ok = false;
    }

    void materialize(TensorId id) {
        if (!ok || form[id] == Full) return;
        if (form[id] == Comp) {
            used -= comp(id);
            add(full(id));
            latency += model.decompress_us(oracle_codec_kind(g, id), full(id));
            form[id] = Full;
            return;
        }
        const TensorSpec& t = g.tensor(id);
        if (t.producer == kNoOp) { // re-fetch an externally backed input
            add(full(id));
            form[id] = Full;
            return;
        }
        for (TensorId in : g.op(t.producer).inputs) materialize(in);
        add(full(id));
        latency += recompute_cost(g, id, dev);
        form[id] = Full;
    }

    std::optional<double> run(const std::map<TensorId, int>& policy) {
        for (const auto& [id, t] : g.tensors) {
            if (t.is_graph_input()) {
                add(full(id));
                form[id] = Full;
            }
        }
        for (int s = 0; s < static_cast<int>(g.num_steps()) && ok; ++s) {
            const OpSpec& op = g.ops[s];
            std::set<TensorId> touched;
            for (TensorId id : op.inputs) {
                materialize(id);
                touched.insert(id);
            }
            for (TensorId id : op.outputs) {
                if (form[id] == Gone) {
                    add(full(id));
                    form[id] = Full;
                }
                touched.insert(id);
            }
            if (!ok) break;
            latency += dev.op_time_us(op);
            // Retire the dead, then apply the fixed policy to what this op
            // touched and is still around.
            for (const auto& [id, t] : g.tensors) {
                if (t.is_graph_output() || form[id] == Gone) continue;
                if (last_use[id] <= s) {
                    used -= form[id] == Full ? full(id) : comp(id);
                    form[id] = Gone;
                }
            }
            for (TensorId id : touched) {
                auto it = policy.find(id);
                if (it == policy.end() || form[id] != Full) continue;
                if (it->second == 1) {
                    used -= full(id);
                    form[id] = Gone;
                } else if (it->second == 2) {
                    used -= full(id) - comp(id);
                    latency += model.compress_us(oracle_codec_kind(g, id), full(id));
                    form[id] = Comp;
                    if (used > budget) ok = false;
                }
            }
        }
        if (!ok) return std::nullopt;
        return latency;
    }
};

/// Best static assignment, or nullopt when none fits the budget.
std::optional<double> best_static_cost(const ComputationGraph& g, const DeviceProfile& dev,
                                       const CodecModel& model, std::uint64_t budget,
                                       const std::vector<TensorId>& discardable) {
    std::size_t n = discardable.size();
    REQUIRE(n <= 8);
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 3;
    std::optional<double> best;
    for (std::size_t mask = 0; mask < total; ++mask) {
        std::map<TensorId, int> policy;
        std::size_t m = mask;
        for (std::size_t i = 0; i < n; ++i) {
            policy[discardable[i]] = static_cast<int>(m % 3);
            m /= 3;
        }
        StaticSim sim(g, dev, model, budget);
        auto cost = sim.run(policy);
        if (cost && (!best || *cost < *best)) best = cost;
    }
    return best;
}

std::vector<TensorId> discardable_tensors(const ComputationGraph& g) {
    std::vector<TensorId> out;
    for (const auto& [id, t] : g.tensors) {
        if (!t.is_graph_input() && !t.is_graph_output()) out.push_back(id);
    }
    return out;
}

/// Bytes no plan can release: operands pinned while their op runs, finished
/// results held to the end, and alive graph inputs reducible at best to
/// their compressed size (they have no producer to rebuild them from).
std::uint64_t reclaim_floor(const ComputationGraph& g, const CodecModel& model) {
    std::uint64_t floor = 0;
    std::uint64_t results_so_far = 0;
    for (const OpSpec& op : g.ops) {
        int s = g.step_of(op.id);
        std::set<TensorId> pinned(op.inputs.begin(), op.inputs.end());
        pinned.insert(op.outputs.begin(), op.outputs.end());
        std::uint64_t here = results_so_far;
        for (TensorId id : pinned) here += g.tensor(id).bytes;
        for (const auto& [id, t] : g.tensors) {
            if (!t.is_graph_input() || pinned.count(id)) continue;
            bool read_later = std::any_of(t.consumers.begin(), t.consumers.end(),
                                          [&](OpId c) { return g.step_of(c) > s; });
            if (read_later) here += model.predicted_bytes(OpKind::Other, t.bytes);
        }
        floor = std::max(floor, here);
        for (TensorId id : op.outputs) {
            if (g.tensor(id).is_graph_output()) results_so_far += g.tensor(id).bytes;
        }
    }
    return floor;
}

/// A budget `frac` of the way from the hard floor up to the untreated peak,
/// so property suites exercise real memory pressure instead of asking for
/// the impossible on chain-shaped graphs.
std::uint64_t budget_between(const ComputationGraph& g, const CodecModel& model, double frac) {
    std::uint64_t floor = reclaim_floor(g, model);
    std::uint64_t peak = g.untreated_peak_bytes();
    if (floor >= peak) return peak;
    return floor + static_cast<std::uint64_t>(frac * static_cast<double>(peak - floor));
}

} // namespace

TEST_CASE("score arithmetic follows the reward-over-cost definition") {
    MpsScore evict = make_mps_score(100, 2.0, 0.0, 0.5);
    CHECK(evict.reward == 200.0);
    CHECK(evict.mps == 400.0);

    MpsScore compress = make_mps_score(75, 2.0, 0.06, 0.04);
    CHECK(compress.reward == 150.0);
    CHECK(compress.mps == doctest::Approx(1500.0));

    CHECK_THROWS_AS(make_mps_score(10, 1.0, 0.0, 0.0), std::invalid_argument);

    MpsScore impossible =
        make_mps_score(10, 1.0, 0.0, std::numeric_limits<double>::infinity());
    CHECK(impossible.mps == 0.0);
}

TEST_CASE("codec model predictions are deterministic arithmetic") {
    CodecModel model = CodecModel::defaults();
    std::uint64_t mb = 1000000;
    CHECK(model.predicted_bytes(OpKind::Conv, mb) ==
          static_cast<std::uint64_t>(std::llround(1000000 / 3.3)));
    CHECK(model.compress_us(OpKind::Conv, mb) == doctest::Approx(1000000.0 / 190.0));
    CHECK(model.decompress_us(OpKind::Conv, mb) == doctest::Approx(1000000.0 / 1700.0));
    CHECK(model.predicted_bytes(OpKind::Other, 1) == 1); // clamped, never zero

    CodecModel slow = model.scaled(2.0);
    CHECK(slow.compress_us(OpKind::Conv, mb) == doctest::Approx(2.0 * 1000000.0 / 190.0));
    CHECK(slow.predicted_bytes(OpKind::Conv, mb) == model.predicted_bytes(OpKind::Conv, mb));
    CHECK_THROWS_AS(model.scaled(0.0), std::invalid_argument);
}

TEST_CASE("rebuild cost adds the producer and its layout chain") {
    ComputationGraph g = load_graph_file(fixture("layout_chain.json"));
    DeviceProfile dev = DeviceProfile::reference();

    // Conv 10 + (Reshape 4 + Transpose 2), all on one processor.
    CHECK(recompute_cost(g, 1, dev) == 16.0);
    // The chain itself accounts for the gap versus the producer alone.
    CHECK(recompute_cost(g, 1, dev) - dev.op_time_us(g.op(0)) == 6.0);
    // No chain hanging off the Pool output.
    CHECK(recompute_cost(g, 7, dev) == dev.op_time_us(g.op(6)));

    // Crossing a processor boundary doubles the chain term.
    nlohmann::json doc = nlohmann::json::parse(slurp(fixture("layout_chain.json")));
    doc["ops"][2]["crosses_processor"] = true;
    ComputationGraph crossed = load_graph(doc.dump());
    CHECK(recompute_cost(crossed, 1, dev) == 22.0);
    CHECK(recompute_cost(crossed, 1, dev) - dev.op_time_us(crossed.op(0)) == 12.0);

    CHECK_THROWS_AS(recompute_cost(g, 0, dev), SchemaError); // graph input
}

TEST_CASE("per-tensor technique choice matches an independent cost table") {
    ComputationGraph g = load_graph_file(fixture("mobilenet_block.json"));
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();
    auto lifetimes = compute_lifetimes(g, dev);

    for (const auto& [id, t] : g.tensors) {
        if (t.is_graph_input()) continue;
        CAPTURE(id);
        auto [evict, compress] = score_tensor(g, id, dev, model);

        // Oracle: rebuild rate vs shrink rate, from raw fields.
        double rebuild = dev.op_time_us(g.op(t.producer));
        double chain_sum = 0.0;
        double psi = 1.0;
        for (OpId c : annotate_layout_chain(g, id)) {
            chain_sum += dev.op_time_us(g.op(c));
            if (g.op(c).crosses_processor) psi = 2.0;
        }
        rebuild += psi * chain_sum;
        OpKind kind = oracle_codec_kind(g, id);
        double saved = static_cast<double>(t.bytes - model.predicted_bytes(kind, t.bytes));
        double shrink_cost = model.compress_us(kind, t.bytes) + model.decompress_us(kind, t.bytes);

        double flt = lifetimes.at(id).freed_lifetime_us;
        if (flt > 0.0) {
            bool oracle_prefers_evict = t.bytes / rebuild > saved / shrink_cost;
            CHECK((evict.mps > compress.mps) == oracle_prefers_evict);
        } else {
            CHECK(evict.mps == 0.0);
            CHECK(compress.mps == 0.0);
        }
        CHECK(evict.regain_cost_us == doctest::Approx(rebuild));
    }
}

TEST_CASE("reclaim picker honors score, then size, then id") {
    ReclaimCandidate a;
    a.tensor = 4;
    a.evict = make_mps_score(100, 2.0, 0.0, 0.5); // 400
    a.can_evict = true;

    ReclaimCandidate b;
    b.tensor = 9;
    b.compress = make_mps_score(75, 2.0, 0.06, 0.04); // 1500
    b.can_compress = true;

    SUBCASE("higher score wins regardless of order") {
        ReclaimChoice pick = max_mps_tensor({a, b});
        CHECK(pick.tensor == 9);
        CHECK(pick.action == PlanAction::Compress);
        pick = max_mps_tensor({b, a});
        CHECK(pick.tensor == 9);
    }
    SUBCASE("equal scores fall back to the larger saving") {
        ReclaimCandidate big, small;
        big.tensor = 7;
        big.evict = make_mps_score(8 << 20, 1.0, 0.0, 1.0);
        big.can_evict = true;
        small.tensor = 2;
        small.evict = make_mps_score(4 << 20, 2.0, 0.0, 1.0); // same mps
        small.can_evict = true;
        REQUIRE(big.evict.mps == small.evict.mps);
        CHECK(max_mps_tensor({small, big}).tensor == 7);
    }
    SUBCASE("full tie goes to the lower id") {
        ReclaimCandidate x = a, y = a;
        x.tensor = 12;
        y.tensor = 3;
        CHECK(max_mps_tensor({x, y}).tensor == 3);
    }
    SUBCASE("a tensor tied with itself compresses rather than evicts") {
        ReclaimCandidate both;
        both.tensor = 1;
        both.evict = make_mps_score(100, 2.0, 0.0, 0.5);
        both.compress = make_mps_score(50, 2.0, 0.0, 0.25); // same 400
        both.can_evict = both.can_compress = true;
        CHECK(max_mps_tensor({both}).action == PlanAction::Compress);
    }
    SUBCASE("nothing usable raises the budget error") {
        CHECK_THROWS_AS(max_mps_tensor({}), InfeasibleBudgetError);
        ReclaimCandidate unusable;
        unusable.tensor = 5;
        CHECK_THROWS_AS(max_mps_tensor({unusable}), InfeasibleBudgetError);
    }
}

TEST_CASE("generous budgets plan no reclamation") {
    ComputationGraph g = load_graph_file(fixture("mobilenet_block.json"));
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();

    ExecutionPlan plan = generate_plan(g, dev, g.untreated_peak_bytes(), model);
    CHECK(count_actions(plan, PlanAction::Evict) == 0);
    CHECK(count_actions(plan, PlanAction::Compress) == 0);
    CHECK(count_actions(plan, PlanAction::Decompress) == 0);
    CHECK(count_actions(plan, PlanAction::Recompute) == 0);
    CHECK(count_actions(plan, PlanAction::Alloc) ==
          static_cast<int>(g.tensors.size())); // inputs + one per output

    double base = 0.0;
    for (const auto& op : g.ops) base += dev.op_time_us(op);
    CHECK(plan.est_latency_us == base);
    CHECK(plan.peak_memory == g.untreated_peak_bytes());
}

TEST_CASE("a squeezed budget drops the cheap-to-rebuild idle tensor") {
    ComputationGraph g = load_graph(kSkipGraph);
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();
    REQUIRE(g.untreated_peak_bytes() == 4 * kS);

    std::uint64_t budget = 3 * kS + kS / 2;
    ExecutionPlan plan = generate_plan(g, dev, budget, model);

    // The relu output (tensor 1) goes, comes back once; nothing is
    // compressed. The second evict clears the re-fetched input once dead.
    CHECK(count_actions(plan, PlanAction::Recompute) == 1);
    CHECK(count_actions(plan, PlanAction::Compress) == 0);
    bool evicted_relu = false;
    for (const auto& a : plan.actions) {
        if (a.action == PlanAction::Evict && a.tensor == 1) evicted_relu = true;
        if (a.action == PlanAction::Recompute) CHECK(a.tensor == 1);
    }
    CHECK(evicted_relu);

    double base = 0.0;
    for (const auto& op : g.ops) base += dev.op_time_us(op);
    CHECK(plan.est_latency_us == base + 50.0); // one relu re-run
    CHECK(plan.peak_memory <= budget);

    // Brute force over the static treatments can't beat it. (It can't
    // match it either: no fixed per-tensor policy drops the input and
    // re-fetches it mid-schedule the way the plan does.)
    auto best = best_static_cost(g, dev, model, budget, discardable_tensors(g));
    REQUIRE(best.has_value());
    CHECK(plan.est_latency_us <= *best);
}

TEST_CASE("expensive producers are shrunk in place, not dropped") {
    ComputationGraph g = load_graph(kExpensiveProducerGraph);
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();
    std::uint64_t budget = 3 * kS + kS / 2;

    ExecutionPlan plan = generate_plan(g, dev, budget, model);
    CHECK(count_actions(plan, PlanAction::Compress) == 1);
    CHECK(count_actions(plan, PlanAction::Decompress) == 1);
    CHECK(count_actions(plan, PlanAction::Recompute) == 0);
    for (const auto& a : plan.actions) {
        if (a.action == PlanAction::Compress) CHECK(a.tensor == 1);
    }

    double base = 0.0;
    for (const auto& op : g.ops) base += dev.op_time_us(op);
    CHECK(plan.est_latency_us ==
          doctest::Approx(base + model.compress_us(OpKind::Conv, kS) +
                          model.decompress_us(OpKind::Conv, kS)));

    // Dropping instead would cost the 50 ms producer again.
    ExecutionPlan evict_only =
        generate_plan(g, dev, budget, model, PlanStrategy::EvictOnly);
    CHECK(evict_only.est_latency_us >= base + 50000.0);
    CHECK(plan.est_latency_us < evict_only.est_latency_us);
}

TEST_CASE("infeasible budgets fail loudly with the workable minimum") {
    ComputationGraph g = load_graph(kExpensiveProducerGraph);
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();

    try {
        generate_plan(g, dev, 2 * kS, model);
        FAIL("plan generation accepted an impossible budget");
    } catch (const InfeasibleBudgetError& e) {
        CHECK(e.min_feasible_bytes == 3 * kS);
        CHECK(std::string(e.what()).find(std::to_string(3 * kS)) != std::string::npos);
    }
}

TEST_CASE("plan serialization round-trips byte-identically") {
    ComputationGraph g = load_graph(kSkipGraph);
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();
    ExecutionPlan plan = generate_plan(g, dev, 3 * kS + kS / 2, model);

    std::string text = serialize_plan(plan);
    ExecutionPlan back = parse_plan(text);
    CHECK(serialize_plan(back) == text);
    CHECK(back.est_latency_us == plan.est_latency_us);
    CHECK(back.peak_memory == plan.peak_memory);
    CHECK(back.actions.size() == plan.actions.size());

    CHECK_THROWS_AS(parse_plan("{"), SchemaError);
    CHECK_THROWS_AS(parse_plan("{\"budget\": 1}"), SchemaError);
    CHECK_THROWS_WITH_AS(
        parse_plan(R"({"budget":1,"est_latency":0,"peak_memory":0,
                       "actions":[{"step":0,"tensor":1,"action":"SWAP"}]})"),
        doctest::Contains("SWAP"), SchemaError);
}

TEST_CASE("replay flags hand-damaged plans") {
    ComputationGraph g = load_graph(kExpensiveProducerGraph);
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();
    std::uint64_t budget = 3 * kS + kS / 2;
    ExecutionPlan plan = generate_plan(g, dev, budget, model);
    REQUIRE(replay_plan(plan, g, dev, model).violations.empty());

    SUBCASE("skipping the decompress starves the consumer") {
        ExecutionPlan bad = plan;
        bad.actions.erase(std::find_if(bad.actions.begin(), bad.actions.end(), [](auto& a) {
            return a.action == PlanAction::Decompress;
        }));
        auto report = replay_plan(bad, g, dev, model);
        REQUIRE(report.violations.size() == 1);
        CHECK(report.violations[0].find("reads missing tensor 1") != std::string::npos);
        CHECK(report.violations[0].find("step 3") != std::string::npos);
    }
    SUBCASE("skipping an alloc is caught at the writing op") {
        ExecutionPlan bad = plan;
        bad.actions.erase(std::find_if(bad.actions.begin(), bad.actions.end(), [](auto& a) {
            return a.action == PlanAction::Alloc && a.tensor == 4;
        }));
        auto report = replay_plan(bad, g, dev, model);
        REQUIRE(!report.violations.empty());
        CHECK(report.violations[0].find("writes unallocated tensor 4") != std::string::npos);
    }
    SUBCASE("skipping the compress overruns the budget") {
        ExecutionPlan bad = plan;
        bad.actions.erase(std::find_if(bad.actions.begin(), bad.actions.end(), [](auto& a) {
            return a.action == PlanAction::Compress;
        }));
        auto report = replay_plan(bad, g, dev, model);
        bool budget_hit = false;
        for (const auto& v : report.violations) {
            if (v.find("budget exceeded") != std::string::npos) budget_hit = true;
        }
        CHECK(budget_hit);
    }
}

TEST_CASE("replay verdicts agree with an independent oracle") {
    GraphGenParams params;
    params.num_ops = 30;
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();
    std::mt19937_64 rng(2024);

    int mutated_checked = 0;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        ComputationGraph g = gen_random_graph(params, seed);
        std::uint64_t budget = budget_between(g, model, 0.5);
        ExecutionPlan plan;
        try {
            plan = generate_plan(g, dev, budget, model);
        } catch (const InfeasibleBudgetError&) {
            continue;
        }
        CAPTURE(seed);

        auto clean = replay_plan(plan, g, dev, model);
        auto oracle = oracle_replay(plan, g, dev, model);
        CHECK(clean.violations.empty());
        CHECK(oracle.feasible);
        CHECK(clean.peak_memory == oracle.peak);
        CHECK(clean.latency_us == doctest::Approx(oracle.latency).epsilon(1e-12));

        if (!plan.actions.empty()) {
            ExecutionPlan bad = plan;
            std::uniform_int_distribution<std::size_t> pick(0, bad.actions.size() - 1);
            bad.actions.erase(bad.actions.begin() + static_cast<long>(pick(rng)));
            auto damaged = replay_plan(bad, g, dev, model);
            auto oracle_damaged = oracle_replay(bad, g, dev, model);
            CHECK(damaged.violations.empty() == oracle_damaged.feasible);
            ++mutated_checked;
        }
    }
    CHECK(mutated_checked > 10);
}

TEST_CASE("generated plans stay inside the budget across random graphs") {
    GraphGenParams params;
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();

    int planned = 0, infeasible = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        params.num_ops = 10 + static_cast<int>(seed % 41);
        ComputationGraph g = gen_random_graph(params, seed);
        for (double frac : {0.3, 0.6, 0.9}) {
            std::uint64_t budget = budget_between(g, model, frac);
            CAPTURE(seed);
            CAPTURE(frac);
            try {
                ExecutionPlan plan = generate_plan(g, dev, budget, model);
                auto report = replay_plan(plan, g, dev, model);
                CHECK(report.violations.empty());
                CHECK(report.peak_memory <= budget);
                CHECK(plan.peak_memory == report.peak_memory);
                CHECK(plan.est_latency_us == report.latency_us); // bitwise
                ++planned;
            } catch (const InfeasibleBudgetError& e) {
                CHECK(e.min_feasible_bytes > budget);
                ++infeasible;
            }
        }
    }
    CHECK(planned >= 60); // the suite must actually exercise planning
}

TEST_CASE("the mixed strategy never loses to either pure strategy") {
    GraphGenParams params;
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();

    int comparable = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        params.num_ops = 10 + static_cast<int>(seed % 31);
        ComputationGraph g = gen_random_graph(params, seed);
        for (double frac : {0.35, 0.7}) {
            std::uint64_t budget = budget_between(g, model, frac);
            CAPTURE(seed);
            CAPTURE(frac);
            std::optional<double> hybrid, evict, compress;
            try {
                hybrid = generate_plan(g, dev, budget, model).est_latency_us;
            } catch (const InfeasibleBudgetError&) {}
            try {
                evict = generate_plan(g, dev, budget, model, PlanStrategy::EvictOnly)
                            .est_latency_us;
            } catch (const InfeasibleBudgetError&) {}
            try {
                compress = generate_plan(g, dev, budget, model, PlanStrategy::CompressOnly)
                               .est_latency_us;
            } catch (const InfeasibleBudgetError&) {}
            if (hybrid && evict && compress) {
                CHECK(*hybrid <= std::min(*evict, *compress));
                ++comparable;
            }
            if (evict || compress) {
                // A pure strategy never succeeds where the mix fails.
                CHECK(hybrid.has_value());
            }
        }
    }
    CHECK(comparable >= 20);
}

TEST_CASE("more budget never plans a slower schedule") {
    GraphGenParams params;
    params.num_ops = 24;
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();

    for (std::uint64_t seed = 100; seed < 115; ++seed) {
        ComputationGraph g = gen_random_graph(params, seed);
        double prev = std::numeric_limits<double>::infinity();
        for (int pct = 10; pct <= 100; pct += 10) {
            std::uint64_t budget = budget_between(g, model, pct / 100.0);
            CAPTURE(seed);
            CAPTURE(pct);
            try {
                ExecutionPlan plan = generate_plan(g, dev, budget, model);
                CHECK(plan.est_latency_us <= prev);
                prev = plan.est_latency_us;
            } catch (const InfeasibleBudgetError&) {
                CHECK(prev == std::numeric_limits<double>::infinity());
            }
        }
    }
}

TEST_CASE("identical inputs produce byte-identical plans") {
    GraphGenParams params;
    params.num_ops = 35;
    DeviceProfile dev = DeviceProfile::scaled(1.6, "mid");
    CodecModel model = CodecModel::defaults();

    for (std::uint64_t seed : {3ull, 17ull, 29ull}) {
        ComputationGraph g = gen_random_graph(params, seed);
        std::uint64_t budget = budget_between(g, model, 0.5);
        try {
            std::string a = serialize_plan(generate_plan(g, dev, budget, model));
            std::string b = serialize_plan(generate_plan(g, dev, budget, model));
            CHECK(a == b);
        } catch (const InfeasibleBudgetError&) {
            // determinism of the error path is covered by the throw itself
        }
    }
}

TEST_CASE("greedy plans are feasible whenever any static treatment is") {
    DeviceProfile dev = DeviceProfile::reference();
    CodecModel model = CodecModel::defaults();

    SUBCASE("skip-block fixture across a budget ladder") {
        ComputationGraph g = load_graph(kSkipGraph);
        std::uint64_t peak = g.untreated_peak_bytes();
        for (int pct = 40; pct <= 100; pct += 10) {
            std::uint64_t budget = peak * pct / 100;
            CAPTURE(pct);
            auto optimal = best_static_cost(g, dev, model, budget, discardable_tensors(g));
            std::optional<double> greedy;
            try {
                greedy = generate_plan(g, dev, budget, model).est_latency_us;
            } catch (const InfeasibleBudgetError&) {}
            if (optimal) {
                REQUIRE(greedy.has_value());
                MESSAGE("budget ", pct, "%: greedy/optimal = ", *greedy / *optimal);
            }
        }
    }
    SUBCASE("random small graphs") {
        GraphGenParams params;
        params.num_ops = 8;
        int graphs_checked = 0;
        for (std::uint64_t seed = 0; seed < 30 && graphs_checked < 6; ++seed) {
            ComputationGraph g = gen_random_graph(params, seed);
            auto discardable = discardable_tensors(g);
            if (discardable.size() > 8) continue;
            ++graphs_checked;
            for (double frac : {0.4, 0.7}) {
                std::uint64_t budget = budget_between(g, model, frac);
                CAPTURE(seed);
                CAPTURE(frac);
                auto optimal = best_static_cost(g, dev, model, budget, discardable);
                std::optional<double> greedy;
                try {
                    greedy = generate_plan(g, dev, budget, model).est_latency_us;
                } catch (const InfeasibleBudgetError&) {}
                if (optimal) {
                    REQUIRE(greedy.has_value());
                    MESSAGE("seed ", seed, " frac ", frac,
                            ": greedy/optimal = ", *greedy / *optimal);
                }
            }
        }
        CHECK(graphs_checked >= 3);
    }
}
