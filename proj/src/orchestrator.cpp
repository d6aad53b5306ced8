// SPDX-License-Identifier: Apache-2.0

#include "memwall/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "memwall/synth.hpp"

namespace memwall {

using json = nlohmann::ordered_json;

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Independent deterministic stream per (purpose tag, round, client).
std::uint64_t sub_seed(std::uint64_t seed, char tag, std::uint64_t a = 0, std::uint64_t b = 0) {
    return mix64(seed ^ mix64(static_cast<std::uint64_t>(tag) ^ mix64(a ^ mix64(b))));
}

struct TierSpec {
    std::uint64_t bytes;
    double share;
    double time_factor; // nominal op-time multiplier vs. the reference device
};

// Handset capacity mix; smaller devices are also slower.
constexpr std::array<TierSpec, 5> kTiers = {{
    {4ull << 30, 0.15, 1.8},
    {6ull << 30, 0.25, 1.45},
    {8ull << 30, 0.30, 1.2},
    {12ull << 30, 0.25, 1.0},
    {16ull << 30, 0.05, 0.85},
}};

constexpr int kMaxLloydIters = 100;

double unit_draw(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace

FleetSpec gen_fleet(int n, std::uint64_t seed) {
    if (n <= 0) throw SchemaError("fleet size must be positive");

    // Largest-remainder rounding keeps the tier histogram within one
    // client of the target shares.
    std::array<int, kTiers.size()> count{};
    std::array<double, kTiers.size()> remainder{};
    int assigned = 0;
    for (std::size_t i = 0; i < kTiers.size(); ++i) {
        double want = kTiers[i].share * n;
        count[i] = static_cast<int>(want);
        remainder[i] = want - count[i];
        assigned += count[i];
    }
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < kTiers.size(); ++i)
            if (remainder[i] > remainder[best]) best = i;
        ++count[best];
        remainder[best] = -1.0;
        ++assigned;
    }

    std::vector<int> tier_of;
    tier_of.reserve(n);
    for (std::size_t i = 0; i < kTiers.size(); ++i)
        tier_of.insert(tier_of.end(), count[i], static_cast<int>(i));
    std::mt19937_64 rng(seed);
    std::shuffle(tier_of.begin(), tier_of.end(), rng);

    std::uniform_real_distribution<double> jitter(0.9, 1.1);
    std::gamma_distribution<double> sparse(0.1, 1.0); // spiky label mixes

    FleetSpec fleet;
    fleet.clients.reserve(n);
    for (int id = 0; id < n; ++id) {
        const TierSpec& tier = kTiers[static_cast<std::size_t>(tier_of[static_cast<std::size_t>(id)])];
        FleetClient c;
        c.client_id = id;
        c.mem_capacity_bytes = tier.bytes;
        c.tier_time_factor = tier.time_factor;
        c.compute_scale = jitter(rng);
        double sum = 0.0;
        for (double& s : c.shard) {
            s = sparse(rng);
            sum += s;
        }
        if (sum < 1e-12) {
            c.shard.fill(1.0 / kShardLabels);
        } else {
            for (double& s : c.shard) s /= sum;
        }
        c.trace_seed = sub_seed(seed, 'T', static_cast<std::uint64_t>(id));
        fleet.clients.push_back(c);
    }
    return fleet;
}

std::string tier_name(std::uint64_t mem_capacity_bytes) {
    return std::to_string(mem_capacity_bytes >> 30) + "GB";
}

FleetSpec parse_fleet(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("fleet document is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("clients") || !doc["clients"].is_array())
        throw SchemaError("fleet document needs a top-level \"clients\" array");

    FleetSpec fleet;
    std::set<ClientId> seen;
    for (const json& rec : doc["clients"]) {
        FleetClient c;
        try {
            c.client_id = rec.at("id").get<ClientId>();
            c.mem_capacity_bytes = rec.at("mem_bytes").get<std::uint64_t>();
            c.tier_time_factor = rec.at("tier_time_factor").get<double>();
            c.compute_scale = rec.at("compute_scale").get<double>();
            c.trace_seed = rec.at("trace_seed").get<std::uint64_t>();
            const json& shard = rec.at("shard");
            if (!shard.is_array() || shard.size() != kShardLabels)
                throw SchemaError("client " + std::to_string(c.client_id) + " shard must hold " +
                                  std::to_string(kShardLabels) + " label proportions");
            for (std::size_t l = 0; l < kShardLabels; ++l)
                c.shard[l] = shard[l].get<double>();
        } catch (const json::exception& e) {
            throw SchemaError(std::string("malformed fleet client record: ") + e.what());
        }
        if (!seen.insert(c.client_id).second)
            throw SchemaError("duplicate client id " + std::to_string(c.client_id));
        if (c.mem_capacity_bytes == 0)
            throw SchemaError("client " + std::to_string(c.client_id) + " has zero memory");
        if (c.tier_time_factor <= 0.0 || c.compute_scale <= 0.0)
            throw SchemaError("client " + std::to_string(c.client_id) +
                              " needs positive speed factors");
        double sum = 0.0;
        for (double s : c.shard) {
            if (s < 0.0)
                throw SchemaError("client " + std::to_string(c.client_id) +
                                  " has a negative shard proportion");
            sum += s;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw SchemaError("client " + std::to_string(c.client_id) +
                              " shard proportions sum to " + std::to_string(sum) + ", not 1");
        for (double& s : c.shard) s /= sum;
        fleet.clients.push_back(c);
    }
    if (fleet.clients.empty()) throw SchemaError("fleet document lists no clients");
    return fleet;
}

FleetSpec load_fleet_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open fleet file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_fleet(buf.str());
}

std::string serialize_fleet(const FleetSpec& fleet) {
    json doc;
    doc["clients"] = json::array();
    for (const FleetClient& c : fleet.clients) {
        json rec;
        rec["id"] = c.client_id;
        rec["mem_bytes"] = c.mem_capacity_bytes;
        rec["tier_time_factor"] = c.tier_time_factor;
        rec["compute_scale"] = c.compute_scale;
        rec["shard"] = c.shard;
        rec["trace_seed"] = c.trace_seed;
        doc["clients"].push_back(std::move(rec));
    }
    return doc.dump(2) + "\n";
}

// --- capability clustering -------------------------------------------------

std::vector<DevicePoint> normalize_points(std::vector<DevicePoint> points) {
    if (points.empty()) return points;
    auto rescale = [&points](double DevicePoint::* field) {
        double lo = points.front().*field, hi = lo;
        for (const DevicePoint& p : points) {
            lo = std::min(lo, p.*field);
            hi = std::max(hi, p.*field);
        }
        for (DevicePoint& p : points)
            p.*field = hi > lo ? (p.*field - lo) / (hi - lo) : 0.5;
    };
    rescale(&DevicePoint::mem);
    rescale(&DevicePoint::comp);
    return points;
}

namespace {
double dist2(const DevicePoint& p, double cx, double cy) {
    double dx = p.mem - cx, dy = p.comp - cy;
    return dx * dx + dy * dy;
}
} // namespace

std::vector<std::size_t> kmeans_init(const std::vector<DevicePoint>& points, int k,
                                     std::uint64_t seed) {
    if (k <= 0 || points.empty() || static_cast<std::size_t>(k) > points.size())
        throw SchemaError("cluster count " + std::to_string(k) + " is outside [1, " +
                          std::to_string(points.size()) + "]");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> chosen = {static_cast<std::size_t>(
        unit_draw(rng) * static_cast<double>(points.size())) % points.size()};
    std::vector<char> used(points.size(), 0);
    used[chosen.front()] = 1;

    std::vector<double> weight(points.size(), 0.0);
    while (chosen.size() < static_cast<std::size_t>(k)) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (used[i]) {
                weight[i] = 0.0;
                continue;
            }
            double best = dist2(points[i], points[chosen.front()].mem, points[chosen.front()].comp);
            for (std::size_t c : chosen)
                best = std::min(best, dist2(points[i], points[c].mem, points[c].comp));
            weight[i] = best;
            total += best;
        }
        std::size_t pick = points.size();
        if (total > 0.0) {
            double r = unit_draw(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < points.size(); ++i) {
                if (used[i]) continue;
                acc += weight[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        if (pick == points.size()) {
            // every unused point coincides with a centroid; take the first
            for (std::size_t i = 0; i < points.size(); ++i)
                if (!used[i]) {
                    pick = i;
                    break;
                }
        }
        used[pick] = 1;
        chosen.push_back(pick);
    }
    return chosen;
}

ClusterAssignment cluster_clients(const std::vector<DevicePoint>& points, int k,
                                  std::uint64_t seed) {
    std::vector<DevicePoint> norm = normalize_points(points);
    std::vector<std::size_t> init = kmeans_init(norm, k, seed);

    ClusterAssignment out;
    out.centroids.reserve(init.size());
    for (std::size_t idx : init) out.centroids.push_back({norm[idx].mem, norm[idx].comp});
    out.label_of.assign(points.size(), 0);

    for (int iter = 0; iter < kMaxLloydIters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < norm.size(); ++i) {
            int best = 0;
            double best_d = dist2(norm[i], out.centroids[0][0], out.centroids[0][1]);
            for (int c = 1; c < k; ++c) {
                double d = dist2(norm[i], out.centroids[static_cast<std::size_t>(c)][0],
                                 out.centroids[static_cast<std::size_t>(c)][1]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (out.label_of[i] != best) {
                out.label_of[i] = best;
                changed = true;
            }
        }
        std::vector<std::array<double, 2>> sum(static_cast<std::size_t>(k), {0.0, 0.0});
        std::vector<int> count(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < norm.size(); ++i) {
            auto c = static_cast<std::size_t>(out.label_of[i]);
            sum[c][0] += norm[i].mem;
            sum[c][1] += norm[i].comp;
            ++count[c];
        }
        for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
            if (count[c] == 0) continue; // emptied cluster keeps its centroid
            out.centroids[c] = {sum[c][0] / count[c], sum[c][1] / count[c]};
        }
        if (!changed && iter > 0) break;
    }
    return out;
}

ClientId cluster_representative(const std::vector<DevicePoint>& members) {
    if (members.empty()) throw SchemaError("cannot pick a representative of an empty cluster");
    const DevicePoint* best = &members.front();
    for (const DevicePoint& m : members) {
        if (std::tie(m.mem, m.comp, m.client_id) <
            std::tie(best->mem, best->comp, best->client_id))
            best = &m;
    }
    return best->client_id;
}

// --- plan cache --------------------------------------------------------------

const std::optional<ExecutionPlan>* PlanCache::find(const std::string& graph_id,
                                                    std::uint64_t budget_bucket,
                                                    const std::string& tier) const {
    auto it = table_.find({graph_id, budget_bucket, tier});
    return it == table_.end() ? nullptr : &it->second;
}

void PlanCache::put(const std::string& graph_id, std::uint64_t budget_bucket,
                    const std::string& tier, std::optional<ExecutionPlan> plan) {
    table_[{graph_id, budget_bucket, tier}] = std::move(plan);
}

std::uint64_t real_to_graph_bytes(std::uint64_t real_bytes, std::uint64_t peak_bytes,
                                  std::uint64_t global_mem_bytes) {
    if (peak_bytes == 0 || global_mem_bytes == 0)
        throw SchemaError("byte-scale mapping needs a positive peak and global memory size");
    return static_cast<std::uint64_t>(static_cast<unsigned __int128>(real_bytes) * peak_bytes /
                                      global_mem_bytes);
}

std::uint64_t graph_to_real_bytes(std::uint64_t graph_bytes, std::uint64_t peak_bytes,
                                  std::uint64_t global_mem_bytes) {
    if (peak_bytes == 0 || global_mem_bytes == 0)
        throw SchemaError("byte-scale mapping needs a positive peak and global memory size");
    return static_cast<std::uint64_t>(static_cast<unsigned __int128>(graph_bytes) *
                                      global_mem_bytes / peak_bytes);
}

ClusterPlanOutcome plan_for_cluster(const ClusterPlanRequest& request,
                                    const ComputationGraph& graph, const CodecModel& codec_model,
                                    PlanStrategy strategy, PlanCache& cache) {
    ClusterPlanOutcome out;
    std::uint64_t bucket = request.rep_budget_real_bytes / kBudgetBucketBytes;
    out.budget_real_bytes = bucket * kBudgetBucketBytes;
    out.budget_graph_bytes = real_to_graph_bytes(out.budget_real_bytes,
                                                 graph.untreated_peak_bytes(),
                                                 request.global_mem_bytes);

    if (const std::optional<ExecutionPlan>* entry =
            cache.find(request.graph_id, bucket, request.tier)) {
        cache.count_hit();
        out.plan = *entry;
        out.cache_hit = true;
        return out;
    }

    cache.count_invocation();
    try {
        out.plan = generate_plan(graph, DeviceProfile::scaled(request.tier_time_factor, request.tier),
                                 out.budget_graph_bytes,
                                 codec_model.scaled(request.tier_time_factor), strategy);
    } catch (const InfeasibleBudgetError&) {
        // the whole bucket is unservable for this tier; remember that too
    }
    cache.put(request.graph_id, bucket, request.tier, out.plan);
    return out;
}

// --- local-round simulation --------------------------------------------------

LocalRoundResult simulate_local_round(const std::vector<std::uint64_t>& realized_m_safe,
                                      const LocalRoundParams& params) {
    LocalRoundResult r;
    r.latency_s = params.compute_s + params.comm_s;
    for (std::uint64_t m : realized_m_safe) {
        if (m < params.floor_real_bytes) {
            ++r.lmk_kills;
        } else if (m < params.budget_real_bytes) {
            ++r.page_faults;
            double overflow = static_cast<double>(params.budget_real_bytes - m);
            r.latency_s +=
                overflow / params.refault.bandwidth_bytes_per_s + params.refault.per_fault_ms / 1e3;
        }
    }
    // Every kill wastes one training attempt; past the tolerance the
    // client gives up on the round.
    r.latency_s += std::min(r.lmk_kills, params.max_lmk_kills) * params.compute_s;
    r.dropped = r.lmk_kills > params.max_lmk_kills;
    return r;
}

std::vector<double> draw_losses(const std::array<double, kShardLabels>& shard,
                                const std::array<double, kShardLabels>& deficits,
                                double base_loss, int n, std::uint64_t seed) {
    double expected = 0.0;
    for (std::size_t l = 0; l < kShardLabels; ++l) expected += shard[l] * deficits[l];
    expected *= base_loss;

    std::mt19937_64 rng(seed);
    std::vector<double> out(static_cast<std::size_t>(std::max(n, 0)));
    for (double& v : out) v = std::max(0.0, expected * (0.9 + 0.2 * unit_draw(rng)));
    return out;
}

// --- aggregation ---------------------------------------------------------------

std::vector<double> aggregate(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw SchemaError("nothing to aggregate");
    const std::size_t dim = updates.front().delta.size();
    std::vector<double> sum(dim, 0.0);
    double total = 0.0;
    for (const ClientUpdate& u : updates) {
        if (u.delta.size() != dim)
            throw SchemaError("update length mismatch: expected " + std::to_string(dim) +
                              ", got " + std::to_string(u.delta.size()));
        double w = static_cast<double>(u.sample_count);
        total += w;
        for (std::size_t i = 0; i < dim; ++i) sum[i] += u.delta[i] * w;
    }
    if (total <= 0.0) throw SchemaError("aggregate weights sum to zero");
    for (double& v : sum) v /= total;
    return sum;
}

// --- config ---------------------------------------------------------------------

namespace {

void validate_config(const SimulationConfig& c, std::vector<std::string>& errs) {
    auto require = [&](bool ok, const std::string& msg) {
        if (!ok) errs.push_back(msg);
    };
    require(c.rounds >= 1, "rounds must be at least 1");
    require(c.clients_per_round >= 1, "clients_per_round must be at least 1");
    require(c.exploit_fraction > 0.0 && c.exploit_fraction <= 1.0,
            "exploit_fraction must be in (0, 1]");
    require(c.clusters >= 1, "clusters must be at least 1");
    require(!c.fleet_path.empty() || c.fleet_size >= 1,
            "fleet_size must be at least 1 when no fleet file is given");
    require(!c.graph_path.empty() || c.graph_ops >= 2,
            "graph_ops must be at least 2 when no graph file is given");
    require(c.global_mem_bytes > 0, "global_mem_bytes must be positive");
    require(c.target_proxy_fraction > 0.0 && c.target_proxy_fraction < 1.0,
            "target_proxy_fraction must be in (0, 1)");
    require(c.base_loss > 0.0, "base_loss must be positive");
    require(c.learn_rate > 0.0 && c.learn_rate <= 1.0, "learn_rate must be in (0, 1]");
    require(c.coverage_half_sat > 0.0, "coverage_half_sat must be positive");
    require(c.local_steps >= 1, "local_steps must be at least 1");
    require(c.loss_draws >= 1, "loss_draws must be at least 1");
    require(c.bandwidth_bytes_per_s > 0.0, "bandwidth_bytes_per_s must be positive");
    require(c.aggregation_s >= 0.0, "aggregation_s cannot be negative");
    require(c.warmup_s >= 1.0, "warmup_s must cover at least one trace sample");
    require(c.trace_duration_s >= 30.0, "trace_duration_s must be at least 30 seconds");
    require(c.refault.bandwidth_bytes_per_s > 0.0, "refault bandwidth must be positive");
    require(c.refault.per_fault_ms >= 0.0, "refault per_fault_ms cannot be negative");
    require(c.predictor.window_ms > 0.0, "predictor window_ms must be positive");
    require(c.predictor.t_sample_ms > 0.0, "predictor t_sample_ms must be positive");
    require(c.predictor.t_slide_ms > 0.0, "predictor t_slide_ms must be positive");
    require(c.regen.fault_factor > 1.0, "regen fault_factor must exceed 1");
    require(c.regen.max_lmk_kills >= 1, "regen max_lmk_kills must be at least 1");
    require(c.regen.window_shrink > 0.0 && c.regen.window_shrink < 1.0,
            "regen window_shrink must be in (0, 1)");
    require(c.regen_cap_per_10_rounds >= 0, "regen_cap_per_10_rounds cannot be negative");
}

void throw_if_errors(const std::vector<std::string>& errs) {
    if (errs.empty()) return;
    std::string msg = "invalid simulation config:";
    for (const std::string& e : errs) msg += "\n  - " + e;
    throw SchemaError(msg);
}

const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys = {
        "seed",           "rounds",        "clients_per_round",
        "exploit_fraction", "clusters",    "fleet_path",
        "fleet_size",     "graph_path",    "graph_ops",
        "graph_seed",     "global_mem_bytes", "target_proxy_fraction",
        "base_loss",      "learn_rate",    "coverage_half_sat",
        "local_steps",    "loss_draws",    "model_bytes",
        "bandwidth_bytes_per_s", "aggregation_s", "warmup_s",
        "trace_duration_s", "refault",     "predictor",
        "regen",          "regen_cap_per_10_rounds", "use_selector",
        "use_planner",    "use_codec",     "use_predictor",
    };
    return keys;
}

} // namespace

SimulationConfig parse_sim_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw SchemaError("config root must be an object");

    SimulationConfig c;
    std::vector<std::string> errs;
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (!known_config_keys().count(key)) errs.push_back("unknown key \"" + key + "\"");
    }

    auto grab = [&](const json& obj, const char* key, auto& field) {
        if (!obj.contains(key)) return;
        try {
            field = obj.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const json::exception&) {
            errs.push_back(std::string(key) + " has the wrong type");
        }
    };

    grab(doc, "seed", c.seed);
    grab(doc, "rounds", c.rounds);
    grab(doc, "clients_per_round", c.clients_per_round);
    grab(doc, "exploit_fraction", c.exploit_fraction);
    grab(doc, "clusters", c.clusters);
    grab(doc, "fleet_path", c.fleet_path);
    grab(doc, "fleet_size", c.fleet_size);
    grab(doc, "graph_path", c.graph_path);
    grab(doc, "graph_ops", c.graph_ops);
    grab(doc, "graph_seed", c.graph_seed);
    grab(doc, "global_mem_bytes", c.global_mem_bytes);
    grab(doc, "target_proxy_fraction", c.target_proxy_fraction);
    grab(doc, "base_loss", c.base_loss);
    grab(doc, "learn_rate", c.learn_rate);
    grab(doc, "coverage_half_sat", c.coverage_half_sat);
    grab(doc, "local_steps", c.local_steps);
    grab(doc, "loss_draws", c.loss_draws);
    grab(doc, "model_bytes", c.model_bytes);
    grab(doc, "bandwidth_bytes_per_s", c.bandwidth_bytes_per_s);
    grab(doc, "aggregation_s", c.aggregation_s);
    grab(doc, "warmup_s", c.warmup_s);
    grab(doc, "trace_duration_s", c.trace_duration_s);
    grab(doc, "regen_cap_per_10_rounds", c.regen_cap_per_10_rounds);
    grab(doc, "use_selector", c.use_selector);
    grab(doc, "use_planner", c.use_planner);
    grab(doc, "use_codec", c.use_codec);
    grab(doc, "use_predictor", c.use_predictor);

    auto nested = [&](const char* key, auto fill) {
        if (!doc.contains(key)) return;
        const json& obj = doc.at(key);
        if (!obj.is_object()) {
            errs.push_back(std::string(key) + " must be an object");
            return;
        }
        fill(obj);
    };
    nested("refault", [&](const json& obj) {
        grab(obj, "bandwidth_bytes_per_s", c.refault.bandwidth_bytes_per_s);
        grab(obj, "per_fault_ms", c.refault.per_fault_ms);
    });
    nested("predictor", [&](const json& obj) {
        grab(obj, "window_ms", c.predictor.window_ms);
        grab(obj, "t_sample_ms", c.predictor.t_sample_ms);
        grab(obj, "t_slide_ms", c.predictor.t_slide_ms);
    });
    nested("regen", [&](const json& obj) {
        grab(obj, "fault_factor", c.regen.fault_factor);
        grab(obj, "max_lmk_kills", c.regen.max_lmk_kills);
        grab(obj, "window_shrink", c.regen.window_shrink);
    });

    validate_config(c, errs);
    throw_if_errors(errs);
    return c;
}

SimulationConfig load_sim_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_sim_config(buf.str());
}

std::string serialize_sim_config(const SimulationConfig& c) {
    json doc;
    doc["seed"] = c.seed;
    doc["rounds"] = c.rounds;
    doc["clients_per_round"] = c.clients_per_round;
    doc["exploit_fraction"] = c.exploit_fraction;
    doc["clusters"] = c.clusters;
    if (!c.fleet_path.empty()) doc["fleet_path"] = c.fleet_path;
    doc["fleet_size"] = c.fleet_size;
    if (!c.graph_path.empty()) doc["graph_path"] = c.graph_path;
    doc["graph_ops"] = c.graph_ops;
    doc["graph_seed"] = c.graph_seed;
    doc["global_mem_bytes"] = c.global_mem_bytes;
    doc["target_proxy_fraction"] = c.target_proxy_fraction;
    doc["base_loss"] = c.base_loss;
    doc["learn_rate"] = c.learn_rate;
    doc["coverage_half_sat"] = c.coverage_half_sat;
    doc["local_steps"] = c.local_steps;
    doc["loss_draws"] = c.loss_draws;
    doc["model_bytes"] = c.model_bytes;
    doc["bandwidth_bytes_per_s"] = c.bandwidth_bytes_per_s;
    doc["aggregation_s"] = c.aggregation_s;
    doc["warmup_s"] = c.warmup_s;
    doc["trace_duration_s"] = c.trace_duration_s;
    doc["refault"] = {{"bandwidth_bytes_per_s", c.refault.bandwidth_bytes_per_s},
                      {"per_fault_ms", c.refault.per_fault_ms}};
    doc["predictor"] = {{"window_ms", c.predictor.window_ms},
                        {"t_sample_ms", c.predictor.t_sample_ms},
                        {"t_slide_ms", c.predictor.t_slide_ms}};
    doc["regen"] = {{"fault_factor", c.regen.fault_factor},
                    {"max_lmk_kills", c.regen.max_lmk_kills},
                    {"window_shrink", c.regen.window_shrink}};
    doc["regen_cap_per_10_rounds"] = c.regen_cap_per_10_rounds;
    doc["use_selector"] = c.use_selector;
    doc["use_planner"] = c.use_planner;
    doc["use_codec"] = c.use_codec;
    doc["use_predictor"] = c.use_predictor;
    return doc.dump(2) + "\n";
}

// --- full simulation ------------------------------------------------------------

namespace {

struct ClientSim {
    FleetClient spec;
    std::vector<MemoryTraceSample> trace;
    BudgetPredictor predictor;
    MemoryTraceSample last_sample;
    std::vector<double> last_losses;
    int last_report_round = -1;
    std::vector<int> regen_rounds;
    std::int64_t fed_until_s = 0;

    ClientSim(FleetClient s, std::vector<MemoryTraceSample> t, const PredictorConfig& pc)
        : spec(std::move(s)), trace(std::move(t)), predictor(pc) {}
};

/// Replays the device's trace (wrapping past its end) up to `now_s`,
/// feeding the predictor one sample per second.
void feed_trace(ClientSim& c, double now_s) {
    auto upto = static_cast<std::int64_t>(std::floor(now_s));
    auto n = static_cast<std::int64_t>(c.trace.size());
    for (std::int64_t t = c.fed_until_s; t < upto; ++t) {
        MemoryTraceSample s = c.trace[static_cast<std::size_t>(t % n)];
        s.t_ms = static_cast<double>(t) * 1e3;
        c.predictor.ingest(s);
        c.last_sample = s;
    }
    c.fed_until_s = std::max(c.fed_until_s, upto);
}

} // namespace

SimulationResult run_simulation(const SimulationConfig& config) {
    std::vector<std::string> errs;
    validate_config(config, errs);
    throw_if_errors(errs);

    GraphGenParams graph_params;
    graph_params.num_ops = config.graph_ops;
    ComputationGraph graph = config.graph_path.empty()
                                 ? gen_random_graph(graph_params, config.graph_seed)
                                 : load_graph_file(config.graph_path);
    std::string graph_id = config.graph_path.empty()
                               ? "synthetic-" + std::to_string(config.graph_seed) + "-" +
                                     std::to_string(config.graph_ops)
                               : config.graph_path;
    FleetSpec fleet = config.fleet_path.empty()
                          ? gen_fleet(config.fleet_size, sub_seed(config.seed, 'F'))
                          : load_fleet_file(config.fleet_path);
    if (static_cast<int>(fleet.clients.size()) < config.clients_per_round)
        throw SchemaError("clients_per_round " + std::to_string(config.clients_per_round) +
                          " exceeds the fleet of " + std::to_string(fleet.clients.size()));

    const CodecModel codec = CodecModel::defaults();
    const std::uint64_t peak = graph.untreated_peak_bytes();
    const std::uint64_t floor_graph = min_feasible_budget(graph, codec);
    const std::uint64_t floor_real =
        graph_to_real_bytes(floor_graph, peak, config.global_mem_bytes);
    const std::vector<OpKind> kinds = model_op_kinds(graph);

    std::map<OpKind, double> nominal_us;
    {
        std::map<OpKind, int> count;
        for (const OpSpec& op : graph.ops) {
            nominal_us[op.kind] += op.base_time_us;
            ++count[op.kind];
        }
        for (auto& [kind, total] : nominal_us) total /= count[kind];
    }

    std::vector<ClientSim> clients;
    clients.reserve(fleet.clients.size());
    {
        std::vector<FleetClient> ordered = fleet.clients;
        std::sort(ordered.begin(), ordered.end(),
                  [](const FleetClient& a, const FleetClient& b) {
                      return a.client_id < b.client_id;
                  });
        for (const FleetClient& spec : ordered) {
            TraceGenParams tp;
            tp.duration_s = config.trace_duration_s;
            tp.total_dram_bytes = spec.mem_capacity_bytes;
            clients.emplace_back(spec, gen_memory_trace(tp, spec.trace_seed), config.predictor);
        }
    }

    double sim_now = config.warmup_s;
    for (ClientSim& c : clients) feed_trace(c, sim_now);

    std::array<double, kShardLabels> deficits;
    deficits.fill(1.0);
    double proxy = config.base_loss;
    const double target = config.target_proxy_fraction * config.base_loss;
    const double comm_s = 2.0 * static_cast<double>(config.model_bytes) /
                          config.bandwidth_bytes_per_s;
    double prev_avg_faults = 0.0;

    PlanCache cache;
    SimulationResult result;
    result.summary.target_proxy_loss = target;
    double total_time = 0.0;
    double total_comm = 0.0;
    int prev_invocations = 0, prev_hits = 0;

    for (int round = 1; round <= config.rounds; ++round) {
        // Every device checks in; the snapshot is immutable for the round.
        std::map<ClientId, std::size_t> index_of;
        std::vector<ClientProfile> pool;
        std::map<ClientId, std::uint64_t> budget_of;
        std::map<ClientId, double> comp_of;
        pool.reserve(clients.size());
        for (std::size_t i = 0; i < clients.size(); ++i) {
            ClientSim& c = clients[i];
            index_of[c.spec.client_id] = i;
            double predicted = config.use_predictor
                                   ? c.predictor.predict(sim_now * 1e3)
                                   : static_cast<double>(c.last_sample.m_avail_bytes);
            std::uint64_t budget =
                predicted <= 0.0 ? 0 : static_cast<std::uint64_t>(predicted);
            budget_of[c.spec.client_id] = budget;

            ClientProfile p;
            p.client_id = c.spec.client_id;
            p.mem_budget_bytes = budget;
            for (OpKind k : kinds)
                p.op_times_us[k] = nominal_us[k] * c.spec.tier_time_factor * c.spec.compute_scale;
            p.batch_losses = c.last_losses;
            p.explored = !c.last_losses.empty();
            p.last_report_round = c.last_report_round;
            comp_of[p.client_id] = comp_stat(p.op_times_us, kinds);
            pool.push_back(std::move(p));
        }

        std::vector<ClientId> selected;
        if (config.use_selector) {
            SelectionConfig sc{config.clients_per_round, config.exploit_fraction};
            selected = select_clients(pool, config.global_mem_bytes, kinds, sc,
                                      sub_seed(config.seed, 'S', static_cast<std::uint64_t>(round)));
        } else {
            std::vector<ClientId> ids;
            ids.reserve(pool.size());
            for (const ClientProfile& p : pool) ids.push_back(p.client_id);
            std::mt19937_64 rng(sub_seed(config.seed, 'R', static_cast<std::uint64_t>(round)));
            std::shuffle(ids.begin(), ids.end(), rng);
            selected.assign(ids.begin(), ids.begin() + config.clients_per_round);
        }

        std::vector<DevicePoint> points;
        points.reserve(selected.size());
        for (ClientId id : selected)
            points.push_back({id, static_cast<double>(budget_of[id]), comp_of[id]});
        std::sort(points.begin(), points.end(),
                  [](const DevicePoint& a, const DevicePoint& b) {
                      return a.client_id < b.client_id;
                  });

        int k_eff = std::min<int>(config.clusters, static_cast<int>(points.size()));
        ClusterAssignment assignment =
            cluster_clients(points, k_eff, sub_seed(config.seed, 'C', static_cast<std::uint64_t>(round)));

        struct Cluster {
            std::vector<DevicePoint> members;
            ClusterPlanOutcome outcome;
            double rep_time_factor = 1.0;
        };
        std::vector<Cluster> groups(static_cast<std::size_t>(k_eff));
        for (std::size_t i = 0; i < points.size(); ++i)
            groups[static_cast<std::size_t>(assignment.label_of[i])].members.push_back(points[i]);

        PlanStrategy strategy = config.use_codec ? PlanStrategy::Hybrid : PlanStrategy::EvictOnly;
        std::map<ClientId, const Cluster*> cluster_of;
        for (Cluster& g : groups) {
            if (g.members.empty()) continue;
            ClientId rep = cluster_representative(g.members);
            const FleetClient& rep_spec = clients[index_of[rep]].spec;
            ClusterPlanRequest req;
            req.graph_id = graph_id;
            // Without planning, everyone runs the untreated schedule sized
            // for the full global model.
            req.rep_budget_real_bytes =
                config.use_planner ? budget_of[rep] : config.global_mem_bytes;
            req.tier = tier_name(rep_spec.mem_capacity_bytes);
            req.tier_time_factor = rep_spec.tier_time_factor;
            req.global_mem_bytes = config.global_mem_bytes;
            g.outcome = plan_for_cluster(req, graph, codec, strategy, cache);
            g.rep_time_factor = rep_spec.tier_time_factor;
            for (const DevicePoint& m : g.members) cluster_of[m.client_id] = &g;
        }

        RoundRecord rec;
        rec.round = round;
        rec.selected = selected;
        double straggler = 0.0;
        std::vector<ClientUpdate> updates;
        int ran = 0;
        std::uint64_t ran_faults = 0;

        for (const DevicePoint& point : points) { // ascending client id
            ClientSim& c = clients[index_of[point.client_id]];
            ParticipantRecord pr;
            pr.client_id = point.client_id;
            const Cluster* group = cluster_of[point.client_id];
            if (!group || !group->outcome.plan) {
                pr.unservable = true;
                rec.clients.push_back(pr);
                continue;
            }
            const ExecutionPlan& plan = *group->outcome.plan;
            double speed =
                c.spec.tier_time_factor * c.spec.compute_scale / group->rep_time_factor;
            LocalRoundParams lp;
            lp.compute_s = plan.est_latency_us * 1e-6 * speed * config.local_steps;
            lp.comm_s = comm_s;
            lp.budget_real_bytes = group->outcome.budget_real_bytes;
            lp.floor_real_bytes = floor_real;
            lp.refault = config.refault;
            lp.max_lmk_kills = config.regen.max_lmk_kills;

            auto window = static_cast<std::size_t>(
                std::max(1.0, std::ceil(lp.compute_s + lp.comm_s)));
            std::vector<std::uint64_t> realized(window);
            auto base = static_cast<std::int64_t>(std::floor(sim_now));
            for (std::size_t i = 0; i < window; ++i) {
                const MemoryTraceSample& s =
                    c.trace[static_cast<std::size_t>((base + static_cast<std::int64_t>(i)) %
                                                     static_cast<std::int64_t>(c.trace.size()))];
                realized[i] = m_safe(s);
            }

            LocalRoundResult local = simulate_local_round(realized, lp);
            pr.latency_s = local.latency_s;
            pr.page_faults = local.page_faults;
            pr.lmk_kills = local.lmk_kills;
            pr.dropped = local.dropped;
            straggler = std::max(straggler, local.latency_s);
            rec.page_faults += local.page_faults;
            rec.lmk_kills += local.lmk_kills;
            ++ran;
            ran_faults += local.page_faults;

            if (!local.dropped) {
                c.last_losses = draw_losses(
                    c.spec.shard, deficits, config.base_loss, config.loss_draws,
                    sub_seed(config.seed, 'L', static_cast<std::uint64_t>(round),
                             static_cast<std::uint64_t>(point.client_id)));
                c.last_report_round = round;
                updates.push_back({{c.spec.shard.begin(), c.spec.shard.end()}, 100});
                ++rec.participants;
            }

            RoundStats stats{local.page_faults, local.lmk_kills};
            RegenDecision decision = should_regenerate(stats, prev_avg_faults, config.regen);
            if (decision.regenerate) {
                int recent = 0;
                for (int r : c.regen_rounds)
                    if (r > round - 10) ++recent;
                if (recent < config.regen_cap_per_10_rounds) {
                    c.predictor.shrink_window(config.regen);
                    c.regen_rounds.push_back(round);
                    pr.regen = true;
                    ++rec.regen_requests;
                }
            }
            rec.clients.push_back(pr);
        }

        if (ran > 0) prev_avg_faults = static_cast<double>(ran_faults) / ran;

        if (!updates.empty()) {
            std::vector<double> coverage = aggregate(updates);
            for (std::size_t l = 0; l < kShardLabels; ++l) {
                double step = config.learn_rate * coverage[l] /
                              (coverage[l] + config.coverage_half_sat);
                deficits[l] *= 1.0 - step;
            }
        }
        double mean_deficit = 0.0;
        for (double d : deficits) mean_deficit += d;
        proxy = config.base_loss * mean_deficit / kShardLabels;

        rec.time_s = straggler + config.aggregation_s;
        rec.comm_s = ran > 0 ? comm_s : 0.0;
        rec.proxy_loss = proxy;
        rec.planner_invocations = cache.planner_invocations() - prev_invocations;
        rec.cache_hits = cache.hits() - prev_hits;
        prev_invocations = cache.planner_invocations();
        prev_hits = cache.hits();

        sim_now += rec.time_s;
        total_time += rec.time_s;
        total_comm += rec.comm_s;
        for (ClientSim& c : clients) feed_trace(c, sim_now);

        for (const ParticipantRecord& pr : rec.clients)
            if (pr.dropped || pr.unservable) ++result.summary.lost_client_rounds;
        result.summary.page_faults += rec.page_faults;
        result.summary.lmk_kills += rec.lmk_kills;
        result.summary.regen_requests += rec.regen_requests;
        result.rounds.push_back(std::move(rec));

        if (proxy <= target) {
            result.summary.target_reached = true;
            result.summary.time_to_target_s = total_time;
            break;
        }
    }

    result.summary.rounds_run = static_cast<int>(result.rounds.size());
    result.summary.total_time_s = total_time;
    result.summary.final_proxy_loss = proxy;
    result.summary.planner_invocations = cache.planner_invocations();
    result.summary.cache_hits = cache.hits();
    if (!result.rounds.empty())
        result.summary.mean_round_time_s = total_time / result.summary.rounds_run;
    if (total_time > 0.0) result.summary.comm_overhead = total_comm / total_time;
    return result;
}

std::string rounds_csv(const SimulationResult& result) {
    std::string out = "round,time,participants,faults,regen count,proxy loss\n";
    char buf[160];
    for (const RoundRecord& rec : result.rounds) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%d,%llu,%d,%.6f\n", rec.round, rec.time_s,
                      rec.participants, static_cast<unsigned long long>(rec.page_faults),
                      rec.regen_requests, rec.proxy_loss);
        out += buf;
    }
    return out;
}

std::string summary_csv(const SimulationResult& result) {
    const SimulationSummary& s = result.summary;
    std::string out =
        "rounds,total time,time to target,target reached,final proxy loss,mean round time,"
        "comm overhead,planner invocations,cache hits,faults,lmk kills,regen count,"
        "lost client rounds\n";
    char buf[320];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%d,%.6f,%.6f,%.6f,%d,%d,%llu,%d,%d,%d\n",
                  s.rounds_run, s.total_time_s, s.time_to_target_s, s.target_reached ? 1 : 0,
                  s.final_proxy_loss, s.mean_round_time_s, s.comm_overhead,
                  s.planner_invocations, s.cache_hits,
                  static_cast<unsigned long long>(s.page_faults), s.lmk_kills, s.regen_requests,
                  s.lost_client_rounds);
    out += buf;
    return out;
}

} // namespace memwall
