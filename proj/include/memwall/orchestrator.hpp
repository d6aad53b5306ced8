// SPDX-License-Identifier: Apache-2.0
//
// Server-side federated round loop over a synthetic device fleet. Each
// round: score and select clients, cluster them by capability, build one
// execution plan per cluster through a keyed cache, simulate every
// member's local training against its device's memory trace, and fold the
// survivors' updates into a loss-proxy learning curve.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "memwall/graph.hpp"
#include "memwall/planner.hpp"
#include "memwall/predictor.hpp"
#include "memwall/selector.hpp"

namespace memwall {

inline constexpr int kShardLabels = 10;

/// One simulated device. compute_scale is jitter around its tier's nominal
/// speed (tier_time_factor), so plans built for the tier profile transfer:
/// the device's latency is the plan estimate times compute_scale.
struct FleetClient {
    ClientId client_id = 0;
    std::uint64_t mem_capacity_bytes = 0;
    double tier_time_factor = 1.0;
    double compute_scale = 1.0;
    std::array<double, kShardLabels> shard{}; // label proportions, sum 1
    std::uint64_t trace_seed = 0;
};

struct FleetSpec {
    std::vector<FleetClient> clients;
};

/// Capacity tiers follow the default handset distribution: 4 GB 15%,
/// 6 GB 25%, 8 GB 30%, 12 GB 25%, 16 GB 5% (largest-remainder rounding),
/// with per-tier nominal speed and seeded jitter; shards are drawn from a
/// sparse Dirichlet so most clients hold only a couple of labels.
FleetSpec gen_fleet(int n, std::uint64_t seed);

FleetSpec parse_fleet(const std::string& json_text);
FleetSpec load_fleet_file(const std::string& path);
std::string serialize_fleet(const FleetSpec& fleet);

/// "4GB" .. "16GB"; arbitrary capacities print their floored GiB count.
std::string tier_name(std::uint64_t mem_capacity_bytes);

// --- capability clustering -------------------------------------------------

struct DevicePoint {
    ClientId client_id = 0;
    double mem = 0.0;  // budget bytes
    double comp = 0.0; // compute score (higher = faster)
};

/// Min-max scaling of each feature to [0, 1]; a constant feature maps to
/// 0.5 so it cannot dominate distances.
std::vector<DevicePoint> normalize_points(std::vector<DevicePoint> points);

/// Seeded farthest-point-flavored pick of k initial centroids (squared
///-distance weighted); returns indices into `points`. Exposed so tests can
/// run their own refinement from the same start.
std::vector<std::size_t> kmeans_init(const std::vector<DevicePoint>& points, int k,
                                     std::uint64_t seed);

struct ClusterAssignment {
    std::vector<int> label_of; // aligned with the input points
    std::vector<std::array<double, 2>> centroids;
};

/// Lloyd's iterations over normalized (mem, comp) from the seeded init,
/// capped at a fixed iteration count. Nearest-centroid ties go to the
/// lowest centroid index; an emptied cluster keeps its old centroid.
/// Throws SchemaError when k exceeds the pool or is non-positive.
ClusterAssignment cluster_clients(const std::vector<DevicePoint>& points, int k,
                                  std::uint64_t seed);

/// Minimum-capability member: least memory, then slowest, then lowest id.
ClientId cluster_representative(const std::vector<DevicePoint>& members);

// --- plan cache --------------------------------------------------------------

inline constexpr std::uint64_t kBudgetBucketBytes = 256ull << 20;

/// Memo of per-cluster plans keyed by (graph, budget bucket, device tier).
/// Budgets are bucketed by flooring to kBudgetBucketBytes, so a cached
/// plan's budget never exceeds any requester's in the same bucket. A key
/// that proved infeasible is remembered too.
class PlanCache {
public:
    /// nullptr = never tried; a present entry holding nullopt = known
    /// unservable at this key.
    const std::optional<ExecutionPlan>* find(const std::string& graph_id,
                                             std::uint64_t budget_bucket,
                                             const std::string& tier) const;
    void put(const std::string& graph_id, std::uint64_t budget_bucket, const std::string& tier,
             std::optional<ExecutionPlan> plan);

    void count_invocation() { ++invocations_; }
    void count_hit() { ++hits_; }
    int planner_invocations() const { return invocations_; }
    int hits() const { return hits_; }

private:
    std::map<std::tuple<std::string, std::uint64_t, std::string>, std::optional<ExecutionPlan>>
        table_;
    int invocations_ = 0;
    int hits_ = 0;
};

/// Real-device bytes <-> graph bytes. The graph's untreated peak stands
/// for `global_mem_bytes` of device memory; budgets scale linearly.
std::uint64_t real_to_graph_bytes(std::uint64_t real_bytes, std::uint64_t peak_bytes,
                                  std::uint64_t global_mem_bytes);
std::uint64_t graph_to_real_bytes(std::uint64_t graph_bytes, std::uint64_t peak_bytes,
                                  std::uint64_t global_mem_bytes);

struct ClusterPlanRequest {
    std::string graph_id;
    std::uint64_t rep_budget_real_bytes = 0; // the representative's safe budget
    std::string tier;
    double tier_time_factor = 1.0;
    std::uint64_t global_mem_bytes = 8ull << 30;
};

struct ClusterPlanOutcome {
    std::optional<ExecutionPlan> plan; // empty: cluster unservable this round
    bool cache_hit = false;
    std::uint64_t budget_graph_bytes = 0;
    std::uint64_t budget_real_bytes = 0; // bucket floor the plan was built for
};

/// Plans at the representative's budget bucket floor on the tier-nominal
/// device profile, through the cache. Every cluster member's budget is at
/// least the bucket floor, so a returned plan fits all of them.
ClusterPlanOutcome plan_for_cluster(const ClusterPlanRequest& request,
                                    const ComputationGraph& graph, const CodecModel& codec_model,
                                    PlanStrategy strategy, PlanCache& cache);

// --- local-round simulation --------------------------------------------------

struct RefaultModel {
    double bandwidth_bytes_per_s = 1e9; // swap-in throughput
    double per_fault_ms = 1.0;          // fixed cost per faulting sample
};

struct LocalRoundParams {
    double compute_s = 0.0;              // scaled plan latency for the whole round
    double comm_s = 0.0;                 // model download + upload
    std::uint64_t budget_real_bytes = 0; // what the plan assumes is free
    std::uint64_t floor_real_bytes = 0;  // below this the trainer is killed
    RefaultModel refault;
    int max_lmk_kills = 3; // kills tolerated before the round is dropped
};

struct LocalRoundResult {
    double latency_s = 0.0;
    std::uint64_t page_faults = 0;
    int lmk_kills = 0;
    bool dropped = false;
};

/// Replays the round against the device's realized safe-memory samples
/// (one per second of the round). A sample below the plan's budget faults
/// the overflow back in at refault bandwidth; a sample below the
/// irreducible floor is a kill costing one wasted attempt. More kills
/// than tolerated drops the client from the round entirely.
LocalRoundResult simulate_local_round(const std::vector<std::uint64_t>& realized_m_safe,
                                      const LocalRoundParams& params);

/// Loss reports for utility scoring: draws around the shard's expected
/// proxy loss (shard-weighted label deficits times the base loss) with
/// small seeded relative noise.
std::vector<double> draw_losses(const std::array<double, kShardLabels>& shard,
                                const std::array<double, kShardLabels>& deficits,
                                double base_loss, int n, std::uint64_t seed);

// --- aggregation ---------------------------------------------------------------

struct ClientUpdate {
    std::vector<double> delta;
    std::uint64_t sample_count = 0;
};

/// Sample-count-weighted arithmetic mean. Throws SchemaError on an empty
/// list, mismatched vector lengths, or zero total weight.
std::vector<double> aggregate(const std::vector<ClientUpdate>& updates);

// --- full simulation ------------------------------------------------------------

struct SimulationConfig {
    std::uint64_t seed = 1;
    int rounds = 30;
    int clients_per_round = 12;
    double exploit_fraction = 0.9;
    int clusters = 5;

    std::string fleet_path; // empty: generate fleet_size clients from the seed
    int fleet_size = 60;
    std::string graph_path; // empty: generate graph_ops ops from graph_seed
    int graph_ops = 40;
    std::uint64_t graph_seed = 1;

    std::uint64_t global_mem_bytes = 8ull << 30; // device memory the graph stands for
    double target_proxy_fraction = 0.3;          // stop at proxy <= fraction x base
    double base_loss = 4.0;
    double learn_rate = 0.4;
    double coverage_half_sat = 0.04; // label coverage giving half the max step

    int local_steps = 60; // graph passes per round
    int loss_draws = 4;
    std::uint64_t model_bytes = 1ull << 20;
    double bandwidth_bytes_per_s = 20e6;
    double aggregation_s = 0.05;
    double warmup_s = 30.0;        // trace fed to predictors before round 1
    double trace_duration_s = 900.0; // per-client trace length; wraps after

    RefaultModel refault;
    PredictorConfig predictor;
    RegenConfig regen;
    int regen_cap_per_10_rounds = 3;

    bool use_selector = true;  // off: uniform random picks
    bool use_planner = true;   // off: untreated schedule at full footprint
    bool use_codec = true;     // off: eviction-only plans
    bool use_predictor = true; // off: last raw available-memory sample
};

/// Parses and validates a config document, reporting every problem at
/// once in the SchemaError message.
SimulationConfig parse_sim_config(const std::string& json_text);
SimulationConfig load_sim_config_file(const std::string& path);
std::string serialize_sim_config(const SimulationConfig& config);

struct ParticipantRecord {
    ClientId client_id = 0;
    double latency_s = 0.0;
    std::uint64_t page_faults = 0;
    int lmk_kills = 0;
    bool dropped = false;    // killed too often mid-round
    bool unservable = false; // cluster plan infeasible; sat the round out
    bool regen = false;      // asked for plan regeneration afterwards
};

struct RoundRecord {
    int round = 0;     // 1-based
    double time_s = 0.0; // slowest participant + aggregation
    double comm_s = 0.0; // transfer share of that wall time
    std::vector<ClientId> selected;
    std::vector<ParticipantRecord> clients; // one per selected client
    int participants = 0;                   // clients whose update arrived
    std::uint64_t page_faults = 0;
    int lmk_kills = 0;
    int regen_requests = 0;
    int planner_invocations = 0;
    int cache_hits = 0;
    double proxy_loss = 0.0;
};

struct SimulationSummary {
    int rounds_run = 0;
    double total_time_s = 0.0;
    bool target_reached = false;
    double time_to_target_s = -1.0; // -1: never reached
    double final_proxy_loss = 0.0;
    double target_proxy_loss = 0.0;
    double mean_round_time_s = 0.0;
    double comm_overhead = 0.0; // transfer time / wall time
    int planner_invocations = 0;
    int cache_hits = 0;
    std::uint64_t page_faults = 0;
    int lmk_kills = 0;
    int regen_requests = 0;
    int lost_client_rounds = 0; // dropped + unservable
};

struct SimulationResult {
    std::vector<RoundRecord> rounds;
    SimulationSummary summary;
};

/// Runs the full per-round loop for config.rounds rounds (stopping early
/// once the proxy target is reached). Deterministic per (config, seed).
SimulationResult run_simulation(const SimulationConfig& config);

std::string rounds_csv(const SimulationResult& result);
std::string summary_csv(const SimulationResult& result);

} // namespace memwall
