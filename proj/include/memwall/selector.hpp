// SPDX-License-Identifier: Apache-2.0
//
// Per-client utility scoring and round participant selection. A client's
// utility is the product of three signals: how much of the model's memory
// requirement it can hold, how informative its recent losses are, and how
// fast it runs the model's op mix. Each round takes the top scorers plus a
// slice of never-tried clients ranked by raw system resources.

#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "memwall/graph.hpp"

namespace memwall {

using ClientId = std::int64_t;

struct ClientProfile {
    ClientId client_id = 0;
    std::uint64_t mem_budget_bytes = 0;   // predicted safe training budget
    std::map<OpKind, double> op_times_us; // reported per-kind runtimes
    std::vector<double> batch_losses;     // recent local losses; empty until explored
    bool explored = false;
    int last_report_round = -1;
};

/// (M_i/M_G) capped at 1: full credit once the client fits the whole model,
/// proportional penalty below that.
double mem_stat(std::uint64_t mem_budget_bytes, std::uint64_t global_mem_bytes);

/// Root mean square of the reported losses. Throws NoDataError on an empty
/// list — a client with no losses yet goes through the explore path instead.
double stat_utility(const std::vector<double>& batch_losses);

/// 1 / sum of the client's reported times over the model's distinct op
/// kinds. Throws IncompleteProfileError if the profile is missing a kind
/// the model needs.
double comp_stat(const std::map<OpKind, double>& op_times_us,
                 const std::vector<OpKind>& model_kinds);

/// Product of the three signals for an explored client.
double client_utility(const ClientProfile& profile, std::uint64_t global_mem_bytes,
                      const std::vector<OpKind>& model_kinds);

/// Distinct op kinds appearing in the graph, ascending.
std::vector<OpKind> model_op_kinds(const ComputationGraph& graph);

struct SelectionConfig {
    int clients_per_round = 10;    // K
    double exploit_fraction = 0.9; // share of K taken from scored clients
};

/// Picks K participants: ceil(exploit_fraction * K) top-utility explored
/// clients (ties by id), the rest from never-explored clients ranked by
/// mem_stat * comp_stat with seeded tie-breaking, backfilling from the
/// next-best explored when the unexplored pool runs short. Deterministic
/// given the seed; insensitive to pool ordering.
std::vector<ClientId> select_clients(const std::vector<ClientProfile>& pool,
                                     std::uint64_t global_mem_bytes,
                                     const std::vector<OpKind>& model_kinds,
                                     const SelectionConfig& config, std::uint64_t seed);

} // namespace memwall
