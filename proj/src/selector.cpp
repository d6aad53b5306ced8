// SPDX-License-Identifier: Apache-2.0

#include "memwall/selector.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "memwall/errors.hpp"

namespace memwall {

namespace {

/// splitmix64 finalizer; decorrelates (seed, id) pairs for tie-breaking.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace

double mem_stat(std::uint64_t mem_budget_bytes, std::uint64_t global_mem_bytes) {
    if (mem_budget_bytes >= global_mem_bytes) return 1.0;
    return static_cast<double>(mem_budget_bytes) / static_cast<double>(global_mem_bytes);
}

double stat_utility(const std::vector<double>& batch_losses) {
    if (batch_losses.empty()) throw NoDataError("no reported losses to score");
    double sum_sq = 0.0;
    for (double loss : batch_losses) sum_sq += loss * loss;
    return std::sqrt(sum_sq / static_cast<double>(batch_losses.size()));
}

double comp_stat(const std::map<OpKind, double>& op_times_us,
                 const std::vector<OpKind>& model_kinds) {
    double total = 0.0;
    for (OpKind kind : model_kinds) {
        auto it = op_times_us.find(kind);
        if (it == op_times_us.end()) {
            throw IncompleteProfileError(
                std::string("client profile reports no time for op kind ") + to_string(kind));
        }
        total += it->second;
    }
    return 1.0 / total;
}

double client_utility(const ClientProfile& profile, std::uint64_t global_mem_bytes,
                      const std::vector<OpKind>& model_kinds) {
    return stat_utility(profile.batch_losses) *
           mem_stat(profile.mem_budget_bytes, global_mem_bytes) *
           comp_stat(profile.op_times_us, model_kinds);
}

std::vector<OpKind> model_op_kinds(const ComputationGraph& graph) {
    std::set<OpKind> kinds;
    for (const OpSpec& op : graph.ops) kinds.insert(op.kind);
    return {kinds.begin(), kinds.end()};
}

std::vector<ClientId> select_clients(const std::vector<ClientProfile>& pool,
                                     std::uint64_t global_mem_bytes,
                                     const std::vector<OpKind>& model_kinds,
                                     const SelectionConfig& config, std::uint64_t seed) {
    const int k = config.clients_per_round;
    if (k < 1 || static_cast<std::size_t>(k) > pool.size()) {
        throw SchemaError("cannot select " + std::to_string(k) + " clients from a pool of " +
                          std::to_string(pool.size()));
    }
    if (!(config.exploit_fraction > 0.0) || config.exploit_fraction > 1.0) {
        throw SchemaError("exploit fraction must be in (0, 1]");
    }

    struct Scored {
        ClientId id;
        double score;
        std::uint64_t tie;
    };
    std::vector<Scored> exploit_pool, explore_pool;
    for (const ClientProfile& p : pool) {
        if (p.explored) {
            exploit_pool.push_back({p.client_id, client_utility(p, global_mem_bytes, model_kinds),
                                    0});
        } else {
            double resources = mem_stat(p.mem_budget_bytes, global_mem_bytes) *
                               comp_stat(p.op_times_us, model_kinds);
            // Fleets come in capability tiers, so resource scores tie often;
            // a seeded shuffle within ties spreads exploration across a tier
            // instead of always probing its lowest ids.
            explore_pool.push_back(
                {p.client_id, resources, mix64(seed ^ static_cast<std::uint64_t>(p.client_id))});
        }
    }
    auto by_rank = [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.tie != b.tie) return a.tie < b.tie;
        return a.id < b.id;
    };
    std::sort(exploit_pool.begin(), exploit_pool.end(), by_rank);
    std::sort(explore_pool.begin(), explore_pool.end(), by_rank);

    // Products a hair over an integer (binary fractions) must not round the
    // exploit share up an extra slot.
    auto target = static_cast<std::size_t>(
        std::ceil(config.exploit_fraction * static_cast<double>(k) - 1e-9));
    std::size_t n_exploit = std::min(target, exploit_pool.size());

    std::vector<ClientId> picked;
    picked.reserve(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n_exploit; ++i) picked.push_back(exploit_pool[i].id);
    for (std::size_t i = 0; i < explore_pool.size() && picked.size() < static_cast<std::size_t>(k);
         ++i) {
        picked.push_back(explore_pool[i].id);
    }
    // Unexplored pool ran short: keep going down the scored ranking.
    for (std::size_t i = n_exploit;
         i < exploit_pool.size() && picked.size() < static_cast<std::size_t>(k); ++i) {
        picked.push_back(exploit_pool[i].id);
    }
    return picked;
}

} // namespace memwall
