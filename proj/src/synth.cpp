// SPDX-License-Identifier: Apache-2.0

#include "memwall/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

namespace memwall {

using nlohmann::json;

ComputationGraph gen_random_graph(const GraphGenParams& params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::int64_t> side(params.min_side, params.max_side);
    std::uniform_real_distribution<double> op_time(params.min_time_us, params.max_time_us);

    const OpKind compute_kinds[] = {OpKind::Conv, OpKind::MatMul, OpKind::ReLU, OpKind::Pool,
                                    OpKind::Norm, OpKind::Add,    OpKind::Other};
    const OpKind transform_kinds[] = {OpKind::Reshape, OpKind::Transpose, OpKind::Gather};
    std::uniform_int_distribution<int> compute_pick(0, 6);
    std::uniform_int_distribution<int> transform_pick(0, 2);

    json doc;
    doc["element_width"] = 4;
    doc["ops"] = json::array();
    doc["tensors"] = json::array();

    auto add_tensor = [&](TensorId id) {
        json jt;
        jt["id"] = id;
        jt["shape"] = {side(rng), side(rng), side(rng)};
        jt["layout"] = "RowMajorNCHW";
        doc["tensors"].push_back(std::move(jt));
    };

    TensorId next_tensor = 0;
    add_tensor(next_tensor++); // graph input
    std::vector<TensorId> produced = {0};
    std::vector<TensorId> dangling = {0}; // produced but not yet consumed

    auto consume = [&](TensorId id) {
        dangling.erase(std::remove(dangling.begin(), dangling.end(), id), dangling.end());
    };

    for (OpId op_id = 0; op_id < params.num_ops; ++op_id) {
        bool transform = unit(rng) < params.p_layout_transform;
        OpKind kind = transform ? transform_kinds[transform_pick(rng)]
                                : compute_kinds[compute_pick(rng)];

        std::uniform_int_distribution<int> fanin_pick(1, params.max_fanin);
        int fanin = transform ? 1 : fanin_pick(rng);
        std::vector<TensorId> inputs;
        // Bias toward recent tensors so graphs stay deep rather than
        // star-shaped. Long skips pull from tensors still waiting for a
        // reader, which both keeps early tensors alive across the middle of
        // the schedule (idle memory the planner can work with) and keeps
        // the set of terminal results small.
        for (int i = 0; i < fanin; ++i) {
            TensorId in;
            if (dangling.size() > 1 && unit(rng) < params.p_long_skip) {
                std::uniform_int_distribution<std::size_t> pick(0, dangling.size() - 2);
                in = dangling[pick(rng)];
            } else {
                std::size_t span = std::min<std::size_t>(produced.size(), 6);
                std::uniform_int_distribution<std::size_t> pick(produced.size() - span,
                                                                produced.size() - 1);
                in = produced[pick(rng)];
            }
            inputs.push_back(in);
            consume(in);
        }

        TensorId out = next_tensor++;
        add_tensor(out);
        produced.push_back(out);
        dangling.push_back(out);

        json jo;
        jo["id"] = op_id;
        jo["kind"] = to_string(kind);
        jo["inputs"] = inputs;
        jo["outputs"] = {out};
        jo["base_time_us"] = op_time(rng);
        jo["crosses_processor"] = transform && unit(rng) < params.p_crosses_processor;
        doc["ops"].push_back(std::move(jo));
    }

    // Fold whatever is still unread into a single result, the way a training
    // step funnels everything into one loss. Left alone, each leftover would
    // count as a graph output and stay pinned at full size to the end of the
    // schedule; folded, it is just another intermediate a plan may spill.
    // The funnel emits small summaries, not activation-sized tensors.
    OpId tail_id = params.num_ops;
    while (dangling.size() > 1) {
        std::vector<TensorId> inputs(dangling.begin(),
                                     dangling.begin() + std::min<std::size_t>(dangling.size(), 2));
        dangling.erase(dangling.begin(), dangling.begin() + static_cast<long>(inputs.size()));

        TensorId out = next_tensor++;
        json jt;
        jt["id"] = out;
        jt["shape"] = {params.min_side, params.min_side, params.min_side};
        jt["layout"] = "RowMajorNCHW";
        doc["tensors"].push_back(std::move(jt));
        dangling.push_back(out);

        json jo;
        jo["id"] = tail_id++;
        jo["kind"] = to_string(OpKind::Add);
        jo["inputs"] = inputs;
        jo["outputs"] = {out};
        jo["base_time_us"] = op_time(rng);
        jo["crosses_processor"] = false;
        doc["ops"].push_back(std::move(jo));
    }

    return load_graph(doc.dump());
}

std::vector<MemoryTraceSample> gen_memory_trace(const TraceGenParams& params,
                                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::lognormal_distribution<double> session_len(
        std::log(params.mean_session_s) - 0.5 * params.session_sigma * params.session_sigma,
        params.session_sigma);
    std::uniform_int_distribution<int> n_background(params.min_background, params.max_background);
    std::uniform_int_distribution<int> bg_score(100, 900);
    std::uniform_real_distribution<double> dip_mb(params.launch_dip_min_mb,
                                                  params.launch_dip_max_mb);
    std::uniform_real_distribution<double> launch_len(params.launch_s_min, params.launch_s_max);
    std::normal_distribution<double> drift_mb(0.0, 120.0);

    auto kb_align = [](double bytes) {
        return static_cast<std::uint64_t>(bytes / 1024) * 1024; // trace files carry kb
    };
    const double dram = static_cast<double>(params.total_dram_bytes);
    const auto watermark = kb_align(params.watermark_fraction * dram);

    double plateau = 0.52 * dram; // settled available memory
    auto new_background = [&] {
        std::vector<ProcRecord> procs;
        int n = n_background(rng);
        for (int i = 0; i < n; ++i) procs.push_back({bg_score(rng), false});
        return procs;
    };
    std::vector<ProcRecord> background = new_background();

    double session_left = session_len(rng);
    double launch_left = 0.0;
    double dip_bytes = 0.0;

    std::vector<MemoryTraceSample> out;
    const int steps = static_cast<int>(params.duration_s / params.sample_period_s);
    for (int i = 0; i < steps; ++i) {
        MemoryTraceSample s;
        s.t_ms = i * params.sample_period_s * 1000.0;
        s.watermark_high_bytes = watermark;
        s.swap_kind = params.swap_kind;

        if (launch_left > 0.0) {
            launch_left -= params.sample_period_s;
            s.procs = background; // nothing settled in the foreground yet
            double avail = plateau - dip_bytes + 0.005 * plateau * (unit(rng) - 0.5);
            s.m_avail_bytes = kb_align(std::max(avail, 0.05 * dram));
            if (launch_left <= 0.0) {
                plateau = std::clamp(plateau + drift_mb(rng) * 1024 * 1024, 0.30 * dram,
                                     0.70 * dram);
                session_left = session_len(rng);
                background = new_background();
            }
        } else {
            s.procs = background;
            s.procs.insert(s.procs.begin(), {0, true});
            double avail = plateau + 0.015 * plateau * (unit(rng) - 0.5);
            s.m_avail_bytes = kb_align(std::max(avail, 0.05 * dram));
            session_left -= params.sample_period_s;
            if (session_left <= 0.0) {
                launch_left = launch_len(rng);
                dip_bytes = dip_mb(rng) * 1024 * 1024;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

ActivationTensor gen_activation(int c, int h, int w, const ActivationGenParams& params,
                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> amp(0.5, 1.5);
    std::uniform_real_distribution<double> freq(0.5, 1.5);
    std::uniform_real_distribution<double> phase(0.0, 6.28318530717958648);
    std::normal_distribution<double> jitter(0.0, params.noise);
    std::normal_distribution<double> spike_var(0.0, 0.25);

    ActivationTensor t;
    t.c = c;
    t.h = h;
    t.w = w;
    t.data.resize(static_cast<std::size_t>(c) * h * w);

    for (int ci = 0; ci < c; ++ci) {
        bool spiked = unit(rng) < params.salient_fraction;
        double a = amp(rng), f1 = freq(rng), f2 = freq(rng), p1 = phase(rng), p2 = phase(rng);
        float* chan = t.channel(ci);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                double v = a * std::sin(6.28318530717958648 * f1 * i / h + p1) *
                               std::cos(6.28318530717958648 * f2 * j / w + p2) +
                           jitter(rng);
                if (params.relu_like) v = std::max(0.0, v);
                if (spiked && unit(rng) < params.outlier_density) {
                    double sign = unit(rng) < 0.5 && !params.relu_like ? -1.0 : 1.0;
                    v += sign * params.outlier_scale * (1.0 + std::abs(spike_var(rng)));
                }
                chan[static_cast<std::size_t>(i) * w + j] = static_cast<float>(v);
            }
        }
    }
    return t;
}

std::vector<ActivationTensor> gen_activation_corpus(const ActivationGenParams& params,
                                                    std::uint64_t seed) {
    std::vector<ActivationTensor> corpus;
    corpus.reserve(kCorpusShapes.size());
    for (std::size_t i = 0; i < kCorpusShapes.size(); ++i) {
        const auto& s = kCorpusShapes[i];
        corpus.push_back(gen_activation(s[0], s[1], s[2], params, seed + i));
    }
    return corpus;
}

} // namespace memwall
