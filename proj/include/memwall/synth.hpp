// SPDX-License-Identifier: Apache-2.0
//
// Seeded generators for synthetic inputs: random DAG graphs shaped like
// small CNN training graphs, and app-session memory traces with launch
// dips. Every generator is a pure function of its parameters and seed.

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "memwall/codec.hpp"
#include "memwall/graph.hpp"
#include "memwall/predictor.hpp"

namespace memwall {

struct GraphGenParams {
    int num_ops = 20;
    int max_fanin = 2;
    double p_long_skip = 0.2;        // chance an input reaches past the recent window
    double p_layout_transform = 0.2; // chance an op is Reshape/Transpose/Gather
    double p_crosses_processor = 0.15;
    std::int64_t min_side = 8;   // tensor side length range
    std::int64_t max_side = 64;
    double min_time_us = 10.0;
    double max_time_us = 2000.0;
};

// Emits a schema-valid document and runs it through load_graph, so generated
// graphs carry the same guarantees as file-loaded ones.
ComputationGraph gen_random_graph(const GraphGenParams& params, std::uint64_t seed);

struct TraceGenParams {
    double duration_s = 600.0;
    double sample_period_s = 1.0;
    std::uint64_t total_dram_bytes = 8ull << 30;
    SwapKind swap_kind = SwapKind::CompressedRam;
    double mean_session_s = 153.0; // lognormal session lengths around this mean
    double session_sigma = 0.31;   // log-space spread
    int min_background = 3;
    int max_background = 5;
    double watermark_fraction = 0.02; // high watermark as a share of DRAM
    double launch_dip_min_mb = 400.0; // app-launch transient memory draw
    double launch_dip_max_mb = 900.0;
    double launch_s_min = 2.0;
    double launch_s_max = 6.0;
};

// One sample per period. Within a session the foreground app sits at kill
// score 0 over a steady plateau; session switches insert a short launch
// window where available memory dips and only killable background work is
// running.
std::vector<MemoryTraceSample> gen_memory_trace(const TraceGenParams& params,
                                                std::uint64_t seed);

struct ActivationGenParams {
    double salient_fraction = 0.05; // channels seeded with large outliers
    double outlier_scale = 81.0;    // outlier magnitude vs. typical values
    double outlier_density = 0.02;  // per-element spike chance inside those channels
    bool relu_like = true;          // clamp negatives to exact zeros
    double noise = 0.002;           // additive jitter on the smooth field
};

// Smooth low-frequency per-channel fields with optional exact zeros and
// spiked channels; the texture the codec is calibrated against.
ActivationTensor gen_activation(int c, int h, int w, const ActivationGenParams& params,
                                std::uint64_t seed);

inline constexpr std::array<std::array<int, 3>, 5> kCorpusShapes = {
    {{64, 112, 112}, {128, 56, 56}, {256, 28, 28}, {512, 14, 14}, {512, 7, 7}}};

// One tensor per calibration shape.
std::vector<ActivationTensor> gen_activation_corpus(const ActivationGenParams& params,
                                                    std::uint64_t seed);

} // namespace memwall
