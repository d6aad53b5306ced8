// SPDX-License-Identifier: Apache-2.0
//
// Safe-budget prediction from available-memory traces: reclaim-adjusted
// samples, kill-priority weighting, windowed moving average, and the
// regenerate-or-not decision after each training round.

#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "memwall/errors.hpp"

namespace memwall {

enum class SwapKind { DiskSwap, CompressedRam };

/// Reclaim multiplier: pages below the high watermark cost double under
/// compressed-RAM swap because they must be compressed back in.
inline int swap_alpha(SwapKind kind) { return kind == SwapKind::CompressedRam ? 2 : 1; }

struct ProcRecord {
    int oom_adj_score = 0; // 0 (foreground, never killed) .. 1000 (first to go)
    bool foreground = false;
};

struct MemoryTraceSample {
    double t_ms = 0.0;
    std::uint64_t m_avail_bytes = 0;
    std::uint64_t watermark_high_bytes = 0;
    SwapKind swap_kind = SwapKind::DiskSwap;
    std::vector<ProcRecord> procs;
};

/// Available memory minus the reclaim threshold, floored at zero:
/// what a training process can take without waking the reclaimer.
std::uint64_t m_safe(const MemoryTraceSample& sample);

/// Sum of max_score/oom_adj_score over the sample's processes (score 0
/// counts as 1; negative scores are skipped). Samples taken while
/// easily-killed background work dominates get small weights; a settled
/// foreground app pins the weight near 1000. Empty process list -> 1.
double window_weight(const MemoryTraceSample& sample);

struct PredictorConfig {
    double window_ms = 60'000.0;  // W: init = one training-epoch duration
    double t_sample_ms = 1'000.0; // aggregation period
    double t_slide_ms = 5'000.0;  // budget re-emission period
};

struct RegenConfig {
    double fault_factor = 2.0;   // TP1: page-fault escalation vs. previous round
    int max_lmk_kills = 3;       // TP2: kills tolerated per round
    double window_shrink = 0.9;  // WS_adj
};

struct RoundStats {
    std::uint64_t page_faults = 0;
    int lmk_kills = 0;
};

struct RegenDecision {
    bool regenerate = false;
    std::string reason; // "page-faults" | "lmk-kills" | ""
};

RegenDecision should_regenerate(const RoundStats& stats, double prev_avg_page_faults,
                                const RegenConfig& config);

/// Single-writer state machine over a time-ordered sample stream. Samples
/// are averaged per t_sample period; predict() takes the weighted mean of
/// the period averages inside (now - W, now], clamped to the window's
/// [min, max] so a constant trace reproduces exactly.
class BudgetPredictor {
public:
    explicit BudgetPredictor(PredictorConfig config);

    void ingest(const MemoryTraceSample& sample);

    /// Weighted moving average of m_safe, in bytes. Throws NoDataError when
    /// no period falls inside the window.
    double predict(double now_ms) const;

    /// W <- W * window_shrink, floored at 2 * t_sample so the window always
    /// holds at least two periods. Call after a regeneration trigger.
    void shrink_window(const RegenConfig& config);

    double window_ms() const { return config_.window_ms; }
    const PredictorConfig& config() const { return config_; }

private:
    struct Period {
        std::int64_t index;   // floor(t / t_sample)
        double last_t_ms;     // representative time: newest sample inside
        double mean_m_safe;
        double mean_weight;
        int count;
    };

    PredictorConfig config_;
    std::deque<Period> periods_;
    double last_t_ms_ = 0.0;
};

/// Trace stream: one JSON record per line
/// {t_ms, m_avail_kb, watermark_kb, swap_kind, procs:[{score, fg}]}.
std::vector<MemoryTraceSample> parse_trace(const std::string& jsonl_text);
std::vector<MemoryTraceSample> load_trace_file(const std::string& path);
std::string serialize_trace(const std::vector<MemoryTraceSample>& samples);

} // namespace memwall
