// SPDX-License-Identifier: Apache-2.0

#include "memwall/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace memwall {

using nlohmann::json;

namespace {
constexpr double kMaxScore = 1000.0;
}

std::uint64_t m_safe(const MemoryTraceSample& sample) {
    std::uint64_t reserve =
        static_cast<std::uint64_t>(swap_alpha(sample.swap_kind)) * sample.watermark_high_bytes;
    return sample.m_avail_bytes > reserve ? sample.m_avail_bytes - reserve : 0;
}

double window_weight(const MemoryTraceSample& sample) {
    double w = 0.0;
    int counted = 0;
    for (const ProcRecord& p : sample.procs) {
        if (p.oom_adj_score < 0) continue;
        int score = p.oom_adj_score == 0 ? 1 : p.oom_adj_score;
        w += kMaxScore / score;
        ++counted;
    }
    return counted == 0 ? 1.0 : w;
}

RegenDecision should_regenerate(const RoundStats& stats, double prev_avg_page_faults,
                                const RegenConfig& config) {
    if (static_cast<double>(stats.page_faults) > config.fault_factor * prev_avg_page_faults) {
        return {true, "page-faults"};
    }
    if (stats.lmk_kills > config.max_lmk_kills) {
        return {true, "lmk-kills"};
    }
    return {false, ""};
}

BudgetPredictor::BudgetPredictor(PredictorConfig config) : config_(config) {
    if (config_.window_ms <= 0 || config_.t_sample_ms <= 0 || config_.t_slide_ms <= 0) {
        throw SchemaError("predictor durations must be positive");
    }
    config_.window_ms = std::max(config_.window_ms, 2 * config_.t_sample_ms);
}

void BudgetPredictor::ingest(const MemoryTraceSample& sample) {
    if (!periods_.empty() && sample.t_ms < last_t_ms_) {
        throw SchemaError("trace samples must be time-ordered (got t=" +
                          std::to_string(sample.t_ms) + " after t=" +
                          std::to_string(last_t_ms_) + ")");
    }
    last_t_ms_ = sample.t_ms;

    auto idx = static_cast<std::int64_t>(std::floor(sample.t_ms / config_.t_sample_ms));
    double ms = static_cast<double>(m_safe(sample));
    double w = window_weight(sample);
    if (periods_.empty() || periods_.back().index != idx) {
        periods_.push_back({idx, sample.t_ms, ms, w, 1});
    } else {
        Period& p = periods_.back();
        p.count += 1;
        p.mean_m_safe += (ms - p.mean_m_safe) / p.count;
        p.mean_weight += (w - p.mean_weight) / p.count;
        p.last_t_ms = sample.t_ms;
    }
    while (!periods_.empty() && periods_.front().last_t_ms <= last_t_ms_ - config_.window_ms) {
        periods_.pop_front();
    }
}

double BudgetPredictor::predict(double now_ms) const {
    double num = 0.0, den = 0.0;
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const Period& p : periods_) {
        if (p.last_t_ms <= now_ms - config_.window_ms || p.last_t_ms > now_ms) continue;
        num += p.mean_weight * p.mean_m_safe;
        den += p.mean_weight;
        lo = any ? std::min(lo, p.mean_m_safe) : p.mean_m_safe;
        hi = any ? std::max(hi, p.mean_m_safe) : p.mean_m_safe;
        any = true;
    }
    if (!any) {
        throw NoDataError("no memory samples inside the prediction window ending at t=" +
                          std::to_string(now_ms) + " ms");
    }
    return std::clamp(num / den, lo, hi);
}

void BudgetPredictor::shrink_window(const RegenConfig& config) {
    config_.window_ms =
        std::max(config_.window_ms * config.window_shrink, 2 * config_.t_sample_ms);
}

namespace {

const char* swap_kind_name(SwapKind kind) {
    return kind == SwapKind::CompressedRam ? "zram" : "disk";
}

SwapKind swap_kind_from(const std::string& name, std::size_t line) {
    if (name == "zram") return SwapKind::CompressedRam;
    if (name == "disk") return SwapKind::DiskSwap;
    throw SchemaError("trace line " + std::to_string(line) + ": unknown swap_kind '" + name + "'");
}

} // namespace

std::vector<MemoryTraceSample> parse_trace(const std::string& jsonl_text) {
    std::vector<MemoryTraceSample> out;
    std::istringstream in(jsonl_text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError("trace line " + std::to_string(line_no) + ": " + e.what());
        }
        MemoryTraceSample s;
        try {
            s.t_ms = rec.at("t_ms").get<double>();
            s.m_avail_bytes = rec.at("m_avail_kb").get<std::uint64_t>() * 1024;
            s.watermark_high_bytes = rec.at("watermark_kb").get<std::uint64_t>() * 1024;
            s.swap_kind = swap_kind_from(rec.at("swap_kind").get<std::string>(), line_no);
            for (const auto& jp : rec.at("procs")) {
                ProcRecord p;
                p.oom_adj_score = jp.at("score").get<int>();
                p.foreground = jp.at("fg").get<bool>();
                if (p.oom_adj_score > 1000) {
                    throw SchemaError("trace line " + std::to_string(line_no) +
                                      ": oom score out of range");
                }
                s.procs.push_back(p);
            }
        } catch (const json::exception& e) {
            throw SchemaError("trace line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!out.empty() && s.t_ms < out.back().t_ms) {
            throw SchemaError("trace line " + std::to_string(line_no) + ": samples out of order");
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<MemoryTraceSample> load_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open trace file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_trace(buf.str());
}

std::string serialize_trace(const std::vector<MemoryTraceSample>& samples) {
    std::string out;
    for (const MemoryTraceSample& s : samples) {
        json rec;
        rec["t_ms"] = s.t_ms;
        rec["m_avail_kb"] = s.m_avail_bytes / 1024;
        rec["watermark_kb"] = s.watermark_high_bytes / 1024;
        rec["swap_kind"] = swap_kind_name(s.swap_kind);
        rec["procs"] = json::array();
        for (const ProcRecord& p : s.procs) {
            rec["procs"].push_back({{"score", p.oom_adj_score}, {"fg", p.foreground}});
        }
        out += rec.dump();
        out += '\n';
    }
    return out;
}

} // namespace memwall
