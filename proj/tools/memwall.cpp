// SPDX-License-Identifier: Apache-2.0
//
// memwall command line. One binary, five subcommands:
//
//   plan      generate (or sweep) budget-constrained execution plans
//   codec     compress / verify / decode activation tensors
//   predict   replay a memory trace through the budget predictor
//   simulate  run the federated round simulator, emit round + summary CSVs
//   gen       emit fleet / trace / graph fixture files
//
// Exit codes: 0 success, 1 validation error, 2 infeasible input,
// 3 internal contract violation. MEMWALL_SEED overrides any configured
// seed when set.

#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memwall/codec.hpp"
#include "memwall/errors.hpp"
#include "memwall/graph.hpp"
#include "memwall/orchestrator.hpp"
#include "memwall/planner.hpp"
#include "memwall/predictor.hpp"
#include "memwall/synth.hpp"

using namespace memwall;

namespace {

constexpr int kOk = 0;
constexpr int kValidationError = 1;
constexpr int kInfeasibleInput = 2;
constexpr int kInternalError = 3;

std::uint64_t effective_seed(std::uint64_t configured) {
    const char* env = std::getenv("MEMWALL_SEED");
    if (env == nullptr || *env == '\0') return configured;
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), value);
    if (ec != std::errc() || *ptr != '\0')
        throw SchemaError(std::string("MEMWALL_SEED is not an unsigned integer: ") + env);
    return value;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SchemaError("cannot write " + path);
    out << text;
    if (!out.flush()) throw SchemaError("short write to " + path);
}

// ---------------------------------------------------------------------------
// plan

struct PlanOpts {
    std::string graph_path;
    std::string out_path = "plan.json";
    std::uint64_t budget = 0;
    double device_factor = 1.0;
    std::string strategy = "hybrid";
    int sweep = 0; // emit a CSV of plans from 100% down to 40% of peak
};

PlanStrategy parse_strategy(const std::string& name) {
    if (name == "hybrid") return PlanStrategy::Hybrid;
    if (name == "evict-only") return PlanStrategy::EvictOnly;
    if (name == "compress-only") return PlanStrategy::CompressOnly;
    throw SchemaError("unknown strategy: " + name);
}

void print_plan_stats(const ExecutionPlan& plan) {
    int evict = 0, compress = 0, decompress = 0, recompute = 0, alloc = 0;
    for (const PlannedAction& a : plan.actions) {
        switch (a.action) {
        case PlanAction::Evict: ++evict; break;
        case PlanAction::Compress: ++compress; break;
        case PlanAction::Decompress: ++decompress; break;
        case PlanAction::Recompute: ++recompute; break;
        case PlanAction::Alloc: ++alloc; break;
        }
    }
    std::printf("plan: est_latency_us=%.3f peak_memory=%" PRIu64 " budget=%" PRIu64
                " actions=%zu evict=%d compress=%d decompress=%d recompute=%d\n",
                plan.est_latency_us, plan.peak_memory, plan.budget, plan.actions.size(), evict,
                compress, decompress, recompute);
}

int cmd_plan(const PlanOpts& opts) {
    ComputationGraph graph = load_graph_file(opts.graph_path);
    DeviceProfile device = opts.device_factor == 1.0
                               ? DeviceProfile::reference()
                               : DeviceProfile::scaled(opts.device_factor, "cli-device");
    CodecModel codec = CodecModel::defaults().scaled(opts.device_factor);
    PlanStrategy strategy = parse_strategy(opts.strategy);

    if (opts.sweep > 0) {
        if (opts.sweep < 2) throw SchemaError("--sweep needs at least 2 rungs");
        std::uint64_t peak = graph.untreated_peak_bytes();
        std::string csv = "budget,est_latency_us,peak_memory,actions\n";
        char row[160];
        int emitted = 0;
        for (int i = 0; i < opts.sweep; ++i) {
            // 100% of the untreated peak down to 40%, evenly spaced.
            double frac = 1.0 - 0.6 * i / (opts.sweep - 1);
            auto budget = static_cast<std::uint64_t>(frac * static_cast<double>(peak));
            try {
                ExecutionPlan plan = generate_plan(graph, device, budget, codec, strategy);
                std::snprintf(row, sizeof(row), "%" PRIu64 ",%.3f,%" PRIu64 ",%zu\n", budget,
                              plan.est_latency_us, plan.peak_memory, plan.actions.size());
                csv += row;
                ++emitted;
            } catch (const InfeasibleBudgetError&) {
                // Below the graph's floor; deeper rungs only get worse.
                break;
            }
        }
        write_file(opts.out_path, csv);
        std::printf("plan sweep: %d of %d rungs feasible -> %s\n", emitted, opts.sweep,
                    opts.out_path.c_str());
        return kOk;
    }

    if (opts.budget == 0) throw SchemaError("--budget is required (or use --sweep)");
    ExecutionPlan plan = generate_plan(graph, device, opts.budget, codec, strategy);
    write_file(opts.out_path, serialize_plan(plan));
    print_plan_stats(plan);
    return kOk;
}

// ---------------------------------------------------------------------------
// codec

struct CodecOpts {
    std::string input_path;     // raw tensor container
    std::string synthetic;      // "CxHxW"
    std::string decode_path;    // existing bitstream to decompress
    std::string out_path = "activation.mwc";
    std::string save_tensor;    // optionally dump the raw tensor container
    std::uint64_t seed = 1;
    CodecConfig config;
    bool verify = false;
};

// Raw tensor container: "MWT1", int32 c, h, w (little-endian), float data.
constexpr char kTensorMagic[4] = {'M', 'W', 'T', '1'};

ActivationTensor read_tensor_file(const std::string& path) {
    std::string raw = read_file(path);
    if (raw.size() < 16 || std::memcmp(raw.data(), kTensorMagic, 4) != 0)
        throw SchemaError(path + " is not a tensor container");
    std::int32_t dims[3];
    std::memcpy(dims, raw.data() + 4, 12);
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
        throw SchemaError(path + ": non-positive dimensions");
    ActivationTensor t;
    t.c = dims[0];
    t.h = dims[1];
    t.w = dims[2];
    std::size_t count = static_cast<std::size_t>(t.c) * t.h * t.w;
    if (raw.size() != 16 + count * sizeof(float))
        throw SchemaError(path + ": size does not match dimensions");
    t.data.resize(count);
    std::memcpy(t.data.data(), raw.data() + 16, count * sizeof(float));
    return t;
}

void write_tensor_file(const std::string& path, const ActivationTensor& t) {
    std::string raw(16 + t.data.size() * sizeof(float), '\0');
    std::memcpy(raw.data(), kTensorMagic, 4);
    std::int32_t dims[3] = {t.c, t.h, t.w};
    std::memcpy(raw.data() + 4, dims, 12);
    std::memcpy(raw.data() + 16, t.data.data(), t.data.size() * sizeof(float));
    write_file(path, raw);
}

ActivationTensor make_synthetic(const std::string& spec, std::uint64_t seed) {
    int c = 0, h = 0, w = 0;
    if (std::sscanf(spec.c_str(), "%dx%dx%d", &c, &h, &w) != 3 || c <= 0 || h <= 0 || w <= 0)
        throw SchemaError("--synthetic expects CxHxW, e.g. 64x56x56");
    return gen_activation(c, h, w, ActivationGenParams{}, seed);
}

int cmd_codec(const CodecOpts& opts) {
    if (!opts.decode_path.empty()) {
        std::string raw = read_file(opts.decode_path);
        ActivationTensor t =
            decompress_tensor(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size());
        std::printf("decode: shape=%dx%dx%d bytes=%" PRIu64 "\n", t.c, t.h, t.w, t.bytes());
        if (!opts.save_tensor.empty()) write_tensor_file(opts.save_tensor, t);
        return kOk;
    }

    if (opts.input_path.empty() == opts.synthetic.empty())
        throw SchemaError("exactly one of --input or --synthetic is required");
    ActivationTensor tensor = opts.input_path.empty()
                                  ? make_synthetic(opts.synthetic, effective_seed(opts.seed))
                                  : read_tensor_file(opts.input_path);
    opts.config.validate(tensor.h, tensor.w);
    if (!opts.save_tensor.empty()) write_tensor_file(opts.save_tensor, tensor);

    std::vector<std::uint8_t> bitstream = compress_tensor(tensor, opts.config);
    write_file(opts.out_path,
               std::string(reinterpret_cast<const char*>(bitstream.data()), bitstream.size()));

    ChannelClass cls = classify_channels(tensor);
    std::uint64_t outliers = 0;
    for (float x : tensor.data)
        if (std::abs(x - cls.mu) > 3.0 * cls.sigma) ++outliers;
    double ratio = static_cast<double>(tensor.bytes()) / static_cast<double>(bitstream.size());

    double max_error = 0.0;
    if (opts.verify) {
        ActivationTensor back = decompress_tensor(bitstream);
        if (back.c != tensor.c || back.h != tensor.h || back.w != tensor.w) {
            std::fprintf(stderr, "verify: shape mismatch after round trip\n");
            return kInternalError;
        }
        // The quantizer is bounded by half a step per channel; everything
        // else must come back within the configured eps (sparse paths and
        // outliers are exact, so eps covers them trivially).
        double bound = opts.config.eps;
        for (int ci = 0; ci < tensor.c; ++ci) {
            if (cls.salient[static_cast<std::size_t>(ci)]) continue;
            const float* ch = tensor.channel(ci);
            std::size_t n = static_cast<std::size_t>(tensor.h) * tensor.w;
            float lo = ch[0], hi = ch[0];
            for (std::size_t i = 1; i < n; ++i) {
                lo = std::min(lo, ch[i]);
                hi = std::max(hi, ch[i]);
            }
            double step = (static_cast<double>(hi) - lo) / ((1 << opts.config.bits) - 1);
            bound = std::max(bound, step / 2 + 1e-9);
        }
        for (std::size_t i = 0; i < tensor.data.size(); ++i)
            max_error = std::max(max_error,
                                 std::abs(static_cast<double>(back.data[i]) - tensor.data[i]));
        if (max_error > bound) {
            std::fprintf(stderr, "verify: max error %.6g exceeds bound %.6g\n", max_error, bound);
            return kInternalError;
        }
    }

    std::printf("codec: ratio=%.3f max_error=%.6g outliers=%" PRIu64 " original=%" PRIu64
                " compressed=%zu%s\n",
                ratio, max_error, outliers, tensor.bytes(), bitstream.size(),
                opts.verify ? " verify=ok" : "");
    return kOk;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
    std::string trace_path;
    std::string out_path; // empty: stdout
    PredictorConfig config;
};

int cmd_predict(const PredictOpts& opts) {
    std::vector<MemoryTraceSample> trace = load_trace_file(opts.trace_path);
    if (trace.empty()) throw SchemaError(opts.trace_path + ": empty trace");

    BudgetPredictor predictor(opts.config);
    std::string csv = "t_ms,m_avail_kb,m_safe_kb,predicted_kb\n";
    char row[128];
    for (const MemoryTraceSample& s : trace) {
        predictor.ingest(s);
        std::snprintf(row, sizeof(row), "%" PRId64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 "\n",
                      static_cast<std::int64_t>(s.t_ms), s.m_avail_bytes / 1024, m_safe(s) / 1024,
                      static_cast<std::uint64_t>(predictor.predict(s.t_ms)) / 1024);
        csv += row;
    }
    if (opts.out_path.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        write_file(opts.out_path, csv);
        std::printf("predict: %zu samples -> %s\n", trace.size(), opts.out_path.c_str());
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> rounds;
    bool no_selector = false;
    bool no_planner = false;
    bool no_codec = false;
    bool no_predictor = false;
};

int cmd_simulate(const SimulateOpts& opts) {
    SimulationConfig config = load_sim_config_file(opts.config_path);
    if (opts.seed) config.seed = *opts.seed;
    if (opts.rounds) config.rounds = *opts.rounds;
    if (opts.no_selector) config.use_selector = false;
    if (opts.no_planner) config.use_planner = false;
    if (opts.no_codec) config.use_codec = false;
    if (opts.no_predictor) config.use_predictor = false;
    config.seed = effective_seed(config.seed);

    SimulationResult result = run_simulation(config);

    std::filesystem::create_directories(opts.out_dir);
    std::string rounds_path = (std::filesystem::path(opts.out_dir) / "rounds.csv").string();
    std::string summary_path = (std::filesystem::path(opts.out_dir) / "summary.csv").string();
    write_file(rounds_path, rounds_csv(result));
    write_file(summary_path, summary_csv(result));

    std::printf("simulate: rounds=%d reached=%s time_s=%.3f proxy=%.6f -> %s\n",
                result.summary.rounds_run, result.summary.target_reached ? "yes" : "no",
                result.summary.total_time_s, result.summary.final_proxy_loss,
                opts.out_dir.c_str());
    return kOk;
}

// ---------------------------------------------------------------------------
// gen

struct GenFleetOpts {
    int size = 60;
    std::uint64_t seed = 1;
    std::string out_path = "fleet.json";
};

struct GenTraceOpts {
    int duration_s = 3600;
    double dram_gb = 8.0;
    std::uint64_t seed = 1;
    std::string out_path = "trace.jsonl";
};

struct GenGraphOpts {
    int ops = 40;
    std::uint64_t seed = 1;
    std::string out_path = "graph.json";
};

int cmd_gen_fleet(const GenFleetOpts& opts) {
    FleetSpec fleet = gen_fleet(opts.size, effective_seed(opts.seed));
    write_file(opts.out_path, serialize_fleet(fleet));
    std::printf("gen fleet: clients=%zu -> %s\n", fleet.clients.size(), opts.out_path.c_str());
    return kOk;
}

int cmd_gen_trace(const GenTraceOpts& opts) {
    if (opts.duration_s <= 0) throw SchemaError("--duration-s must be positive");
    if (opts.dram_gb <= 0) throw SchemaError("--dram-gb must be positive");
    TraceGenParams params;
    params.duration_s = opts.duration_s;
    params.total_dram_bytes = static_cast<std::uint64_t>(opts.dram_gb * (1ull << 30));
    std::vector<MemoryTraceSample> trace = gen_memory_trace(params, effective_seed(opts.seed));
    write_file(opts.out_path, serialize_trace(trace));
    std::printf("gen trace: samples=%zu -> %s\n", trace.size(), opts.out_path.c_str());
    return kOk;
}

int cmd_gen_graph(const GenGraphOpts& opts) {
    if (opts.ops <= 0) throw SchemaError("--ops must be positive");
    GraphGenParams params;
    params.num_ops = opts.ops;
    ComputationGraph graph = gen_random_graph(params, effective_seed(opts.seed));
    write_file(opts.out_path, serialize_graph(graph));
    std::printf("gen graph: ops=%zu tensors=%zu peak=%" PRIu64 " -> %s\n", graph.ops.size(),
                graph.tensors.size(), graph.untreated_peak_bytes(), opts.out_path.c_str());
    return kOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const InfeasibleBudgetError& e) {
        std::fprintf(stderr, "error: %s\nminimum feasible budget: %" PRIu64 " bytes\n", e.what(),
                     e.min_feasible_bytes);
        return kInfeasibleInput;
    } catch (const SchemaError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidationError;
    } catch (const DecodeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidationError;
    } catch (const IncompleteProfileError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidationError;
    } catch (const NoDataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidationError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kInternalError;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"memwall: execution planning, activation compression, and "
                 "federated-round simulation over memory-constrained fleets"};
    app.require_subcommand(1);

    PlanOpts plan_opts;
    CLI::App* plan = app.add_subcommand("plan", "Generate a budget-constrained execution plan");
    plan->add_option("--graph", plan_opts.graph_path, "Computation graph JSON")->required();
    plan->add_option("--budget", plan_opts.budget, "Memory budget in bytes");
    plan->add_option("--out", plan_opts.out_path, "Output path (plan JSON, or sweep CSV)");
    plan->add_option("--device-factor", plan_opts.device_factor,
                     "Device slowdown relative to the reference profile")
        ->check(CLI::PositiveNumber);
    plan->add_option("--strategy", plan_opts.strategy, "hybrid | evict-only | compress-only");
    plan->add_option("--sweep", plan_opts.sweep,
                     "Emit a CSV over N budgets from 100%% down to 40%% of the untreated peak");

    CodecOpts codec_opts;
    CLI::App* codec = app.add_subcommand("codec", "Compress, verify, or decode activations");
    codec->add_option("--input", codec_opts.input_path, "Raw tensor container (MWT1)");
    codec->add_option("--synthetic", codec_opts.synthetic, "Generate a CxHxW test tensor");
    codec->add_option("--decode", codec_opts.decode_path, "Decompress an existing bitstream");
    codec->add_option("--out", codec_opts.out_path, "Bitstream output path");
    codec->add_option("--save-tensor", codec_opts.save_tensor, "Also dump the raw tensor");
    codec->add_option("--seed", codec_opts.seed, "Seed for --synthetic");
    codec->add_option("--bits", codec_opts.config.bits, "Quantizer width (4 or 8)");
    codec->add_option("--block", codec_opts.config.block, "Partition block side");
    codec->add_option("--tau", codec_opts.config.tau, "Block sparsity threshold");
    codec->add_option("--eps", codec_opts.config.eps, "Dense-block absolute error bound");
    codec->add_flag("--verify", codec_opts.verify, "Round-trip and check error bounds");

    PredictOpts predict_opts;
    CLI::App* predict = app.add_subcommand("predict", "Replay a memory trace through the predictor");
    predict->add_option("--trace", predict_opts.trace_path, "Trace file (JSONL)")->required();
    predict->add_option("--out", predict_opts.out_path, "CSV output path (default stdout)");
    predict->add_option("--window-ms", predict_opts.config.window_ms, "Moving-average window");
    predict->add_option("--sample-ms", predict_opts.config.t_sample_ms, "Sampling period");
    predict->add_option("--slide-ms", predict_opts.config.t_slide_ms, "Window slide step");

    SimulateOpts sim_opts;
    std::uint64_t sim_seed = 0;
    int sim_rounds = 0;
    CLI::App* simulate = app.add_subcommand("simulate", "Run the federated round simulator");
    simulate->add_option("--config", sim_opts.config_path, "Simulation config JSON")->required();
    simulate->add_option("--out-dir", sim_opts.out_dir, "Directory for rounds.csv / summary.csv");
    CLI::Option* seed_opt = simulate->add_option("--seed", sim_seed, "Override the config seed");
    CLI::Option* rounds_opt =
        simulate->add_option("--rounds", sim_rounds, "Override the round count");
    simulate->add_flag("--no-selector", sim_opts.no_selector, "Random client pick instead");
    simulate->add_flag("--no-planner", sim_opts.no_planner, "Assume full global memory");
    simulate->add_flag("--no-codec", sim_opts.no_codec, "Eviction-only plans");
    simulate->add_flag("--no-predictor", sim_opts.no_predictor, "Use raw samples, unsmoothed");

    CLI::App* gen = app.add_subcommand("gen", "Emit fixture files");
    gen->require_subcommand(1);
    GenFleetOpts fleet_opts;
    CLI::App* gen_fleet_cmd = gen->add_subcommand("fleet", "Tiered device fleet");
    gen_fleet_cmd->add_option("--size", fleet_opts.size, "Client count")
        ->check(CLI::PositiveNumber);
    gen_fleet_cmd->add_option("--seed", fleet_opts.seed, "Seed");
    gen_fleet_cmd->add_option("--out", fleet_opts.out_path, "Output path");

    GenTraceOpts trace_opts;
    CLI::App* gen_trace_cmd = gen->add_subcommand("trace", "Device memory trace");
    gen_trace_cmd->add_option("--duration-s", trace_opts.duration_s, "Trace length in seconds");
    gen_trace_cmd->add_option("--dram-gb", trace_opts.dram_gb, "Device DRAM size");
    gen_trace_cmd->add_option("--seed", trace_opts.seed, "Seed");
    gen_trace_cmd->add_option("--out", trace_opts.out_path, "Output path");

    GenGraphOpts graph_opts;
    CLI::App* gen_graph_cmd = gen->add_subcommand("graph", "Random computation graph");
    gen_graph_cmd->add_option("--ops", graph_opts.ops, "Operator count");
    gen_graph_cmd->add_option("--seed", graph_opts.seed, "Seed");
    gen_graph_cmd->add_option("--out", graph_opts.out_path, "Output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidationError;
    }

    if (*seed_opt) sim_opts.seed = sim_seed;
    if (*rounds_opt) sim_opts.rounds = sim_rounds;

    if (plan->parsed()) return guarded([&] { return cmd_plan(plan_opts); });
    if (codec->parsed()) return guarded([&] { return cmd_codec(codec_opts); });
    if (predict->parsed()) return guarded([&] { return cmd_predict(predict_opts); });
    if (simulate->parsed()) return guarded([&] { return cmd_simulate(sim_opts); });
    if (gen_fleet_cmd->parsed()) return guarded([&] { return cmd_gen_fleet(fleet_opts); });
    if (gen_trace_cmd->parsed()) return guarded([&] { return cmd_gen_trace(trace_opts); });
    if (gen_graph_cmd->parsed()) return guarded([&] { return cmd_gen_graph(graph_opts); });
    return kValidationError;
}
