// sparsesync: analyze, pack, apply, estimate and simulate from the shell.
// Log verbosity comes from SPDLOG_LEVEL (e.g. SPDLOG_LEVEL=debug).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "sparsesync/analysis.hpp"
#include "sparsesync/checkpoint.hpp"
#include "sparsesync/cli.hpp"
#include "sparsesync/costmodel.hpp"
#include "sparsesync/harness/experiment.hpp"
#include "sparsesync/updater.hpp"

namespace fs = std::filesystem;
using namespace sparsesync;
using nlohmann::json;

namespace {

void require_file(const std::string& p) {
    if (!fs::is_regular_file(p)) fail(Errc::Io, "no such file '" + p + "'");
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
        return;
    }
    write_file_atomic(out_path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<DType> parse_dtype_list(const std::vector<std::string>& names) {
    std::vector<DType> out;
    for (const auto& n : names) out.push_back(parse_dtype(n));
    return out;
}

// analyze ---------------------------------------------------------------

struct AnalyzeArgs {
    std::vector<std::string> inputs;
    std::string series_dir;
    std::string working = "bf16";
    std::vector<std::string> formats{"fp8e4m3", "bf16", "fp16", "fp32"};
    std::string format = "json";
    std::string out;
};

int cmd_analyze(const AnalyzeArgs& a) {
    std::vector<std::string> paths = a.inputs;
    if (!a.series_dir.empty()) {
        if (!fs::is_directory(a.series_dir)) fail(Errc::Io, "no such directory '" + a.series_dir + "'");
        std::vector<std::string> found;
        for (const auto& e : fs::directory_iterator(a.series_dir)) {
            if (e.is_regular_file() && e.path().extension() == ".srlt") found.push_back(e.path().string());
        }
        std::sort(found.begin(), found.end());
        paths.insert(paths.end(), found.begin(), found.end());
    }
    if (paths.size() < 2) fail(Errc::TooFewSteps, "analyze needs at least two checkpoints");
    for (const auto& p : paths) require_file(p);

    std::vector<NamedTensors> snaps;
    for (const auto& p : paths) {
        spdlog::debug("loading {}", p);
        snaps.push_back(load_checkpoint(p));
    }
    const auto formats = parse_dtype_list(a.formats);
    auto res = analysis::analyze_series(snaps, parse_dtype(a.working), formats);
    spdlog::info("{} transitions, mean changed fraction {:.6g}", res.sparsity.steps.size(),
                 res.sparsity.mean_changed_fraction());

    std::ostringstream os;
    if (a.format == "csv") {
        analysis::write_csv(os, res.sparsity, res.locality);
    } else {
        json j{{"schema", "sparsesync/analysis/v1"},
               {"sparsity", analysis::to_json(res.sparsity)},
               {"locality", res.locality ? analysis::to_json(*res.locality) : json(nullptr)}};
        os << j.dump(2) << '\n';
    }
    emit(a.out, os.str());
    return 0;
}

// pack ------------------------------------------------------------------

struct PackArgs {
    std::string before, after, out;
    bool compress = false;
    double threshold = 1.0 / 3.0;
    std::vector<std::string> force_full;
    std::string index_mode = "auto";
    bool json_summary = false;
};

int cmd_pack(const PackArgs& a) {
    require_file(a.before);
    require_file(a.after);
    const NamedTensors before = load_checkpoint(a.before);
    const NamedTensors after = load_checkpoint(a.after);
    if (!same_schema(before, after)) fail(Errc::ShapeMismatch, "checkpoints differ in tensor names, dtypes or shapes");

    ChangedIndexSet cum;
    for (const auto& t : after) {
        auto idx = diff_changed(before.at(t.name()), t);
        if (!idx.empty()) cum.emplace(t.name(), std::move(idx));
    }
    RoutingPolicy policy{a.threshold, a.force_full};
    PackOptions opt{a.compress, a.index_mode != "abs32"};
    const SyncMessage msg = pack_updates(after, cum, policy, opt);
    const Bytes wire = serialize_message(msg);
    const std::size_t full = serialize_message(pack_full(after)).size();
    write_file_atomic(a.out, wire);

    std::size_t sparse_records = 0;
    std::uint64_t nnz = 0;
    for (const auto& r : msg.records) {
        if (r.path == RecordPath::SPARSE) {
            ++sparse_records;
            nnz += r.nnz;
        }
    }
    const double ratio = wire.empty() ? 0.0 : static_cast<double>(full) / static_cast<double>(wire.size());
    const double density = after.total_numel() ? static_cast<double>(total_indices(cum)) / static_cast<double>(after.total_numel()) : 0.0;
    if (a.json_summary) {
        json j{{"schema", "sparsesync/pack-summary/v1"},
               {"records", msg.records.size()},
               {"sparse_records", sparse_records},
               {"full_records", msg.records.size() - sparse_records},
               {"nnz", nnz},
               {"density", density},
               {"bytes", wire.size()},
               {"full_bytes", full},
               {"ratio", ratio}};
        std::cout << j.dump() << '\n';
    } else {
        std::cout << "records=" << msg.records.size() << " sparse=" << sparse_records
                  << " full=" << msg.records.size() - sparse_records << " nnz=" << nnz << " density=" << density
                  << " bytes=" << wire.size() << " full_bytes=" << full << " ratio=" << ratio << '\n';
    }
    return 0;
}

// apply -----------------------------------------------------------------

struct ApplyArgs {
    std::string weights, update, out;
};

int cmd_apply(const ApplyArgs& a) {
    require_file(a.weights);
    require_file(a.update);
    NamedTensors w = load_checkpoint(a.weights);
    const SyncMessage msg = deserialize_message(read_file(a.update));
    apply_update(w, msg);
    save_checkpoint(a.out, w);
    spdlog::info("applied {} records -> {}", msg.records.size(), a.out);
    return 0;
}

// estimate --------------------------------------------------------------

struct EstimateArgs {
    std::string preset;
    std::string presets_file;
    std::string params;
    std::string dtype = "bf16";
    std::vector<std::string> bandwidths;
    std::vector<double> rhos;
    double alpha = 1.0;
    double b_i = 4;
    std::string meta = "0";
    std::string format = "table";
    std::string out;
};

std::string default_presets_path() {
    if (const char* env = std::getenv("SPARSESYNC_PRESETS")) return env;
#ifdef SPARSESYNC_DATA_DIR
    return std::string(SPARSESYNC_DATA_DIR) + "/model_presets.txt";
#else
    return "data/model_presets.txt";
#endif
}

int cmd_estimate(const EstimateArgs& a) {
    std::vector<cli::EstimateRequest> reqs;
    cli::EstimateRequest base;
    base.dtype = parse_dtype(a.dtype);
    base.rhos = a.rhos;
    base.alpha = a.alpha;
    base.b_i = a.b_i;
    base.meta_bytes = cli::parse_size(a.meta);
    for (const auto& b : a.bandwidths) base.bandwidths.push_back(cli::parse_size(b));

    if (!a.params.empty()) {
        base.params = cli::parse_size(a.params);
        reqs.push_back(base);
    } else {
        const std::string file = a.presets_file.empty() ? default_presets_path() : a.presets_file;
        require_file(file);
        const auto presets = cost::load_presets(file);
        for (const auto& p : presets) {
            if (!a.preset.empty() && a.preset != "all" && p.name != a.preset) continue;
            auto r = base;
            r.model = p.name;
            r.params = p.params;
            reqs.push_back(r);
        }
        if (reqs.empty()) fail(Errc::InvalidArgument, "no preset named '" + a.preset + "' in " + file);
    }

    std::vector<cli::EstimateRow> rows;
    for (const auto& r : reqs) {
        auto part = cli::build_estimate(r);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    std::ostringstream os;
    if (a.format == "json") {
        os << cli::to_json(rows).dump(2) << '\n';
    } else if (a.format == "csv") {
        cli::write_estimate_csv(os, rows);
    } else {
        cli::write_estimate_table(os, rows);
    }
    emit(a.out, os.str());
    return 0;
}

// simulate --------------------------------------------------------------

struct SimulateArgs {
    std::string spec_file;
    std::size_t tensors = 20;
    std::uint64_t rows = 100;
    std::uint64_t cols = 1000;
    std::string working = "bf16";
    std::uint64_t model_seed = 0;
    double eta = 3e-5;
    double touched = 1.0;
    std::uint64_t seed = 1;
    std::size_t steps = 10;
    std::size_t sync_every = 2;
    std::size_t ranks = 4;
    std::string mode = "sparse";
    std::string regime = "unlimited";
    std::string bandwidth;
    std::string bucket_limit = "1MiB";
    bool compress = false;
    double threshold = 1.0 / 3.0;
    double redundant = 0.0;
    std::string snapshot_dir;
    std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
    harness::ExperimentConfig cfg;
    if (!a.spec_file.empty()) {
        require_file(a.spec_file);
        std::ifstream f(a.spec_file);
        json j;
        try {
            j = json::parse(f);
        } catch (const json::exception& e) {
            fail(Errc::SpecInvalid, std::string("model spec: ") + e.what());
        }
        cfg.spec = harness::model_spec_from_json(j);
    } else {
        cfg.spec = harness::ModelSpec::uniform(a.tensors, a.rows, a.cols, parse_dtype(a.working), a.model_seed);
    }
    cfg.driver.eta = a.eta;
    cfg.driver.touched_fraction = a.touched;
    cfg.driver.seed = a.seed;
    cfg.steps = a.steps;
    cfg.sync_every = a.sync_every;
    cfg.ranks = a.ranks;
    cfg.regime = a.bandwidth.empty() ? harness::RegimePreset::by_name(a.regime)
                                     : harness::RegimePreset::custom(cli::parse_size(a.bandwidth));
    cfg.bucket_limit = static_cast<std::size_t>(cli::parse_size(a.bucket_limit));
    cfg.policy.density_threshold = a.threshold;
    cfg.pack.compress = a.compress;
    cfg.redundant_fraction = a.redundant;
    cfg.validate();

    if (!a.snapshot_dir.empty()) {
        fs::create_directories(a.snapshot_dir);
        auto hist = harness::run_synthetic_training(cfg.spec, cfg.driver, cfg.steps);
        for (std::size_t k = 0; k < hist.states.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "%04zu", k);
            save_checkpoint(fs::path(a.snapshot_dir) / ("master_" + std::string(name) + ".srlt"), hist.states[k].master);
            save_checkpoint(fs::path(a.snapshot_dir) / ("working_" + std::string(name) + ".srlt"), hist.states[k].working);
        }
        spdlog::info("wrote {} snapshot pairs to {}", hist.states.size(), a.snapshot_dir);
    }

    json j;
    if (a.mode == "paired") {
        auto p = harness::run_paired(cfg);
        spdlog::info("paired: byte ratio {:.2f}, speedup {:.2f}, digests identical: {}", p.byte_ratio(), p.speedup(),
                     p.digests_identical());
        j = harness::to_json(p);
    } else {
        cfg.mode = harness::parse_mode(a.mode);
        auto r = harness::run_experiment(cfg);
        spdlog::info("{}: {} syncs, {} bytes, verified: {}", a.mode, r.syncs.size(), r.total_message_bytes(),
                     r.all_verified);
        j = harness::to_json(r);
    }
    emit(a.out, j.dump(2) + "\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("sparsesync");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    spdlog::cfg::load_env_levels();

    CLI::App app{"Lossless sparse weight synchronization toolkit"};
    app.require_subcommand(1);

    AnalyzeArgs an;
    auto* analyze = app.add_subcommand("analyze", "Sparsity and locality statistics over checkpoint snapshots");
    analyze->add_option("inputs", an.inputs, "Checkpoints in time order (SRLT)");
    analyze->add_option("--series", an.series_dir, "Directory of *.srlt snapshots, sorted by file name");
    analyze->add_option("--working", an.working, "Working precision for FP32 master snapshots")->capture_default_str();
    analyze->add_option("--formats", an.formats, "Formats for the visibility comparison")->delimiter(',')->capture_default_str();
    analyze->add_option("--format", an.format, "Output format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    analyze->add_option("-o,--out", an.out, "Output file (default stdout)");

    PackArgs pk;
    auto* pack = app.add_subcommand("pack", "Build an update message from two checkpoints");
    pack->add_option("before", pk.before, "Previous checkpoint (SRLT)")->required();
    pack->add_option("after", pk.after, "Current checkpoint (SRLT)")->required();
    pack->add_option("-o,--out", pk.out, "Output message (SRLS)")->required();
    pack->add_flag("--compress", pk.compress, "Entropy-code value streams");
    pack->add_option("--threshold", pk.threshold, "Density above which a tensor is sent whole")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    pack->add_option("--force-full", pk.force_full, "Glob of tensor names always sent whole (repeatable)");
    pack->add_option("--index-mode", pk.index_mode, "Index encoding")->check(CLI::IsMember({"auto", "abs32"}))->capture_default_str();
    pack->add_flag("--json", pk.json_summary, "Print the summary as JSON");

    ApplyArgs ap;
    auto* apply = app.add_subcommand("apply", "Apply an update message to a checkpoint");
    apply->add_option("weights", ap.weights, "Checkpoint to update (SRLT)")->required();
    apply->add_option("update", ap.update, "Update message (SRLS)")->required();
    apply->add_option("-o,--out", ap.out, "Output checkpoint (SRLT)")->required();

    EstimateArgs es;
    auto* estimate = app.add_subcommand("estimate", "Payload sizes, ratios and transfer times");
    estimate->add_option("--preset", es.preset, "Model preset name, or 'all'");
    estimate->add_option("--presets-file", es.presets_file, "Preset file (name = parameter count)");
    estimate->add_option("--params", es.params, "Parameter count, e.g. 671e9 or 671G");
    estimate->add_option("--dtype", es.dtype, "Value format")->capture_default_str();
    estimate->add_option("--bandwidth", es.bandwidths, "Bandwidths, e.g. 280GB/s (comma-separated)")->delimiter(',');
    estimate->add_option("--rho", es.rhos, "Update densities (comma-separated)")->delimiter(',');
    estimate->add_option("--alpha", es.alpha, "Value compression factor")->capture_default_str();
    estimate->add_option("--index-bytes", es.b_i, "Bytes per index")->capture_default_str();
    estimate->add_option("--meta", es.meta, "Metadata bytes")->capture_default_str();
    estimate->add_option("--format", es.format, "Output format")
        ->check(CLI::IsMember({"table", "csv", "json"}))
        ->capture_default_str();
    estimate->add_option("-o,--out", es.out, "Output file (default stdout)");
    estimate->get_option("--preset")->excludes(estimate->get_option("--params"));

    SimulateArgs sm;
    auto* simulate = app.add_subcommand("simulate", "Synthetic training with loopback broadcast to rollout ranks");
    simulate->add_option("--spec", sm.spec_file, "Model spec JSON");
    simulate->add_option("--tensors", sm.tensors, "Tensor count (without --spec)")->capture_default_str();
    simulate->add_option("--rows", sm.rows, "Rows per tensor (without --spec)")->capture_default_str();
    simulate->add_option("--cols", sm.cols, "Columns per tensor (without --spec)")->capture_default_str();
    simulate->add_option("--working", sm.working, "Working precision (without --spec)")->capture_default_str();
    simulate->add_option("--model-seed", sm.model_seed, "Initialization seed (without --spec)")->capture_default_str();
    simulate->add_option("--eta", sm.eta, "Relative update scale")->capture_default_str();
    simulate->add_option("--touched", sm.touched, "Fraction of elements updated per step")->capture_default_str();
    simulate->add_option("--seed", sm.seed, "Update seed")->capture_default_str();
    simulate->add_option("--steps", sm.steps, "Training steps")->capture_default_str();
    simulate->add_option("--sync-every", sm.sync_every, "Steps between syncs")->capture_default_str();
    simulate->add_option("--ranks", sm.ranks, "Rollout ranks")->capture_default_str();
    simulate->add_option("--mode", sm.mode, "Sync mode")
        ->check(CLI::IsMember({"sparse", "full", "paired"}))
        ->capture_default_str();
    simulate->add_option("--regime", sm.regime, "unlimited, ib-on-desk or ib-off-desk")->capture_default_str();
    simulate->add_option("--bandwidth", sm.bandwidth, "Custom per-rank bandwidth, e.g. 8MB/s");
    simulate->add_option("--bucket-limit", sm.bucket_limit, "Bucket size limit")->capture_default_str();
    simulate->add_flag("--compress", sm.compress, "Entropy-code value streams");
    simulate->add_option("--threshold", sm.threshold, "Density routing threshold")->capture_default_str();
    simulate->add_option("--redundant", sm.redundant, "Extra unchanged indices per tensor, as a fraction")->capture_default_str();
    simulate->add_option("--snapshot-dir", sm.snapshot_dir, "Also write master/working snapshots per step here");
    simulate->add_option("-o,--out", sm.out, "Report file (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*analyze) return cmd_analyze(an);
        if (*pack) return cmd_pack(pk);
        if (*apply) return cmd_apply(ap);
        if (*estimate) return cmd_estimate(es);
        if (*simulate) return cmd_simulate(sm);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 1;
}
