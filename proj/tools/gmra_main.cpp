// gmra: geometric multiresolution analysis over a persistent shelf store.
//
// Subcommands: ingest, covertree build|validate, gmra build, transform,
// reconstruct, bench, validate. Exit codes: 0 success, 1 validation or
// pipeline failure, 2 usage error / missing inputs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gmra/gmra.hpp"

namespace {

using nlohmann::json;

// Bare file names land in $GMRA_SHELF_DIR when it is set.
std::string resolve_shelf_path(const std::string& p) {
    if (p.empty() || p.find('/') != std::string::npos) return p;
    if (const char* dir = std::getenv("GMRA_SHELF_DIR")) {
        return std::string(dir) + "/" + p;
    }
    return p;
}

struct DatasetOptions {
    std::string data_shelf;
    std::string synth;
    uint64_t n = 0;
    uint64_t D = 0;
    uint64_t d = 2;
    uint64_t seed = 0;
    std::string name = "dataset";

    void attach(CLI::App* cmd) {
        cmd->add_option("--data", data_shelf, "shelf file produced by `ingest`");
        cmd->add_option("--synth", synth,
                        "synthetic kind (affine_subspace|swiss_roll_like|uniform_cube)");
        cmd->add_option("--n", n, "synthetic point count");
        cmd->add_option("--D", D, "synthetic ambient dimension");
        cmd->add_option("--d", d, "synthetic intrinsic dimension");
        cmd->add_option("--seed", seed, "synthetic RNG seed");
        cmd->add_option("--name", name, "dataset label in reports");
    }

    void apply(gmra::PipelineConfig& cfg) const {
        cfg.dataset_shelf = resolve_shelf_path(data_shelf);
        if (!synth.empty()) {
            cfg.synth_kind = gmra::parse_synth_kind(synth);
            cfg.synth_n = n;
            cfg.synth_D = D;
            cfg.synth_d = d;
        }
        cfg.seed = seed;
        cfg.dataset_name = name;
    }

    gmra::PointCloud load() const {
        if (!synth.empty()) {
            return gmra::synth_dataset(gmra::parse_synth_kind(synth), n, D, d, seed);
        }
        if (data_shelf.empty()) throw gmra::InvalidInput("pass --data or --synth");
        gmra::Shelf shelf = gmra::Shelf::open(resolve_shelf_path(data_shelf));
        return gmra::get_point_cloud(shelf);
    }
};

struct GmraOptions {
    std::string dim_policy = "energy:0.95";
    uint64_t min_cell_size = 10;
    std::optional<int32_t> j_min;
    int threads = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--dim-policy", dim_policy, "fixed:<d> or energy:<tau>");
        cmd->add_option("--min-cell-size", min_cell_size, "halting cell size");
        cmd->add_option("--j-min", j_min, "halting scale cutoff");
        cmd->add_option("--threads", threads, "worker threads for cell/wavelet stages");
    }

    gmra::DyadicParams params() const {
        gmra::DyadicParams p;
        p.dim_policy = gmra::DimPolicy::parse(dim_policy);
        p.min_cell_size = min_cell_size;
        p.j_min = j_min;
        p.threads = threads;
        return p;
    }
};

json splits_to_json(const gmra::TimingSplits& s, const char* type) {
    return json{{"type", type},
                {"dataset", s.dataset},
                {"backend", s.backend},
                {"trial", s.trial},
                {"stages",
                 {{"load_s", s.load_s},
                  {"covertree_deserialize_s", s.covertree_deserialize_s},
                  {"cells_s", s.cells_s},
                  {"wavelets_s", s.wavelets_s}}}};
}

json aggregate_to_json(const std::vector<gmra::TimingSplits>& trials) {
    const auto stats = gmra::aggregate_splits(trials);
    json stages;
    for (const auto& [key, st] : stats) {
        stages[key] = {{"mean", st.mean}, {"stddev", st.stddev}};
    }
    return json{{"type", "aggregate"},
                {"dataset", trials.front().dataset},
                {"backend", trials.front().backend},
                {"trials", trials.size()},
                {"stages", stages}};
}

int cmd_ingest(const std::string& format, const std::vector<std::string>& inputs,
               const DatasetOptions& ds, const std::string& raw_dtype, bool normalize,
               const std::string& shelf_path, uint64_t capacity, const std::string& consistency,
               const std::string& dtype_name) {
    gmra::PointCloud cloud;
    bool image_source = false;
    if (format == "idx") {
        if (inputs.empty()) throw gmra::InvalidInput("idx ingest needs at least one input file");
        std::vector<gmra::PointCloud> parts;
        for (const auto& f : inputs) parts.push_back(gmra::parse_idx_file(f, normalize));
        cloud = gmra::concat_clouds(parts);
        image_source = true;
    } else if (format == "raw") {
        if (inputs.size() != 1) throw gmra::InvalidInput("raw ingest needs exactly one input file");
        const gmra::RawDtype rt = gmra::parse_raw_dtype(raw_dtype);
        cloud = gmra::parse_raw_file(inputs[0], ds.n, ds.D, rt);
        if (normalize && rt == gmra::RawDtype::u8) cloud.coords /= 255.0;
        image_source = rt == gmra::RawDtype::u8;
    } else if (format == "synth") {
        cloud = ds.load();
    } else {
        throw gmra::InvalidInput("format must be idx, raw or synth");
    }

    // Image datasets default to f32 on the shelf, synthetic math data to f64.
    gmra::Dtype dtype = image_source ? gmra::Dtype::f32 : gmra::Dtype::f64;
    if (dtype_name == "f32") dtype = gmra::Dtype::f32;
    if (dtype_name == "f64") dtype = gmra::Dtype::f64;

    const uint64_t payload =
        static_cast<uint64_t>(cloud.coords.size()) * gmra::dtype_size(dtype);
    uint64_t cap = capacity;
    if (cap == 0) {
        // Snug auto-size: payload + catalog reserve + alignment headroom.
        cap = payload + 2 * 64 * 1024;
        cap += gmra::Shelf::catalog_reserve(cap);
        cap = gmra::Shelf::align_up(std::max(cap, gmra::Shelf::kMinCapacity), 64 * 1024);
    }
    const std::string path = resolve_shelf_path(shelf_path);
    if (std::filesystem::exists(path)) {
        std::filesystem::remove(path);
        std::filesystem::remove(path + ".wal");
    }
    gmra::Shelf shelf = gmra::Shelf::create(
        path, cap, gmra::ShelfMode::persistent,
        consistency == "wal" ? gmra::Consistency::wal : gmra::Consistency::none);
    gmra::put_point_cloud(shelf, cloud, dtype);
    shelf.close();

    std::cout << json{{"shelf", path},
                      {"n", cloud.size()},
                      {"D", cloud.dim()},
                      {"dtype", gmra::dtype_name(dtype)},
                      {"capacity_bytes", cap},
                      {"file_bytes", std::filesystem::file_size(path)}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_covertree_build(const DatasetOptions& ds, const std::string& out) {
    const gmra::PointCloud cloud = ds.load();
    const auto t0 = std::chrono::steady_clock::now();
    const gmra::CoverTree tree = gmra::build_cover_tree(cloud);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    gmra::save_cover_tree(tree, out);
    std::cout << json{{"tree", out},
                      {"n", cloud.size()},
                      {"top_scale", tree.top_scale},
                      {"bottom_scale", tree.bottom_scale},
                      {"build_s", secs}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_covertree_validate(const DatasetOptions& ds, const std::string& tree_path) {
    const gmra::PointCloud cloud = ds.load();
    const gmra::CoverTree tree = gmra::load_cover_tree(tree_path, cloud);
    const auto report = gmra::validate_cover_tree(tree, cloud);
    std::cout << json{{"tree", tree_path}, {"violations", report.size()}}.dump() << "\n";
    for (std::size_t i = 0; i < report.size() && i < 20; ++i) {
        std::cerr << "violation: " << report[i].detail << " (nodes " << report[i].node_a << ", "
                  << report[i].node_b << ")\n";
    }
    return report.empty() ? 0 : 1;
}

int cmd_gmra_build(const DatasetOptions& ds, const GmraOptions& go, const std::string& tree_path,
                   bool build_tree, const std::string& backend, const std::string& shelf_path,
                   const std::string& consistency, uint64_t capacity, bool no_transform) {
    gmra::PipelineConfig cfg;
    ds.apply(cfg);
    cfg.covertree_path = tree_path;
    cfg.build_covertree = build_tree;
    cfg.backend = backend == "shelf" ? gmra::ShelfMode::persistent : gmra::ShelfMode::volatile_mem;
    cfg.shelf_path = resolve_shelf_path(shelf_path);
    cfg.consistency = consistency == "wal" ? gmra::Consistency::wal : gmra::Consistency::none;
    cfg.capacity_override = capacity;
    cfg.params = go.params();
    cfg.threads = go.threads;
    cfg.transform = !no_transform;

    const gmra::PipelineResult result = gmra::run_pipeline(cfg);
    json out = splits_to_json(result.splits, "trial");
    out["shelf"] = result.shelf_path;
    out["cells"] = result.n_cells;
    out["wavelets"] = result.n_wavelets;
    if (cfg.transform) {
        out["transform_s"] = result.transform_s;
        out["max_rel_error"] = result.max_rel_error;
        out["mean_rel_error"] = result.mean_rel_error;
    }
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_transform(const std::string& shelf_path, const std::string& csv, bool roundtrip,
                  int threads) {
    gmra::Shelf shelf = gmra::Shelf::open(resolve_shelf_path(shelf_path));
    const gmra::PointCloud cloud = gmra::get_point_cloud(shelf);
    const gmra::GmraModel model = gmra::load_model(shelf);
    const gmra::BatchResult batch = gmra::batch_transform(model, cloud, roundtrip, threads);

    for (const char* name : {"coeffs/leaf_ids", "coeffs/p_leaf", "coeffs/q_flat", "coeffs/offsets"}) {
        if (shelf.contains(name)) shelf.erase_array(name);
    }
    gmra::put_coefficients(shelf, model, batch.coefficients);
    shelf.close();

    if (!csv.empty()) {
        std::ofstream out(csv, std::ios::trunc);
        if (!out) throw gmra::NotFound("cannot write CSV: " + csv);
        gmra::write_coefficients_csv(model, batch.coefficients, out);
    }
    json summary{{"points", batch.coefficients.size()}, {"roundtrip", roundtrip}};
    if (roundtrip) {
        summary["max_rel_error"] = batch.max_rel_error;
        summary["mean_rel_error"] = batch.mean_rel_error;
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_reconstruct(const std::string& shelf_path, const std::string& out_path,
                    std::optional<int32_t> truncate_scale) {
    gmra::Shelf shelf = gmra::Shelf::open(resolve_shelf_path(shelf_path));
    const gmra::GmraModel model = gmra::load_model(shelf);
    const auto coeffs = gmra::load_coefficients(shelf, model);
    const gmra::PointCloud cloud = gmra::get_point_cloud(shelf);

    gmra::PointCloud recon;
    recon.coords.resize(static_cast<Eigen::Index>(coeffs.size()), model.dim());
    double max_err = 0.0;
    double sum_err = 0.0;
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
        std::size_t steps = coeffs[i].path.size() - 1;
        if (truncate_scale) {
            const int32_t coarsest = model.cell(coeffs[i].path.front()).id.j;
            const int64_t want = static_cast<int64_t>(coarsest) - *truncate_scale;
            steps = static_cast<std::size_t>(
                std::clamp<int64_t>(want, 0, static_cast<int64_t>(steps)));
        }
        const Eigen::VectorXd x = gmra::igwt_truncated(model, coeffs[i], steps);
        recon.coords.row(static_cast<Eigen::Index>(i)) = x.transpose();
        if (static_cast<Eigen::Index>(i) < cloud.size()) {
            const double err =
                (x - cloud.coords.row(static_cast<Eigen::Index>(i)).transpose()).norm();
            max_err = std::max(max_err, err);
            sum_err += err;
        }
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw gmra::NotFound("cannot write reconstruction: " + out_path);
        out.write(reinterpret_cast<const char*>(recon.coords.data()),
                  static_cast<std::streamsize>(recon.coords.size() * 8));
    }
    std::cout << json{{"points", coeffs.size()},
                      {"truncate_scale", truncate_scale ? json(*truncate_scale) : json(nullptr)},
                      {"max_abs_error", max_err},
                      {"mean_abs_error", coeffs.empty() ? 0.0 : sum_err / double(coeffs.size())}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_bench(const DatasetOptions& ds, const GmraOptions& go, const std::string& tree_path,
              bool build_tree, const std::string& backend, const std::string& shelf_path,
              const std::string& consistency, int trials, const std::string& out_path) {
    if (trials < 1) throw gmra::InvalidInput("--trials must be >= 1");
    std::vector<std::string> backends;
    if (backend == "both") {
        backends = {"volatile", "shelf"};
    } else {
        backends = {backend};
    }

    std::ofstream out;
    std::ostream* sink = &std::cout;
    if (!out_path.empty()) {
        out.open(out_path, std::ios::trunc);
        if (!out) throw gmra::NotFound("cannot write timings: " + out_path);
        sink = &out;
    }

    // The cover tree is shared across trials and backends; build it once,
    // untimed, exactly like a pre-built artifact.
    if (!std::filesystem::exists(tree_path)) {
        if (!build_tree) throw gmra::NotFound("cover tree file missing: " + tree_path);
        gmra::save_cover_tree(gmra::build_cover_tree(ds.load()), tree_path);
    }

    for (const std::string& b : backends) {
        std::vector<gmra::TimingSplits> splits;
        for (int t = 0; t < trials; ++t) {
            gmra::PipelineConfig cfg;
            ds.apply(cfg);
            cfg.covertree_path = tree_path;
            cfg.backend = b == "shelf" ? gmra::ShelfMode::persistent : gmra::ShelfMode::volatile_mem;
            cfg.shelf_path = resolve_shelf_path(shelf_path) + "." + b + ".bench";
            cfg.consistency = consistency == "wal" ? gmra::Consistency::wal : gmra::Consistency::none;
            cfg.params = go.params();
            cfg.threads = go.threads;
            cfg.transform = false;
            gmra::PipelineResult r = gmra::run_pipeline(cfg);
            r.splits.trial = t + 1;
            (*sink) << splits_to_json(r.splits, "trial").dump() << "\n";
            splits.push_back(r.splits);
        }
        (*sink) << aggregate_to_json(splits).dump() << "\n";
    }
    return 0;
}

int cmd_validate(const std::string& shelf_path, const std::string& tree_path, int threads) {
    const gmra::ValidationSummary s =
        gmra::validate_artifacts(resolve_shelf_path(shelf_path), tree_path, 1e-9, threads);
    std::cout << json{{"covertree_violations", s.covertree_violations},
                      {"partition_violations", s.partition_violations},
                      {"wavelet_violations", s.wavelet_violations},
                      {"roundtrip_failures", s.roundtrip_failures},
                      {"max_rel_error", s.max_rel_error},
                      {"clean", s.clean()}}
                     .dump()
              << "\n";
    return s.clean() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"geometric multiresolution analysis over a persistent shelf store"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "parse a dataset onto a shelf");
    std::string in_format = "synth";
    std::vector<std::string> in_inputs;
    std::string in_raw_dtype = "u8";
    bool in_normalize = false;
    std::string in_shelf = "data.shelf";
    uint64_t in_capacity = 0;
    std::string in_consistency = "none";
    std::string in_dtype;
    DatasetOptions in_ds;
    ingest->add_option("--format", in_format, "idx | raw | synth");
    ingest->add_option("--inputs", in_inputs, "input files (idx: several are concatenated)");
    ingest->add_option("--raw-dtype", in_raw_dtype, "raw element type (u8|f32|f64)");
    ingest->add_flag("--normalize", in_normalize, "scale u8 data to [0,1]");
    ingest->add_option("--shelf-path", in_shelf, "output shelf file");
    ingest->add_option("--capacity", in_capacity, "region capacity in bytes (0 = auto)");
    ingest->add_option("--consistency", in_consistency, "none | wal");
    ingest->add_option("--dtype", in_dtype, "shelf storage type (f32|f64)");
    in_ds.attach(ingest);

    // covertree build|validate
    auto* covertree = app.add_subcommand("covertree", "build or validate a cover tree");
    covertree->require_subcommand(1);
    auto* ct_build = covertree->add_subcommand("build", "build and serialize a cover tree");
    DatasetOptions ct_ds;
    std::string ct_out = "tree.ctr";
    ct_ds.attach(ct_build);
    ct_build->add_option("--out", ct_out, "output tree file");
    auto* ct_validate = covertree->add_subcommand("validate", "exhaustive invariant check");
    DatasetOptions ctv_ds;
    std::string ctv_tree;
    ctv_ds.attach(ct_validate);
    ct_validate->add_option("--tree", ctv_tree, "tree file")->required();

    // gmra build
    auto* gmra_cmd = app.add_subcommand("gmra", "build the multiscale model");
    gmra_cmd->require_subcommand(1);
    auto* g_build = gmra_cmd->add_subcommand("build", "run the pipeline and persist the model");
    DatasetOptions g_ds;
    GmraOptions g_go;
    std::string g_tree = "tree.ctr";
    bool g_build_tree = false;
    std::string g_backend = "shelf";
    std::string g_shelf = "model.shelf";
    std::string g_consistency = "none";
    uint64_t g_capacity = 0;
    bool g_no_transform = false;
    g_ds.attach(g_build);
    g_go.attach(g_build);
    g_build->add_option("--tree", g_tree, "cover tree file");
    g_build->add_flag("--build-covertree", g_build_tree, "build the tree if the file is missing");
    g_build->add_option("--backend", g_backend, "volatile | shelf");
    g_build->add_option("--shelf-path", g_shelf, "work shelf file");
    g_build->add_option("--consistency", g_consistency, "none | wal");
    g_build->add_option("--capacity", g_capacity, "work region capacity (0 = auto)");
    g_build->add_flag("--no-transform", g_no_transform, "skip the coefficient pass");

    // transform
    auto* transform = app.add_subcommand("transform", "forward transform onto the shelf + CSV");
    std::string t_shelf = "model.shelf";
    std::string t_csv;
    bool t_roundtrip = false;
    int t_threads = 1;
    transform->add_option("--shelf-path", t_shelf, "model shelf");
    transform->add_option("--csv", t_csv, "CSV output path");
    transform->add_flag("--roundtrip", t_roundtrip, "also invert and report errors");
    transform->add_option("--threads", t_threads, "worker threads");

    // reconstruct
    auto* reconstruct = app.add_subcommand("reconstruct", "inverse transform from the shelf");
    std::string r_shelf = "model.shelf";
    std::string r_out;
    std::optional<int32_t> r_truncate;
    reconstruct->add_option("--shelf-path", r_shelf, "model shelf");
    reconstruct->add_option("--out", r_out, "raw f64 output matrix");
    reconstruct->add_option("--truncate-scale", r_truncate, "stop refinement at this scale");

    // bench
    auto* bench = app.add_subcommand("bench", "timed pipeline trials, JSONL output");
    DatasetOptions b_ds;
    GmraOptions b_go;
    std::string b_tree = "tree.ctr";
    bool b_build_tree = false;
    std::string b_backend = "both";
    std::string b_shelf = "bench.shelf";
    std::string b_consistency = "none";
    int b_trials = 20;
    std::string b_out;
    b_ds.attach(bench);
    b_go.attach(bench);
    bench->add_option("--tree", b_tree, "cover tree file");
    bench->add_flag("--build-covertree", b_build_tree, "build the tree if the file is missing");
    bench->add_option("--backend", b_backend, "volatile | shelf | both");
    bench->add_option("--shelf-path", b_shelf, "work shelf file prefix");
    bench->add_option("--consistency", b_consistency, "none | wal");
    bench->add_option("--trials", b_trials, "trials per backend");
    bench->add_option("--out", b_out, "JSONL output path (default stdout)");

    // validate
    auto* validate = app.add_subcommand("validate", "run every invariant suite");
    std::string v_shelf = "model.shelf";
    std::string v_tree;
    int v_threads = 1;
    validate->add_option("--shelf-path", v_shelf, "model shelf");
    validate->add_option("--tree", v_tree, "cover tree file (optional)");
    validate->add_option("--threads", v_threads, "worker threads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (*ingest) {
            return cmd_ingest(in_format, in_inputs, in_ds, in_raw_dtype, in_normalize, in_shelf,
                              in_capacity, in_consistency, in_dtype);
        }
        if (*ct_build) return cmd_covertree_build(ct_ds, ct_out);
        if (*ct_validate) return cmd_covertree_validate(ctv_ds, ctv_tree);
        if (*g_build) {
            return cmd_gmra_build(g_ds, g_go, g_tree, g_build_tree, g_backend, g_shelf,
                                  g_consistency, g_capacity, g_no_transform);
        }
        if (*transform) return cmd_transform(t_shelf, t_csv, t_roundtrip, t_threads);
        if (*reconstruct) return cmd_reconstruct(r_shelf, r_out, r_truncate);
        if (*bench) {
            return cmd_bench(b_ds, b_go, b_tree, b_build_tree, b_backend, b_shelf, b_consistency,
                             b_trials, b_out);
        }
        if (*validate) return cmd_validate(v_shelf, v_tree, v_threads);
    } catch (const gmra::NotFound& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const gmra::InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const gmra::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
