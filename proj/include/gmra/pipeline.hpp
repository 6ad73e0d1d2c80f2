#pragma once

// Pipeline orchestration: dataset -> (shelf copy) -> cover-tree
// deserialization -> dyadic cells -> wavelets, with wall-clock splits per
// stage, over either the volatile or the file-backed shelf backend. The
// stage set and the trial/aggregate JSONL records are what `bench` emits.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmra/cover_tree.hpp"
#include "gmra/dataset.hpp"
#include "gmra/dyadic_tree.hpp"
#include "gmra/errors.hpp"
#include "gmra/shelf.hpp"
#include "gmra/shelf_io.hpp"
#include "gmra/wavelets.hpp"

namespace gmra {

struct TimingSplits {
    double load_s = 0.0;
    double covertree_deserialize_s = 0.0;
    double cells_s = 0.0;
    double wavelets_s = 0.0;
    std::string backend;
    std::string dataset;
    int trial = 0;

    static constexpr const char* kStageKeys[4] = {"load_s", "covertree_deserialize_s",
                                                  "cells_s", "wavelets_s"};
    double stage(int i) const {
        switch (i) {
            case 0: return load_s;
            case 1: return covertree_deserialize_s;
            case 2: return cells_s;
            default: return wavelets_s;
        }
    }
    double total() const { return load_s + covertree_deserialize_s + cells_s + wavelets_s; }
};

struct StageStats {
    double mean = 0.0;
    double stddev = 0.0;
};

inline std::map<std::string, StageStats> aggregate_splits(const std::vector<TimingSplits>& trials) {
    std::map<std::string, StageStats> out;
    if (trials.empty()) return out;
    for (int s = 0; s < 4; ++s) {
        double sum = 0.0;
        for (const auto& t : trials) sum += t.stage(s);
        const double mean = sum / static_cast<double>(trials.size());
        double var = 0.0;
        for (const auto& t : trials) {
            const double d = t.stage(s) - mean;
            var += d * d;
        }
        var /= static_cast<double>(trials.size());
        out[TimingSplits::kStageKeys[s]] = {mean, std::sqrt(var)};
    }
    return out;
}

struct PipelineConfig {
    // Dataset source: either a shelf file produced by ingest, or a synthetic
    // spec evaluated on the fly.
    std::string dataset_shelf;
    std::optional<SynthKind> synth_kind;
    uint64_t synth_n = 0;
    uint64_t synth_D = 0;
    uint64_t synth_d = 0;
    uint64_t seed = 0;
    std::string dataset_name = "dataset";

    std::string covertree_path;
    bool build_covertree = false;

    ShelfMode backend = ShelfMode::volatile_mem;
    std::string shelf_path; // work region (file target; volatile dumps here)
    Consistency consistency = Consistency::none;
    uint64_t capacity_override = 0;
    Dtype dataset_dtype = Dtype::f64;

    DyadicParams params;
    bool transform = true; // also emit coefficients
    int threads = 1;
};

struct PipelineResult {
    TimingSplits splits;
    std::string shelf_path;
    std::size_t n_cells = 0;
    std::size_t n_wavelets = 0;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    double transform_s = 0.0;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline PointCloud load_pipeline_dataset(const PipelineConfig& cfg) {
    if (cfg.synth_kind) {
        return synth_dataset(*cfg.synth_kind, cfg.synth_n, cfg.synth_D, cfg.synth_d, cfg.seed);
    }
    if (cfg.dataset_shelf.empty()) throw InvalidInput("no dataset source configured");
    Shelf src = Shelf::open(cfg.dataset_shelf);
    return get_point_cloud(src);
}

inline uint64_t default_work_capacity(uint64_t dataset_bytes) {
    const uint64_t want = dataset_bytes * 3 + (64ull << 20);
    return Shelf::align_up(std::max(want, Shelf::kMinCapacity), 64 * 1024);
}

} // namespace detail

// One full pipeline run. The cover tree is deserialized from
// cfg.covertree_path (built and serialized first, untimed, when
// build_covertree is set and the file is missing), mirroring a tree that is
// constructed once and shared across backends.
inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
    PipelineResult result;
    result.splits.backend = cfg.backend == ShelfMode::persistent ? "shelf" : "volatile";
    result.splits.dataset = cfg.dataset_name;

    if (cfg.shelf_path.empty()) throw InvalidInput("pipeline needs a shelf path");
    if (cfg.covertree_path.empty()) throw InvalidInput("pipeline needs a cover tree path");

    // Stage 1: load the dataset and move it onto the work shelf. The copy is
    // part of the load split on both backends.
    const auto t_load = std::chrono::steady_clock::now();
    PointCloud cloud = detail::load_pipeline_dataset(cfg);
    const uint64_t dataset_bytes =
        static_cast<uint64_t>(cloud.coords.size()) * dtype_size(cfg.dataset_dtype);
    const uint64_t capacity =
        cfg.capacity_override ? cfg.capacity_override : detail::default_work_capacity(dataset_bytes);
    if (cfg.backend == ShelfMode::persistent && std::filesystem::exists(cfg.shelf_path)) {
        std::filesystem::remove(cfg.shelf_path);
        std::filesystem::remove(cfg.shelf_path + ".wal");
    }
    Shelf shelf = Shelf::create(cfg.shelf_path, capacity, cfg.backend, cfg.consistency);
    put_point_cloud(shelf, cloud, cfg.dataset_dtype);
    result.splits.load_s = detail::seconds_since(t_load);

    // Cover tree is built outside the timed stages when missing.
    if (!std::filesystem::exists(cfg.covertree_path)) {
        if (!cfg.build_covertree) {
            throw NotFound("cover tree file missing: " + cfg.covertree_path +
                           " (build it with `covertree build` or pass build_covertree)");
        }
        save_cover_tree(build_cover_tree(cloud), cfg.covertree_path);
    }

    // Stage 2: cover-tree deserialization.
    const auto t_tree = std::chrono::steady_clock::now();
    CoverTree cover = load_cover_tree(cfg.covertree_path, cloud);
    result.splits.covertree_deserialize_s = detail::seconds_since(t_tree);

    // Stage 3: dyadic cells (extraction + per-cell statistics + persistence).
    const auto t_cells = std::chrono::steady_clock::now();
    DyadicTree tree = build_dyadic_tree(cover, cloud, cfg.params);
    put_dyadic_tree(shelf, tree);
    result.splits.cells_s = detail::seconds_since(t_cells);
    result.n_cells = tree.cells.size();

    // Stage 4: wavelet construction + persistence.
    const auto t_wav = std::chrono::steady_clock::now();
    GmraModel model = build_wavelets(std::move(tree), cfg.params.threads);
    for (std::size_t i = 0; i < model.tree.cells.size(); ++i) {
        const DyadicCell& cell = model.tree.cells[i];
        if (cell.parent < 0) continue;
        const std::string prefix = detail::cell_prefix("wavelets", cell.id);
        put_f64_matrix(shelf, prefix + "psi", model.wavelets[i].psi);
        put_f64_vector(shelf, prefix + "w", model.wavelets[i].translation);
    }
    result.splits.wavelets_s = detail::seconds_since(t_wav);
    result.n_wavelets = model.tree.cells.size() - 1;

    if (cfg.transform) {
        const auto t_tr = std::chrono::steady_clock::now();
        BatchResult batch = batch_transform(model, cloud, true, cfg.threads);
        put_coefficients(shelf, model, batch.coefficients);
        result.transform_s = detail::seconds_since(t_tr);
        result.max_rel_error = batch.max_rel_error;
        result.mean_rel_error = batch.mean_rel_error;
    }

    if (cfg.backend == ShelfMode::volatile_mem) {
        // Volatile run: serialize the region at the end so artifacts exist.
        if (std::filesystem::exists(cfg.shelf_path)) std::filesystem::remove(cfg.shelf_path);
        shelf.dump_region(cfg.shelf_path);
    } else {
        shelf.flush();
    }
    shelf.close();
    result.shelf_path = cfg.shelf_path;
    return result;
}

struct ValidationSummary {
    std::size_t covertree_violations = 0;
    std::size_t partition_violations = 0;
    std::size_t wavelet_violations = 0;
    std::size_t roundtrip_failures = 0;
    double max_rel_error = 0.0;

    bool clean() const {
        return covertree_violations == 0 && partition_violations == 0 &&
               wavelet_violations == 0 && roundtrip_failures == 0;
    }
};

// Runs every invariant suite against persisted artifacts.
inline ValidationSummary validate_artifacts(const std::string& shelf_path,
                                            const std::string& covertree_path,
                                            double roundtrip_tol = 1e-9, int threads = 1) {
    Shelf shelf = Shelf::open(shelf_path);
    PointCloud cloud = get_point_cloud(shelf);
    GmraModel model = load_model(shelf);

    ValidationSummary summary;
    if (!covertree_path.empty()) {
        CoverTree cover = load_cover_tree(covertree_path, cloud);
        summary.covertree_violations = validate_cover_tree(cover, cloud).size();
    }
    summary.partition_violations = validate_partition(model.tree, cloud).size();
    summary.wavelet_violations = validate_wavelets(model).size();
    BatchResult batch = batch_transform(model, cloud, true, threads);
    summary.max_rel_error = batch.max_rel_error;
    if (batch.max_rel_error > roundtrip_tol) summary.roundtrip_failures = 1;
    return summary;
}

} // namespace gmra
