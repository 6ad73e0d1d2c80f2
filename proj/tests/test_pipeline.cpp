#include <catch2/catch_amalgamated.hpp>

#include "gmra/gmra.hpp"
#include "test_util.hpp"

using namespace gmra;
using testutil::TempDir;

namespace {

PipelineConfig base_config(const TempDir& dir, const std::string& tag, ShelfMode backend) {
    PipelineConfig cfg;
    cfg.synth_kind = SynthKind::uniform_cube;
    cfg.synth_n = 2000;
    cfg.synth_D = 8;
    cfg.seed = 71;
    cfg.dataset_name = "cube2000";
    cfg.covertree_path = dir.file(tag + ".ctr");
    cfg.build_covertree = true;
    cfg.backend = backend;
    cfg.shelf_path = dir.file(tag + "." + (backend == ShelfMode::persistent ? "shelf" : "vol"));
    cfg.params.min_cell_size = 25;
    cfg.threads = 2;
    cfg.params.threads = 2;
    return cfg;
}

} // namespace

TEST_CASE("model and coefficients roundtrip through a shelf", "[pipeline]") {
    const PointCloud cloud = synth_dataset(SynthKind::swiss_roll_like, 300, 4, 2, 3);
    const GmraModel model =
        build_wavelets(build_dyadic_tree(build_cover_tree(cloud), cloud, DyadicParams{}));
    const BatchResult batch = batch_transform(model, cloud, true, 1);

    Shelf shelf = Shelf::create("", 64 << 20, ShelfMode::volatile_mem, Consistency::none);
    put_point_cloud(shelf, cloud, Dtype::f64);
    put_model(shelf, model);
    put_coefficients(shelf, model, batch.coefficients);

    const PointCloud cloud2 = get_point_cloud(shelf);
    CHECK(cloud2.coords == cloud.coords);

    const GmraModel model2 = load_model(shelf);
    REQUIRE(model2.tree.cells.size() == model.tree.cells.size());
    for (std::size_t i = 0; i < model.tree.cells.size(); ++i) {
        const DyadicCell& a = model.tree.cells[i];
        const DyadicCell& b = model2.tree.cells[i];
        CHECK(a.id.j == b.id.j);
        CHECK(a.id.k == b.id.k);
        CHECK(a.parent == b.parent);
        CHECK(a.points == b.points);
        CHECK(a.leaf == b.leaf);
        CHECK(a.center == b.center);
        CHECK(a.basis == b.basis);
        CHECK(a.singular_values == b.singular_values);
        CHECK(a.radius == b.radius);
        CHECK(model.wavelets[i].psi == model2.wavelets[i].psi);
        CHECK(model.wavelets[i].translation == model2.wavelets[i].translation);
        CHECK(a.children == b.children);
    }

    const auto coeffs2 = load_coefficients(shelf, model2);
    REQUIRE(coeffs2.size() == batch.coefficients.size());
    for (std::size_t i = 0; i < coeffs2.size(); ++i) {
        CHECK(coeffs2[i].leaf == batch.coefficients[i].leaf);
        CHECK(coeffs2[i].path == batch.coefficients[i].path);
        CHECK(coeffs2[i].leaf_scaling == batch.coefficients[i].leaf_scaling);
        CHECK(coeffs2[i].root_scaling == batch.coefficients[i].root_scaling);
        for (std::size_t s = 0; s < coeffs2[i].q.size(); ++s) {
            CHECK(coeffs2[i].q[s] == batch.coefficients[i].q[s]);
        }
    }
}

TEST_CASE("run_pipeline produces timing splits and both backends agree", "[pipeline]") {
    TempDir dir("pipe_equiv");
    PipelineConfig vol = base_config(dir, "run", ShelfMode::volatile_mem);
    PipelineConfig per = base_config(dir, "run", ShelfMode::persistent);
    per.covertree_path = vol.covertree_path; // shared tree, built once

    const PipelineResult rv = run_pipeline(vol);
    const PipelineResult rp = run_pipeline(per);

    CHECK(rv.splits.backend == "volatile");
    CHECK(rp.splits.backend == "shelf");
    for (int s = 0; s < 4; ++s) {
        CHECK(rv.splits.stage(s) >= 0.0);
        CHECK(rp.splits.stage(s) >= 0.0);
    }
    CHECK(rv.n_cells == rp.n_cells);
    CHECK(rv.max_rel_error <= 1e-9);
    CHECK(rp.max_rel_error <= 1e-9);

    // Byte-identical model and coefficient arrays across backends.
    Shelf sv = Shelf::open(rv.shelf_path);
    Shelf sp = Shelf::open(rp.shelf_path);
    const auto names = sv.list_arrays();
    CHECK(names == sp.list_arrays());
    for (const auto& name : names) {
        const auto a = sv.array_bytes(name);
        const auto b = sp.array_bytes(name);
        REQUIRE(a.size() == b.size());
        CHECK(std::memcmp(a.data(), b.data(), a.size()) == 0);
    }
}

TEST_CASE("pipeline requires a cover tree file", "[pipeline]") {
    TempDir dir("pipe_missing");
    PipelineConfig cfg = base_config(dir, "missing", ShelfMode::volatile_mem);
    cfg.build_covertree = false;
    CHECK_THROWS_AS(run_pipeline(cfg), NotFound);
}

TEST_CASE("aggregate_splits computes mean and stddev per stage", "[pipeline]") {
    std::vector<TimingSplits> trials(20);
    for (std::size_t i = 0; i < trials.size(); ++i) {
        trials[i].load_s = 1.0 + static_cast<double>(i % 2); // alternates 1, 2
        trials[i].covertree_deserialize_s = 0.5;
        trials[i].cells_s = static_cast<double>(i);
        trials[i].wavelets_s = 0.0;
    }
    const auto stats = aggregate_splits(trials);
    REQUIRE(stats.size() == 4);
    CHECK(stats.at("load_s").mean == Catch::Approx(1.5));
    CHECK(stats.at("load_s").stddev == Catch::Approx(0.5));
    CHECK(stats.at("covertree_deserialize_s").stddev == Catch::Approx(0.0));
    CHECK(stats.at("cells_s").mean == Catch::Approx(9.5));
    CHECK(stats.at("wavelets_s").mean == 0.0);
}

TEST_CASE("validate_artifacts detects a flipped basis sign bit", "[pipeline]") {
    TempDir dir("pipe_validate");
    PipelineConfig cfg = base_config(dir, "val", ShelfMode::persistent);
    cfg.synth_n = 600;
    const PipelineResult result = run_pipeline(cfg);

    ValidationSummary clean = validate_artifacts(result.shelf_path, cfg.covertree_path, 1e-9, 2);
    CHECK(clean.clean());
    CHECK(clean.max_rel_error <= 1e-9);

    // Flip the sign bit of one stored basis entry.
    {
        Shelf shelf = Shelf::open(result.shelf_path);
        std::string victim;
        for (const auto& rec : shelf.entries()) {
            if (rec.name.starts_with("cells/") && rec.name.ends_with("/basis") &&
                rec.nbytes >= 8) {
                victim = rec.name;
            }
        }
        REQUIRE(!victim.empty());
        auto bytes = shelf.array_bytes(victim);
        bytes[7] ^= 0x80; // IEEE-754 sign bit of the first entry
        shelf.close();
    }
    ValidationSummary tampered = validate_artifacts(result.shelf_path, cfg.covertree_path, 1e-9, 2);
    CHECK(!tampered.clean());
}
