#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include <Eigen/SVD>

#include "gmra/dataset.hpp"
#include "test_util.hpp"

using namespace gmra;

namespace {

// Minimal IDX writer (big-endian), the format oracle for the parser.
std::string make_idx_u8(const std::vector<uint32_t>& dims, const std::vector<uint8_t>& payload) {
    std::string out;
    out.push_back(0);
    out.push_back(0);
    out.push_back(0x08);
    out.push_back(static_cast<char>(dims.size()));
    for (uint32_t d : dims) {
        for (int b = 3; b >= 0; --b) out.push_back(static_cast<char>((d >> (8 * b)) & 0xFF));
    }
    out.append(payload.begin(), payload.end());
    return out;
}

} // namespace

TEST_CASE("parse_idx: layout identity on a 2x2x2 tensor", "[dataset]") {
    std::istringstream in(make_idx_u8({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7}));
    const PointCloud cloud = parse_idx(in);
    REQUIRE(cloud.size() == 2);
    REQUIRE(cloud.dim() == 4);
    CHECK(cloud.coords.row(0) == Eigen::RowVector4d(0, 1, 2, 3));
    CHECK(cloud.coords.row(1) == Eigen::RowVector4d(4, 5, 6, 7));
}

TEST_CASE("parse_idx: normalization maps 255 to exactly 1", "[dataset]") {
    std::istringstream in(make_idx_u8({1, 3}, {0, 128, 255}));
    const PointCloud cloud = parse_idx(in, true);
    CHECK(cloud.coords(0, 0) == 0.0);
    CHECK(cloud.coords(0, 2) == 1.0);
}

TEST_CASE("parse_idx: negatives", "[dataset]") {
    std::istringstream bad_magic(std::string("\x01\x00\x08\x01", 4));
    CHECK_THROWS_AS(parse_idx(bad_magic), FormatError);

    std::istringstream truncated(make_idx_u8({2, 2}, {1, 2, 3})); // one byte short
    CHECK_THROWS_AS(parse_idx(truncated), FormatError);

    auto trailing = make_idx_u8({2, 2}, {1, 2, 3, 4});
    trailing.push_back(0x7F);
    std::istringstream extra(trailing);
    CHECK_THROWS_AS(parse_idx(extra), FormatError);
}

TEST_CASE("parse_idx: train+test concatenation shape", "[dataset]") {
    std::vector<PointCloud> parts;
    std::istringstream train(make_idx_u8({6, 2, 2}, std::vector<uint8_t>(24, 1)));
    std::istringstream test(make_idx_u8({4, 2, 2}, std::vector<uint8_t>(16, 2)));
    parts.push_back(parse_idx(train));
    parts.push_back(parse_idx(test));
    const PointCloud all = concat_clouds(parts);
    CHECK(all.size() == 10);
    CHECK(all.dim() == 4);
    CHECK(all.coords(5, 0) == 1.0);
    CHECK(all.coords(6, 0) == 2.0);
}

TEST_CASE("parse_raw_matrix: identity, size mismatch", "[dataset]") {
    const double value = -3.25;
    std::string buf(reinterpret_cast<const char*>(&value), 8);
    std::istringstream one(buf);
    const PointCloud cloud = parse_raw_matrix(one, 1, 1, RawDtype::f64);
    CHECK(cloud.coords(0, 0) == value);

    std::istringstream short_buf(std::string(7, '\0'));
    CHECK_THROWS_AS(parse_raw_matrix(short_buf, 1, 1, RawDtype::f64), FormatError);

    std::istringstream long_buf(std::string(9, '\0'));
    CHECK_THROWS_AS(parse_raw_matrix(long_buf, 1, 1, RawDtype::f64), FormatError);
}

TEST_CASE("ingestion is lossless for u8 sources", "[dataset]") {
    std::mt19937_64 rng(3);
    const auto original = testutil::random_bytes(rng, 6 * 9);
    std::istringstream in(std::string(original.begin(), original.end()));
    const PointCloud cloud = parse_raw_matrix(in, 6, 9, RawDtype::u8);
    // Widening then narrowing returns the original bytes.
    for (Eigen::Index r = 0; r < cloud.size(); ++r) {
        for (Eigen::Index c = 0; c < cloud.dim(); ++c) {
            const auto narrowed = static_cast<uint8_t>(cloud.coords(r, c));
            CHECK(narrowed == original[static_cast<std::size_t>(r * 9 + c)]);
        }
    }
}

TEST_CASE("synth affine_subspace lies exactly on a d-dim subspace", "[dataset]") {
    const PointCloud cloud = synth_dataset(SynthKind::affine_subspace, 500, 20, 3, 7);
    REQUIRE(cloud.size() == 500);
    REQUIRE(cloud.dim() == 20);

    // Full-SVD fit oracle: residual past the top 3 directions is numerically
    // zero.
    Eigen::MatrixXd centered = cloud.coords;
    centered.rowwise() -= cloud.coords.colwise().mean();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    CHECK(sv(3) <= 1e-12 * sv(0));

    const Eigen::MatrixXd basis = svd.matrixV().leftCols(3);
    const Eigen::MatrixXd residual = centered - (centered * basis) * basis.transpose();
    CHECK(residual.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("synth determinism and ranges", "[dataset]") {
    const PointCloud a = synth_dataset(SynthKind::swiss_roll_like, 100, 5, 2, 11);
    const PointCloud b = synth_dataset(SynthKind::swiss_roll_like, 100, 5, 2, 11);
    CHECK(std::memcmp(a.coords.data(), b.coords.data(),
                      static_cast<std::size_t>(a.coords.size()) * 8) == 0);

    const PointCloud cube = synth_dataset(SynthKind::uniform_cube, 200, 4, 0, 13);
    CHECK(cube.coords.minCoeff() >= 0.0);
    CHECK(cube.coords.maxCoeff() <= 1.0);

    CHECK_THROWS_AS(synth_dataset(SynthKind::affine_subspace, 10, 4, 5, 1), InvalidInput);
}
