#pragma once

// Dataset ingestion: IDX containers (MNIST-style, big-endian), raw
// little-endian matrices, and deterministic synthetic clouds.

#include <cstdint>
#include <fstream>
#include <istream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "gmra/errors.hpp"
#include "gmra/point_cloud.hpp"

namespace gmra {

namespace detail {

template <typename T>
inline T read_be(std::istream& in, const char* what) {
    uint8_t buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw FormatError(std::string("truncated stream while reading ") + what);
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        u = static_cast<U>(u << 8) | buf[i];
    }
    return static_cast<T>(u);
}

} // namespace detail

// IDX tensor flattened row-major to n x D and widened to f64. u8 payloads
// are optionally scaled by 1/255 when normalize is set.
inline PointCloud parse_idx(std::istream& in, bool normalize = false) {
    const uint8_t z0 = static_cast<uint8_t>(in.get());
    const uint8_t z1 = static_cast<uint8_t>(in.get());
    const int dtype_code = in.get();
    const int ndim = in.get();
    if (!in || z0 != 0 || z1 != 0) throw FormatError("bad IDX magic");
    if (ndim < 1 || ndim > 8) throw FormatError("bad IDX dimension count");

    std::vector<uint64_t> dims(static_cast<std::size_t>(ndim));
    uint64_t total = 1;
    for (int i = 0; i < ndim; ++i) {
        dims[static_cast<std::size_t>(i)] = detail::read_be<uint32_t>(in, "IDX dimension");
        total *= dims[static_cast<std::size_t>(i)];
    }
    const uint64_t n = dims[0];
    uint64_t D = 1;
    for (int i = 1; i < ndim; ++i) D *= dims[static_cast<std::size_t>(i)];
    if (n == 0 || D == 0) throw FormatError("empty IDX tensor");

    PointCloud cloud;
    cloud.coords.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(D));
    double* out = cloud.coords.data();

    switch (dtype_code) {
        case 0x08: { // unsigned byte
            std::vector<uint8_t> buf(total);
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(total));
            if (!in) throw FormatError("truncated IDX payload");
            const double scale = normalize ? 1.0 / 255.0 : 1.0;
            for (uint64_t i = 0; i < total; ++i) out[i] = scale * static_cast<double>(buf[i]);
            break;
        }
        case 0x0D: { // big-endian f32
            for (uint64_t i = 0; i < total; ++i) {
                const uint32_t bits = detail::read_be<uint32_t>(in, "IDX f32 payload");
                float v;
                std::memcpy(&v, &bits, 4);
                out[i] = static_cast<double>(v);
            }
            break;
        }
        case 0x0E: { // big-endian f64
            for (uint64_t i = 0; i < total; ++i) {
                const uint64_t bits = detail::read_be<uint64_t>(in, "IDX f64 payload");
                double v;
                std::memcpy(&v, &bits, 8);
                out[i] = v;
            }
            break;
        }
        default:
            throw FormatError("unsupported IDX dtype code " + std::to_string(dtype_code));
    }
    in.peek();
    if (!in.eof()) throw FormatError("trailing bytes after IDX payload");
    return cloud;
}

inline PointCloud parse_idx_file(const std::string& path, bool normalize = false) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("cannot open IDX file: " + path);
    return parse_idx(in, normalize);
}

// Row-wise concatenation; all inputs must agree on D.
inline PointCloud concat_clouds(const std::vector<PointCloud>& parts) {
    if (parts.empty()) throw InvalidInput("nothing to concatenate");
    Eigen::Index n = 0;
    const Eigen::Index D = parts.front().dim();
    for (const auto& p : parts) {
        if (p.dim() != D) throw InvalidInput("dimension mismatch between dataset parts");
        n += p.size();
    }
    PointCloud cloud;
    cloud.coords.resize(n, D);
    Eigen::Index row = 0;
    for (const auto& p : parts) {
        cloud.coords.middleRows(row, p.size()) = p.coords;
        row += p.size();
    }
    return cloud;
}

enum class RawDtype { u8, f32, f64 };

inline RawDtype parse_raw_dtype(const std::string& text) {
    if (text == "u8") return RawDtype::u8;
    if (text == "f32") return RawDtype::f32;
    if (text == "f64") return RawDtype::f64;
    throw InvalidInput("raw dtype must be u8, f32 or f64");
}

// Raw little-endian n x D matrix; payload length must match exactly.
inline PointCloud parse_raw_matrix(std::istream& in, uint64_t n, uint64_t D, RawDtype dtype) {
    if (n == 0 || D == 0) throw InvalidInput("raw matrix needs n >= 1 and D >= 1");
    const std::size_t esize = dtype == RawDtype::u8 ? 1 : dtype == RawDtype::f32 ? 4 : 8;
    const uint64_t total = n * D;
    std::vector<uint8_t> buf(total * esize);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in || static_cast<uint64_t>(in.gcount()) != buf.size()) {
        throw FormatError("raw payload shorter than n*D elements");
    }
    in.peek();
    if (!in.eof()) throw FormatError("raw payload longer than n*D elements");

    PointCloud cloud;
    cloud.coords.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(D));
    double* out = cloud.coords.data();
    switch (dtype) {
        case RawDtype::u8:
            for (uint64_t i = 0; i < total; ++i) out[i] = static_cast<double>(buf[i]);
            break;
        case RawDtype::f32:
            for (uint64_t i = 0; i < total; ++i) {
                float v;
                std::memcpy(&v, buf.data() + i * 4, 4);
                out[i] = static_cast<double>(v);
            }
            break;
        case RawDtype::f64:
            std::memcpy(out, buf.data(), total * 8);
            break;
    }
    return cloud;
}

inline PointCloud parse_raw_file(const std::string& path, uint64_t n, uint64_t D, RawDtype dtype) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("cannot open raw file: " + path);
    return parse_raw_matrix(in, n, D, dtype);
}

enum class SynthKind { affine_subspace, swiss_roll_like, uniform_cube };

inline SynthKind parse_synth_kind(const std::string& text) {
    if (text == "affine_subspace") return SynthKind::affine_subspace;
    if (text == "swiss_roll_like") return SynthKind::swiss_roll_like;
    if (text == "uniform_cube") return SynthKind::uniform_cube;
    throw InvalidInput("synthetic kind must be affine_subspace, swiss_roll_like or uniform_cube");
}

namespace detail {

// Orthonormal D x d frame from a seeded Gaussian draw.
inline Eigen::MatrixXd random_frame(std::mt19937_64& rng, Eigen::Index D, Eigen::Index d) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd g(D, d);
    for (Eigen::Index c = 0; c < d; ++c) {
        for (Eigen::Index r = 0; r < D; ++r) g(r, c) = gauss(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    return qr.householderQ() * Eigen::MatrixXd::Identity(D, d);
}

} // namespace detail

// Deterministic synthetic clouds for tests and benchmarks.
//   affine_subspace: points exactly on a random d-dim affine subspace of R^D
//   swiss_roll_like: smooth 2-manifold (classic roll), rotated into R^D
//   uniform_cube:    U[0,1]^D
inline PointCloud synth_dataset(SynthKind kind, uint64_t n, uint64_t D, uint64_t d,
                                uint64_t seed) {
    if (n == 0 || D == 0) throw InvalidInput("synthetic cloud needs n >= 1 and D >= 1");
    std::mt19937_64 rng(seed);
    PointCloud cloud;
    cloud.coords.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(D));

    switch (kind) {
        case SynthKind::affine_subspace: {
            if (d < 1 || d > D) throw InvalidInput("affine_subspace needs 1 <= d <= D");
            const Eigen::MatrixXd frame =
                detail::random_frame(rng, static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(d));
            std::uniform_real_distribution<double> uni(-1.0, 1.0);
            Eigen::VectorXd origin(static_cast<Eigen::Index>(D));
            for (Eigen::Index i = 0; i < origin.size(); ++i) origin(i) = uni(rng);
            std::normal_distribution<double> gauss(0.0, 1.0);
            Eigen::VectorXd y(static_cast<Eigen::Index>(d));
            for (uint64_t r = 0; r < n; ++r) {
                for (Eigen::Index c = 0; c < y.size(); ++c) y(c) = gauss(rng);
                cloud.coords.row(static_cast<Eigen::Index>(r)) =
                    (origin + frame * y).transpose();
            }
            break;
        }
        case SynthKind::swiss_roll_like: {
            if (D < 3) throw InvalidInput("swiss_roll_like needs D >= 3");
            std::uniform_real_distribution<double> uni(0.0, 1.0);
            Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> roll(
                static_cast<Eigen::Index>(n), 3);
            for (uint64_t r = 0; r < n; ++r) {
                const double t = 1.5 * EIGEN_PI * (1.0 + 2.0 * uni(rng));
                const double h = 10.0 * uni(rng);
                roll(static_cast<Eigen::Index>(r), 0) = t * std::cos(t);
                roll(static_cast<Eigen::Index>(r), 1) = h;
                roll(static_cast<Eigen::Index>(r), 2) = t * std::sin(t);
            }
            if (D == 3) {
                cloud.coords = roll;
            } else {
                // Isometric embedding: rows of the frame transpose are
                // orthonormal, so the manifold geometry is unchanged.
                const Eigen::MatrixXd frame =
                    detail::random_frame(rng, static_cast<Eigen::Index>(D), 3);
                cloud.coords = roll * frame.transpose();
            }
            break;
        }
        case SynthKind::uniform_cube: {
            std::uniform_real_distribution<double> uni(0.0, 1.0);
            for (uint64_t r = 0; r < n; ++r) {
                for (uint64_t c = 0; c < D; ++c) {
                    cloud.coords(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        uni(rng);
                }
            }
            break;
        }
    }
    return cloud;
}

} // namespace gmra
