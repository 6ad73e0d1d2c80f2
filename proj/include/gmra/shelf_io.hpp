#pragma once

// Shelf persistence for pipeline artifacts. Array names are normative so
// pipelines can resume:
//   dataset/points                           f32 or f64 [n, D]
//   dataset/meta                             i64 [2] = {n, D}
//   tree/meta                                f64 [n_cells, 8] rows of
//       {j, k, parent_arena, anchor, n_points, d, is_leaf, radius}
//   cells/<j>/<k>/{indices,center,basis,sv}  i64 / f64
//   wavelets/<j>/<k>/{psi,w}                 f64 (non-root cells)
//   coeffs/{leaf_ids,p_leaf,q_flat,offsets}  per-point transform output
//
// coeffs layout: leaf_ids is i64 [n, 2] = (j, k); p_leaf and q_flat are the
// ragged coefficient payloads; offsets is i64 [n+1, 2] with column 0 indexing
// p_leaf and column 1 indexing q_flat. q_flat per point is q_J..q_1 then q_0.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmra/errors.hpp"
#include "gmra/shelf.hpp"
#include "gmra/wavelets.hpp"

namespace gmra {

namespace detail {

inline std::span<const uint8_t> bytes_of(const double* p, std::size_t count) {
    return {reinterpret_cast<const uint8_t*>(p), count * 8};
}
inline std::span<const uint8_t> bytes_of(const int64_t* p, std::size_t count) {
    return {reinterpret_cast<const uint8_t*>(p), count * 8};
}

inline std::string cell_prefix(const char* group, const DyadicCellId& id) {
    return std::string(group) + "/" + std::to_string(id.j) + "/" + std::to_string(id.k) + "/";
}

} // namespace detail

inline void put_f64_matrix(Shelf& shelf, const std::string& name, const Eigen::MatrixXd& m) {
    // Stored row-major regardless of Eigen's internal layout.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    shelf.put_array(name, Dtype::f64,
                    {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())},
                    detail::bytes_of(rm.data(), static_cast<std::size_t>(rm.size())));
}

inline void put_f64_vector(Shelf& shelf, const std::string& name, const Eigen::VectorXd& v) {
    shelf.put_array(name, Dtype::f64, {static_cast<uint64_t>(v.size())},
                    detail::bytes_of(v.data(), static_cast<std::size_t>(v.size())));
}

inline Eigen::MatrixXd get_f64_matrix(const Shelf& shelf, const std::string& name) {
    const ArrayRecord& rec = shelf.record(name);
    if (rec.dtype != Dtype::f64 || rec.shape.size() != 2) {
        throw FormatError("array '" + name + "' is not an f64 matrix");
    }
    const auto bytes = shelf.array_bytes(name);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
        static_cast<Eigen::Index>(rec.shape[0]), static_cast<Eigen::Index>(rec.shape[1]));
    std::memcpy(rm.data(), bytes.data(), bytes.size());
    return rm;
}

inline Eigen::VectorXd get_f64_vector(const Shelf& shelf, const std::string& name) {
    const ArrayRecord& rec = shelf.record(name);
    if (rec.dtype != Dtype::f64 || rec.shape.size() != 1) {
        throw FormatError("array '" + name + "' is not an f64 vector");
    }
    const auto bytes = shelf.array_bytes(name);
    Eigen::VectorXd v(static_cast<Eigen::Index>(rec.shape[0]));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

// --- dataset ---

inline void put_point_cloud(Shelf& shelf, const PointCloud& cloud, Dtype dtype) {
    if (dtype != Dtype::f32 && dtype != Dtype::f64) {
        throw InvalidInput("dataset dtype must be f32 or f64");
    }
    const auto n = static_cast<uint64_t>(cloud.size());
    const auto D = static_cast<uint64_t>(cloud.dim());
    if (dtype == Dtype::f64) {
        shelf.put_array("dataset/points", Dtype::f64, {n, D},
                        detail::bytes_of(cloud.coords.data(), n * D));
    } else {
        std::vector<float> narrowed(n * D);
        const double* src = cloud.coords.data();
        for (std::size_t i = 0; i < narrowed.size(); ++i) {
            narrowed[i] = static_cast<float>(src[i]);
        }
        shelf.put_array("dataset/points", Dtype::f32, {n, D},
                        {reinterpret_cast<const uint8_t*>(narrowed.data()), narrowed.size() * 4});
    }
    const int64_t meta[2] = {static_cast<int64_t>(n), static_cast<int64_t>(D)};
    shelf.put_array("dataset/meta", Dtype::i64, {2}, detail::bytes_of(meta, 2));
}

inline PointCloud get_point_cloud(const Shelf& shelf) {
    const ArrayRecord& rec = shelf.record("dataset/points");
    if (rec.shape.size() != 2) throw FormatError("dataset/points is not a matrix");
    const auto n = static_cast<Eigen::Index>(rec.shape[0]);
    const auto D = static_cast<Eigen::Index>(rec.shape[1]);
    PointCloud cloud;
    cloud.coords.resize(n, D);
    const auto bytes = shelf.array_bytes("dataset/points");
    if (rec.dtype == Dtype::f64) {
        std::memcpy(cloud.coords.data(), bytes.data(), bytes.size());
    } else if (rec.dtype == Dtype::f32) {
        const float* src = reinterpret_cast<const float*>(bytes.data());
        double* dst = cloud.coords.data();
        for (Eigen::Index i = 0; i < n * D; ++i) dst[i] = static_cast<double>(src[i]);
    } else {
        throw FormatError("dataset/points has unsupported dtype");
    }
    return cloud;
}

// --- dyadic tree / model ---

inline void put_dyadic_tree(Shelf& shelf, const DyadicTree& tree) {
    const std::size_t n_cells = tree.cells.size();
    std::vector<double> meta(n_cells * 8);
    for (std::size_t i = 0; i < n_cells; ++i) {
        const DyadicCell& cell = tree.cells[i];
        meta[i * 8 + 0] = static_cast<double>(cell.id.j);
        meta[i * 8 + 1] = static_cast<double>(cell.id.k);
        meta[i * 8 + 2] = static_cast<double>(cell.parent);
        meta[i * 8 + 3] = static_cast<double>(cell.anchor);
        meta[i * 8 + 4] = static_cast<double>(cell.points.size());
        meta[i * 8 + 5] = static_cast<double>(cell.basis.cols());
        meta[i * 8 + 6] = cell.leaf ? 1.0 : 0.0;
        meta[i * 8 + 7] = cell.radius;
    }
    shelf.put_array("tree/meta", Dtype::f64, {n_cells, 8},
                    detail::bytes_of(meta.data(), meta.size()));
    for (const DyadicCell& cell : tree.cells) {
        const std::string prefix = detail::cell_prefix("cells", cell.id);
        std::vector<int64_t> idx(cell.points.begin(), cell.points.end());
        shelf.put_array(prefix + "indices", Dtype::i64, {idx.size()},
                        detail::bytes_of(idx.data(), idx.size()));
        put_f64_vector(shelf, prefix + "center", cell.center);
        put_f64_matrix(shelf, prefix + "basis", cell.basis);
        put_f64_vector(shelf, prefix + "sv", cell.singular_values);
    }
}

inline void put_model(Shelf& shelf, const GmraModel& model) {
    put_dyadic_tree(shelf, model.tree);
    for (std::size_t i = 0; i < model.tree.cells.size(); ++i) {
        const DyadicCell& cell = model.tree.cells[i];
        if (cell.parent < 0) continue;
        const std::string prefix = detail::cell_prefix("wavelets", cell.id);
        put_f64_matrix(shelf, prefix + "psi", model.wavelets[i].psi);
        put_f64_vector(shelf, prefix + "w", model.wavelets[i].translation);
    }
}

inline DyadicTree load_dyadic_tree(const Shelf& shelf) {
    const ArrayRecord& meta_rec = shelf.record("tree/meta");
    if (meta_rec.shape.size() != 2 || meta_rec.shape[1] != 8) {
        throw FormatError("tree/meta has unexpected shape");
    }
    const std::size_t n_cells = meta_rec.shape[0];
    const auto meta = shelf.array_bytes("tree/meta");
    const double* m = reinterpret_cast<const double*>(meta.data());

    DyadicTree tree;
    tree.cells.resize(n_cells);
    bool first = true;
    for (std::size_t i = 0; i < n_cells; ++i) {
        DyadicCell& cell = tree.cells[i];
        cell.id.j = static_cast<int32_t>(m[i * 8 + 0]);
        cell.id.k = static_cast<uint32_t>(m[i * 8 + 1]);
        cell.parent = static_cast<int64_t>(m[i * 8 + 2]);
        cell.anchor = static_cast<uint64_t>(m[i * 8 + 3]);
        cell.leaf = m[i * 8 + 6] != 0.0;
        cell.radius = m[i * 8 + 7];
        if (cell.parent >= 0) {
            tree.cells[static_cast<std::size_t>(cell.parent)].children.push_back(
                static_cast<uint32_t>(i));
        } else {
            tree.root = static_cast<uint32_t>(i);
        }
        const std::string prefix = detail::cell_prefix("cells", cell.id);
        const auto idx_bytes = shelf.array_bytes(prefix + "indices");
        const int64_t* idx = reinterpret_cast<const int64_t*>(idx_bytes.data());
        cell.points.assign(idx, idx + idx_bytes.size() / 8);
        cell.center = get_f64_vector(shelf, prefix + "center");
        cell.basis = get_f64_matrix(shelf, prefix + "basis");
        cell.singular_values = get_f64_vector(shelf, prefix + "sv");
        tree.levels[cell.id.j].push_back(static_cast<uint32_t>(i));
        if (first || cell.id.j > tree.j_max) tree.j_max = cell.id.j;
        if (first || cell.id.j < tree.j_min) tree.j_min = cell.id.j;
        first = false;
        tree.dim = cell.center.size();
    }
    return tree;
}

inline GmraModel load_model(const Shelf& shelf) {
    GmraModel model;
    model.tree = load_dyadic_tree(shelf);
    model.wavelets.resize(model.tree.cells.size());
    for (std::size_t i = 0; i < model.tree.cells.size(); ++i) {
        const DyadicCell& cell = model.tree.cells[i];
        if (cell.parent < 0) {
            model.wavelets[i].psi = Eigen::MatrixXd::Zero(model.tree.dim, 0);
            model.wavelets[i].translation = Eigen::VectorXd::Zero(model.tree.dim);
            continue;
        }
        const std::string prefix = detail::cell_prefix("wavelets", cell.id);
        model.wavelets[i].psi = get_f64_matrix(shelf, prefix + "psi");
        model.wavelets[i].translation = get_f64_vector(shelf, prefix + "w");
    }
    return model;
}

// --- coefficients ---

inline void put_coefficients(Shelf& shelf, const GmraModel& model,
                             const std::vector<WaveletCoefficients>& coeffs) {
    const std::size_t n = coeffs.size();
    std::vector<int64_t> leaf_ids(n * 2);
    std::vector<int64_t> offsets((n + 1) * 2);
    std::vector<double> p_flat;
    std::vector<double> q_flat;
    for (std::size_t i = 0; i < n; ++i) {
        const DyadicCell& leaf = model.cell(coeffs[i].leaf);
        leaf_ids[i * 2 + 0] = leaf.id.j;
        leaf_ids[i * 2 + 1] = leaf.id.k;
        offsets[i * 2 + 0] = static_cast<int64_t>(p_flat.size());
        offsets[i * 2 + 1] = static_cast<int64_t>(q_flat.size());
        p_flat.insert(p_flat.end(), coeffs[i].leaf_scaling.data(),
                      coeffs[i].leaf_scaling.data() + coeffs[i].leaf_scaling.size());
        for (const auto& q : coeffs[i].q) {
            q_flat.insert(q_flat.end(), q.data(), q.data() + q.size());
        }
        q_flat.insert(q_flat.end(), coeffs[i].root_scaling.data(),
                      coeffs[i].root_scaling.data() + coeffs[i].root_scaling.size());
    }
    offsets[n * 2 + 0] = static_cast<int64_t>(p_flat.size());
    offsets[n * 2 + 1] = static_cast<int64_t>(q_flat.size());
    shelf.put_array("coeffs/leaf_ids", Dtype::i64, {n, 2},
                    detail::bytes_of(leaf_ids.data(), leaf_ids.size()));
    shelf.put_array("coeffs/p_leaf", Dtype::f64, {p_flat.size()},
                    detail::bytes_of(p_flat.data(), p_flat.size()));
    shelf.put_array("coeffs/q_flat", Dtype::f64, {q_flat.size()},
                    detail::bytes_of(q_flat.data(), q_flat.size()));
    shelf.put_array("coeffs/offsets", Dtype::i64, {n + 1, 2},
                    detail::bytes_of(offsets.data(), offsets.size()));
}

// Arena id of cell (j, k); ordinals are positions within a level.
inline uint32_t find_cell(const GmraModel& model, int32_t j, uint32_t k) {
    const auto it = model.tree.levels.find(j);
    if (it == model.tree.levels.end() || k >= it->second.size()) {
        throw NotFound("no cell (" + std::to_string(j) + ", " + std::to_string(k) + ")");
    }
    return it->second[k];
}

inline std::vector<WaveletCoefficients> load_coefficients(const Shelf& shelf,
                                                          const GmraModel& model) {
    const ArrayRecord& ids_rec = shelf.record("coeffs/leaf_ids");
    if (ids_rec.shape.size() != 2 || ids_rec.shape[1] != 2) {
        throw FormatError("coeffs/leaf_ids has unexpected shape");
    }
    const std::size_t n = ids_rec.shape[0];
    const int64_t* ids = reinterpret_cast<const int64_t*>(shelf.array_bytes("coeffs/leaf_ids").data());
    const double* p_flat = reinterpret_cast<const double*>(shelf.array_bytes("coeffs/p_leaf").data());
    const double* q_flat = reinterpret_cast<const double*>(shelf.array_bytes("coeffs/q_flat").data());
    const int64_t* offsets = reinterpret_cast<const int64_t*>(shelf.array_bytes("coeffs/offsets").data());

    std::vector<WaveletCoefficients> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        WaveletCoefficients& c = out[i];
        c.leaf = find_cell(model, static_cast<int32_t>(ids[i * 2 + 0]),
                           static_cast<uint32_t>(ids[i * 2 + 1]));
        // Rebuild the root..leaf path from parent links.
        for (int64_t cur = c.leaf; cur >= 0; cur = model.tree.cells[static_cast<std::size_t>(cur)].parent) {
            c.path.push_back(static_cast<uint32_t>(cur));
        }
        std::reverse(c.path.begin(), c.path.end());
        const std::size_t J = c.path.size() - 1;

        const DyadicCell& leaf = model.cell(c.leaf);
        const int64_t p_off = offsets[i * 2 + 0];
        c.leaf_scaling = Eigen::Map<const Eigen::VectorXd>(p_flat + p_off, leaf.basis.cols());

        int64_t q_off = offsets[i * 2 + 1];
        c.q.resize(J);
        for (std::size_t step = J; step >= 1; --step) {
            const Eigen::Index len = model.wavelets[c.path[step]].psi.cols();
            c.q[J - step] = Eigen::Map<const Eigen::VectorXd>(q_flat + q_off, len);
            q_off += len;
        }
        const DyadicCell& root = model.cell(c.path.front());
        c.root_scaling = Eigen::Map<const Eigen::VectorXd>(q_flat + q_off, root.basis.cols());
    }
    return out;
}

// CSV export, one row per point: leaf j, leaf k, then coefficients fine to
// coarse (p_J, q_J..q_1, q_0).
inline void write_coefficients_csv(const GmraModel& model,
                                   const std::vector<WaveletCoefficients>& coeffs,
                                   std::ostream& out) {
    out << "leaf_j,leaf_k,coefficients_fine_to_coarse\n";
    out.precision(17);
    for (const auto& c : coeffs) {
        const DyadicCell& leaf = model.cell(c.leaf);
        out << leaf.id.j << ',' << leaf.id.k;
        for (Eigen::Index i = 0; i < c.leaf_scaling.size(); ++i) out << ',' << c.leaf_scaling(i);
        for (const auto& q : c.q) {
            for (Eigen::Index i = 0; i < q.size(); ++i) out << ',' << q(i);
        }
        for (Eigen::Index i = 0; i < c.root_scaling.size(); ++i) out << ',' << c.root_scaling(i);
        out << '\n';
    }
}

} // namespace gmra
