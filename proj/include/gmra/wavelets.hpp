#pragma once

// Geometric wavelets: the affine difference operators between consecutive
// scales of a dyadic tree, and the forward / inverse transforms built on
// them.
//
// For a child cell with basis Phi_c, center c_c under a parent with Phi_p,
// c_p, the wavelet block is
//   M = (I - Phi_p Phi_p^T) Phi_c
//   Psi = orthonormal basis of span(M)  (column-pivoted QR, small columns
//         dropped, then re-projected against Phi_p once more and re-factored)
//   w = (I - Phi_p Phi_p^T)(c_c - c_p)
// which makes the two-scale relation x_j = x_{j-1} + Psi_j q_j + w_j exact up
// to the drop tolerance.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "gmra/detail/parallel.hpp"
#include "gmra/dyadic_tree.hpp"
#include "gmra/errors.hpp"

namespace gmra {

struct WaveletNode {
    Eigen::MatrixXd psi; // D x d_w, column-orthonormal, orthogonal to parent basis
    Eigen::VectorXd translation;
};

struct GmraModel {
    DyadicTree tree;
    std::vector<WaveletNode> wavelets; // indexed by cell arena id; root entry unused

    const DyadicCell& cell(uint32_t idx) const { return tree.cells[idx]; }
    Eigen::Index dim() const { return tree.dim; }
};

inline constexpr double kWaveletDropTol = 1e-10;

inline WaveletNode compute_wavelet(const Eigen::MatrixXd& phi_parent,
                                   const Eigen::VectorXd& center_parent,
                                   const Eigen::MatrixXd& phi_child,
                                   const Eigen::VectorXd& center_child,
                                   double drop_tol = kWaveletDropTol) {
    const Eigen::Index D = center_parent.size();
    WaveletNode node;

    Eigen::MatrixXd m = phi_child;
    if (phi_parent.cols() > 0 && m.cols() > 0) {
        m.noalias() -= phi_parent * (phi_parent.transpose() * phi_child);
    }
    if (m.cols() == 0) {
        node.psi = Eigen::MatrixXd::Zero(D, 0);
    } else {
        const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
        const double tol = drop_tol * scale;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
        Eigen::Index rank = 0;
        const auto& qr_mat = qr.matrixQR();
        const Eigen::Index diag_len = std::min(qr_mat.rows(), qr_mat.cols());
        for (Eigen::Index i = 0; i < diag_len; ++i) {
            if (std::abs(qr_mat(i, i)) > tol) ++rank;
        }
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(D, rank);
        // One more pass against the parent keeps the leakage at rounding
        // level even when a kept column sat near the drop threshold.
        if (phi_parent.cols() > 0 && rank > 0) {
            q.noalias() -= phi_parent * (phi_parent.transpose() * q);
            Eigen::HouseholderQR<Eigen::MatrixXd> reqr(q);
            q = reqr.householderQ() * Eigen::MatrixXd::Identity(D, rank);
        }
        detail::fix_column_signs(q);
        node.psi = std::move(q);
    }

    Eigen::VectorXd diff = center_child - center_parent;
    if (phi_parent.cols() > 0) {
        diff.noalias() -= phi_parent * (phi_parent.transpose() * (center_child - center_parent));
    }
    node.translation = std::move(diff);
    return node;
}

inline GmraModel build_wavelets(DyadicTree tree, int threads = 1) {
    GmraModel model;
    model.wavelets.resize(tree.cells.size());
    detail::parallel_for(tree.cells.size(), threads, [&](std::size_t i) {
        const DyadicCell& cell = tree.cells[i];
        if (cell.parent < 0) {
            model.wavelets[i].psi = Eigen::MatrixXd::Zero(tree.dim, 0);
            model.wavelets[i].translation = Eigen::VectorXd::Zero(tree.dim);
            return;
        }
        const DyadicCell& parent = tree.cells[static_cast<std::size_t>(cell.parent)];
        model.wavelets[i] =
            compute_wavelet(parent.basis, parent.center, cell.basis, cell.center);
    });
    model.tree = std::move(tree);
    return model;
}

// Root-to-leaf descent by nearest child center; ties pick the lowest ordinal.
inline std::vector<uint32_t> assign_leaf_path(const GmraModel& model,
                                              const Eigen::VectorXd& x) {
    if (x.size() != model.dim()) throw InvalidInput("query dimension mismatch");
    std::vector<uint32_t> path;
    uint32_t cur = model.tree.root;
    path.push_back(cur);
    while (!model.tree.cells[cur].children.empty()) {
        const auto& children = model.tree.cells[cur].children;
        uint32_t best = children.front();
        double best_d2 = (x - model.tree.cells[best].center).squaredNorm();
        for (std::size_t i = 1; i < children.size(); ++i) {
            const uint32_t cand = children[i];
            const double d2 = (x - model.tree.cells[cand].center).squaredNorm();
            const bool closer =
                d2 < best_d2 || (d2 == best_d2 && model.tree.cells[cand].id.k <
                                                      model.tree.cells[best].id.k);
            if (closer) {
                best = cand;
                best_d2 = d2;
            }
        }
        cur = best;
        path.push_back(cur);
    }
    return path;
}

// Per-point coefficients along one root-to-leaf path, stored fine to coarse.
struct WaveletCoefficients {
    uint32_t leaf = 0;                  // arena id of the leaf cell
    std::vector<uint32_t> path;         // root..leaf arena ids
    Eigen::VectorXd leaf_scaling;       // p_J = Phi_J^T (x - c_J)
    std::vector<Eigen::VectorXd> q;     // q[0] = q_J (finest) ... q[J-1] = q_1
    Eigen::VectorXd root_scaling;       // q_0 = Phi_0^T (x_0 - c_0)
};

struct FgwtResult {
    WaveletCoefficients coeffs;
    Eigen::VectorXd finest_projection; // x_J, the leaf-scale approximation of x
};

inline FgwtResult fgwt_with_projection(const GmraModel& model, const Eigen::VectorXd& x) {
    const std::vector<uint32_t> path = assign_leaf_path(model, x);
    const std::size_t J = path.size() - 1;

    FgwtResult out;
    out.coeffs.leaf = path.back();
    out.coeffs.path = path;
    out.coeffs.q.resize(J);

    const DyadicCell& leaf = model.cell(path.back());
    Eigen::VectorXd xj = leaf.center;
    if (leaf.basis.cols() > 0) {
        out.coeffs.leaf_scaling = leaf.basis.transpose() * (x - leaf.center);
        xj += leaf.basis * out.coeffs.leaf_scaling;
    } else {
        out.coeffs.leaf_scaling = Eigen::VectorXd::Zero(0);
    }
    out.finest_projection = xj;

    for (std::size_t step = J; step >= 1; --step) {
        const DyadicCell& cell = model.cell(path[step]);
        const WaveletNode& wav = model.wavelets[path[step]];
        out.coeffs.q[J - step] = wav.psi.cols() > 0
                                     ? Eigen::VectorXd(wav.psi.transpose() * (xj - cell.center))
                                     : Eigen::VectorXd::Zero(0);
        const DyadicCell& coarser = model.cell(path[step - 1]);
        Eigen::VectorXd delta = xj - coarser.center;
        xj = coarser.center;
        if (coarser.basis.cols() > 0) {
            xj += coarser.basis * (coarser.basis.transpose() * delta);
        }
    }

    const DyadicCell& root = model.cell(path.front());
    out.coeffs.root_scaling = root.basis.cols() > 0
                                  ? Eigen::VectorXd(root.basis.transpose() * (xj - root.center))
                                  : Eigen::VectorXd::Zero(0);
    return out;
}

inline WaveletCoefficients fgwt(const GmraModel& model, const Eigen::VectorXd& x) {
    return fgwt_with_projection(model, x).coeffs;
}

namespace detail {

inline void check_coeff_shapes(const GmraModel& model, const WaveletCoefficients& coeffs) {
    if (coeffs.path.empty() || coeffs.path.back() != coeffs.leaf) {
        throw CoefficientError("coefficient path does not end at the stated leaf");
    }
    for (uint32_t id : coeffs.path) {
        if (id >= model.tree.cells.size()) throw CoefficientError("path cell out of range");
    }
    const std::size_t J = coeffs.path.size() - 1;
    if (coeffs.q.size() != J) throw CoefficientError("wavelet coefficient count mismatch");
    const DyadicCell& leaf = model.cell(coeffs.leaf);
    if (coeffs.leaf_scaling.size() != leaf.basis.cols()) {
        throw CoefficientError("leaf scaling length mismatch");
    }
    const DyadicCell& root = model.cell(coeffs.path.front());
    if (coeffs.root_scaling.size() != root.basis.cols()) {
        throw CoefficientError("root scaling length mismatch");
    }
    for (std::size_t step = 1; step <= J; ++step) {
        const WaveletNode& wav = model.wavelets[coeffs.path[step]];
        if (coeffs.q[J - step].size() != wav.psi.cols()) {
            throw CoefficientError("wavelet coefficient length mismatch at path step " +
                                   std::to_string(step));
        }
    }
}

} // namespace detail

// Reconstruction stopped after `steps` refinements (0 = coarsest scale only,
// path length - 1 = full reconstruction).
inline Eigen::VectorXd igwt_truncated(const GmraModel& model,
                                      const WaveletCoefficients& coeffs, std::size_t steps) {
    detail::check_coeff_shapes(model, coeffs);
    const std::size_t J = coeffs.path.size() - 1;
    if (steps > J) throw CoefficientError("truncation depth exceeds path length");

    const DyadicCell& root = model.cell(coeffs.path.front());
    Eigen::VectorXd xj = root.center;
    if (root.basis.cols() > 0) xj += root.basis * coeffs.root_scaling;
    for (std::size_t step = 1; step <= steps; ++step) {
        const WaveletNode& wav = model.wavelets[coeffs.path[step]];
        if (wav.psi.cols() > 0) xj += wav.psi * coeffs.q[J - step];
        xj += wav.translation;
    }
    return xj;
}

inline Eigen::VectorXd igwt(const GmraModel& model, const WaveletCoefficients& coeffs) {
    return igwt_truncated(model, coeffs, coeffs.path.size() - 1);
}

struct BatchResult {
    std::vector<WaveletCoefficients> coefficients;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    bool roundtrip = false;
};

// Applies fgwt to every row; with roundtrip enabled also inverts and
// aggregates the error against the forward pass's finest-scale projection.
inline BatchResult batch_transform(const GmraModel& model, const PointCloud& cloud,
                                   bool roundtrip = true, int threads = 1) {
    BatchResult out;
    out.roundtrip = roundtrip;
    const std::size_t n = static_cast<std::size_t>(cloud.size());
    out.coefficients.resize(n);
    std::vector<double> rel(n, 0.0);
    detail::parallel_for(n, threads, [&](std::size_t i) {
        FgwtResult f = fgwt_with_projection(model, cloud.row(static_cast<Eigen::Index>(i)).transpose());
        if (roundtrip) {
            const Eigen::VectorXd rec = igwt(model, f.coeffs);
            rel[i] = (rec - f.finest_projection).norm() / (1.0 + f.finest_projection.norm());
        }
        out.coefficients[i] = std::move(f.coeffs);
    });
    if (roundtrip && n > 0) {
        double sum = 0.0;
        for (double r : rel) {
            out.max_rel_error = std::max(out.max_rel_error, r);
            sum += r;
        }
        out.mean_rel_error = sum / static_cast<double>(n);
    }
    return out;
}

struct WaveletViolation {
    uint32_t cell = 0;
    std::string detail;
};

// Orthogonality and span checks for every wavelet node, plus basis
// orthonormality per cell.
inline std::vector<WaveletViolation> validate_wavelets(const GmraModel& model,
                                                       double ortho_tol = 1e-10,
                                                       double span_tol = 1e-8) {
    std::vector<WaveletViolation> report;
    for (std::size_t i = 0; i < model.tree.cells.size(); ++i) {
        const DyadicCell& cell = model.tree.cells[i];
        if (cell.basis.cols() > 0) {
            const Eigen::MatrixXd gram =
                cell.basis.transpose() * cell.basis -
                Eigen::MatrixXd::Identity(cell.basis.cols(), cell.basis.cols());
            if (gram.cwiseAbs().maxCoeff() > ortho_tol) {
                report.push_back({static_cast<uint32_t>(i), "scaling basis not orthonormal"});
            }
        }
        if (cell.parent < 0) continue;
        const DyadicCell& parent = model.tree.cells[static_cast<std::size_t>(cell.parent)];
        const WaveletNode& wav = model.wavelets[i];
        if (wav.psi.cols() > 0 && parent.basis.cols() > 0) {
            const double leak = (parent.basis.transpose() * wav.psi).cwiseAbs().maxCoeff();
            if (leak > ortho_tol) {
                report.push_back({static_cast<uint32_t>(i),
                                  "wavelet not orthogonal to parent basis (" +
                                      std::to_string(leak) + ")"});
            }
        }
        if (cell.basis.cols() > 0) {
            Eigen::MatrixXd m = cell.basis;
            if (parent.basis.cols() > 0) {
                m.noalias() -= parent.basis * (parent.basis.transpose() * cell.basis);
            }
            if (wav.psi.cols() > 0) {
                m.noalias() -= wav.psi * (wav.psi.transpose() * m).eval();
            }
            const double resid = m.cwiseAbs().maxCoeff();
            if (resid > span_tol) {
                report.push_back({static_cast<uint32_t>(i),
                                  "wavelet span misses projected child basis (" +
                                      std::to_string(resid) + ")"});
            }
        }
    }
    return report;
}

} // namespace gmra
