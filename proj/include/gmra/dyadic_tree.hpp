#pragma once

// Dyadic-cell decomposition extracted from a cover tree, plus per-cell affine
// statistics (center, scaling basis, singular values, radius).
//
// Cell (j, k) is anchored at a cover-tree node materialized at level j and
// holds the point indices of that node's subtree below j. Children therefore
// partition and cover their parent by construction. A cell stops subdividing
// once it has at most min_cell_size points or the j_min cutoff is reached; a
// leaf stands for its points at every finer level.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gmra/cover_tree.hpp"
#include "gmra/detail/parallel.hpp"
#include "gmra/errors.hpp"
#include "gmra/point_cloud.hpp"

namespace gmra {

struct DimPolicy {
    enum class Kind { fixed, energy };
    Kind kind = Kind::energy;
    int fixed_d = 0;
    double tau = 0.95;

    static DimPolicy fixed(int d) { return {Kind::fixed, d, 0.0}; }
    static DimPolicy energy(double tau) { return {Kind::energy, 0, tau}; }

    // Accepts "fixed:<d>" or "energy:<tau>".
    static DimPolicy parse(const std::string& text) {
        const auto colon = text.find(':');
        if (colon == std::string::npos) throw InvalidInput("dim policy must be fixed:<d> or energy:<tau>");
        const std::string kind = text.substr(0, colon);
        const std::string arg = text.substr(colon + 1);
        try {
            if (kind == "fixed") return fixed(std::stoi(arg));
            if (kind == "energy") return energy(std::stod(arg));
        } catch (const std::exception&) {
            throw InvalidInput("bad dim policy argument: " + text);
        }
        throw InvalidInput("unknown dim policy kind: " + kind);
    }

    std::string to_string() const {
        return kind == Kind::fixed ? "fixed:" + std::to_string(fixed_d)
                                   : "energy:" + std::to_string(tau);
    }
};

struct DyadicParams {
    uint64_t min_cell_size = 10;
    std::optional<int32_t> j_min;
    DimPolicy dim_policy = DimPolicy::energy(0.95);
    int threads = 1;
};

struct DyadicCellId {
    int32_t j = 0;
    uint32_t k = 0;
};

struct DyadicCell {
    DyadicCellId id;
    int64_t parent = -1; // arena index
    std::vector<uint32_t> children;
    uint64_t anchor = 0; // anchoring point index
    std::vector<uint64_t> points;
    bool leaf = false;

    Eigen::VectorXd center;
    Eigen::MatrixXd basis; // D x d, column-orthonormal
    Eigen::VectorXd singular_values;
    double radius = 0.0;
};

struct DyadicTree {
    std::vector<DyadicCell> cells;
    // level -> arena ids ordered by ordinal k; coarsest level first
    std::map<int32_t, std::vector<uint32_t>, std::greater<int32_t>> levels;
    int32_t j_max = 0;
    int32_t j_min = 0;
    uint32_t root = 0;
    Eigen::Index dim = 0;
};

inline DyadicTree extract_cells(const CoverTree& cover, const PointCloud& cloud,
                                const DyadicParams& params) {
    cloud.require_valid();
    if (params.min_cell_size < 1) throw InvalidInput("min_cell_size must be >= 1");
    if (cover.nodes.empty()) throw InvalidInput("empty cover tree");

    DyadicTree tree;
    tree.j_max = cover.top_scale;
    tree.j_min = cover.top_scale;
    tree.dim = cloud.dim();

    struct Pending {
        uint32_t anchor_node;
        std::vector<uint32_t> subtree; // cover node ids in this cell
        int64_t parent_cell;
    };

    std::vector<uint32_t> all(cover.nodes.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<uint32_t>(i);
    std::vector<Pending> current;
    current.push_back({static_cast<uint32_t>(cover.root), std::move(all), -1});

    std::vector<uint32_t> where(cover.nodes.size(), 0);
    int32_t j = cover.top_scale;
    while (!current.empty()) {
        // Deterministic ordinals: ascending anchor point index within a level.
        std::sort(current.begin(), current.end(), [&](const Pending& a, const Pending& b) {
            return cover.nodes[a.anchor_node].point < cover.nodes[b.anchor_node].point;
        });

        std::vector<Pending> next;
        auto& level_ids = tree.levels[j];
        for (uint32_t k = 0; k < current.size(); ++k) {
            Pending& pend = current[k];
            const uint32_t cell_idx = static_cast<uint32_t>(tree.cells.size());
            DyadicCell cell;
            cell.id = {j, k};
            cell.parent = pend.parent_cell;
            cell.anchor = cover.nodes[pend.anchor_node].point;
            cell.points.reserve(pend.subtree.size());
            for (uint32_t nid : pend.subtree) cell.points.push_back(cover.nodes[nid].point);
            std::sort(cell.points.begin(), cell.points.end());
            cell.leaf = cell.points.size() <= params.min_cell_size ||
                        (params.j_min && j <= *params.j_min);
            if (pend.parent_cell >= 0) {
                tree.cells[static_cast<std::size_t>(pend.parent_cell)].children.push_back(cell_idx);
            }
            level_ids.push_back(cell_idx);
            tree.j_min = std::min(tree.j_min, j);

            if (!cell.leaf) {
                // Nodes whose scale is j-1 materialize and take their subtree
                // with them; the anchor keeps the rest as the chain child.
                std::vector<uint32_t> spawned;
                std::vector<char> taken(pend.subtree.size(), 0);
                for (uint32_t idx = 0; idx < pend.subtree.size(); ++idx) {
                    where[pend.subtree[idx]] = idx;
                }
                for (uint32_t idx = 0; idx < pend.subtree.size(); ++idx) {
                    const uint32_t nid = pend.subtree[idx];
                    if (nid != pend.anchor_node && cover.nodes[nid].scale == j - 1) {
                        spawned.push_back(nid);
                    }
                }
                for (uint32_t s : spawned) {
                    Pending child;
                    child.anchor_node = s;
                    child.parent_cell = cell_idx;
                    // Collect s's whole subtree (its members never escape it).
                    std::vector<uint32_t> stack{s};
                    while (!stack.empty()) {
                        const uint32_t u = stack.back();
                        stack.pop_back();
                        child.subtree.push_back(u);
                        taken[where[u]] = 1;
                        for (uint64_t c : cover.nodes[u].children) {
                            stack.push_back(static_cast<uint32_t>(c));
                        }
                    }
                    next.push_back(std::move(child));
                }
                Pending chain;
                chain.anchor_node = pend.anchor_node;
                chain.parent_cell = cell_idx;
                for (uint32_t idx = 0; idx < pend.subtree.size(); ++idx) {
                    if (!taken[idx]) chain.subtree.push_back(pend.subtree[idx]);
                }
                next.push_back(std::move(chain));
            }
            tree.cells.push_back(std::move(cell));
        }
        current = std::move(next);
        --j;
    }
    return tree;
}

struct CellStats {
    Eigen::VectorXd center;
    Eigen::MatrixXd basis;
    Eigen::VectorXd singular_values;
    double radius = 0.0;
};

namespace detail {

// Largest-magnitude entry of each column made positive (first index wins on
// ties) so the factorization is reproducible byte-for-byte.
inline void fix_column_signs(Eigen::MatrixXd& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        Eigen::Index argmax = 0;
        double best = -1.0;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const double a = std::abs(m(r, c));
            if (a > best) {
                best = a;
                argmax = r;
            }
        }
        if (m(argmax, c) < 0.0) m.col(c) = -m.col(c);
    }
}

inline int choose_dimension(const Eigen::VectorXd& sv, const DimPolicy& policy,
                            std::size_t n_cell, Eigen::Index D) {
    const int rank_cap = static_cast<int>(std::min<int64_t>(
        static_cast<int64_t>(n_cell) - 1, static_cast<int64_t>(D)));
    if (rank_cap <= 0) return 0;
    if (policy.kind == DimPolicy::Kind::fixed) {
        return std::clamp(policy.fixed_d, 0, rank_cap);
    }
    const double total = sv.squaredNorm();
    if (total <= 0.0) return 0;
    double cum = 0.0;
    for (int d = 1; d <= static_cast<int>(sv.size()); ++d) {
        cum += sv(d - 1) * sv(d - 1);
        if (cum >= policy.tau * total) return std::min(d, rank_cap);
    }
    return rank_cap;
}

} // namespace detail

// Center, scaling basis, singular values, and radius of one cell. The basis
// is the leading right-singular block of the centered data matrix; for tall
// cells the SVD runs on the triangular factor of a Householder QR, which
// leaves singular values and right vectors unchanged.
inline CellStats cell_statistics(const std::vector<uint64_t>& points, const PointCloud& cloud,
                                 const DimPolicy& policy) {
    if (points.empty()) throw InvalidInput("cell_statistics on an empty cell");
    const Eigen::Index D = cloud.dim();
    const Eigen::Index m = static_cast<Eigen::Index>(points.size());

    CellStats stats;
    stats.center = Eigen::VectorXd::Zero(D);
    for (uint64_t p : points) stats.center += cloud.coords.row(static_cast<Eigen::Index>(p)).transpose();
    stats.center /= static_cast<double>(m);

    Eigen::MatrixXd centered(m, D);
    for (Eigen::Index r = 0; r < m; ++r) {
        centered.row(r) =
            cloud.coords.row(static_cast<Eigen::Index>(points[static_cast<std::size_t>(r)])) -
            stats.center.transpose();
    }
    stats.radius = centered.rowwise().norm().maxCoeff();

    const Eigen::Index spectrum = std::min(m, D);
    if (m == 1) {
        stats.singular_values = Eigen::VectorXd::Zero(spectrum);
        stats.basis = Eigen::MatrixXd::Zero(D, 0);
        return stats;
    }

    Eigen::MatrixXd v;
    Eigen::VectorXd sv;
    if (m > D) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(centered);
        Eigen::MatrixXd r_factor =
            qr.matrixQR().topRows(D).template triangularView<Eigen::Upper>();
        Eigen::BDCSVD<Eigen::MatrixXd> svd(r_factor, Eigen::ComputeThinV);
        v = svd.matrixV();
        sv = svd.singularValues();
    } else {
        Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
        v = svd.matrixV();
        sv = svd.singularValues();
    }
    stats.singular_values = sv.head(spectrum);
    const int d = detail::choose_dimension(stats.singular_values, policy,
                                           points.size(), D);
    stats.basis = v.leftCols(d);
    detail::fix_column_signs(stats.basis);
    return stats;
}

inline void compute_statistics(DyadicTree& tree, const PointCloud& cloud,
                               const DimPolicy& policy, int threads = 1) {
    detail::parallel_for(tree.cells.size(), threads, [&](std::size_t i) {
        CellStats stats = cell_statistics(tree.cells[i].points, cloud, policy);
        tree.cells[i].center = std::move(stats.center);
        tree.cells[i].basis = std::move(stats.basis);
        tree.cells[i].singular_values = std::move(stats.singular_values);
        tree.cells[i].radius = stats.radius;
    });
}

inline DyadicTree build_dyadic_tree(const CoverTree& cover, const PointCloud& cloud,
                                    const DyadicParams& params) {
    DyadicTree tree = extract_cells(cover, cloud, params);
    compute_statistics(tree, cloud, params.dim_policy, params.threads);
    return tree;
}

struct PartitionViolation {
    enum class Kind { sphere, disjoint, cover, structure };
    Kind kind;
    int32_t level = 0;
    uint32_t cell = 0;
    std::string detail;
};

// Pure check of the cell properties: sphere containment, disjoint children,
// children covering the parent, and each level (with coarser leaves standing
// in) being a disjoint cover of the whole index set.
inline std::vector<PartitionViolation> validate_partition(const DyadicTree& tree,
                                                          const PointCloud& cloud) {
    using Kind = PartitionViolation::Kind;
    std::vector<PartitionViolation> report;
    const auto n = static_cast<uint64_t>(cloud.size());

    for (std::size_t ci = 0; ci < tree.cells.size(); ++ci) {
        const DyadicCell& cell = tree.cells[ci];
        if (cell.points.empty()) {
            report.push_back({Kind::structure, cell.id.j, cell.id.k, "cell has zero points"});
            continue;
        }
        if (cell.leaf != cell.children.empty()) {
            report.push_back({Kind::structure, cell.id.j, cell.id.k,
                              "leaf flag disagrees with children"});
        }
        // 1a: all points within the stored radius of the stored center.
        if (cell.center.size() == cloud.dim()) {
            const double slack = 1e-12 * (1.0 + cell.radius);
            for (uint64_t p : cell.points) {
                const double d =
                    (cloud.coords.row(static_cast<Eigen::Index>(p)) - cell.center.transpose())
                        .norm();
                if (d > cell.radius + slack) {
                    report.push_back({Kind::sphere, cell.id.j, cell.id.k,
                                      "point " + std::to_string(p) + " outside cell sphere"});
                }
            }
        }
        if (cell.children.empty()) continue;
        // 1b/1c: children partition the parent's point set.
        std::vector<uint64_t> merged;
        for (uint32_t child : cell.children) {
            const auto& cp = tree.cells[child].points;
            merged.insert(merged.end(), cp.begin(), cp.end());
        }
        std::sort(merged.begin(), merged.end());
        bool dup = false;
        for (std::size_t i = 1; i < merged.size(); ++i) {
            if (merged[i] == merged[i - 1]) dup = true;
        }
        if (dup) {
            report.push_back({Kind::disjoint, cell.id.j, cell.id.k,
                              "children share a point index"});
        }
        if (merged != cell.points) {
            report.push_back({Kind::cover, cell.id.j, cell.id.k,
                              "children do not cover the parent exactly"});
        }
    }

    // Per-level disjoint cover of the full index set (leaves persist).
    for (const auto& [level, ids] : tree.levels) {
        std::vector<uint64_t> seen(n, 0);
        for (const auto& cell : tree.cells) {
            const bool active = cell.id.j == level || (cell.leaf && cell.id.j > level);
            if (!active) continue;
            for (uint64_t p : cell.points) {
                if (p < n) seen[p]++;
            }
        }
        uint64_t missing = 0;
        uint64_t repeated = 0;
        for (uint64_t p = 0; p < n; ++p) {
            if (seen[p] == 0) ++missing;
            if (seen[p] > 1) ++repeated;
        }
        if (missing > 0) {
            report.push_back({Kind::cover, level, 0,
                              std::to_string(missing) + " points uncovered at this level"});
        }
        if (repeated > 0) {
            report.push_back({Kind::disjoint, level, 0,
                              std::to_string(repeated) + " points covered twice at this level"});
        }
        (void)ids;
    }
    return report;
}

} // namespace gmra
