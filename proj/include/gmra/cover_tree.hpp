#pragma once

// Cover tree over a point cloud (sequential insertion, one explicit node per
// point). Invariants on the explicit representation:
//   covering:   dist(child, parent) <= 2^parent.scale for every edge
//   separation: dist(u, v) > 2^min(u.scale, v.scale) for every node pair
//   nesting:    implicit self-children; a node stands for its point at every
//               level at or below its scale
// All threshold comparisons use squared distances against exact powers of
// four, so uniformly scaling a cloud by 2 shifts every scale by one without
// changing the structure.
//
// Serialization (little-endian): magic "GMRACTR1" | n u64 | top_scale i32 |
// bottom_scale i32 | node count u64 | per node: point_index u64, scale i32,
// parent i64 (-1 for root), child_count u32, child ids u64*count.

#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gmra/detail/binary_io.hpp"
#include "gmra/errors.hpp"
#include "gmra/point_cloud.hpp"

namespace gmra {

struct CoverTreeNode {
    uint64_t point = 0;
    int32_t scale = 0;
    int64_t parent = -1;
    std::vector<uint64_t> children;
};

struct CoverTree {
    uint64_t root = 0;
    int32_t top_scale = 0;
    int32_t bottom_scale = 0;
    std::vector<CoverTreeNode> nodes;
};

namespace detail {

inline double pow4(int32_t s) { return std::ldexp(1.0, 2 * s); }

// Rejects exact duplicates up front; the separation invariant cannot hold at
// any scale for distance zero. -0.0 is canonicalized so it hashes like +0.0.
inline void check_duplicates(const PointCloud& cloud) {
    const Eigen::Index n = cloud.size();
    const Eigen::Index D = cloud.dim();
    std::unordered_map<std::size_t, std::vector<Eigen::Index>> buckets;
    buckets.reserve(static_cast<std::size_t>(n) * 2);
    std::vector<double> canon(static_cast<std::size_t>(D));
    for (Eigen::Index i = 0; i < n; ++i) {
        std::size_t h = 1469598103934665603ull;
        for (Eigen::Index c = 0; c < D; ++c) {
            canon[static_cast<std::size_t>(c)] = cloud.coords(i, c) + 0.0;
            uint64_t bits;
            std::memcpy(&bits, &canon[static_cast<std::size_t>(c)], 8);
            h = (h ^ bits) * 1099511628211ull;
        }
        auto& bucket = buckets[h];
        for (Eigen::Index j : bucket) {
            if ((cloud.coords.row(i) - cloud.coords.row(j)).squaredNorm() == 0.0) {
                throw DuplicatePoint(static_cast<std::size_t>(j), static_cast<std::size_t>(i));
            }
        }
        bucket.push_back(i);
    }
}

} // namespace detail

// Smallest integer s with max_i dist(x_root, x_i) <= 2^s; 0 for a single
// point (the degenerate bound is unbounded below).
inline int32_t root_scale(const PointCloud& cloud, Eigen::Index root_index) {
    cloud.require_valid();
    double max_d2 = 0.0;
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        max_d2 = std::max(max_d2, cloud.squared_distance(root_index, i));
    }
    if (max_d2 == 0.0) return 0;
    int32_t s = static_cast<int32_t>(std::ceil(0.5 * std::log2(max_d2)));
    while (s > std::numeric_limits<int32_t>::min() + 1 && detail::pow4(s - 1) >= max_d2) --s;
    while (detail::pow4(s) < max_d2) ++s;
    return s;
}

inline CoverTree build_cover_tree(const PointCloud& cloud) {
    cloud.require_valid();
    detail::check_duplicates(cloud);
    const Eigen::Index n = cloud.size();

    CoverTree tree;
    tree.top_scale = root_scale(cloud, 0);
    tree.bottom_scale = tree.top_scale;
    tree.root = 0;
    tree.nodes.resize(static_cast<std::size_t>(n));
    tree.nodes[0] = CoverTreeNode{0, tree.top_scale, -1, {}};
    if (n == 1) return tree;

    // Distance cache, refreshed per insertion via an epoch stamp.
    std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
    std::vector<uint32_t> epoch(static_cast<std::size_t>(n), 0);
    uint32_t now = 0;

    struct Level {
        int32_t scale;
        std::vector<uint32_t> cover; // node ids materialized here, near p
        double min_d2;
    };
    std::vector<Level> levels;
    std::vector<uint32_t> candidates;

    for (Eigen::Index p = 1; p < n; ++p) {
        ++now;
        auto dist2 = [&](uint32_t id) {
            if (epoch[id] != now) {
                d2[id] = cloud.squared_distance(p, static_cast<Eigen::Index>(tree.nodes[id].point));
                epoch[id] = now;
            }
            return d2[id];
        };

        levels.clear();
        levels.push_back({tree.top_scale, {0u}, dist2(0)});

        // Descend while some candidate (a cover node or one of its children
        // materializing at the next level) is within 2^i.
        for (;;) {
            const Level& cur = levels.back();
            const int32_t i = cur.scale;
            const double r2 = detail::pow4(i);

            candidates.clear();
            double min_c = std::numeric_limits<double>::infinity();
            for (uint32_t q : cur.cover) {
                const double dq = dist2(q);
                if (dq < min_c) min_c = dq;
                candidates.push_back(q);
                for (uint64_t c : tree.nodes[q].children) {
                    if (tree.nodes[c].scale == i - 1) {
                        const double dc = dist2(static_cast<uint32_t>(c));
                        if (dc < min_c) min_c = dc;
                        candidates.push_back(static_cast<uint32_t>(c));
                    }
                }
            }
            if (min_c > r2) break; // p separates below this level

            Level next;
            next.scale = i - 1;
            next.min_d2 = std::numeric_limits<double>::infinity();
            for (uint32_t q : candidates) {
                if (dist2(q) <= r2) {
                    next.cover.push_back(q);
                    next.min_d2 = std::min(next.min_d2, dist2(q));
                }
            }
            levels.push_back(std::move(next));
            if (levels.back().scale < tree.top_scale - 4200) {
                throw InvalidInput("cover tree descent did not terminate (near-duplicate points?)");
            }
        }

        // Attach at the deepest level whose cover set still reaches p.
        bool attached = false;
        for (std::size_t li = levels.size(); li-- > 0;) {
            const Level& lv = levels[li];
            if (lv.min_d2 <= detail::pow4(lv.scale)) {
                uint32_t best = 0;
                double best_d2 = std::numeric_limits<double>::infinity();
                for (uint32_t q : lv.cover) {
                    const double dq = dist2(q);
                    if (dq <= detail::pow4(lv.scale) &&
                        (dq < best_d2 || (dq == best_d2 && q < best))) {
                        best = q;
                        best_d2 = dq;
                    }
                }
                const int32_t child_scale = lv.scale - 1;
                tree.nodes[static_cast<std::size_t>(p)] =
                    CoverTreeNode{static_cast<uint64_t>(p), child_scale,
                                  static_cast<int64_t>(best), {}};
                tree.nodes[best].children.push_back(static_cast<uint64_t>(p));
                tree.bottom_scale = std::min(tree.bottom_scale, child_scale);
                attached = true;
                break;
            }
        }
        if (!attached) {
            // Cannot happen: the root always covers every point at top_scale.
            throw InvalidInput("cover tree insertion failed to find a parent");
        }
    }
    return tree;
}

struct CoverTreeViolation {
    enum class Kind { covering, separation, nesting, partition, structure };
    Kind kind;
    uint64_t node_a = 0;
    uint64_t node_b = 0;
    std::string detail;
};

// Exhaustive O(n^2) invariant check; pure, reports every violation.
inline std::vector<CoverTreeViolation> validate_cover_tree(const CoverTree& tree,
                                                           const PointCloud& cloud) {
    using Kind = CoverTreeViolation::Kind;
    std::vector<CoverTreeViolation> report;
    const std::size_t count = tree.nodes.size();
    const auto n = static_cast<std::size_t>(cloud.size());

    if (count == 0 || tree.root >= count) {
        report.push_back({Kind::structure, tree.root, 0, "missing or out-of-range root"});
        return report;
    }
    if (tree.top_scale < tree.bottom_scale) {
        report.push_back({Kind::structure, 0, 0, "top_scale below bottom_scale"});
    }
    if (tree.nodes[tree.root].parent != -1) {
        report.push_back({Kind::structure, tree.root, 0, "root has a parent"});
    }
    if (tree.nodes[tree.root].scale != tree.top_scale) {
        report.push_back({Kind::structure, tree.root, 0, "root scale differs from top_scale"});
    }

    // Point partition: every cloud index in exactly one explicit node.
    std::vector<uint32_t> seen(n, 0);
    for (std::size_t id = 0; id < count; ++id) {
        const auto& node = tree.nodes[id];
        if (node.point >= n) {
            report.push_back({Kind::structure, id, 0, "point index out of range"});
            continue;
        }
        seen[node.point]++;
        if (node.scale < tree.bottom_scale || node.scale > tree.top_scale) {
            report.push_back({Kind::structure, id, 0, "node scale outside [bottom, top]"});
        }
        for (uint64_t c : node.children) {
            if (c >= count) {
                report.push_back({Kind::structure, id, c, "child id out of range"});
                continue;
            }
            if (tree.nodes[c].parent != static_cast<int64_t>(id)) {
                report.push_back({Kind::structure, id, c, "child/parent link mismatch"});
            }
            if (tree.nodes[c].scale >= node.scale) {
                report.push_back({Kind::nesting, id, c, "child scale not below parent scale"});
            }
        }
    }
    for (std::size_t pt = 0; pt < n; ++pt) {
        if (seen[pt] != 1) {
            report.push_back({Kind::partition, pt, 0,
                              "point appears in " + std::to_string(seen[pt]) + " nodes"});
        }
    }

    // Covering: every edge within the parent's radius.
    for (std::size_t id = 0; id < count; ++id) {
        const auto& node = tree.nodes[id];
        for (uint64_t c : node.children) {
            if (c >= count || tree.nodes[c].point >= n || node.point >= n) continue;
            const double d2 = cloud.squared_distance(static_cast<Eigen::Index>(node.point),
                                                     static_cast<Eigen::Index>(tree.nodes[c].point));
            if (d2 > detail::pow4(node.scale)) {
                report.push_back({Kind::covering, id, c,
                                  "child farther than 2^" + std::to_string(node.scale)});
            }
        }
    }

    // Separation at the deepest level both nodes materialize.
    for (std::size_t a = 0; a < count; ++a) {
        for (std::size_t b = a + 1; b < count; ++b) {
            if (tree.nodes[a].point >= n || tree.nodes[b].point >= n) continue;
            const int32_t s = std::min(tree.nodes[a].scale, tree.nodes[b].scale);
            const double d2 = cloud.squared_distance(static_cast<Eigen::Index>(tree.nodes[a].point),
                                                     static_cast<Eigen::Index>(tree.nodes[b].point));
            if (!(d2 > detail::pow4(s))) {
                report.push_back({Kind::separation, a, b,
                                  "nodes within 2^" + std::to_string(s) + " at shared level"});
            }
        }
    }
    return report;
}

inline constexpr std::string_view kCoverTreeMagic = "GMRACTR1";

inline void serialize_cover_tree(const CoverTree& tree, std::ostream& out) {
    out.write(kCoverTreeMagic.data(), 8);
    detail::write_le<uint64_t>(out, tree.nodes.size()); // one explicit node per point
    detail::write_le<int32_t>(out, tree.top_scale);
    detail::write_le<int32_t>(out, tree.bottom_scale);
    detail::write_le<uint64_t>(out, tree.nodes.size());
    for (const auto& node : tree.nodes) {
        detail::write_le<uint64_t>(out, node.point);
        detail::write_le<int32_t>(out, node.scale);
        detail::write_le<int64_t>(out, node.parent);
        detail::write_le<uint32_t>(out, static_cast<uint32_t>(node.children.size()));
        for (uint64_t c : node.children) detail::write_le<uint64_t>(out, c);
    }
}

inline CoverTree deserialize_cover_tree(std::istream& in, const PointCloud& cloud) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCoverTreeMagic.data(), 8) != 0) {
        throw FormatError("bad cover tree magic");
    }
    CoverTree tree;
    const uint64_t n = detail::read_le<uint64_t>(in, "point count");
    if (n != static_cast<uint64_t>(cloud.size())) {
        throw FormatError("cover tree was built over a different point count");
    }
    tree.top_scale = detail::read_le<int32_t>(in, "top_scale");
    tree.bottom_scale = detail::read_le<int32_t>(in, "bottom_scale");
    const uint64_t count = detail::read_le<uint64_t>(in, "node count");
    if (count > n) throw FormatError("node count exceeds point count");
    tree.nodes.resize(count);
    for (uint64_t id = 0; id < count; ++id) {
        CoverTreeNode& node = tree.nodes[id];
        node.point = detail::read_le<uint64_t>(in, "point index");
        node.scale = detail::read_le<int32_t>(in, "node scale");
        node.parent = detail::read_le<int64_t>(in, "parent id");
        if (node.point >= n) throw FormatError("point index out of range");
        if (node.parent < -1 || node.parent >= static_cast<int64_t>(count)) {
            throw FormatError("parent id out of range");
        }
        const uint32_t nc = detail::read_le<uint32_t>(in, "child count");
        if (nc > count) throw FormatError("child count out of range");
        node.children.resize(nc);
        for (uint32_t c = 0; c < nc; ++c) {
            node.children[c] = detail::read_le<uint64_t>(in, "child id");
            if (node.children[c] >= count) throw FormatError("child id out of range");
        }
    }
    in.peek();
    if (!in.eof()) throw FormatError("trailing bytes after cover tree");
    tree.root = 0;
    for (uint64_t id = 0; id < count; ++id) {
        if (tree.nodes[id].parent == -1) tree.root = id;
    }
    return tree;
}

inline void save_cover_tree(const CoverTree& tree, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw NotFound("cannot write cover tree file: " + path);
    serialize_cover_tree(tree, out);
    if (!out) throw FormatError("short write on cover tree file: " + path);
}

inline CoverTree load_cover_tree(const std::string& path, const PointCloud& cloud) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("cannot open cover tree file: " + path);
    return deserialize_cover_tree(in, cloud);
}

} // namespace gmra
