#pragma once

// Isolation-forest out-of-distribution probabilities.
//
// Anomaly scores are sign-inverted, theta = -2^(-E[h(x)] / c(psi)), so they lie
// in [-1, 0) and higher means more typical of the training corpus. A query's
// probability is the empirical CDF of its theta over the training scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "continuity/core.hpp"
#include "continuity/errors.hpp"
#include "continuity/random.hpp"

namespace continuity {

using Embedding = std::vector<double>;

inline constexpr double kEulerGamma = 0.5772156649;

// Average unsuccessful-search path length in a binary search tree of n points.
inline double average_path_length(std::size_t n) {
    if (n <= 1) return 0.0;
    if (n == 2) return 1.0;
    const double k = static_cast<double>(n - 1);
    return 2.0 * (std::log(k) + kEulerGamma) - 2.0 * k / static_cast<double>(n);
}

struct IsolationTree {
    struct Node {
        int split_dim = -1;  // -1 marks an external node
        double split_value = 0.0;
        std::uint32_t left = 0;
        std::uint32_t right = 0;
        std::size_t size = 0;

        bool external() const { return split_dim < 0; }
    };

    std::vector<Node> nodes;  // nodes[0] is the root

    double path_length(std::span<const double> x) const {
        std::uint32_t id = 0;
        double depth = 0.0;
        while (!nodes[id].external()) {
            const Node& node = nodes[id];
            id = x[static_cast<std::size_t>(node.split_dim)] < node.split_value ? node.left
                                                                               : node.right;
            depth += 1.0;
        }
        return depth + average_path_length(nodes[id].size);
    }

    std::size_t depth() const { return depth_from(0); }

private:
    std::size_t depth_from(std::uint32_t id) const {
        if (nodes[id].external()) return 0;
        return 1 + std::max(depth_from(nodes[id].left), depth_from(nodes[id].right));
    }
};

struct OodTrainOptions {
    std::size_t trees = 100;
    std::size_t psi = 256;
    std::uint64_t seed = 0;
};

struct OodModel {
    static constexpr int kFormatVersion = 1;

    std::vector<IsolationTree> trees;
    std::size_t psi = 0;
    double c_psi = 0.0;
    std::size_t dim = 0;
    std::uint64_t seed = 0;
    std::vector<double> sorted_scores;

    std::size_t tree_count() const { return trees.size(); }
};

namespace detail {

class TreeBuilder {
public:
    TreeBuilder(std::span<const Embedding> data, std::size_t dim, std::size_t height_limit, Rng& rng)
        : data_(data), dim_(dim), height_limit_(height_limit), rng_(rng) {}

    IsolationTree build(std::vector<std::size_t> sample) {
        tree_.nodes.clear();
        grow(sample, 0);
        return std::move(tree_);
    }

private:
    std::uint32_t grow(std::span<std::size_t> rows, std::size_t depth) {
        const auto id = static_cast<std::uint32_t>(tree_.nodes.size());
        tree_.nodes.push_back(IsolationTree::Node{.size = rows.size()});
        if (depth >= height_limit_ || rows.size() <= 1) return id;

        // Only features that vary within the node can separate it.
        std::vector<std::size_t> candidates;
        std::vector<double> lo(dim_), hi(dim_);
        for (std::size_t d = 0; d < dim_; ++d) {
            lo[d] = hi[d] = data_[rows[0]][d];
            for (std::size_t r : rows) {
                lo[d] = std::min(lo[d], data_[r][d]);
                hi[d] = std::max(hi[d], data_[r][d]);
            }
            if (lo[d] < hi[d]) candidates.push_back(d);
        }
        if (candidates.empty()) return id;

        const std::size_t feature = candidates[rng_.index(candidates.size())];
        // Any split in (lo, hi] puts the minimum left and the maximum right, even
        // when lo and hi are adjacent doubles.
        double split = lo[feature] + rng_.uniform01() * (hi[feature] - lo[feature]);
        if (!(split > lo[feature])) split = std::nextafter(lo[feature], hi[feature]);
        split = std::min(split, hi[feature]);
        const auto mid = std::partition(rows.begin(), rows.end(), [&](std::size_t r) {
            return data_[r][feature] < split;
        });
        const auto left_count = static_cast<std::size_t>(std::distance(rows.begin(), mid));

        const std::uint32_t left = grow(rows.subspan(0, left_count), depth + 1);
        const std::uint32_t right = grow(rows.subspan(left_count), depth + 1);
        IsolationTree::Node& node = tree_.nodes[id];
        node.split_dim = static_cast<int>(feature);
        node.split_value = split;
        node.left = left;
        node.right = right;
        return id;
    }

    std::span<const Embedding> data_;
    std::size_t dim_;
    std::size_t height_limit_;
    Rng& rng_;
    IsolationTree tree_;
};

inline void check_embedding(std::span<const double> x, std::size_t dim) {
    if (x.size() != dim)
        throw InputDomainError("embedding dimension " + std::to_string(x.size()) +
                               " does not match model dimension " + std::to_string(dim));
    for (double v : x)
        if (!std::isfinite(v)) throw InputDomainError("embedding has a non-finite entry");
}

}  // namespace detail

inline double anomaly_score(const OodModel& model, std::span<const double> x) {
    detail::check_embedding(x, model.dim);
    double total = 0.0;
    for (const IsolationTree& tree : model.trees) total += tree.path_length(x);
    const double mean_path = total / static_cast<double>(model.trees.size());
    return -std::exp2(-mean_path / model.c_psi);
}

inline OodModel train_ood(std::span<const Embedding> embeddings, const OodTrainOptions& options) {
    if (embeddings.size() < 2)
        throw InputDomainError("isolation forest needs at least 2 embeddings, got " +
                               std::to_string(embeddings.size()));
    if (options.psi < 2) throw InputDomainError("psi must be at least 2");
    if (options.trees < 1) throw InputDomainError("need at least one tree");
    const std::size_t dim = embeddings.front().size();
    if (dim == 0) throw InputDomainError("embeddings are empty");
    for (const Embedding& e : embeddings) detail::check_embedding(e, dim);

    const std::size_t n = embeddings.size();
    const std::size_t sample_size = std::min(options.psi, n);
    const auto height_limit =
        static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(sample_size))));

    OodModel model;
    model.psi = options.psi;
    model.c_psi = average_path_length(sample_size);
    model.dim = dim;
    model.seed = options.seed;
    model.trees.reserve(options.trees);

    Rng master(options.seed);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t t = 0; t < options.trees; ++t) {
        Rng rng(master.fork());
        // Partial Fisher-Yates: the first sample_size entries are a uniform subsample.
        std::vector<std::size_t> pool = all;
        for (std::size_t i = 0; i < sample_size; ++i) {
            std::swap(pool[i], pool[i + rng.index(n - i)]);
        }
        pool.resize(sample_size);
        detail::TreeBuilder builder(embeddings, dim, height_limit, rng);
        model.trees.push_back(builder.build(std::move(pool)));
    }

    model.sorted_scores.reserve(n);
    for (const Embedding& e : embeddings) model.sorted_scores.push_back(anomaly_score(model, e));
    std::sort(model.sorted_scores.begin(), model.sorted_scores.end());
    return model;
}

// Fraction of training scores at or below theta.
inline double empirical_cdf(const OodModel& model, double theta) {
    const auto below = std::upper_bound(model.sorted_scores.begin(), model.sorted_scores.end(), theta);
    return static_cast<double>(std::distance(model.sorted_scores.begin(), below)) /
           static_cast<double>(model.sorted_scores.size());
}

inline Probability ood_probability(const OodModel& model, std::span<const double> x,
                                   const Hyperparams& hp) {
    return clamp_probability(empirical_cdf(model, anomaly_score(model, x)), hp);
}

// Two models can be compared through log-differences only when their score
// distributions come from the same forest shape.
inline bool same_forest_shape(const OodModel& a, const OodModel& b) {
    return a.tree_count() == b.tree_count() && a.psi == b.psi && a.dim == b.dim;
}

// ---------------------------------------------------------------------------
// Persistence: a JSON document
//   {format_version, t, psi, c_psi, dim, seed, trees, sorted_scores}
// where each tree is a nested node object, either {"size": n} or
// {"split_dim": d, "split_value": v, "left": {...}, "right": {...}}.

namespace detail {

inline nlohmann::json node_to_json(const IsolationTree& tree, std::uint32_t id) {
    const IsolationTree::Node& node = tree.nodes[id];
    if (node.external()) return {{"size", node.size}};
    return {{"split_dim", node.split_dim},
            {"split_value", node.split_value},
            {"left", node_to_json(tree, node.left)},
            {"right", node_to_json(tree, node.right)}};
}

inline std::uint32_t node_from_json(const nlohmann::json& j, std::size_t dim, std::size_t depth,
                                    IsolationTree& tree) {
    if (!j.is_object()) throw PersistenceError("tree node is not an object");
    if (depth > 64) throw PersistenceError("tree is implausibly deep");
    const auto id = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (j.contains("size")) {
        tree.nodes[id].size = j.at("size").get<std::size_t>();
        return id;
    }
    const int split_dim = j.at("split_dim").get<int>();
    if (split_dim < 0 || static_cast<std::size_t>(split_dim) >= dim)
        throw PersistenceError("split_dim out of range: " + std::to_string(split_dim));
    const double split_value = j.at("split_value").get<double>();
    const std::uint32_t left = node_from_json(j.at("left"), dim, depth + 1, tree);
    const std::uint32_t right = node_from_json(j.at("right"), dim, depth + 1, tree);
    IsolationTree::Node& node = tree.nodes[id];
    node.split_dim = split_dim;
    node.split_value = split_value;
    node.left = left;
    node.right = right;
    return id;
}

}  // namespace detail

inline std::string persist(const OodModel& model) {
    nlohmann::json trees = nlohmann::json::array();
    for (const IsolationTree& tree : model.trees) trees.push_back(detail::node_to_json(tree, 0));
    const nlohmann::json doc = {
        {"format_version", OodModel::kFormatVersion},
        {"t", model.trees.size()},
        {"psi", model.psi},
        {"c_psi", model.c_psi},
        {"dim", model.dim},
        {"seed", model.seed},
        {"trees", std::move(trees)},
        {"sorted_scores", model.sorted_scores},
    };
    return doc.dump() + "\n";
}

inline OodModel load_model(std::string_view bytes) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::exception& e) {
        throw PersistenceError(std::string("malformed model document: ") + e.what());
    }
    try {
        if (!doc.is_object()) throw PersistenceError("model document is not an object");
        const int version = doc.at("format_version").get<int>();
        if (version != OodModel::kFormatVersion)
            throw PersistenceError("unsupported format_version " + std::to_string(version) +
                                   " (supported: " + std::to_string(OodModel::kFormatVersion) + ")");
        OodModel model;
        model.psi = doc.at("psi").get<std::size_t>();
        model.c_psi = doc.at("c_psi").get<double>();
        model.dim = doc.at("dim").get<std::size_t>();
        model.seed = doc.at("seed").get<std::uint64_t>();
        model.sorted_scores = doc.at("sorted_scores").get<std::vector<double>>();
        const auto& trees = doc.at("trees");
        if (!trees.is_array() || trees.size() != doc.at("t").get<std::size_t>())
            throw PersistenceError("tree count does not match t");
        if (model.dim == 0 || trees.empty() || !(model.c_psi > 0.0))
            throw PersistenceError("model header is degenerate");
        if (model.sorted_scores.empty() ||
            !std::is_sorted(model.sorted_scores.begin(), model.sorted_scores.end()) ||
            model.sorted_scores.front() < -1.0 || model.sorted_scores.back() >= 0.0)
            throw PersistenceError("sorted_scores must be nondecreasing within [-1, 0)");
        for (const auto& node : trees) {
            IsolationTree tree;
            detail::node_from_json(node, model.dim, 0, tree);
            model.trees.push_back(std::move(tree));
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw PersistenceError(std::string("invalid model document: ") + e.what());
    }
}

inline void save_model_file(const OodModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PersistenceError("cannot open " + path + " for writing");
    out << persist(model);
    if (!out) throw PersistenceError("failed writing " + path);
}

inline OodModel load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PersistenceError("cannot open model file " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return load_model(buffer.str());
}

}  // namespace continuity
