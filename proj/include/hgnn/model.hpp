#pragma once

// Hierarchical graph network: input nodes (one per source) and communication
// nodes (one per category). Each layer propagates over the self-looped
// bipartite input graph with a GCN step, lets communication nodes attend to
// each other, and blends the two communication updates with a fixed beta.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hgnn/dataio.hpp"
#include "hgnn/errors.hpp"
#include "hgnn/heads.hpp"
#include "hgnn/numgrad.hpp"
#include "hgnn/taxonomy.hpp"

namespace hgnn {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kCommInitStd = 0.02;

enum class CommEdgeMode { gat, gcn };
enum class InitMode { random, mean };
enum class ExpansionMode { affine, tile };

struct ModelConfig {
    int d = kDefaultEmbeddingDim;
    int layers = 3;
    double beta = 0.6;
    CommEdgeMode comm_edges = CommEdgeMode::gat;
    InitMode init = InitMode::random;
    ExpansionMode expansion = ExpansionMode::affine;

    bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
    if (c.d < 1) throw SchemaError("model.d: must be >= 1");
    if (c.layers < 1) throw SchemaError("model.layers: must be >= 1");
    if (!(c.beta >= 0.0 && c.beta <= 1.0)) throw SchemaError("model.beta: must lie in [0,1]");
}

template <class T>
struct AffineParams {
    Mat<T> weight;  // input_dim x d
    Mat<T> bias;    // 1 x d
};

template <class T>
struct LayerParams {
    Mat<T> w_in;  // d x d, GCN transform
    Mat<T> attn;  // 2d x 1, attention vector (absent when comm edges are GCN)
    Mat<T> w_ex;  // d x d, message transform among communication nodes
};

template <class T>
struct ModelParams {
    std::vector<std::optional<AffineParams<T>>> expansion;  // per source; set for facts in affine mode
    std::vector<LayerParams<T>> layers;
    Mat<T> comm_init;  // M x d, random init mode only
    std::vector<HeadParams<T>> heads;

    /// Visits every tensor in registry order as (name, group, matrix).
    template <class Self, class F>
    static void visit(Self& self, const Schema& schema, F&& f) {
        for (std::size_t i = 0; i < self.expansion.size(); ++i) {
            if (!self.expansion[i]) continue;
            const std::string base = "expansion." + schema.graph.sources[i].id;
            f(base + ".weight", "expansion", self.expansion[i]->weight);
            f(base + ".bias", "expansion", self.expansion[i]->bias);
        }
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            const std::string base = "layer" + std::to_string(l);
            f(base + ".w_in", "w_in", self.layers[l].w_in);
            if (self.layers[l].attn.size() > 0) f(base + ".attn", "attn", self.layers[l].attn);
            f(base + ".w_ex", "w_ex", self.layers[l].w_ex);
        }
        if (self.comm_init.size() > 0) f(std::string("comm.h0"), "comm_init", self.comm_init);
        for (auto& h : self.heads) {
            const std::string base = "head." + schema.subtypes[static_cast<std::size_t>(h.subtype)].key;
            f(base + ".weight", "heads", h.weight);
            f(base + ".bias", "heads", h.bias);
        }
    }

    template <class F>
    void for_each(const Schema& schema, F&& f) {
        visit(*this, schema, std::forward<F>(f));
    }
    template <class F>
    void for_each(const Schema& schema, F&& f) const {
        visit(*this, schema, std::forward<F>(f));
    }
};

/// Square self-looped bipartite adjacency over [inputs; communication nodes],
/// symmetrically normalized: D^-1/2 [[I, A], [A^T, I]] D^-1/2.
template <class T>
Mat<T> normalize_adjacency(const Mat<T>& a_in) {
    const Index n = a_in.rows();
    const Index m = a_in.cols();
    Mat<T> a = Mat<T>::Identity(n + m, n + m);
    a.topRightCorner(n, m) = a_in;
    a.bottomLeftCorner(m, n) = a_in.transpose();
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_sqrt(n + m);
    for (Index i = 0; i < n + m; ++i) {
        const T deg = a.row(i).sum();
        if (!(deg > T(0))) throw ContractError("normalize_adjacency: zero-degree node " + std::to_string(i));
        inv_sqrt(i) = T(1) / std::sqrt(deg);
    }
    return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

/// Everything needed to run the network: registry, hyperparameters, active heads, weights.
template <class T>
struct Model {
    Schema schema;
    ModelConfig config;
    std::vector<int> subtypes;  // subtype indices with a head, in head order
    ModelParams<T> params;
    Mat<T> adjacency;  // normalized, (N+M) x (N+M)
};

/// Seeded initialization: uniform(+-1/sqrt(fan_in)) for affine maps and heads,
/// Xavier-uniform for the d x d transforms and attention vector, N(0, 0.02^2) for H0.
template <class T>
Model<T> make_model(const Schema& schema, const ModelConfig& config, std::vector<int> subtypes, std::uint64_t seed) {
    validate(config);
    if (auto emb = schema.embedding_dim(); emb && *emb != config.d)
        throw SchemaError("model.d: " + std::to_string(config.d) + " differs from embedding width " +
                          std::to_string(*emb));
    for (int k : subtypes)
        if (k < 0 || k >= schema.num_subtypes()) throw ContractError("make_model: unknown subtype index");
    if (subtypes.empty()) throw ContractError("make_model: no active subtypes");

    Model<T> model{schema, config, std::move(subtypes), {}, {}};
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](Index r, Index c, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        Mat<T> m(r, c);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
        return m;
    };
    const Index d = config.d;
    const auto& sources = schema.graph.sources;
    auto& p = model.params;
    p.expansion.resize(sources.size());
    if (config.expansion == ExpansionMode::affine)
        for (std::size_t i = 0; i < sources.size(); ++i) {
            if (!sources[i].is_fact()) continue;
            const double bound = 1.0 / std::sqrt(static_cast<double>(sources[i].input_dim));
            AffineParams<T> a;
            a.weight = uniform(sources[i].input_dim, d, bound);
            a.bias = uniform(1, d, bound);
            p.expansion[i] = std::move(a);
        }
    const double xavier_dd = std::sqrt(6.0 / static_cast<double>(2 * d));
    const double xavier_attn = std::sqrt(6.0 / static_cast<double>(2 * d + 1));
    for (int l = 0; l < config.layers; ++l) {
        LayerParams<T> lp;
        lp.w_in = uniform(d, d, xavier_dd);
        if (config.comm_edges == CommEdgeMode::gat) lp.attn = uniform(2 * d, 1, xavier_attn);
        lp.w_ex = uniform(d, d, xavier_dd);
        p.layers.push_back(std::move(lp));
    }
    if (config.init == InitMode::random) {
        std::normal_distribution<double> g(0.0, kCommInitStd);
        p.comm_init.resize(schema.graph.num_comm(), d);
        for (Index i = 0; i < p.comm_init.size(); ++i) p.comm_init.data()[i] = static_cast<T>(g(rng));
    }
    const double head_bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (int k : model.subtypes) {
        const int c = schema.subtypes[static_cast<std::size_t>(k)].num_classes;
        HeadParams<T> h;
        h.subtype = k;
        h.weight = uniform(d, c, head_bound);
        h.bias = uniform(1, c, head_bound);
        p.heads.push_back(std::move(h));
    }
    model.adjacency = normalize_adjacency<T>(build_input_adjacency<T>(schema.graph));
    return model;
}

/// Parameters bound as leaves on one tape, in registry order.
template <class T>
struct BoundParams {
    std::vector<std::optional<std::pair<Var<T>, Var<T>>>> expansion;
    std::vector<Var<T>> w_in, attn, w_ex;
    std::optional<Var<T>> comm_init;
    std::vector<std::pair<Var<T>, Var<T>>> heads;
    std::vector<Var<T>> all;  // registry order
};

template <class T>
BoundParams<T> bind(Tape<T>& tape, const ModelParams<T>& p) {
    BoundParams<T> b;
    auto leaf = [&](const Mat<T>& m) {
        Var<T> v = tape.parameter(m);
        b.all.push_back(v);
        return v;
    };
    for (const auto& e : p.expansion) {
        if (!e) {
            b.expansion.emplace_back();
            continue;
        }
        Var<T> w = leaf(e->weight);
        Var<T> bias = leaf(e->bias);
        b.expansion.emplace_back(std::make_pair(w, bias));
    }
    for (const auto& l : p.layers) {
        b.w_in.push_back(leaf(l.w_in));
        b.attn.push_back(l.attn.size() > 0 ? leaf(l.attn) : Var<T>{});
        b.w_ex.push_back(leaf(l.w_ex));
    }
    if (p.comm_init.size() > 0) b.comm_init = leaf(p.comm_init);
    for (const auto& h : p.heads) {
        Var<T> w = leaf(h.weight);
        Var<T> bias = leaf(h.bias);
        b.heads.emplace_back(w, bias);
    }
    return b;
}

/// Replicates a fact across d columns, cycling through its components.
template <class T>
Mat<T> tile_fact(const Mat<T>& x, Index d) {
    Mat<T> out(1, d);
    for (Index c = 0; c < d; ++c) out(0, c) = x(0, c % x.cols());
    return out;
}

/// G0 (N x d): embeddings verbatim, facts through their expansion.
template <class T>
Var<T> expand_features(Tape<T>& tape, const Model<T>& model, const BoundParams<T>& bound,
                       const EncodedSample<T>& sample) {
    const auto& sources = model.schema.graph.sources;
    if (sample.inputs.size() != sources.size())
        throw ContractError("expand_features: sample has " + std::to_string(sample.inputs.size()) +
                            " inputs, roster has " + std::to_string(sources.size()));
    const Index d = model.config.d;
    std::vector<Var<T>> rows;
    rows.reserve(sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto& x = sample.inputs[i];
        if (x.rows() != 1 || x.cols() != sources[i].input_dim)
            throw DimensionError("expand_features: source '" + sources[i].id + "' value is " +
                                 numgrad::shape_str(x.rows(), x.cols()));
        if (!sources[i].is_fact()) {
            if (x.cols() != d) throw DimensionError("expand_features: embedding '" + sources[i].id + "' width differs from d");
            rows.push_back(tape.constant(x));
        } else if (model.config.expansion == ExpansionMode::tile) {
            rows.push_back(tape.constant(tile_fact(x, d)));
        } else {
            const auto& [w, b] = bound.expansion.at(i).value();
            rows.push_back(numgrad::add_row(numgrad::matmul(tape.constant(x), w), b));
        }
    }
    return numgrad::stack_rows<T>(rows);
}

/// H0 (M x d): the trainable random matrix, or the mean of each category's input rows.
template <class T>
Var<T> init_communication(const Model<T>& model, const BoundParams<T>& bound, const Var<T>& g0) {
    if (model.config.init == InitMode::random) {
        if (!bound.comm_init) throw ContractError("init_communication: model has no H0 parameter");
        return *bound.comm_init;
    }
    const auto& g = model.schema.graph;
    std::vector<Var<T>> rows;
    for (int j = 0; j < g.num_comm(); ++j) {
        std::vector<Index> members;
        for (int i = 0; i < g.num_inputs(); ++i)
            if (g.attachment[static_cast<std::size_t>(i)] == j) members.push_back(i);
        rows.push_back(numgrad::mean_rows(g0, std::move(members)));
    }
    return numgrad::stack_rows<T>(rows);
}

template <class T>
struct GcnOutput {
    Var<T> g_next;
    Var<T> h_in;
};

/// relu(A_norm [G; H] W), split back into input rows and communication rows.
template <class T>
GcnOutput<T> gcn_step(const Var<T>& g, const Var<T>& h, const Var<T>& adjacency, const Var<T>& w_in) {
    if (adjacency.rows() != g.rows() + h.rows() || adjacency.cols() != adjacency.rows())
        throw DimensionError("gcn_step: adjacency " + numgrad::shape_str(adjacency.rows(), adjacency.cols()) +
                             " does not match " + std::to_string(g.rows()) + "+" + std::to_string(h.rows()) +
                             " nodes");
    Var<T> stacked = numgrad::stack_rows<T>({g, h});
    Var<T> y = numgrad::relu(numgrad::matmul(numgrad::matmul(adjacency, stacked), w_in));
    return {numgrad::slice_rows(y, 0, g.rows()), numgrad::slice_rows(y, g.rows(), h.rows())};
}

template <class T>
struct CommOutput {
    Var<T> h_ex;
    Var<T> alpha;  // M x M
};

/// Attention over the complete self-looped communication graph:
/// e_ij = leaky_relu(a . [h_i || h_j]), alpha = row softmax, h'_i = relu(sum_j alpha_ij h_j W_ex).
template <class T>
CommOutput<T> gat_step(const Var<T>& h, const Var<T>& attn, const Var<T>& w_ex) {
    const Index m = h.rows();
    if (attn.rows() != 2 * h.cols() || attn.cols() != 1)
        throw DimensionError("gat_step: attention vector " + numgrad::shape_str(attn.rows(), attn.cols()) +
                             " for width " + std::to_string(h.cols()));
    std::vector<Index> left, right;
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j) {
            left.push_back(i);
            right.push_back(j);
        }
    Var<T> pairs = numgrad::concat_cols(numgrad::gather_rows(h, std::move(left)), numgrad::gather_rows(h, std::move(right)));
    Var<T> scores = numgrad::reshape(numgrad::matmul(pairs, attn), m, m);
    Var<T> alpha = numgrad::softmax_rows(numgrad::leaky_relu(scores, static_cast<T>(kLeakySlope)));
    Var<T> out = numgrad::relu(numgrad::matmul(alpha, numgrad::matmul(h, w_ex)));
    return {out, alpha};
}

/// Ablation: communication edges as a plain GCN with attention frozen at 1/M.
template <class T>
CommOutput<T> comm_edges_gcn_variant(const Var<T>& h, const Var<T>& w_ex) {
    const Index m = h.rows();
    Var<T> alpha = h.tape()->constant(Mat<T>::Constant(m, m, T(1) / static_cast<T>(m)));
    Var<T> out = numgrad::relu(numgrad::matmul(alpha, numgrad::matmul(h, w_ex)));
    return {out, alpha};
}

template <class T>
Var<T> fuse(const Var<T>& h_in, const Var<T>& h_ex, double beta) {
    return numgrad::affine_combine(h_in, h_ex, static_cast<T>(beta));
}

template <class T>
struct ForwardTrace {
    std::vector<Var<T>> g_layers;  // L+1, N x d
    std::vector<Var<T>> h_layers;  // L+1, M x d
    std::vector<Var<T>> h_in;      // L, GCN-propagated communication rows
    std::vector<Var<T>> h_ex;      // L, attention-propagated communication rows
    std::vector<Var<T>> attn;      // L, M x M
    Var<T> adjacency;

    const Var<T>& g_last() const { return g_layers.back(); }
};

/// expand -> init -> L x (gcn_step -> gat_step -> fuse).
template <class T>
ForwardTrace<T> forward(Tape<T>& tape, const Model<T>& model, const BoundParams<T>& bound,
                        const EncodedSample<T>& sample) {
    ForwardTrace<T> tr;
    tr.adjacency = tape.constant(model.adjacency);
    Var<T> g = expand_features(tape, model, bound, sample);
    Var<T> h = init_communication(model, bound, g);
    tr.g_layers.push_back(g);
    tr.h_layers.push_back(h);
    for (int l = 0; l < model.config.layers; ++l) {
        auto [g_next, h_in] = gcn_step(g, h, tr.adjacency, bound.w_in[static_cast<std::size_t>(l)]);
        CommOutput<T> comm = model.config.comm_edges == CommEdgeMode::gat
                                 ? gat_step(h_in, bound.attn[static_cast<std::size_t>(l)], bound.w_ex[static_cast<std::size_t>(l)])
                                 : comm_edges_gcn_variant(h_in, bound.w_ex[static_cast<std::size_t>(l)]);
        h = fuse(h_in, comm.h_ex, model.config.beta);
        g = g_next;
        tr.g_layers.push_back(g);
        tr.h_layers.push_back(h);
        tr.h_in.push_back(h_in);
        tr.h_ex.push_back(comm.h_ex);
        tr.attn.push_back(comm.alpha);
    }
    return tr;
}

template <class T>
struct HeadOutputs {
    std::vector<Var<T>> pooled;
    std::vector<Var<T>> logits;
};

/// Pools G^(L) per active subtype and applies each head.
template <class T>
HeadOutputs<T> apply_heads(const Model<T>& model, const BoundParams<T>& bound, const ForwardTrace<T>& tr) {
    HeadOutputs<T> out;
    for (std::size_t h = 0; h < model.subtypes.size(); ++h) {
        const auto k = static_cast<std::size_t>(model.subtypes[h]);
        Var<T> f = relation_pool(tr.g_last(), model.schema.relations.members[k]);
        out.pooled.push_back(f);
        out.logits.push_back(classify(f, bound.heads[h].first, bound.heads[h].second));
    }
    return out;
}

/// Inference for one village; one Prediction per active head.
template <class T>
std::vector<Prediction> predict(const Model<T>& model, const EncodedSample<T>& sample) {
    Tape<T> tape;
    auto bound = bind(tape, model.params);
    auto tr = forward(tape, model, bound, sample);
    auto heads = apply_heads(model, bound, tr);
    std::vector<Prediction> out;
    for (std::size_t h = 0; h < model.subtypes.size(); ++h) {
        Prediction p;
        p.subtype = model.subtypes[h];
        const auto& z = heads.logits[h].value();
        p.logits.assign(z.data(), z.data() + z.size());
        p.predicted = argmax_lowest(z);
        const auto& f = heads.pooled[h].value();
        p.pooled.assign(f.data(), f.data() + f.size());
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace hgnn
