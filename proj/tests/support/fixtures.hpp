#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hgnn/trainer.hpp"

namespace hgnn_test {

using namespace hgnn;

/// Six sources on three hubs (Image, Geography, Society) and one subtype per group.
inline Json tiny_schema_doc(int d) {
    return Json::parse(R"({
      "schema_version": 1,
      "sources": [
        {"id": "img_a", "category": "Image", "kind": "embedding", "input_dim": )" + std::to_string(d) + R"(},
        {"id": "img_b", "category": "Image", "kind": "embedding", "input_dim": )" + std::to_string(d) + R"(},
        {"id": "geo_x", "category": "Geography", "kind": "scalar_fact", "input_dim": 1},
        {"id": "geo_v", "category": "Geography", "kind": "vector_fact", "input_dim": 2},
        {"id": "soc_y", "category": "Society", "kind": "scalar_fact", "input_dim": 1},
        {"id": "soc_c", "category": "Society", "kind": "vector_fact", "input_dim": 3, "encoding": "one_hot"}
      ],
      "subtypes": [
        {"key": "S1", "group": "S", "num_classes": 3, "class_names": ["a", "b", "c"]},
        {"key": "V1", "group": "V", "num_classes": 2, "class_names": ["a", "b"]},
        {"key": "R1", "group": "R", "num_classes": 4, "class_names": ["a", "b", "c", "d"]}
      ],
      "relation_map": {"S1": ["geo_x", "geo_v"], "V1": ["soc_y", "soc_c"], "R1": ["geo_x", "soc_y", "soc_c"]}
    })");
}

inline Schema tiny_schema(int d) { return load_schema(tiny_schema_doc(d), d); }

inline std::vector<int> all_subtypes(const Schema& s) {
    std::vector<int> v(static_cast<std::size_t>(s.num_subtypes()));
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<int>(k);
    return v;
}

/// A random valid registry with at most `max_inputs` sources and `max_comm` hubs.
inline Schema random_schema(std::mt19937_64& rng, int d, int max_inputs = 8, int max_comm = 4) {
    std::uniform_int_distribution<int> coin(0, 1);
    std::vector<Category> cats;
    while (cats.empty() || std::all_of(cats.begin(), cats.end(), [](Category c) {
               return c == Category::image || c == Category::text;
           })) {
        cats.clear();
        std::vector<Category> pool(kCategoryOrder.begin(), kCategoryOrder.end());
        std::shuffle(pool.begin(), pool.end(), rng);
        const int m = std::uniform_int_distribution<int>(1, max_comm)(rng);
        pool.resize(static_cast<std::size_t>(m));
        for (Category c : kCategoryOrder)
            if (std::find(pool.begin(), pool.end(), c) != pool.end()) cats.push_back(c);
    }
    const int n = std::uniform_int_distribution<int>(static_cast<int>(cats.size()), max_inputs)(rng);
    Schema s;
    for (int i = 0; i < n; ++i) {
        const Category c = i < static_cast<int>(cats.size())
                               ? cats[static_cast<std::size_t>(i)]
                               : cats[std::uniform_int_distribution<std::size_t>(0, cats.size() - 1)(rng)];
        SourceDescriptor src;
        src.id = "src" + std::to_string(i);
        src.category = c;
        const int kind = (c == Category::image || c == Category::text) ? 0 : std::uniform_int_distribution<int>(0, 3)(rng);
        switch (kind) {
        case 0: src.kind = SourceKind::embedding; src.input_dim = d; break;
        case 1: src.kind = SourceKind::scalar_fact; src.input_dim = 1; break;
        case 2: src.kind = SourceKind::vector_fact; src.input_dim = std::uniform_int_distribution<int>(2, 3)(rng); break;
        default:
            src.kind = SourceKind::vector_fact;
            src.encoding = FactEncoding::one_hot;
            src.input_dim = std::uniform_int_distribution<int>(2, 4)(rng);
        }
        s.graph.sources.push_back(src);
    }
    std::shuffle(s.graph.sources.begin(), s.graph.sources.end(), rng);
    attach_sources(s.graph);
    std::vector<int> eligible;
    for (int i = 0; i < n; ++i) {
        const Category c = s.graph.sources[static_cast<std::size_t>(i)].category;
        if (c != Category::image && c != Category::text) eligible.push_back(i);
    }
    const int k = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int t = 0; t < k; ++t) {
        SubtypeDescriptor st;
        st.group = kGroupOrder[static_cast<std::size_t>(t % 3)];
        st.key = std::string(group_name(st.group)) + std::to_string(t + 1);
        st.num_classes = std::uniform_int_distribution<int>(2, 4)(rng);
        s.subtypes.push_back(st);
        std::vector<int> members;
        for (int i : eligible)
            if (coin(rng)) members.push_back(i);
        if (members.empty()) members.push_back(eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)]);
        s.relations.members.push_back(members);
    }
    validate(s);
    return s;
}

template <class T>
EncodedSample<T> random_sample(const Schema& schema, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    EncodedSample<T> out;
    for (const auto& src : schema.graph.sources) {
        Mat<T> row = Mat<T>::Zero(1, src.input_dim);
        if (src.encoding == FactEncoding::one_hot && src.is_fact())
            row(0, std::uniform_int_distribution<int>(0, src.input_dim - 1)(rng)) = T(1);
        else
            for (Index c = 0; c < row.cols(); ++c) row(0, c) = static_cast<T>(g(rng));
        out.inputs.push_back(row);
    }
    for (const auto& st : schema.subtypes) out.labels.push_back(std::uniform_int_distribution<int>(0, st.num_classes - 1)(rng));
    return out;
}

/// Fills every parameter tensor with N(0, sd^2) so attention and relu paths are all active.
template <class T>
void randomize(Model<T>& model, std::mt19937_64& rng, double sd = 0.5) {
    std::normal_distribution<double> g(0.0, sd);
    model.params.for_each(model.schema, [&](const std::string&, const char*, Mat<T>& m) {
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(g(rng));
    });
}

/// |a - n| / max(|a|, |n|, 1e-6)
inline double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Largest relative error of a tape gradient against central differences,
/// for a scalar function of a list of input matrices.
template <class F>
double op_gradient_error(std::vector<Mat<double>> inputs, F&& fn, double eps = 1e-5) {
    auto eval = [&](const std::vector<Mat<double>>& xs) {
        numgrad::Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& x : xs) vars.push_back(tape.parameter(x));
        return fn(tape, vars).value()(0, 0);
    };
    numgrad::Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.parameter(x));
    tape.backward(fn(tape, vars));
    double worst = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Mat<double> analytic = tape.grad_or_zero(vars[k]);
        for (Index i = 0; i < inputs[k].size(); ++i) {
            const double x0 = inputs[k].data()[i];
            inputs[k].data()[i] = x0 + eps;
            const double up = eval(inputs);
            inputs[k].data()[i] = x0 - eps;
            const double down = eval(inputs);
            inputs[k].data()[i] = x0;
            worst = std::max(worst, rel_error(analytic.data()[i], (up - down) / (2 * eps)));
        }
    }
    return worst;
}

/// A random linear functional of a matrix-valued op, so every output entry matters.
inline Var<double> project(const Var<double>& out, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Mat<double> w(out.rows() * out.cols(), 1);
    for (Index i = 0; i < w.size(); ++i) w(i, 0) = g(rng);
    return numgrad::sum(numgrad::matmul(numgrad::reshape(out, 1, out.rows() * out.cols()), out.tape()->constant(w)));
}

/// Loss used for whole-model gradient checks: the joint loss plus a random
/// functional of the last communication features, so the final layer's
/// attention parameters also receive gradient.
template <class T>
Var<T> probe_loss(Tape<T>& tape, const Model<T>& model, const BoundParams<T>& bound, const EncodedSample<T>& sample) {
    auto tr = forward(tape, model, bound, sample);
    auto heads = apply_heads(model, bound, tr);
    std::vector<int> labels;
    for (int k : model.subtypes) labels.push_back(sample.labels[static_cast<std::size_t>(k)]);
    auto joint = joint_loss<T>(heads.logits, labels);
    return numgrad::add(joint.total, project(tr.h_layers.back()));
}

struct GradientReport {
    std::map<std::string, double> by_group;  // worst relative error per parameter group
    double worst = 0;
    std::size_t checked = 0;
};

/// Central-difference check of every parameter entry of a 64-bit model.
/// `loss(tape, model, bound)` must return a scalar.
template <class LossFn>
GradientReport model_gradient_check(Model<double>& model, LossFn&& loss, double eps = 1e-5) {
    std::vector<Mat<double>> analytic;
    {
        Tape<double> tape;
        auto bound = bind(tape, model.params);
        tape.backward(loss(tape, model, bound));
        for (const auto& v : bound.all) analytic.push_back(tape.grad_or_zero(v));
    }
    auto eval = [&] {
        Tape<double> tape;
        auto bound = bind(tape, model.params);
        return loss(tape, model, bound).value()(0, 0);
    };
    GradientReport report;
    std::size_t t = 0;
    model.params.for_each(model.schema, [&](const std::string&, const char* group, Mat<double>& m) {
        double& worst = report.by_group[group];
        for (Index i = 0; i < m.size(); ++i) {
            const double x0 = m.data()[i];
            m.data()[i] = x0 + eps;
            const double up = eval();
            m.data()[i] = x0 - eps;
            const double down = eval();
            m.data()[i] = x0;
            worst = std::max(worst, rel_error(analytic[t].data()[i], (up - down) / (2 * eps)));
            ++report.checked;
        }
        report.worst = std::max(report.worst, worst);
        ++t;
    });
    return report;
}

} // namespace hgnn_test
