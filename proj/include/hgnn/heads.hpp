#pragma once

// Relation pooling over subtype source sets, per-subtype linear heads, and the
// averaged joint cross-entropy.

#include <span>
#include <vector>

#include "hgnn/errors.hpp"
#include "hgnn/numgrad.hpp"
#include "hgnn/taxonomy.hpp"

namespace hgnn {

using numgrad::Index;
using numgrad::Mat;
using numgrad::Tape;
using numgrad::Var;

/// Linear classifier for one subtype: logits = f * weight + bias.
template <class T>
struct HeadParams {
    int subtype = 0;
    Mat<T> weight;  // d x C
    Mat<T> bias;    // 1 x C
};

/// Mean of the final-layer input-node rows selected by one subtype's source set.
template <class T>
Var<T> relation_pool(const Var<T>& g_last, const std::vector<int>& members) {
    return numgrad::mean_rows(g_last, std::vector<Index>(members.begin(), members.end()));
}

template <class T>
std::vector<Var<T>> relation_pool(const Var<T>& g_last, const RelationMap& relations, std::span<const int> subtypes) {
    std::vector<Var<T>> out;
    out.reserve(subtypes.size());
    for (int k : subtypes) out.push_back(relation_pool(g_last, relations.members.at(static_cast<std::size_t>(k))));
    return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <class T>
int argmax_lowest(const Mat<T>& row) {
    int best = 0;
    for (Index c = 1; c < row.cols(); ++c)
        if (row(0, c) > row(0, best)) best = static_cast<int>(c);
    return best;
}

template <class T>
Var<T> classify(const Var<T>& pooled, const Var<T>& weight, const Var<T>& bias) {
    return numgrad::add_row(numgrad::matmul(pooled, weight), bias);
}

template <class T>
struct JointLoss {
    Var<T> total;
    std::vector<Var<T>> per_subtype;
};

/// Unweighted mean of the per-subtype cross-entropies.
template <class T>
JointLoss<T> joint_loss(std::span<const Var<T>> logits, std::span<const int> labels) {
    if (logits.size() != labels.size())
        throw ContractError("joint_loss: " + std::to_string(logits.size()) + " heads but " +
                            std::to_string(labels.size()) + " labels");
    JointLoss<T> out;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        if (labels[k] < 0) throw ContractError("joint_loss: missing label for head " + std::to_string(k));
        out.per_subtype.push_back(numgrad::cross_entropy_logits(logits[k], labels[k]));
    }
    out.total = numgrad::mean_of<T>(out.per_subtype);
    return out;
}

/// One head's output for one village.
struct Prediction {
    int subtype = 0;
    std::vector<double> logits;
    int predicted = 0;
    std::vector<double> pooled;

    double pooled_norm() const {
        double s = 0;
        for (double x : pooled) s += x * x;
        return std::sqrt(s);
    }
};

} // namespace hgnn
