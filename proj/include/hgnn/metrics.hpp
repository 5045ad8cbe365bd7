#pragma once

#include <vector>

#include "hgnn/errors.hpp"
#include "hgnn/taxonomy.hpp"

namespace hgnn {

struct SubtypeMetrics {
    int subtype = 0;
    double accuracy = 0;
    double macro_f1 = 0;
    std::vector<std::vector<long>> confusion;  // [truth][predicted]
};

struct GroupMetrics {
    SubtypeGroup group = SubtypeGroup::S;
    double accuracy = 0;
    double macro_f1 = 0;
    int members = 0;
};

struct MetricsReport {
    std::vector<SubtypeMetrics> subtypes;
    std::vector<GroupMetrics> groups;  // groups with at least one evaluated subtype
    double accuracy = 0;
    double macro_f1 = 0;

    const SubtypeMetrics* find(int subtype) const {
        for (const auto& s : subtypes)
            if (s.subtype == subtype) return &s;
        return nullptr;
    }
};

/// Macro-F1: unweighted mean of per-class F1; a class that is neither present
/// nor predicted scores 0.
inline SubtypeMetrics score_subtype(int subtype, int num_classes, const std::vector<int>& truth,
                                    const std::vector<int>& predicted) {
    if (truth.size() != predicted.size()) throw ContractError("score_subtype: length mismatch");
    SubtypeMetrics m;
    m.subtype = subtype;
    m.confusion.assign(static_cast<std::size_t>(num_classes), std::vector<long>(static_cast<std::size_t>(num_classes), 0));
    long correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes)
            throw ContractError("score_subtype: class index out of range");
        ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
        if (truth[i] == predicted[i]) ++correct;
    }
    m.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
    double f1_sum = 0;
    for (int c = 0; c < num_classes; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        long tp = m.confusion[cu][cu], fp = 0, fn = 0;
        for (int o = 0; o < num_classes; ++o) {
            if (o == c) continue;
            fp += m.confusion[static_cast<std::size_t>(o)][cu];
            fn += m.confusion[cu][static_cast<std::size_t>(o)];
        }
        const long denom = 2 * tp + fp + fn;
        f1_sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    m.macro_f1 = f1_sum / num_classes;
    return m;
}

/// Group and overall means over the per-subtype scores (in subtype order).
inline MetricsReport aggregate(std::vector<SubtypeMetrics> per_subtype, const Schema& schema) {
    MetricsReport r;
    r.subtypes = std::move(per_subtype);
    for (SubtypeGroup g : kGroupOrder) {
        GroupMetrics gm;
        gm.group = g;
        for (const auto& s : r.subtypes)
            if (schema.subtypes[static_cast<std::size_t>(s.subtype)].group == g) {
                gm.accuracy += s.accuracy;
                gm.macro_f1 += s.macro_f1;
                ++gm.members;
            }
        if (gm.members == 0) continue;
        gm.accuracy /= gm.members;
        gm.macro_f1 /= gm.members;
        r.groups.push_back(gm);
    }
    for (const auto& s : r.subtypes) {
        r.accuracy += s.accuracy;
        r.macro_f1 += s.macro_f1;
    }
    if (!r.subtypes.empty()) {
        r.accuracy /= static_cast<double>(r.subtypes.size());
        r.macro_f1 /= static_cast<double>(r.subtypes.size());
    }
    return r;
}

inline Json to_json(const MetricsReport& r, const Schema& schema) {
    Json j;
    Json subs = Json::array();
    for (const auto& s : r.subtypes) {
        Json e;
        e["subtype"] = schema.subtypes[static_cast<std::size_t>(s.subtype)].key;
        e["accuracy"] = s.accuracy;
        e["macro_f1"] = s.macro_f1;
        e["confusion"] = s.confusion;
        subs.push_back(std::move(e));
    }
    j["subtypes"] = std::move(subs);
    Json groups = Json::object();
    for (const auto& g : r.groups) groups[std::string(group_name(g.group))] = {{"accuracy", g.accuracy}, {"macro_f1", g.macro_f1}};
    j["groups"] = std::move(groups);
    j["overall"] = {{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}};
    return j;
}

} // namespace hgnn
