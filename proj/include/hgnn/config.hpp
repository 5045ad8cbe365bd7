#pragma once

// The run configuration document: registry sections plus `model` and
// `training`. Anything absent falls back to the built-in defaults.

#include <cstdint>
#include <cstdio>
#include <set>
#include <string>

#include "hgnn/errors.hpp"
#include "hgnn/model.hpp"
#include "hgnn/optim.hpp"
#include "hgnn/taxonomy.hpp"

namespace hgnn {

enum class Strategy { split, group, overall };
enum class Precision { f32, f64 };

struct TrainConfig {
    ModelConfig model;
    AdamWOptions adamw;  // adamw.lr is the learning rate
    int epochs = 20;
    std::uint64_t seed = 0;
    double split_ratio = 0.8;
    Strategy strategy = Strategy::overall;
    Precision precision = Precision::f32;

    bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
    Schema schema = default_schema();
    TrainConfig train;
};

inline std::string_view strategy_name(Strategy s) {
    switch (s) {
    case Strategy::split: return "split";
    case Strategy::group: return "group";
    case Strategy::overall: return "overall";
    }
    return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
    for (Strategy v : {Strategy::split, Strategy::group, Strategy::overall})
        if (strategy_name(v) == s) return v;
    return std::nullopt;
}

inline std::string_view comm_edges_name(CommEdgeMode m) { return m == CommEdgeMode::gat ? "gat" : "gcn"; }
inline std::string_view init_name(InitMode m) { return m == InitMode::random ? "random" : "mean"; }
inline std::string_view expansion_name(ExpansionMode m) { return m == ExpansionMode::affine ? "affine" : "tile"; }
inline std::string_view precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

namespace detail {

inline void reject_unknown(const Json& obj, const std::set<std::string>& allowed, const std::string& path) {
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key)) throw SchemaError(path + "." + key + ": unknown key");
}

inline double get_number(const Json& obj, const char* key, const std::string& path, double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number()) throw SchemaError(path + "." + key + ": expected number");
    return obj[key].get<double>();
}

inline std::string get_enum(const Json& obj, const char* key, const std::string& path, std::string_view fallback) {
    if (!obj.contains(key)) return std::string(fallback);
    if (!obj[key].is_string()) throw SchemaError(path + "." + key + ": expected string");
    return obj[key].get<std::string>();
}

inline int get_int(const Json& obj, const char* key, const std::string& path, int fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer()) throw SchemaError(path + "." + key + ": expected integer");
    return obj[key].get<int>();
}

} // namespace detail

inline ModelConfig parse_model_config(const Json& j, ModelConfig c = {}) {
    const std::string path = "model";
    if (!j.is_object()) throw SchemaError("model: expected object");
    detail::reject_unknown(j, {"d", "layers", "beta", "comm_edges", "init", "expansion"}, path);
    c.d = detail::get_int(j, "d", path, c.d);
    c.layers = detail::get_int(j, "layers", path, c.layers);
    c.beta = detail::get_number(j, "beta", path, c.beta);
    const auto edges = detail::get_enum(j, "comm_edges", path, comm_edges_name(c.comm_edges));
    if (edges == "gat") c.comm_edges = CommEdgeMode::gat;
    else if (edges == "gcn") c.comm_edges = CommEdgeMode::gcn;
    else throw SchemaError("model.comm_edges: expected gat or gcn");
    const auto init = detail::get_enum(j, "init", path, init_name(c.init));
    if (init == "random") c.init = InitMode::random;
    else if (init == "mean") c.init = InitMode::mean;
    else throw SchemaError("model.init: expected random or mean");
    const auto exp = detail::get_enum(j, "expansion", path, expansion_name(c.expansion));
    if (exp == "affine") c.expansion = ExpansionMode::affine;
    else if (exp == "tile") c.expansion = ExpansionMode::tile;
    else throw SchemaError("model.expansion: expected affine or tile");
    validate(c);
    return c;
}

inline void validate(const TrainConfig& t) {
    validate(t.model);
    if (!(t.adamw.lr > 0.0)) throw SchemaError("training.learning_rate: must be > 0");
    if (t.epochs < 0) throw SchemaError("training.epochs: must be >= 0");
    if (!(t.split_ratio > 0.0 && t.split_ratio < 1.0)) throw SchemaError("training.split_ratio: must lie in (0,1)");
    if (!(t.adamw.beta1 >= 0.0 && t.adamw.beta1 < 1.0) || !(t.adamw.beta2 >= 0.0 && t.adamw.beta2 < 1.0))
        throw SchemaError("training.betas: must lie in [0,1)");
    if (!(t.adamw.eps > 0.0)) throw SchemaError("training.eps: must be > 0");
    if (!(t.adamw.weight_decay >= 0.0)) throw SchemaError("training.weight_decay: must be >= 0");
}

inline TrainConfig parse_training_config(const Json& j, TrainConfig t = {}) {
    const std::string path = "training";
    if (!j.is_object()) throw SchemaError("training: expected object");
    detail::reject_unknown(j, {"learning_rate", "epochs", "seed", "split_ratio", "strategy", "precision", "beta1",
                               "beta2", "eps", "weight_decay"},
                           path);
    t.adamw.lr = detail::get_number(j, "learning_rate", path, t.adamw.lr);
    t.adamw.beta1 = detail::get_number(j, "beta1", path, t.adamw.beta1);
    t.adamw.beta2 = detail::get_number(j, "beta2", path, t.adamw.beta2);
    t.adamw.eps = detail::get_number(j, "eps", path, t.adamw.eps);
    t.adamw.weight_decay = detail::get_number(j, "weight_decay", path, t.adamw.weight_decay);
    t.epochs = detail::get_int(j, "epochs", path, t.epochs);
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0))
            throw SchemaError("training.seed: expected non-negative integer");
        t.seed = j["seed"].get<std::uint64_t>();
    }
    t.split_ratio = detail::get_number(j, "split_ratio", path, t.split_ratio);
    const auto strat = detail::get_enum(j, "strategy", path, strategy_name(t.strategy));
    auto s = parse_strategy(strat);
    if (!s) throw SchemaError("training.strategy: expected split, group or overall");
    t.strategy = *s;
    const auto prec = detail::get_enum(j, "precision", path, precision_name(t.precision));
    if (prec == "f32") t.precision = Precision::f32;
    else if (prec == "f64") t.precision = Precision::f64;
    else throw SchemaError("training.precision: expected f32 or f64");
    validate(t);
    return t;
}

/// Parses a full document over the built-in defaults.
inline RunConfig load_config(const Json& doc) {
    if (!doc.is_object()) throw SchemaError("$: expected an object");
    detail::reject_unknown(doc,
                           {"schema_version", "sources", "communication_nodes", "subtypes", "relation_map", "model",
                            "training"},
                           "$");
    RunConfig rc;
    if (doc.contains("model")) rc.train.model = parse_model_config(doc["model"]);
    if (doc.contains("training")) rc.train = parse_training_config(doc["training"], rc.train);
    rc.schema = load_schema(doc, rc.train.model.d);
    if (auto emb = rc.schema.embedding_dim(); emb && *emb != rc.train.model.d)
        throw SchemaError("model.d: " + std::to_string(rc.train.model.d) + " differs from embedding input_dim " +
                          std::to_string(*emb));
    return rc;
}

inline Json to_json(const ModelConfig& c) {
    Json j;
    j["d"] = c.d;
    j["layers"] = c.layers;
    j["beta"] = c.beta;
    j["comm_edges"] = comm_edges_name(c.comm_edges);
    j["init"] = init_name(c.init);
    j["expansion"] = expansion_name(c.expansion);
    return j;
}

inline Json to_json(const TrainConfig& t) {
    Json j;
    j["learning_rate"] = t.adamw.lr;
    j["epochs"] = t.epochs;
    j["seed"] = t.seed;
    j["split_ratio"] = t.split_ratio;
    j["strategy"] = strategy_name(t.strategy);
    j["precision"] = precision_name(t.precision);
    j["beta1"] = t.adamw.beta1;
    j["beta2"] = t.adamw.beta2;
    j["eps"] = t.adamw.eps;
    j["weight_decay"] = t.adamw.weight_decay;
    return j;
}

inline Json to_json(const RunConfig& rc) {
    Json j = to_json(rc.schema);
    j["model"] = to_json(rc.train.model);
    j["training"] = to_json(rc.train);
    return j;
}

/// FNV-1a 64 over the canonical JSON of the resolved config, as 16 hex digits.
inline std::string config_hash(const RunConfig& rc) {
    const std::string text = to_json(rc).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace hgnn
