#pragma once

// On-disk dataset (manifest + embedding blobs), fact standardization, seeded
// splitting, and a synthetic village generator with planted labeling rules.

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hgnn/errors.hpp"
#include "hgnn/numgrad.hpp"
#include "hgnn/taxonomy.hpp"

namespace hgnn {

struct VillageSample {
    std::string village_id;
    std::map<std::string, std::vector<float>> embeddings;
    std::map<std::string, std::vector<double>> facts;
    std::map<std::string, int> labels;

    bool operator==(const VillageSample&) const = default;
};

/// Per-source, per-component statistics of fact values. Empty for embeddings.
struct Standardization {
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> stddev;

    bool fitted() const { return !mean.empty(); }
    bool operator==(const Standardization&) const = default;
};

struct Dataset {
    std::vector<VillageSample> samples;
    Standardization standardization;

    std::size_t size() const { return samples.size(); }
};

inline constexpr double kStdFloor = 1e-8;

/// Throws LoadError naming the village when the sample does not match the roster.
inline void validate_sample(const VillageSample& v, const Schema& schema) {
    const std::string who = "village '" + v.village_id + "'";
    for (const auto& src : schema.graph.sources) {
        if (src.kind == SourceKind::embedding) {
            auto it = v.embeddings.find(src.id);
            if (it == v.embeddings.end()) throw LoadError(who + ": missing embedding '" + src.id + "'");
            if (static_cast<int>(it->second.size()) != src.input_dim)
                throw LoadError(who + ": embedding '" + src.id + "' has dim " + std::to_string(it->second.size()) +
                                ", roster expects " + std::to_string(src.input_dim));
            for (float x : it->second)
                if (!std::isfinite(x)) throw LoadError(who + ": non-finite value in '" + src.id + "'");
        } else {
            auto it = v.facts.find(src.id);
            if (it == v.facts.end()) throw LoadError(who + ": missing fact '" + src.id + "'");
            if (static_cast<int>(it->second.size()) != src.input_dim)
                throw LoadError(who + ": fact '" + src.id + "' has dim " + std::to_string(it->second.size()) +
                                ", roster expects " + std::to_string(src.input_dim));
            for (double x : it->second)
                if (!std::isfinite(x)) throw LoadError(who + ": non-finite value in '" + src.id + "'");
        }
    }
    for (const auto& st : schema.subtypes) {
        auto it = v.labels.find(st.key);
        if (it == v.labels.end()) throw LoadError(who + ": missing label for " + st.key);
        if (it->second < 0 || it->second >= st.num_classes)
            throw LoadError(who + ": label " + std::to_string(it->second) + " for " + st.key +
                            " outside cls-" + std::to_string(st.num_classes));
    }
}

// ---------------------------------------------------------------------------
// Embedding blobs: "HGNNEMB1", u32 count, u32 dim, count*dim f32, little-endian.

inline constexpr char kEmbeddingMagic[8] = {'H', 'G', 'N', 'N', 'E', 'M', 'B', '1'};

namespace detail {

template <class U>
void put_le(std::ostream& out, U value) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get_le(std::istream& in, const std::string& what) {
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw FormatError(what + ": truncated file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    U value;
    std::memcpy(&value, bytes, sizeof(U));
    return value;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

} // namespace detail

inline void write_embeddings(const std::vector<std::vector<float>>& vectors, const std::filesystem::path& path,
                             std::uint32_t dim_if_empty = 0) {
    const std::uint32_t dim = vectors.empty() ? dim_if_empty : static_cast<std::uint32_t>(vectors.front().size());
    for (const auto& v : vectors)
        if (v.size() != dim) throw DimensionError("write_embeddings: vectors of differing dims");
    auto out = detail::open_out(path);
    out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(vectors.size()));
    detail::put_le<std::uint32_t>(out, dim);
    for (const auto& v : vectors)
        for (float x : v) detail::put_le<float>(out, x);
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<std::vector<float>> read_embeddings(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    const std::string what = path.string();
    char magic[8];
    if (!in.read(magic, sizeof(magic))) throw FormatError(what + ": truncated file");
    if (std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0) throw FormatError(what + ": bad magic");
    const auto count = detail::get_le<std::uint32_t>(in, what);
    const auto dim = detail::get_le<std::uint32_t>(in, what);
    std::vector<std::vector<float>> out(count, std::vector<float>(dim));
    for (auto& v : out)
        for (auto& x : v) x = detail::get_le<float>(in, what);
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(what + ": trailing bytes");
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

inline constexpr const char* kManifestName = "manifest.json";

/// Writes manifest.json plus one blob per village under `dir/blobs/`.
inline void write_dataset(const Dataset& ds, const Schema& schema, const std::filesystem::path& dir) {
    Json manifest;
    manifest["schema_version"] = kSchemaVersion;
    Json villages = Json::array();
    std::vector<std::string> emb_ids;
    for (const auto& s : schema.graph.sources)
        if (s.kind == SourceKind::embedding) emb_ids.push_back(s.id);
    for (const auto& v : ds.samples) {
        validate_sample(v, schema);
        Json e;
        e["village_id"] = v.village_id;
        const std::string blob = "blobs/" + v.village_id + ".bin";
        std::vector<std::vector<float>> vectors;
        for (const auto& id : emb_ids) vectors.push_back(v.embeddings.at(id));
        write_embeddings(vectors, dir / blob, static_cast<std::uint32_t>(schema.embedding_dim().value_or(0)));
        e["embedding_blob"] = blob;
        e["embedding_sources"] = emb_ids;
        Json facts = Json::object();
        for (const auto& s : schema.graph.sources)
            if (s.is_fact()) facts[s.id] = v.facts.at(s.id);
        e["facts"] = std::move(facts);
        Json labels = Json::object();
        for (const auto& st : schema.subtypes) labels[st.key] = v.labels.at(st.key);
        e["labels"] = std::move(labels);
        villages.push_back(std::move(e));
    }
    manifest["villages"] = std::move(villages);
    auto out = detail::open_out(dir / kManifestName);
    out << manifest.dump(1) << '\n';
    if (!out) throw IoError("write failed: " + (dir / kManifestName).string());
}

/// Reads a manifest (file or containing directory) and validates every village.
inline Dataset read_manifest(const std::filesystem::path& path, const Schema& schema) {
    const auto file = std::filesystem::is_directory(path) ? path / kManifestName : path;
    const auto root = file.parent_path();
    auto in = detail::open_in(file);
    Json manifest;
    try {
        manifest = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw LoadError(file.string() + ": " + e.what());
    }
    if (!manifest.is_object() || !manifest.contains("villages") || !manifest["villages"].is_array())
        throw LoadError(file.string() + ": expected an object with a 'villages' array");
    Dataset ds;
    for (const auto& e : manifest["villages"]) {
        VillageSample v;
        if (!e.contains("village_id") || !e["village_id"].is_string())
            throw LoadError(file.string() + ": village without village_id");
        v.village_id = e["village_id"].get<std::string>();
        const std::string who = "village '" + v.village_id + "'";
        try {
            if (e.contains("embedding_blob")) {
                const auto blob = root / e["embedding_blob"].get<std::string>();
                if (!std::filesystem::exists(blob)) throw LoadError(who + ": missing blob " + blob.string());
                auto vectors = read_embeddings(blob);
                const auto ids = e.at("embedding_sources").get<std::vector<std::string>>();
                if (ids.size() != vectors.size())
                    throw LoadError(who + ": blob holds " + std::to_string(vectors.size()) + " vectors, manifest lists " +
                                    std::to_string(ids.size()));
                for (std::size_t k = 0; k < ids.size(); ++k) v.embeddings[ids[k]] = std::move(vectors[k]);
            }
            for (const auto& [id, values] : e.at("facts").items()) v.facts[id] = values.get<std::vector<double>>();
            for (const auto& [key, label] : e.at("labels").items()) v.labels[key] = label.get<int>();
        } catch (const Json::exception& ex) {
            throw LoadError(who + ": " + ex.what());
        } catch (const FormatError& ex) {
            throw LoadError(who + ": " + ex.what());
        }
        validate_sample(v, schema);
        ds.samples.push_back(std::move(v));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Standardization and splitting

/// Population mean/std per fact component over the given samples. Components
/// whose std is below the floor are only centered.
inline Standardization fit_standardization(const std::vector<VillageSample>& samples, const Schema& schema) {
    Standardization st;
    const auto& sources = schema.graph.sources;
    st.mean.resize(sources.size());
    st.stddev.resize(sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (!sources[i].is_fact()) continue;
        const auto dim = static_cast<std::size_t>(sources[i].input_dim);
        std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
        for (const auto& v : samples) {
            const auto& x = v.facts.at(sources[i].id);
            for (std::size_t c = 0; c < dim; ++c) mean[c] += x[c];
        }
        for (auto& m : mean) m /= static_cast<double>(std::max<std::size_t>(samples.size(), 1));
        for (const auto& v : samples) {
            const auto& x = v.facts.at(sources[i].id);
            for (std::size_t c = 0; c < dim; ++c) sd[c] += (x[c] - mean[c]) * (x[c] - mean[c]);
        }
        for (auto& s : sd) {
            s = std::sqrt(s / static_cast<double>(std::max<std::size_t>(samples.size(), 1)));
            if (s < kStdFloor) s = 1.0;
        }
        st.mean[i] = std::move(mean);
        st.stddev[i] = std::move(sd);
    }
    return st;
}

inline std::vector<double> standardize(const std::vector<double>& x, const Standardization& st, std::size_t source) {
    std::vector<double> out(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) out[c] = (x[c] - st.mean[source][c]) / st.stddev[source][c];
    return out;
}

struct Split {
    Dataset train;
    Dataset test;
};

/// Seeded shuffle then split; standardization is fitted on train and attached to both.
inline Split split_dataset(const Dataset& ds, double ratio, std::uint64_t seed, const Schema& schema) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split_dataset: ratio must lie in (0,1)");
    if (ds.size() < 2) throw ContractError("split_dataset: need at least 2 samples");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ds.size()) + 0.5));
    n_train = std::clamp<std::size_t>(n_train, 1, ds.size() - 1);
    Split out;
    for (std::size_t k = 0; k < order.size(); ++k)
        (k < n_train ? out.train : out.test).samples.push_back(ds.samples[order[k]]);
    out.train.standardization = fit_standardization(out.train.samples, schema);
    out.test.standardization = out.train.standardization;
    return out;
}

// ---------------------------------------------------------------------------
// Model-ready encoding

/// A village in roster order: embeddings verbatim, facts standardized.
template <class T>
struct EncodedSample {
    std::vector<numgrad::Mat<T>> inputs;
    std::vector<int> labels;  // subtype order
};

template <class T>
EncodedSample<T> encode(const VillageSample& v, const Schema& schema, const Standardization& st) {
    EncodedSample<T> out;
    const auto& sources = schema.graph.sources;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto& s = sources[i];
        numgrad::Mat<T> row(1, s.input_dim);
        if (s.kind == SourceKind::embedding) {
            const auto& e = v.embeddings.at(s.id);
            for (int c = 0; c < s.input_dim; ++c) row(0, c) = static_cast<T>(e[c]);
        } else {
            const auto& raw = v.facts.at(s.id);
            const auto z = st.fitted() ? standardize(raw, st, i) : raw;
            for (int c = 0; c < s.input_dim; ++c) row(0, c) = static_cast<T>(z[c]);
        }
        out.inputs.push_back(std::move(row));
    }
    for (const auto& k : schema.subtypes) out.labels.push_back(v.labels.at(k.key));
    return out;
}

template <class T>
std::vector<EncodedSample<T>> encode_all(const Dataset& ds, const Schema& schema) {
    std::vector<EncodedSample<T>> out;
    out.reserve(ds.size());
    for (const auto& v : ds.samples) out.push_back(encode<T>(v, schema, ds.standardization));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic villages with planted rules

/// Generator constants for a fact: raw = center + spread * z, z ~ N(0,1).
struct FactProfile {
    std::vector<double> center;
    std::vector<double> spread;
};

inline FactProfile fact_profile(const SourceDescriptor& s) {
    static const std::map<std::string, std::pair<double, double>> scalar = {
        {"geo_altitude", {250, 120}},          {"geo_slope", {12, 6}},
        {"geo_water_density", {0.8, 0.3}},     {"geo_water_distance", {600, 250}},
        {"geo_precipitation", {1600, 150}},    {"geo_sunshine", {1750, 120}},
        {"geo_temperature", {18.5, 1.2}},      {"geo_arable_pct", {35, 12}},
        {"geo_ndvi", {0.62, 0.1}},             {"soc_population_density", {180, 90}},
        {"soc_night_light", {6, 4}},           {"soc_urbanization", {48, 10}},
        {"soc_poi", {40, 25}},                 {"soc_gdp", {3500, 2000}},
        {"soc_road_length", {4.5, 2}},         {"soc_ancient_road_distance", {3000, 1500}},
        {"soc_texture_dispersion", {0.45, 0.15}}, {"soc_texture_density", {0.3, 0.1}},
    };
    FactProfile p;
    const auto dim = static_cast<std::size_t>(s.input_dim);
    p.center.assign(dim, 0.0);
    p.spread.assign(dim, 1.0);
    if (s.id == "geo_coordinates" && dim == 2) {
        p.center = {27.0, 115.5};
        p.spread = {1.2, 0.8};
    } else if (auto it = scalar.find(s.id); it != scalar.end() && dim == 1) {
        p.center[0] = it->second.first;
        p.spread[0] = it->second.second;
    }
    return p;
}

inline constexpr double kEmbeddingScale = 0.45;

struct SubtypeRule {
    std::string key;
    std::vector<int> sources;
    std::vector<double> weights;     // unit-norm
    std::vector<double> thresholds;  // ascending, num_classes - 1 entries
    int num_classes = 2;
    double bayes_accuracy = 1.0;
};

/// The planted labeling rules and the noise level used to corrupt them.
struct OracleReport {
    std::vector<SubtypeRule> rules;
    std::vector<FactProfile> profiles;  // per source; empty for embeddings
    double noise = 0.0;
    std::uint64_t seed = 0;

    /// Scalar signal a rule reads from one source of a village.
    double signal(const VillageSample& v, const Schema& schema, int source) const {
        const auto& s = schema.graph.sources[source];
        if (s.kind == SourceKind::embedding) {
            const auto& e = v.embeddings.at(s.id);
            double total = 0;
            for (float x : e) total += x;
            return total / std::sqrt(static_cast<double>(e.size())) / kEmbeddingScale;
        }
        const auto& x = v.facts.at(s.id);
        if (s.encoding == FactEncoding::one_hot) {
            const auto idx = std::max_element(x.begin(), x.end()) - x.begin();
            const boost::math::normal unit;
            return boost::math::quantile(unit, (static_cast<double>(idx) + 0.5) / static_cast<double>(x.size()));
        }
        const auto& p = profiles[source];
        return (x[0] - p.center[0]) / p.spread[0];
    }

    double score(const VillageSample& v, const Schema& schema, const SubtypeRule& r) const {
        double s = 0;
        for (std::size_t p = 0; p < r.sources.size(); ++p) s += r.weights[p] * signal(v, schema, r.sources[p]);
        return s;
    }

    /// Noise-free labels the rules assign to a village, in subtype order.
    std::vector<int> replay(const VillageSample& v, const Schema& schema) const {
        std::vector<int> out;
        for (const auto& r : rules) {
            const double s = score(v, schema, r);
            out.push_back(static_cast<int>(std::upper_bound(r.thresholds.begin(), r.thresholds.end(), s) -
                                           r.thresholds.begin()));
        }
        return out;
    }

    Json to_json(const Schema& schema) const {
        Json j;
        j["seed"] = seed;
        j["noise"] = noise;
        Json arr = Json::array();
        for (const auto& r : rules) {
            Json e;
            e["subtype"] = r.key;
            std::ostringstream desc;
            desc << "class = number of thresholds below (";
            for (std::size_t p = 0; p < r.sources.size(); ++p) {
                if (p) desc << " + ";
                desc << r.weights[p] << "*z(" << schema.graph.sources[r.sources[p]].id << ")";
            }
            desc << ")";
            e["rule"] = desc.str();
            Json ids = Json::array();
            for (int i : r.sources) ids.push_back(schema.graph.sources[i].id);
            e["sources"] = std::move(ids);
            e["weights"] = r.weights;
            e["thresholds"] = r.thresholds;
            e["num_classes"] = r.num_classes;
            e["bayes_accuracy"] = r.bayes_accuracy;
            arr.push_back(std::move(e));
        }
        j["subtypes"] = std::move(arr);
        return j;
    }
};

struct SyntheticData {
    Dataset dataset;
    OracleReport oracle;
};

/// Villages whose labels follow threshold rules over each subtype's pooled
/// sources, flipped to a uniformly random class with probability `noise`.
/// Embeddings are low-rank images of the group-leading rule scores plus noise.
inline SyntheticData generate_synthetic(const Schema& schema, std::size_t n, std::uint64_t seed, double noise) {
    if (n < 2) throw ContractError("generate_synthetic: need n >= 2");
    if (!(noise >= 0.0 && noise <= 1.0)) throw ContractError("generate_synthetic: noise must lie in [0,1]");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const boost::math::normal standard;
    const auto& sources = schema.graph.sources;

    SyntheticData out;
    OracleReport& oracle = out.oracle;
    oracle.noise = noise;
    oracle.seed = seed;
    for (const auto& s : sources) oracle.profiles.push_back(s.is_fact() ? fact_profile(s) : FactProfile{});
    for (std::size_t k = 0; k < schema.subtypes.size(); ++k) {
        SubtypeRule r;
        r.key = schema.subtypes[k].key;
        r.sources = schema.relations.members[k];
        r.num_classes = schema.subtypes[k].num_classes;
        double norm = 0;
        for (std::size_t p = 0; p < r.sources.size(); ++p) {
            const double w = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + unit(rng));
            r.weights.push_back(w);
            norm += w * w;
        }
        for (auto& w : r.weights) w /= std::sqrt(norm);
        for (int c = 1; c < r.num_classes; ++c)
            r.thresholds.push_back(boost::math::quantile(standard, static_cast<double>(c) / r.num_classes));
        r.bayes_accuracy = 1.0 - noise * static_cast<double>(r.num_classes - 1) / r.num_classes;
        oracle.rules.push_back(std::move(r));
    }

    // Low-rank embedding structure: one latent per subtype group plus one free latent.
    std::vector<int> leaders;
    for (SubtypeGroup g : kGroupOrder)
        if (auto members = schema.subtypes_in_group(g); !members.empty()) leaders.push_back(members.front());
    const std::size_t rank = leaders.size() + 1;
    std::vector<std::vector<double>> loadings(sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (sources[i].kind != SourceKind::embedding) continue;
        loadings[i].resize(static_cast<std::size_t>(sources[i].input_dim) * rank);
        for (auto& u : loadings[i]) u = gauss(rng);
    }

    const int digits = static_cast<int>(std::to_string(n - 1).size());
    for (std::size_t v = 0; v < n; ++v) {
        VillageSample s;
        std::string num = std::to_string(v);
        s.village_id = "v" + std::string(static_cast<std::size_t>(std::max(0, digits - static_cast<int>(num.size()))), '0') + num;
        for (std::size_t i = 0; i < sources.size(); ++i) {
            const auto& src = sources[i];
            if (!src.is_fact()) continue;
            std::vector<double> x(static_cast<std::size_t>(src.input_dim), 0.0);
            if (src.encoding == FactEncoding::one_hot) {
                std::uniform_int_distribution<int> pick(0, src.input_dim - 1);
                x[static_cast<std::size_t>(pick(rng))] = 1.0;
            } else {
                for (std::size_t c = 0; c < x.size(); ++c)
                    x[c] = oracle.profiles[i].center[c] + oracle.profiles[i].spread[c] * gauss(rng);
            }
            s.facts[src.id] = std::move(x);
        }
        // Group latents come from fact-only rules; embedding-fed rules fall back to noise.
        std::vector<double> latent;
        for (int k : leaders) {
            const auto& r = oracle.rules[static_cast<std::size_t>(k)];
            const bool facts_only = std::all_of(r.sources.begin(), r.sources.end(),
                                                [&](int i) { return sources[i].is_fact(); });
            latent.push_back(facts_only ? oracle.score(s, schema, r) : gauss(rng));
        }
        latent.push_back(gauss(rng));
        const double inv_rank = 1.0 / std::sqrt(static_cast<double>(rank));
        for (std::size_t i = 0; i < sources.size(); ++i) {
            const auto& src = sources[i];
            if (src.kind != SourceKind::embedding) continue;
            std::vector<float> e(static_cast<std::size_t>(src.input_dim));
            for (std::size_t c = 0; c < e.size(); ++c) {
                double signal = 0;
                for (std::size_t r = 0; r < rank; ++r) signal += loadings[i][c * rank + r] * latent[r];
                e[c] = static_cast<float>(kEmbeddingScale * (0.8 * signal * inv_rank + 0.6 * gauss(rng)));
            }
            s.embeddings[src.id] = std::move(e);
        }
        const auto clean = oracle.replay(s, schema);
        for (std::size_t k = 0; k < schema.subtypes.size(); ++k) {
            int label = clean[k];
            if (noise > 0.0 && unit(rng) < noise) {
                std::uniform_int_distribution<int> pick(0, schema.subtypes[k].num_classes - 1);
                label = pick(rng);
            }
            s.labels[schema.subtypes[k].key] = label;
        }
        out.dataset.samples.push_back(std::move(s));
    }
    return out;
}

} // namespace hgnn
