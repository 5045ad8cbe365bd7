#pragma once

// Dataset schema: input sources, communication categories, the 17 morphology
// subtypes and the per-subtype relation map used by relation pooling.

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hgnn/errors.hpp"
#include "hgnn/numgrad.hpp"

namespace hgnn {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr int kDefaultEmbeddingDim = 512;

enum class Category { image, text, humanity, geography, society };

/// Fixed communication-node order.
inline constexpr std::array<Category, 5> kCategoryOrder = {
    Category::image, Category::text, Category::humanity, Category::geography, Category::society};

inline std::string_view category_name(Category c) {
    switch (c) {
    case Category::image: return "Image";
    case Category::text: return "Text";
    case Category::humanity: return "Humanity";
    case Category::geography: return "Geography";
    case Category::society: return "Society";
    }
    return "?";
}

inline std::optional<Category> parse_category(std::string_view s) {
    for (Category c : kCategoryOrder)
        if (category_name(c) == s) return c;
    return std::nullopt;
}

enum class SourceKind { embedding, scalar_fact, vector_fact };

inline std::string_view kind_name(SourceKind k) {
    switch (k) {
    case SourceKind::embedding: return "embedding";
    case SourceKind::scalar_fact: return "scalar_fact";
    case SourceKind::vector_fact: return "vector_fact";
    }
    return "?";
}

/// How a fact's components are produced: real-valued, or a one-hot categorical.
enum class FactEncoding { continuous, one_hot };

struct SourceDescriptor {
    std::string id;
    Category category = Category::geography;
    SourceKind kind = SourceKind::scalar_fact;
    int input_dim = 1;
    FactEncoding encoding = FactEncoding::continuous;

    bool is_fact() const { return kind != SourceKind::embedding; }
};

enum class SubtypeGroup { S, V, R };

inline constexpr std::array<SubtypeGroup, 3> kGroupOrder = {SubtypeGroup::S, SubtypeGroup::V,
                                                            SubtypeGroup::R};

inline std::string_view group_name(SubtypeGroup g) {
    switch (g) {
    case SubtypeGroup::S: return "S";
    case SubtypeGroup::V: return "V";
    case SubtypeGroup::R: return "R";
    }
    return "?";
}

struct SubtypeDescriptor {
    std::string key;
    SubtypeGroup group = SubtypeGroup::S;
    std::string name;
    int num_classes = 2;
    std::vector<std::string> class_names;
};

struct GraphSpec {
    std::vector<SourceDescriptor> sources;
    std::vector<Category> comm_categories;
    /// Communication node index of each source.
    std::vector<int> attachment;

    int num_inputs() const { return static_cast<int>(sources.size()); }
    int num_comm() const { return static_cast<int>(comm_categories.size()); }

    std::optional<int> index_of(std::string_view id) const {
        for (std::size_t i = 0; i < sources.size(); ++i)
            if (sources[i].id == id) return static_cast<int>(i);
        return std::nullopt;
    }
};

/// Per subtype (in subtype order) the source indices it pools over.
struct RelationMap {
    std::vector<std::vector<int>> members;
};

struct Schema {
    GraphSpec graph;
    std::vector<SubtypeDescriptor> subtypes;
    RelationMap relations;

    int num_subtypes() const { return static_cast<int>(subtypes.size()); }

    int total_classes() const {
        int n = 0;
        for (const auto& s : subtypes) n += s.num_classes;
        return n;
    }

    std::optional<int> subtype_index(std::string_view key) const {
        for (std::size_t k = 0; k < subtypes.size(); ++k)
            if (subtypes[k].key == key) return static_cast<int>(k);
        return std::nullopt;
    }

    /// Width of embedding-kind sources, or nullopt when the roster has none.
    std::optional<int> embedding_dim() const {
        for (const auto& s : graph.sources)
            if (s.kind == SourceKind::embedding) return s.input_dim;
        return std::nullopt;
    }

    std::vector<int> subtypes_in_group(SubtypeGroup g) const {
        std::vector<int> out;
        for (std::size_t k = 0; k < subtypes.size(); ++k)
            if (subtypes[k].group == g) out.push_back(static_cast<int>(k));
        return out;
    }
};

/// Checks every schema invariant; throws SchemaError naming the offending path.
inline void validate(const Schema& schema) {
    const auto& g = schema.graph;
    if (g.sources.empty()) throw SchemaError("sources: roster is empty");
    std::set<std::string> ids;
    std::optional<int> emb_dim;
    for (std::size_t i = 0; i < g.sources.size(); ++i) {
        const auto& s = g.sources[i];
        const std::string path = "sources[" + std::to_string(i) + "]";
        if (s.id.empty()) throw SchemaError(path + ".id: empty");
        if (!ids.insert(s.id).second) throw SchemaError(path + ".id: duplicate id '" + s.id + "'");
        if (s.input_dim < 1) throw SchemaError(path + ".input_dim: must be >= 1");
        if (s.kind == SourceKind::scalar_fact && s.input_dim != 1)
            throw SchemaError(path + ".input_dim: scalar facts have input_dim 1");
        if (s.kind == SourceKind::embedding) {
            if (emb_dim && *emb_dim != s.input_dim)
                throw SchemaError(path + ".input_dim: embedding widths differ");
            emb_dim = s.input_dim;
        }
        if ((s.category == Category::image || s.category == Category::text) &&
            s.kind != SourceKind::embedding)
            throw SchemaError(path + ".kind: Image and Text sources must be embeddings");
    }
    if (g.attachment.size() != g.sources.size())
        throw SchemaError("sources: attachment table size mismatch");
    std::vector<int> column(g.comm_categories.size(), 0);
    for (std::size_t i = 0; i < g.sources.size(); ++i) {
        const int j = g.attachment[i];
        if (j < 0 || j >= g.num_comm() || g.comm_categories[j] != g.sources[i].category)
            throw SchemaError("sources[" + std::to_string(i) + "].category: no communication node for '" +
                              std::string(category_name(g.sources[i].category)) + "'");
        ++column[j];
    }
    for (std::size_t j = 0; j < column.size(); ++j)
        if (column[j] == 0)
            throw SchemaError("communication_nodes[" + std::to_string(j) + "]: '" +
                              std::string(category_name(g.comm_categories[j])) +
                              "' has no attached source");

    if (schema.subtypes.empty()) throw SchemaError("subtypes: no subtypes");
    std::set<std::string> keys;
    for (std::size_t k = 0; k < schema.subtypes.size(); ++k) {
        const auto& st = schema.subtypes[k];
        const std::string path = "subtypes[" + std::to_string(k) + "]";
        if (st.key.empty()) throw SchemaError(path + ".key: empty");
        if (!keys.insert(st.key).second) throw SchemaError(path + ".key: duplicate key '" + st.key + "'");
        if (st.num_classes < 2) throw SchemaError(path + ".num_classes: must be >= 2");
        if (!st.class_names.empty() && static_cast<int>(st.class_names.size()) != st.num_classes)
            throw SchemaError(path + ".class_names: expected " + std::to_string(st.num_classes) + " names");
    }
    if (schema.relations.members.size() != schema.subtypes.size())
        throw SchemaError("relation_map: expected one entry per subtype");
    for (std::size_t k = 0; k < schema.subtypes.size(); ++k) {
        const std::string path = "relation_map." + schema.subtypes[k].key;
        const auto& members = schema.relations.members[k];
        if (members.empty()) throw SchemaError(path + ": empty source set");
        std::set<int> seen;
        for (int i : members) {
            if (i < 0 || i >= g.num_inputs()) throw SchemaError(path + ": source index out of range");
            if (!seen.insert(i).second) throw SchemaError(path + ": duplicate source '" + g.sources[i].id + "'");
            const Category c = g.sources[i].category;
            if (c == Category::image || c == Category::text)
                throw SchemaError(path + ": '" + g.sources[i].id +
                                  "' is an image/text source and cannot feed a subtype");
        }
    }
}

/// Fills comm_categories (fixed order, restricted to categories in use) and attachments.
inline void attach_sources(GraphSpec& g) {
    g.comm_categories.clear();
    for (Category c : kCategoryOrder)
        if (std::any_of(g.sources.begin(), g.sources.end(), [c](const auto& s) { return s.category == c; }))
            g.comm_categories.push_back(c);
    g.attachment.clear();
    for (const auto& s : g.sources) {
        auto it = std::find(g.comm_categories.begin(), g.comm_categories.end(), s.category);
        g.attachment.push_back(static_cast<int>(it - g.comm_categories.begin()));
    }
}

/// N x M binary incidence: source i connects to the communication node of its category.
template <class T = double>
numgrad::Mat<T> build_input_adjacency(const GraphSpec& g) {
    numgrad::Mat<T> a = numgrad::Mat<T>::Zero(g.num_inputs(), g.num_comm());
    for (int i = 0; i < g.num_inputs(); ++i) a(i, g.attachment[i]) = T(1);
    return a;
}

namespace detail {

inline SourceDescriptor embedding(std::string id, Category c, int dim) {
    return {std::move(id), c, SourceKind::embedding, dim, FactEncoding::continuous};
}

inline SourceDescriptor scalar(std::string id, Category c) {
    return {std::move(id), c, SourceKind::scalar_fact, 1, FactEncoding::continuous};
}

} // namespace detail

inline constexpr int kDefaultAdminCardinality = 11;

/// The shipped registry: 29 sources, 5 communication nodes, 17 subtypes (49 classes).
inline Schema default_schema(int embedding_dim = kDefaultEmbeddingDim) {
    using detail::embedding;
    using detail::scalar;
    Schema s;
    auto& src = s.graph.sources;
    src.push_back(embedding("img_texture", Category::image, embedding_dim));
    src.push_back(embedding("img_satellite", Category::image, embedding_dim));
    src.push_back(embedding("img_topographic", Category::image, embedding_dim));
    src.push_back(embedding("text_intro", Category::text, embedding_dim));
    for (const char* id : {"hum_folklore", "hum_architecture", "hum_clan", "hum_village_history",
                           "hum_famous_people"})
        src.push_back(embedding(id, Category::humanity, embedding_dim));
    src.push_back({"geo_admin_division", Category::geography, SourceKind::vector_fact,
                   kDefaultAdminCardinality, FactEncoding::one_hot});
    src.push_back({"geo_coordinates", Category::geography, SourceKind::vector_fact, 2,
                   FactEncoding::continuous});
    for (const char* id : {"geo_altitude", "geo_slope", "geo_water_density", "geo_water_distance",
                           "geo_precipitation", "geo_sunshine", "geo_temperature", "geo_arable_pct",
                           "geo_ndvi"})
        src.push_back(scalar(id, Category::geography));
    for (const char* id : {"soc_population_density", "soc_night_light", "soc_urbanization", "soc_poi",
                           "soc_gdp", "soc_road_length", "soc_ancient_road_distance",
                           "soc_texture_dispersion", "soc_texture_density"})
        src.push_back(scalar(id, Category::society));
    attach_sources(s.graph);

    using G = SubtypeGroup;
    s.subtypes = {
        {"S1", G::S, "Typical pattern sequence", 3,
         {"Waterfield wedge village", "Waterfield ring village with mountain cluster embracing outside",
          "Mountain houses integrated with waterfield extending outward"}},
        {"S2", G::S, "Relationship between village and mountain", 4,
         {"Mountain-near village", "Mountain-enclosed village", "Mountain-pack village",
          "Village separated from mountains"}},
        {"S3", G::S, "Village-water relationship", 6,
         {"Single-river-adjacent village", "Single-river-crossing village", "Multi-river-adjacent village",
          "Multi-river-crossing village", "Lakeside village", "Lake-encircled village"}},
        {"S4", G::S, "Village-field relationship", 2, {"Field-near village", "Field-enclosed village"}},
        {"S5", G::S, "Village natural environment type", 4,
         {"Polder field type", "Waterfield type", "Mountain-water type", "Mountain terraced field type"}},
        {"S6", G::S, "Water and field pattern", 3, {"Field-shaped", "Straight strip-shaped", "Free-form"}},
        {"V1", G::V, "Shape index of settlement boundary", 4,
         {"Finger-shaped", "Clustered", "Cluster-belt-shaped", "Belt-shaped"}},
        {"V2", G::V, "Degree of fragmentation of settlement boundary", 2,
         {"Simple and smooth", "Complex and uneven"}},
        {"V3", G::V, "Degree of dispersion of village plots", 2, {"Dispersed system", "Aggregated system"}},
        {"V4", G::V, "Colony density", 2, {"Low-density parcels", "High-density parcels"}},
        {"V5", G::V, "Mean area of cluster plots", 2, {"Large-parcel settlements", "Small-parcel settlements"}},
        {"R1", G::R, "Road network alignment and landscape", 2,
         {"Road network along water and mountains", "Road network crossing water systems"}},
        {"R2", G::R, "Road network alignment and wind direction", 3,
         {"Main road facing wind", "Main road avoiding wind", "Low wind-direction relevance"}},
        {"R3", G::R, "Road network curvature", 3, {"Low curvature", "Medium curvature", "High curvature"}},
        {"R4", G::R, "Density of road network", 2,
         {"High road network density", "Low road network density"}},
        {"R5", G::R, "Average width of road network", 2,
         {"Narrow road network settlements", "Wide road network settlements"}},
        {"R6", G::R, "Road network structure", 3, {"Grid pattern", "Fishbone pattern", "Mixed pattern"}},
    };

    // Best-effort transcription of the subtype/source association diagram.
    const std::vector<std::pair<std::string, std::vector<std::string>>> relations = {
        {"S1", {"geo_altitude", "geo_water_density", "geo_arable_pct"}},
        {"S2", {"geo_altitude", "geo_slope"}},
        {"S3", {"geo_water_density", "geo_water_distance"}},
        {"S4", {"geo_arable_pct"}},
        {"S5", {"geo_slope", "geo_water_density", "geo_arable_pct"}},
        {"S6", {"geo_arable_pct", "geo_water_distance", "geo_ndvi"}},
        {"V1", {"soc_texture_dispersion", "soc_texture_density", "soc_population_density"}},
        {"V2", {"soc_texture_dispersion", "soc_texture_density", "soc_population_density"}},
        {"V3", {"soc_texture_dispersion", "soc_texture_density", "soc_population_density"}},
        {"V4", {"soc_texture_dispersion", "soc_texture_density", "soc_population_density"}},
        {"V5", {"soc_texture_dispersion", "soc_texture_density", "soc_population_density"}},
        {"R1", {"soc_road_length", "geo_slope", "geo_water_density"}},
        {"R2", {"geo_precipitation", "geo_sunshine", "geo_temperature"}},  // no wind fact exists
        {"R3", {"soc_road_length", "geo_slope"}},
        {"R4", {"soc_road_length"}},
        {"R5", {"soc_road_length", "soc_urbanization"}},
        {"R6", {"soc_road_length", "soc_ancient_road_distance", "soc_poi"}},
    };
    for (const auto& [key, ids] : relations) {
        std::vector<int> members;
        for (const auto& id : ids) members.push_back(*s.graph.index_of(id));
        s.relations.members.push_back(std::move(members));
    }
    validate(s);
    return s;
}

namespace detail {

inline const Json& require(const Json& j, const std::string& key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw SchemaError(path + "." + key + ": missing");
    return j.at(key);
}

inline std::string require_string(const Json& j, const std::string& key, const std::string& path) {
    const Json& v = require(j, key, path);
    if (!v.is_string()) throw SchemaError(path + "." + key + ": expected string");
    return v.get<std::string>();
}

inline int require_int(const Json& j, const std::string& key, const std::string& path) {
    const Json& v = require(j, key, path);
    if (!v.is_number_integer()) throw SchemaError(path + "." + key + ": expected integer");
    return v.get<int>();
}

} // namespace detail

/// Parses the `sources`, `subtypes` and `relation_map` sections of a config
/// document. Missing sections fall back to the built-in default registry.
inline Schema load_schema(const Json& doc, int default_embedding_dim = kDefaultEmbeddingDim) {
    if (!doc.is_object()) throw SchemaError("$: expected an object");
    if (!doc.contains("schema_version")) throw SchemaError("$.schema_version: missing");
    if (!doc["schema_version"].is_number_integer() || doc["schema_version"].get<int>() != kSchemaVersion)
        throw SchemaError("$.schema_version: unsupported version, expected " + std::to_string(kSchemaVersion));

    Schema s = default_schema(default_embedding_dim);
    if (doc.contains("sources")) {
        const Json& arr = doc["sources"];
        if (!arr.is_array()) throw SchemaError("sources: expected array");
        s.graph.sources.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "sources[" + std::to_string(i) + "]";
            const Json& e = arr[i];
            SourceDescriptor d;
            d.id = detail::require_string(e, "id", path);
            const auto cat = detail::require_string(e, "category", path);
            auto c = parse_category(cat);
            if (!c) throw SchemaError(path + ".category: unknown category '" + cat + "'");
            d.category = *c;
            const auto kind = detail::require_string(e, "kind", path);
            if (kind == "embedding") d.kind = SourceKind::embedding;
            else if (kind == "scalar_fact") d.kind = SourceKind::scalar_fact;
            else if (kind == "vector_fact") d.kind = SourceKind::vector_fact;
            else throw SchemaError(path + ".kind: unknown kind '" + kind + "'");
            d.input_dim = detail::require_int(e, "input_dim", path);
            if (e.contains("encoding")) {
                const auto enc = detail::require_string(e, "encoding", path);
                if (enc == "continuous") d.encoding = FactEncoding::continuous;
                else if (enc == "one_hot") d.encoding = FactEncoding::one_hot;
                else throw SchemaError(path + ".encoding: unknown encoding '" + enc + "'");
            }
            s.graph.sources.push_back(std::move(d));
        }
    }
    attach_sources(s.graph);
    if (doc.contains("communication_nodes")) {
        const Json& arr = doc["communication_nodes"];
        if (!arr.is_array()) throw SchemaError("communication_nodes: expected array");
        std::vector<Category> listed;
        std::size_t cursor = 0;
        for (std::size_t j = 0; j < arr.size(); ++j) {
            const std::string path = "communication_nodes[" + std::to_string(j) + "]";
            auto c = arr[j].is_string() ? parse_category(arr[j].get<std::string>()) : std::nullopt;
            if (!c) throw SchemaError(path + ": unknown category");
            auto pos = static_cast<std::size_t>(
                std::find(kCategoryOrder.begin(), kCategoryOrder.end(), *c) - kCategoryOrder.begin());
            if (j > 0 && pos <= cursor)
                throw SchemaError(path + ": categories must follow Image, Text, Humanity, Geography, Society order");
            cursor = pos;
            listed.push_back(*c);
        }
        s.graph.comm_categories = listed;
        for (std::size_t i = 0; i < s.graph.sources.size(); ++i) {
            auto it = std::find(listed.begin(), listed.end(), s.graph.sources[i].category);
            s.graph.attachment[i] = it == listed.end() ? -1 : static_cast<int>(it - listed.begin());
        }
    }

    if (doc.contains("subtypes")) {
        const Json& arr = doc["subtypes"];
        if (!arr.is_array()) throw SchemaError("subtypes: expected array");
        s.subtypes.clear();
        for (std::size_t k = 0; k < arr.size(); ++k) {
            const std::string path = "subtypes[" + std::to_string(k) + "]";
            const Json& e = arr[k];
            SubtypeDescriptor d;
            d.key = detail::require_string(e, "key", path);
            const auto grp = detail::require_string(e, "group", path);
            if (grp == "S") d.group = SubtypeGroup::S;
            else if (grp == "V") d.group = SubtypeGroup::V;
            else if (grp == "R") d.group = SubtypeGroup::R;
            else throw SchemaError(path + ".group: unknown group '" + grp + "'");
            if (e.contains("name")) d.name = detail::require_string(e, "name", path);
            d.num_classes = detail::require_int(e, "num_classes", path);
            if (e.contains("class_names")) {
                const Json& names = e["class_names"];
                if (!names.is_array()) throw SchemaError(path + ".class_names: expected array");
                for (const auto& n : names) {
                    if (!n.is_string()) throw SchemaError(path + ".class_names: expected strings");
                    d.class_names.push_back(n.get<std::string>());
                }
            }
            s.subtypes.push_back(std::move(d));
        }
    }

    const bool custom_roster = doc.contains("sources") || doc.contains("subtypes");
    if (doc.contains("relation_map") || custom_roster) {
        const Json& rel = detail::require(doc, "relation_map", "$");
        if (!rel.is_object()) throw SchemaError("relation_map: expected object");
        for (const auto& [key, _] : rel.items())
            if (!s.subtype_index(key)) throw SchemaError("relation_map." + key + ": unknown subtype");
        s.relations.members.clear();
        for (const auto& st : s.subtypes) {
            const std::string path = "relation_map." + st.key;
            if (!rel.contains(st.key)) throw SchemaError(path + ": missing");
            const Json& ids = rel[st.key];
            if (!ids.is_array()) throw SchemaError(path + ": expected array of source ids");
            std::vector<int> members;
            for (const auto& id : ids) {
                if (!id.is_string()) throw SchemaError(path + ": expected source id strings");
                auto idx = s.graph.index_of(id.get<std::string>());
                if (!idx) throw SchemaError(path + ": unknown source '" + id.get<std::string>() + "'");
                members.push_back(*idx);
            }
            s.relations.members.push_back(std::move(members));
        }
    }
    validate(s);
    return s;
}

/// Serializes the registry sections; load_schema(to_json(s)) reproduces s.
inline Json to_json(const Schema& s) {
    Json doc;
    doc["schema_version"] = kSchemaVersion;
    Json sources = Json::array();
    for (const auto& d : s.graph.sources) {
        Json e;
        e["id"] = d.id;
        e["category"] = category_name(d.category);
        e["kind"] = kind_name(d.kind);
        e["input_dim"] = d.input_dim;
        if (d.is_fact()) e["encoding"] = d.encoding == FactEncoding::one_hot ? "one_hot" : "continuous";
        sources.push_back(std::move(e));
    }
    doc["sources"] = std::move(sources);
    Json comm = Json::array();
    for (Category c : s.graph.comm_categories) comm.push_back(category_name(c));
    doc["communication_nodes"] = std::move(comm);
    Json subtypes = Json::array();
    for (const auto& st : s.subtypes) {
        Json e;
        e["key"] = st.key;
        e["group"] = group_name(st.group);
        e["name"] = st.name;
        e["num_classes"] = st.num_classes;
        e["class_names"] = st.class_names;
        subtypes.push_back(std::move(e));
    }
    doc["subtypes"] = std::move(subtypes);
    Json rel = Json::object();
    for (std::size_t k = 0; k < s.subtypes.size(); ++k) {
        Json ids = Json::array();
        for (int i : s.relations.members[k]) ids.push_back(s.graph.sources[i].id);
        rel[s.subtypes[k].key] = std::move(ids);
    }
    doc["relation_map"] = std::move(rel);
    return doc;
}

inline bool operator==(const SourceDescriptor& a, const SourceDescriptor& b) {
    return a.id == b.id && a.category == b.category && a.kind == b.kind && a.input_dim == b.input_dim &&
           (a.kind == SourceKind::embedding || a.encoding == b.encoding);
}

inline bool operator==(const SubtypeDescriptor& a, const SubtypeDescriptor& b) {
    return a.key == b.key && a.group == b.group && a.name == b.name && a.num_classes == b.num_classes &&
           a.class_names == b.class_names;
}

inline bool operator==(const Schema& a, const Schema& b) {
    return a.graph.sources == b.graph.sources && a.graph.comm_categories == b.graph.comm_categories &&
           a.graph.attachment == b.graph.attachment && a.subtypes == b.subtypes &&
           a.relations.members == b.relations.members;
}

} // namespace hgnn
