#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support/fixtures.hpp"

using namespace hgnn;

namespace {

int count_category(const Schema& s, Category c) {
    int n = 0;
    for (const auto& src : s.graph.sources) n += src.category == c;
    return n;
}

Json default_doc() { return to_json(default_schema()); }

void expect_schema_error(const Json& doc, const std::string& fragment) {
    try {
        load_schema(doc);
        FAIL() << "expected SchemaError containing '" << fragment << "'";
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

} // namespace

TEST(DefaultSchema, RosterAndRegistryCounts) {
    const Schema s = default_schema();
    EXPECT_NO_THROW(validate(s));
    EXPECT_EQ(s.graph.num_inputs(), 29);
    EXPECT_EQ(s.graph.num_comm(), 5);
    EXPECT_EQ(s.num_subtypes(), 17);
    EXPECT_EQ(s.total_classes(), 49);
    EXPECT_EQ(count_category(s, Category::image), 3);
    EXPECT_EQ(count_category(s, Category::text), 1);
    EXPECT_EQ(count_category(s, Category::humanity), 5);
    EXPECT_EQ(count_category(s, Category::geography), 11);
    EXPECT_EQ(count_category(s, Category::society), 9);
    EXPECT_EQ(s.embedding_dim(), 512);
}

TEST(DefaultSchema, ClassCountsPerSubtype) {
    const Schema s = default_schema();
    const std::vector<std::pair<std::string, int>> expected = {
        {"S1", 3}, {"S2", 4}, {"S3", 6}, {"S4", 2}, {"S5", 4}, {"S6", 3}, {"V1", 4}, {"V2", 2}, {"V3", 2},
        {"V4", 2}, {"V5", 2}, {"R1", 2}, {"R2", 3}, {"R3", 3}, {"R4", 2}, {"R5", 2}, {"R6", 3}};
    ASSERT_EQ(s.subtypes.size(), expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
        EXPECT_EQ(s.subtypes[k].key, expected[k].first);
        EXPECT_EQ(s.subtypes[k].num_classes, expected[k].second);
        EXPECT_EQ(s.subtypes[k].class_names.size(), static_cast<std::size_t>(expected[k].second));
    }
}

TEST(DefaultSchema, CommunicationOrderAndHumanityAsEmbeddings) {
    const Schema s = default_schema();
    const std::vector<Category> order(kCategoryOrder.begin(), kCategoryOrder.end());
    EXPECT_EQ(s.graph.comm_categories, order);
    for (const auto& src : s.graph.sources)
        if (src.category == Category::humanity) EXPECT_EQ(src.kind, SourceKind::embedding);
    const auto coords = s.graph.index_of("geo_coordinates");
    ASSERT_TRUE(coords);
    EXPECT_EQ(s.graph.sources[static_cast<std::size_t>(*coords)].input_dim, 2);
    const auto admin = s.graph.index_of("geo_admin_division");
    ASSERT_TRUE(admin);
    EXPECT_EQ(s.graph.sources[static_cast<std::size_t>(*admin)].encoding, FactEncoding::one_hot);
}

TEST(DefaultSchema, RelationSetsAvoidImageAndText) {
    const Schema s = default_schema();
    for (const auto& members : s.relations.members) {
        EXPECT_FALSE(members.empty());
        for (int i : members) {
            const Category c = s.graph.sources[static_cast<std::size_t>(i)].category;
            EXPECT_NE(c, Category::image);
            EXPECT_NE(c, Category::text);
        }
    }
    const auto r4 = s.relations.members[static_cast<std::size_t>(*s.subtype_index("R4"))];
    ASSERT_EQ(r4.size(), 1u);
    EXPECT_EQ(s.graph.sources[static_cast<std::size_t>(r4[0])].id, "soc_road_length");
}

TEST(InputAdjacency, RowSumsAndColumnCounts) {
    const Schema s = default_schema();
    const auto a = build_input_adjacency<double>(s.graph);
    ASSERT_EQ(a.rows(), 29);
    ASSERT_EQ(a.cols(), 5);
    for (Index i = 0; i < a.rows(); ++i) EXPECT_EQ(a.row(i).sum(), 1.0);
    EXPECT_EQ(a.col(0).sum(), 3.0);   // Image
    EXPECT_EQ(a.col(1).sum(), 1.0);   // Text
    EXPECT_EQ(a.col(2).sum(), 5.0);   // Humanity
    EXPECT_EQ(a.col(3).sum(), 11.0);  // Geography
    EXPECT_EQ(a.col(4).sum(), 9.0);   // Society
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            EXPECT_EQ(a(i, j) == 1.0, s.graph.sources[static_cast<std::size_t>(i)].category ==
                                          s.graph.comm_categories[static_cast<std::size_t>(j)]);
}

TEST(LoadSchema, DefaultDocumentRoundTrips) {
    const Schema s = default_schema();
    const Schema back = load_schema(to_json(s));
    EXPECT_TRUE(back == s);
    EXPECT_EQ(to_json(back).dump(), to_json(s).dump());
}

TEST(LoadSchema, MinimalDocumentGivesDefaults) {
    const Schema s = load_schema(Json{{"schema_version", 1}});
    EXPECT_TRUE(s == default_schema());
}

TEST(LoadSchema, SchemaVersionIsMandatory) {
    expect_schema_error(Json::object(), "schema_version");
    expect_schema_error(Json{{"schema_version", 2}}, "schema_version");
}

TEST(LoadSchema, EmptyRelationSetRejected) {
    Json doc = default_doc();
    doc["relation_map"]["S4"] = Json::array();
    expect_schema_error(doc, "relation_map.S4");
}

TEST(LoadSchema, ImageSourceInRelationSetRejected) {
    Json doc = default_doc();
    doc["relation_map"]["R1"].push_back("img_satellite");
    expect_schema_error(doc, "relation_map.R1");
}

TEST(LoadSchema, UnknownCategoryRejected) {
    Json doc = default_doc();
    doc["sources"][5]["category"] = "Weather";
    expect_schema_error(doc, "sources[5].category");
}

TEST(LoadSchema, DuplicateIdRejected) {
    Json doc = default_doc();
    doc["sources"][7]["id"] = doc["sources"][6]["id"];
    expect_schema_error(doc, "sources[7].id");
}

TEST(LoadSchema, UnknownSourceAndSubtypeInRelationMapRejected) {
    Json doc = default_doc();
    doc["relation_map"]["S2"] = {"geo_nonexistent"};
    expect_schema_error(doc, "relation_map.S2");
    Json doc2 = default_doc();
    doc2["relation_map"]["S9"] = {"geo_slope"};
    expect_schema_error(doc2, "relation_map.S9");
}

TEST(LoadSchema, OrphanCommunicationNodeRejected) {
    Json doc = hgnn_test::tiny_schema_doc(8);
    doc["communication_nodes"] = {"Image", "Text", "Geography", "Society"};
    expect_schema_error(doc, "communication_nodes[1]");
}

TEST(LoadSchema, FactInImageCategoryRejected) {
    Json doc = hgnn_test::tiny_schema_doc(8);
    doc["sources"][2]["category"] = "Image";
    expect_schema_error(doc, "Image and Text sources must be embeddings");
}

TEST(LoadSchema, ScalarFactMustBeOneWide) {
    Json doc = hgnn_test::tiny_schema_doc(8);
    doc["sources"][2]["input_dim"] = 3;
    expect_schema_error(doc, "sources[2].input_dim");
}

TEST(LoadSchema, SingleClassSubtypeRejected) {
    Json doc = hgnn_test::tiny_schema_doc(8);
    doc["subtypes"][1]["num_classes"] = 1;
    doc["subtypes"][1].erase("class_names");
    expect_schema_error(doc, "subtypes[1].num_classes");
}

TEST(LoadSchema, CustomRosterRequiresRelationMap) {
    Json doc = hgnn_test::tiny_schema_doc(8);
    doc.erase("relation_map");
    expect_schema_error(doc, "relation_map");
}

TEST(LoadSchema, CustomRosterRoundTripsInOrder) {
    const Schema s = hgnn_test::tiny_schema(8);
    EXPECT_EQ(s.graph.num_inputs(), 6);
    EXPECT_EQ(s.graph.num_comm(), 3);
    EXPECT_EQ(s.num_subtypes(), 3);
    const Schema back = load_schema(to_json(s), 8);
    EXPECT_TRUE(back == s);
    EXPECT_EQ(s.graph.sources[3].id, "geo_v");
    EXPECT_EQ(s.relations.members[2], (std::vector<int>{2, 4, 5}));
}

TEST(LoadSchema, RandomRegistriesRoundTrip) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Schema s = hgnn_test::random_schema(rng, 6);
        const Json doc = to_json(s);
        EXPECT_TRUE(load_schema(doc, 6) == s) << doc.dump();
    }
}
