#include <doctest.h>

#include <regex>

#include "forge/kgstore.hpp"
#include "test_support.hpp"

using namespace forge;
using namespace forge::kg;
using generation::Relation;

namespace {

struct Toy {
    std::map<std::string, ingest::CoBuyPair> pairs;
    AssemblyInput in;
    std::string pair_id;
};

// One pair, one tail "used for his daughter", two concepts.
std::unique_ptr<Toy> toy() {
    auto t = std::make_unique<Toy>();
    auto p = ingest::make_pair(ingest::Item{"b", "Doll", "Toys", {"Toys", "Dolls"}, {}, ""},
                               ingest::Item{"a", "Dress", "Clothing", {"Clothing", "Girls"}, {}, ""});
    t->pair_id = p.pair_id;
    t->pairs.emplace(p.pair_id, p);
    t->in.pairs = &t->pairs;
    generation::Assertion a{"as_1", p.pair_id, Relation::UsedFor, "used for his daughter.", ""};
    t->in.scored.push_back({a, 0.9, 0.8});
    const auto tail_id = intention_id("used for his daughter.");
    for (auto [c, w] : {std::pair{"offspring", 0.6}, std::pair{"relative", 0.4}}) {
        conceptualize::AbstractIntention ab;
        ab.source_tail_id = tail_id;
        ab.concept_name = c;
        ab.abstract_tail = std::string("used for his ") + c + ".";
        ab.node_id = conceptualize::abstract_node_id(ab.abstract_tail);
        ab.weight = w;
        t->in.abstracts.push_back(ab);
    }
    return t;
}

}  // namespace

TEST_CASE("assemble the one-pair graph") {
    auto t = toy();
    auto kg = assemble(t->in);
    auto s = stats(kg);
    CHECK(s.item_nodes == 2);
    CHECK(s.intention_nodes == 1);
    CHECK(s.abstract_nodes == 2);
    CHECK(s.assert_edges == 1);
    CHECK(s.concept_assert_edges == 2);
    CHECK(s.isa_weight_edges == 2);
    CHECK(s.total_edges() == 5);
    CHECK(s.cobuy_pairs == 1);
    CHECK(s.avg_tail_tokens == doctest::Approx(4.0));
    CHECK(joinable(kg));
    CHECK(no_dangling(kg));

    const auto* e = kg.edges_of(EdgeKind::Assert).front();
    CHECK(e->src == std::vector<std::string>{"a", "b"});
    CHECK(e->relation == Relation::UsedFor);
    CHECK(*e->plausibility == 0.9);
    for (const auto* c : kg.edges_of(EdgeKind::ConceptAssert)) {
        CHECK(c->src == e->src);
        CHECK(*c->plausibility == 0.9);
        CHECK(*c->typicality == 0.8);
        CHECK(kg.node(c->dst)->kind == NodeKind::Abstract);
    }
    CHECK(kg.node("a")->item->title == "Dress");
}

TEST_CASE("assemble thresholds, simplifies and deduplicates") {
    auto t = toy();
    auto dup = t->in.scored[0];
    dup.assertion.assertion_id = "as_2";
    dup.plausibility = 0.95;
    dup.typicality = 0.1;
    t->in.scored.push_back(dup);
    auto low = t->in.scored[0];
    low.assertion.assertion_id = "as_3";
    low.assertion.tail = "a party.";
    low.plausibility = 0.5;  // not above the threshold
    t->in.scored.push_back(low);
    auto kg = assemble(t->in);
    REQUIRE(kg.edges_of(EdgeKind::Assert).size() == 1);
    const auto* e = kg.edges_of(EdgeKind::Assert).front();
    CHECK(*e->plausibility == 0.95);
    CHECK(*e->typicality == 0.8);

    t->in.assignments.push_back({"as_1", "pt_1", "used for his daughter"});
    auto simplified = assemble(t->in);
    std::set<std::string> texts;
    for (const auto& [_, n] : simplified.nodes)
        if (n.kind == NodeKind::Intention) texts.insert(n.text);
    CHECK(texts == std::set<std::string>{"used for his daughter", "used for his daughter."});
}

TEST_CASE("referential errors") {
    auto t = toy();
    t->in.scored[0].assertion.pair_id = "pr_missing";
    CHECK_THROWS_AS(assemble(t->in), ReferentialError);
    auto u = toy();
    u->in.assignments.push_back({"as_nope", std::nullopt, "x"});
    CHECK_THROWS_AS(assemble(u->in), ReferentialError);
}

TEST_CASE("filter_edges drops derived edges with their support") {
    auto t = toy();
    auto kg = assemble(t->in);
    auto same = filter_edges(kg, 0.5);
    CHECK(same == kg);
    auto empty = filter_edges(kg, 0.95);
    CHECK(empty.edges.empty());
    CHECK(empty.nodes.empty());
    CHECK(filter_edges(kg, 0.5, 0.9).edges.empty());

    Rng rng(12);
    for (int i = 0; i < 20; ++i) {
        auto g = test::random_kg(rng, 6);
        auto f = filter_edges(g, 0.7);
        CHECK(joinable(f));
        CHECK(no_dangling(f));
        CHECK(stats(f).assert_edges <= stats(g).assert_edges);
    }
}

TEST_CASE("export and import round trip") {
    test::TempDir dir;
    auto kg = assemble(toy()->in);
    export_graph(kg, dir.path());
    auto back = import_graph(dir.path());
    CHECK(back == kg);
    CHECK(stats(back) == stats(kg));

    test::TempDir again;
    export_graph(back, again.path());
    CHECK(read_file(dir / "nodes.jsonl") == read_file(again / "nodes.jsonl"));
    CHECK(read_file(dir / "edges.jsonl") == read_file(again / "edges.jsonl"));

    Rng rng(77);
    for (int i = 0; i < 20; ++i) {
        test::TempDir d;
        auto g = test::random_kg(rng, 1 + rng.below(10));
        export_graph(g, d.path());
        auto r = import_graph(d.path());
        CHECK(r == g);
        CHECK(stats(r) == stats(g));
    }
}

TEST_CASE("import rejects bad inputs") {
    test::TempDir dir;
    export_graph(assemble(toy()->in), dir.path());
    CHECK_THROWS_AS(import_graph(dir / "nowhere"), FatalInputError);

    auto nodes = read_file(dir / "nodes.jsonl");
    const auto bumped = std::regex_replace(nodes, std::regex("\"version\":1"), "\"version\":2");
    REQUIRE(bumped != nodes);
    test::write_text(dir / "nodes.jsonl", bumped);
    CHECK_THROWS_AS(import_graph(dir.path()), FatalInputError);

    test::write_text(dir / "nodes.jsonl", "{\"format\":\"something-else\"}\n");
    CHECK_THROWS_AS(import_graph(dir.path()), FatalInputError);
    std::filesystem::remove(dir / "edges.jsonl");
    CHECK_THROWS_AS(import_graph(dir.path()), FatalInputError);
}

TEST_CASE("stats json and per-relation counts") {
    auto kg = assemble(toy()->in);
    auto s = stats(kg);
    REQUIRE(s.per_relation.count("UsedFor"));
    CHECK(s.per_relation["UsedFor"].assert_edges == 1);
    auto j = to_json(s);
    CHECK(j["assert_edges"] == 1);
    CHECK(j["per_relation"]["UsedFor"]["distinct_tails"] == 1);
}

TEST_CASE("subcategory common assertions") {
    auto t = toy();
    auto kg = assemble(t->in);
    auto rows = subcategory_common_assertions(kg, 0.5, 1);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].subcategory1 == "Dolls");
    CHECK(rows[0].subcategory2 == "Girls");
    CHECK(rows[0].count == 1);
    CHECK(rows[0].mean_typicality == doctest::Approx(0.8));
    CHECK(subcategory_common_assertions(kg, 0.9, 1).empty());
    CHECK(subcategory_common_assertions(kg, 0.5, 2).empty());
}
