#include <doctest.h>

#include <map>

#include "forge/ingest.hpp"
#include "test_support.hpp"

using namespace forge;
using namespace forge::ingest;

namespace {
Item item(const std::string& id, const std::string& title, const std::string& cat = "Clothing") {
    return Item{id, title, cat, {cat, "Sub"}, {}, ""};
}

std::string item_line(const std::string& id, const std::string& title) {
    return to_json(item(id, title)).dump() + "\n";
}
}  // namespace

TEST_CASE("load_catalog") {
    test::TempDir dir;
    SUBCASE("empty file") {
        test::write_text(dir / "items.jsonl", "");
        auto load = load_catalog(dir / "items.jsonl");
        CHECK(load.catalog.size() == 0);
        CHECK(load.malformed == 0);
    }
    SUBCASE("duplicate id keeps the last record") {
        test::write_text(dir / "items.jsonl", item_line("a", "First") + item_line("b", "B") + item_line("a", "Second"));
        auto load = load_catalog(dir / "items.jsonl");
        CHECK(load.catalog.size() == 2);
        CHECK(load.catalog.find("a")->title == "Second");
    }
    SUBCASE("malformed and invalid lines are counted") {
        test::write_text(dir / "items.jsonl", item_line("a", "A") + "{oops\n" + R"({"id":"b","title":"   "})" + "\n" +
                                                  R"({"id":7,"title":"Numeric id"})" + "\n");
        auto load = load_catalog(dir / "items.jsonl");
        CHECK(load.catalog.size() == 2);
        CHECK(load.catalog.contains("7"));
        CHECK(load.malformed == 2);
    }
    SUBCASE("fixture catalog keeps subcategory paths") {
        auto load = load_catalog(test::fixture_dir() / "toy" / "items.jsonl");
        CHECK(load.catalog.size() == 40);
        CHECK(load.malformed == 1);
        const auto* it = load.catalog.find("B0001");
        REQUIRE(it != nullptr);
        CHECK(it->subcategory_path == std::vector<std::string>{"Clothing, Shoes & Jewelry", "Girls", "Dresses"});
        CHECK(it->image_urls.size() == 1);
    }
    SUBCASE("unreadable file is fatal") { CHECK_THROWS_AS(load_catalog(dir / "nope.jsonl"), FatalInputError); }
}

TEST_CASE("item json round trip") {
    Item a{"x1", "Red Shirt", "Clothing", {"Clothing", "Men", "Shirts"}, {"u1", "u2"}, "https://x"};
    auto back = item_from_json(to_json(a));
    REQUIRE(back);
    CHECK(*back == a);
    CHECK(Item{"i", "t", "", {"Toys", "Dolls"}, {}, ""}.top_category() == "Toys");
}

TEST_CASE("build_cobuy_graph") {
    SUBCASE("empty") {
        auto g = build_cobuy_graph({}, nullptr).graph;
        CHECK(g.node_count() == 0);
        CHECK(g.edge_count() == 0);
    }
    SUBCASE("duplicates and self-loops collapse") {
        auto g = build_cobuy_graph({{"a", "b"}, {"b", "a"}, {"a", "a"}}, nullptr).graph;
        CHECK(g.edge_count() == 1);
        CHECK(g.has_edge("b", "a"));
        CHECK(g.degree("a") == 1);
    }
    SUBCASE("unknown ids are skipped") {
        ItemCatalog cat;
        cat.upsert(item("a", "A"));
        cat.upsert(item("b", "B"));
        auto build = build_cobuy_graph({{"a", "b"}, {"a", "zzz"}}, &cat);
        CHECK(build.graph.edge_count() == 1);
        CHECK(build.skipped_unknown == 1);
    }
    SUBCASE("rebuilding from its own edges is idempotent") {
        Rng rng(5);
        std::vector<Edge> recs;
        for (int i = 0; i < 200; ++i)
            recs.emplace_back("n" + std::to_string(rng.below(30)), "n" + std::to_string(rng.below(30)));
        auto g1 = build_cobuy_graph(recs, nullptr).graph;
        std::vector<Edge> again(g1.edges().begin(), g1.edges().end());
        auto g2 = build_cobuy_graph(again, nullptr).graph;
        CHECK(g1.edges() == g2.edges());
    }
}

TEST_CASE("pair ids are order independent") {
    CHECK(make_pair_id("a", "b") == make_pair_id("b", "a"));
    auto p = make_pair(item("z", "Z"), item("a", "A"));
    CHECK(p.item1.id == "a");
    CHECK(p.item2.id == "z");
    CHECK(p.pair_id == make_pair_id("a", "z"));
}

TEST_CASE("title_quality_filter") {
    CHECK(title_quality_filter(item("1", "Red Shirt")));
    CHECK_FALSE(title_quality_filter(item("2", "buy buy buy shirt sale")));
    std::string stuffed;
    for (int i = 0; i < 60; ++i) stuffed += "kw" + std::to_string(i) + " ";
    CHECK_FALSE(title_quality_filter(item("3", stuffed)));
    CHECK_FALSE(title_quality_filter(item("4", "case phone case case charger case")));  // 4/6 identical
    CHECK(title_quality_filter(item("5", "case phone case charger")));                  // exactly half
    CHECK(title_quality_filter(item("6", "Shirt")));
}

TEST_CASE("sample_pairs on a 6-node toy graph matches a brute-force degree count") {
    // a-b, a-c, a-d, b-c, b-d, c-d is K4 on {a,b,c,d}; e and f hang off a and b.
    std::vector<Edge> recs{{"a", "b"}, {"a", "c"}, {"a", "d"}, {"b", "c"},
                           {"b", "d"}, {"c", "d"}, {"a", "e"}, {"b", "f"}, {"e", "f"}};
    auto g = build_cobuy_graph(recs, nullptr).graph;
    ItemCatalog cat;
    for (const auto* id : {"a", "b", "c", "d", "e", "f"}) cat.upsert(item(id, std::string("Item ") + id));

    std::map<std::string, std::size_t> degree;
    for (const auto& [x, y] : recs) {
        ++degree[x];
        ++degree[y];
    }
    std::set<std::string> expected;
    for (const auto& [x, y] : g.edges())
        if (degree[x] >= 3 && degree[y] >= 3) expected.insert(make_pair_id(x, y));

    SampleOptions opts;
    opts.n = 100;
    opts.min_degree = 2;
    auto pairs = sample_pairs(g, cat, opts);
    std::set<std::string> got;
    for (const auto& p : pairs) got.insert(p.pair_id);
    CHECK(got == expected);
    CHECK(got.size() == 6);
}

TEST_CASE("sample_pairs is deterministic, uniform-sized and respects predicates") {
    ItemCatalog cat;
    std::vector<Edge> recs;
    Rng rng(11);
    for (int i = 0; i < 60; ++i)
        cat.upsert(item("i" + std::to_string(i), "Title " + std::to_string(i), i % 3 ? "Clothing" : "Toys"));
    for (int k = 0; k < 400; ++k) recs.emplace_back("i" + std::to_string(rng.below(60)), "i" + std::to_string(rng.below(60)));
    auto g = build_cobuy_graph(recs, &cat).graph;

    SampleOptions opts;
    opts.categories = {"Clothing"};
    opts.n = 25;
    opts.min_degree = 5;
    opts.seed = 99;
    auto a = sample_pairs(g, cat, opts);
    auto b = sample_pairs(g, cat, opts);
    REQUIRE(a.size() == 25);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].pair_id == b[i].pair_id);
    for (const auto& p : a) {
        CHECK(g.degree(p.item1.id) > 5);
        CHECK(g.degree(p.item2.id) > 5);
        CHECK(p.item1.top_category() == "Clothing");
        CHECK(p.item2.top_category() == "Clothing");
        CHECK(p.item1.id < p.item2.id);
    }
    CHECK(std::is_sorted(a.begin(), a.end(), [](const auto& x, const auto& y) { return x.pair_id < y.pair_id; }));

    opts.seed = 100;
    auto c = sample_pairs(g, cat, opts);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].pair_id != c[i].pair_id;
    CHECK(differs);

    opts.n = 100000;
    auto all = sample_pairs(g, cat, opts);
    CHECK(all.size() < 100000);  // short result when too few are eligible
    CHECK(sample_pairs(CoBuyGraph{}, cat, opts).empty());
}

TEST_CASE("pairs json resolves against the catalog") {
    ItemCatalog cat;
    cat.upsert(item("a", "A"));
    cat.upsert(item("b", "B"));
    auto p = make_pair(*cat.find("a"), *cat.find("b"));
    auto back = pair_from_json(pair_to_json(p), cat);
    CHECK(back.pair_id == p.pair_id);
    CHECK(back.item2.title == "B");
    CHECK_THROWS_AS(pair_from_json(json{{"item1_id", "a"}, {"item2_id", "q"}}, cat), FatalInputError);
}
