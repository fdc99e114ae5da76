#include <doctest.h>

#include <cmath>

#include "forge/conceptualize.hpp"
#include "test_support.hpp"

using namespace forge;
using namespace forge::conceptualize;

namespace {
ConceptTable daughter_table() {
    ConceptTable t;
    t.add("daughter", "offspring", 3);
    t.add("daughter", "relative", 2);
    t.add("daughter", "family-member", 1);
    return t;
}
}  // namespace

TEST_CASE("daughter example") {
    auto out = conceptualize_tail("in_1", "used for his daughter", daughter_table(), {});
    REQUIRE(out.size() == 3);
    CHECK(out[0].abstract_tail == "used for his offspring");
    CHECK(out[1].abstract_tail == "used for his relative");
    CHECK(out[2].abstract_tail == "used for his family-member");
    CHECK(out[0].weight == doctest::Approx(0.5));
    CHECK(out[1].weight == doctest::Approx(1.0 / 3));
    CHECK(out[2].weight == doctest::Approx(1.0 / 6));
    for (const auto& a : out) {
        CHECK(a.source_tail_id == "in_1");
        CHECK(a.span == "daughter");
        CHECK(a.node_id == abstract_node_id(a.abstract_tail));
    }
}

TEST_CASE("punctuation and case stay outside the span") {
    auto out = conceptualize_tail("in_1", "For His Daughter.", daughter_table(), {});
    REQUIRE_FALSE(out.empty());
    CHECK(out[0].abstract_tail == "For His offspring.");
}

TEST_CASE("top_k and min_weight trim without renormalizing") {
    ConceptualizeOptions opts;
    opts.top_k = 2;
    auto out = conceptualize_tail("x", "his daughter", daughter_table(), opts);
    REQUIRE(out.size() == 2);
    CHECK(out[0].weight + out[1].weight == doctest::Approx(5.0 / 6));
    opts.top_k = 10;
    opts.min_weight = 0.2;
    CHECK(conceptualize_tail("x", "his daughter", daughter_table(), opts).size() == 2);
    opts.top_k = 0;
    CHECK_THROWS_AS(conceptualize_tail("x", "his daughter", daughter_table(), opts), DomainError);
}

TEST_CASE("longest span wins, rightmost among equals") {
    ConceptTable t;
    t.add("cell phone", "device", 1);
    t.add("phone", "object", 1);
    t.add("case", "container", 1);
    auto out = conceptualize_tail("x", "a cell phone case", t, {});
    REQUIRE(out.size() == 1);
    CHECK(out[0].abstract_tail == "a device case");
    auto right = conceptualize_tail("x", "phone case", t, {});
    REQUIRE(right.size() == 1);
    CHECK(right[0].span == "case");
    CHECK(conceptualize_tail("x", "nothing here", t, {}).empty());
    CHECK(conceptualize_tail("x", "", t, {}).empty());
}

TEST_CASE("weights are in (0,1] and sum to at most one") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        ConceptTable t;
        const std::size_t k = 1 + rng.below(15);
        for (std::size_t i = 0; i < k; ++i) t.add("thing", "c" + std::to_string(i), 0.01 + rng.uniform() * 10);
        ConceptualizeOptions opts;
        opts.top_k = 1 + rng.below(12);
        opts.min_weight = rng.uniform() * 0.1;
        auto out = conceptualize_tail("x", "a thing", t, opts);
        double sum = 0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i].weight > 0);
            CHECK(out[i].weight <= 1);
            if (i) CHECK(out[i].weight <= out[i - 1].weight);
            sum += out[i].weight;
        }
        CHECK(sum <= 1 + 1e-12);
        CHECK(out.size() <= opts.top_k);
    }
}

TEST_CASE("concept table") {
    ConceptTable t;
    CHECK_THROWS_AS(t.add("a", "b", 0), DomainError);
    CHECK_THROWS_AS(t.add("a", "b", -1), DomainError);
    CHECK_THROWS_AS(t.add("a", "b", std::nan("")), DomainError);
    t.add("Big Dog", "animal", 1);
    t.add("big dog", "animal", 2);
    CHECK(t.contains("big dog"));
    CHECK(t.lookup("BIG DOG").front().likelihood == 3);
    CHECK(t.max_span_tokens() == 2);

    auto load = load_concept_table(test::fixture_dir() / "toy" / "concepts.tsv");
    CHECK(load.skipped == 0);
    CHECK(load.table.lookup("daughter").size() == 3);
    CHECK_THROWS_AS(load_concept_table("/nonexistent/concepts.tsv"), FatalInputError);
}

TEST_CASE("abstract json round trip") {
    auto out = conceptualize_tail("in_1", "for his daughter", daughter_table(), {});
    auto back = abstract_from_json(to_json(out[0]));
    CHECK(back.node_id == out[0].node_id);
    CHECK(back.weight == out[0].weight);
    CHECK(back.abstract_tail == out[0].abstract_tail);
}
