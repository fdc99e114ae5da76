#include <doctest.h>

#include <cmath>
#include <map>
#include <thread>

#include "forge/mock_backend.hpp"
#include "forge/population.hpp"
#include "test_support.hpp"

using namespace forge;
using namespace forge::population;
using generation::Assertion;
using generation::Relation;

namespace {

ScoredAssertion scored(const std::string& id, double p, double t) {
    return ScoredAssertion{Assertion{id, "pr_x", Relation::UsedFor, "tail " + id + ".", ""}, p, t};
}

class FlakyScorer : public Scorer {
  public:
    explicit FlakyScorer(int failures) : failures_(failures) {}
    std::vector<std::optional<Scores>> score(const std::vector<Assertion>& batch,
                                             const std::vector<std::string>&) override {
        ++calls;
        if (calls <= failures_) throw ScorerError("down");
        std::vector<std::optional<Scores>> out;
        for (const auto& a : batch) {
            if (a.assertion_id == "missing") out.emplace_back(std::nullopt);
            else out.push_back(Scores{0.9, 0.1});
        }
        return out;
    }
    int calls = 0;

  private:
    int failures_;
};

}  // namespace

TEST_CASE("average ranks share ties") {
    CHECK(average_ranks({10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
    CHECK(average_ranks({}).empty());
}

TEST_CASE("spearman") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5}) == doctest::Approx(1 - 6.0 * 4 / (5 * 24)));
    CHECK_THROWS_AS(spearman({1}, {1}), DomainError);
    CHECK_THROWS_AS(spearman({1, 2}, {1}), DomainError);
    CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), DomainError);

    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 3 + rng.below(40);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(rng.below(8));  // plenty of ties
            y[i] = x[i] + static_cast<double>(rng.below(5));
        }
        bool flat = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
                    std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
        if (flat) continue;
        CHECK(spearman(x, y) == doctest::Approx(test::oracle_spearman(x, y)).epsilon(1e-10));
    }
}

TEST_CASE("filter_by_threshold is strict and monotone") {
    std::vector<ScoredAssertion> s{scored("a", 0.5, 0.9), scored("b", 0.51, 0.2), scored("c", 0.9, 0.6)};
    CHECK(filter_by_threshold(s, 0.5).size() == 2);
    CHECK(filter_by_threshold(s, 0.5, 0.5).size() == 1);
    CHECK(filter_by_threshold(s, 1.0).empty());

    Rng rng(3);
    std::vector<ScoredAssertion> many;
    for (int i = 0; i < 300; ++i) many.push_back(scored(std::to_string(i), rng.uniform(), rng.uniform()));
    std::size_t prev = many.size() + 1;
    for (double t = 0.0; t <= 1.0; t += 0.05) {
        const auto kept = filter_by_threshold(many, t).size();
        CHECK(kept <= prev);
        prev = kept;
    }
}

TEST_CASE("pr_curve") {
    const std::vector<double> pred{0.9, 0.8, 0.6, 0.3};
    const std::vector<int> gold{1, 0, 1, 1};
    auto pts = pr_curve(pred, gold);
    CHECK(std::is_sorted(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.threshold < b.threshold; }));
    std::map<double, PrPoint> at;
    for (auto& p : pts) at[p.threshold] = p;
    REQUIRE(at.count(0.3));
    CHECK(at[0.3].precision == doctest::Approx(0.75));
    CHECK(at[0.3].recall == doctest::Approx(1.0));
    REQUIRE(at.count(0.8));
    CHECK(at[0.8].precision == doctest::Approx(0.5));
    CHECK(at[0.8].recall == doctest::Approx(1.0 / 3));
    REQUIRE(at.count(0.5));
    CHECK(at[0.5].precision == doctest::Approx(2.0 / 3));
    CHECK_FALSE(at.count(0.95));
    // recall never grows with the threshold
    for (std::size_t i = 1; i < pts.size(); ++i) CHECK(pts[i].recall <= pts[i - 1].recall + 1e-12);
}

TEST_CASE("derive_training_labels") {
    using annotation::Label;
    using annotation::PlausibilityLabel;
    std::vector<Label> labels{{"a", PlausibilityLabel::Plausible, 0.9},
                              {"b", PlausibilityLabel::Implausible, 0.5},
                              {"c", std::nullopt, 0.1},
                              {"d", PlausibilityLabel::Plausible, std::nullopt}};
    std::map<std::string, std::string> texts{{"a", "A"}, {"b", "B"}, {"c", "C"}};
    auto plau = derive_training_labels(annotation::Task::Plausibility, labels, texts);
    REQUIRE(plau.size() == 2);  // d has no text
    CHECK(plau[0].label == ExampleLabel::Positive);
    CHECK(plau[1].label == ExampleLabel::Negative);
    auto typ = derive_training_labels(annotation::Task::Typicality, labels, texts);
    REQUIRE(typ.size() == 2);  // b's 0.5 is excluded
    CHECK(typ[0].assertion_id == "a");
    CHECK(typ[0].label == ExampleLabel::Positive);
    CHECK(typ[1].label == ExampleLabel::Negative);
}

TEST_CASE("split_train_dev is stratified and deterministic") {
    std::vector<LabeledExample> ex;
    for (int i = 0; i < 10; ++i)
        ex.push_back({"e" + std::to_string(i), "t", i < 7 ? ExampleLabel::Positive : ExampleLabel::Negative,
                      annotation::Task::Plausibility});
    auto [train, dev] = split_train_dev(ex, 0.8, 1);
    CHECK(train.size() == 8);
    CHECK(dev.size() == 2);
    CHECK(std::count_if(train.begin(), train.end(), [](auto& e) { return e.label == ExampleLabel::Negative; }) == 2);
    auto [train2, dev2] = split_train_dev(ex, 0.8, 1);
    for (std::size_t i = 0; i < train.size(); ++i) CHECK(train[i].assertion_id == train2[i].assertion_id);
    CHECK(to_tsv({ex[0]}) == "t\t1\n");
}

TEST_CASE("score_assertions retries and drops missing scores") {
    std::vector<Assertion> as{{"a", "p", Relation::UsedFor, "x.", ""}, {"missing", "p", Relation::UsedFor, "y.", ""},
                              {"c", "p", Relation::UsedFor, "z.", ""}};
    std::vector<std::string> texts{"x", "y", "z"};
    ScoringOptions opts;
    opts.batch_size = 2;
    opts.initial_backoff = std::chrono::milliseconds(1);
    FlakyScorer ok(1);
    auto res = score_assertions(ok, as, texts, opts);
    CHECK(res.scored.size() == 2);
    CHECK(res.dropped == 1);
    CHECK(res.scored[0].plausibility == 0.9);
    FlakyScorer dead(100);
    CHECK_THROWS_AS(score_assertions(dead, as, texts, opts), ScorerError);
}

TEST_CASE("FileScorer") {
    test::TempDir dir;
    test::write_text(dir / "scores.jsonl", R"({"assertion_id":"a","plausibility":0.7,"typicality":0.2})"
                                           "\n"
                                           R"({"assertion_id":"b","plausibility":true,"typicality":0})"
                                           "\n");
    FileScorer fs(dir / "scores.jsonl");
    CHECK(fs.size() == 2);
    auto out = fs.score({{"a", "", Relation::Open, "", ""}, {"b", "", Relation::Open, "", ""}, {"q", "", Relation::Open, "", ""}},
                        {"", "", ""});
    REQUIRE(out.size() == 3);
    CHECK(out[0]->plausibility == 0.7);
    CHECK(out[1]->plausibility == 1.0);
    CHECK_FALSE(out[2].has_value());
    CHECK_THROWS_AS(FileScorer(dir / "none.jsonl"), FatalInputError);
}

TEST_CASE("HttpScorer against the mock backend") {
    mock::MockServer server(mock::TailPool{});
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread t([&] { server.listen(); });
    HttpScorer hs("http://127.0.0.1:" + std::to_string(port));
    auto out = hs.score({{"a", "", Relation::Open, "", ""}, {"b", "", Relation::Open, "", ""}}, {"first text", "second"});
    REQUIRE(out.size() == 2);
    CHECK(out[0]->plausibility == doctest::Approx(mock::score("first text").plausibility));
    CHECK(out[1]->typicality == doctest::Approx(mock::score("second").typicality));
    server.stop();
    t.join();
    HttpScorer down("http://127.0.0.1:1");
    CHECK_THROWS_AS(down.score({{"a", "", Relation::Open, "", ""}}, {"x"}), ScorerError);
}

TEST_CASE("content tokens and novelty") {
    CHECK(content_tokens("The Red, shirt!") == std::vector<std::string>{"red", "shirt"});
    auto pair = ingest::make_pair(ingest::Item{"a", "Red Shirt", "", {}, {}, ""}, ingest::Item{"b", "Blue Pants", "", {}, {}, ""});
    std::vector<ScoredAssertion> s{scored("1", 1, 1), scored("2", 1, 1)};
    s[0].assertion.pair_id = s[1].assertion.pair_id = pair.pair_id;
    s[0].assertion.tail = "a red shirt.";
    s[1].assertion.tail = "a summer party.";
    CHECK(novelty_ratio(s, {{pair.pair_id, pair}}) == doctest::Approx(0.5));
}

TEST_CASE("scored assertion json") {
    auto s = scored("a", 0.25, 0.75);
    auto back = scored_from_json(to_json(s));
    CHECK(back.assertion.assertion_id == "a");
    CHECK(back.plausibility == 0.25);
    CHECK(back.typicality == 0.75);
    CHECK(back.assertion.relation == Relation::UsedFor);
}
