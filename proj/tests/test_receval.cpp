#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "forge/receval.hpp"
#include "test_support.hpp"

using namespace forge;
using namespace forge::receval;

namespace {

std::vector<Interaction> one_user(std::size_t n, const std::string& user = "u") {
    std::vector<Interaction> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({user, "i" + std::to_string(i), 1.0 + static_cast<double>(i % 5), 0});
    return out;
}

kg::KnowledgeGraph pair_graph(const std::vector<std::pair<std::string, std::string>>& pairs,
                              const std::vector<double>& plaus = {}) {
    kg::KnowledgeGraph g;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto& [a, b] = pairs[k];
        g.nodes[a] = {a, kg::NodeKind::Item, "", std::nullopt};
        g.nodes[b] = {b, kg::NodeKind::Item, "", std::nullopt};
        const auto t = "in_" + std::to_string(k);
        g.nodes[t] = {t, kg::NodeKind::Intention, "tail", std::nullopt};
        const auto id = "ea_" + std::to_string(k);
        const double p = plaus.empty() ? 0.9 : plaus[k];
        g.edges[id] = {id, kg::EdgeKind::Assert, {a, b}, t, generation::Relation::UsedFor, p, p, std::nullopt};
    }
    return g;
}

}  // namespace

TEST_CASE("split_interactions") {
    auto s = split_interactions(one_user(10), 1);
    CHECK(s.train.size() == 8);
    CHECK(s.dev.size() == 1);
    CHECK(s.test.size() == 1);
    auto tiny = split_interactions(one_user(2), 1);
    CHECK(tiny.train.size() == 2);
    CHECK(tiny.test.empty());
    auto big = split_interactions(one_user(25), 1);
    CHECK(big.test.size() == 3);  // round(2.5) away from zero
    CHECK(big.dev.size() == 3);

    auto data = one_user(10, "a");
    auto more = one_user(7, "b");
    data.insert(data.end(), more.begin(), more.end());
    auto x = split_interactions(data, 42);
    auto y = split_interactions(data, 42);
    CHECK(x.train == y.train);
    CHECK(x.test == y.test);
    CHECK(x.train.size() + x.dev.size() + x.test.size() == data.size());
}

TEST_CASE("match_kg") {
    std::vector<Interaction> train{{"u", "a", 4, 0}, {"u", "b", 3, 0}, {"u", "c", 5, 0}};
    auto m = match_kg(pair_graph({{"a", "b"}, {"c", "d"}}), train);
    auto asserts = m.kg.edges_of(kg::EdgeKind::Assert);
    REQUIRE(asserts.size() == 1);
    CHECK(asserts[0]->src == std::vector<std::string>{"a", "b"});
    CHECK(m.coverage == doctest::Approx(2.0 / 3));
    CHECK(kg::no_dangling(m.kg));

    std::vector<Interaction> other{{"v", "x", 4, 0}, {"w", "a", 1, 0}, {"z", "b", 1, 0}};
    auto none = match_kg(pair_graph({{"a", "b"}}), other);
    CHECK(none.kg.edges.empty());
    CHECK(none.coverage == 0.0);
}

TEST_CASE("matched size and coverage shrink as the threshold rises") {
    Rng rng(31);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<std::pair<std::string, std::string>> pairs;
        std::vector<double> plaus;
        for (int k = 0; k < 30; ++k) {
            pairs.emplace_back("i" + std::to_string(rng.below(15)), "j" + std::to_string(rng.below(15)));
            plaus.push_back(rng.uniform());
        }
        std::vector<Interaction> train;
        for (int k = 0; k < 60; ++k)
            train.push_back({"u" + std::to_string(rng.below(6)),
                             (rng.below(2) ? "i" : "j") + std::to_string(rng.below(15)), 3, 0});
        auto g = pair_graph(pairs, plaus);
        std::size_t prev_edges = SIZE_MAX;
        double prev_cov = 2;
        for (double t : {0.0, 0.3, 0.5, 0.7, 0.9}) {
            auto m = match_kg(kg::filter_edges(g, t), train);
            const auto n = m.kg.edges_of(kg::EdgeKind::Assert).size();
            CHECK(n <= prev_edges);
            CHECK(m.coverage <= prev_cov);
            CHECK(m.coverage >= 0.0);
            CHECK(m.coverage <= 1.0);
            prev_edges = n;
            prev_cov = m.coverage;
        }
    }
}

TEST_CASE("rmse") {
    CHECK(rmse(std::vector<double>{1, 2}, std::vector<double>{2, 4}) == doctest::Approx(std::sqrt(2.5)).epsilon(1e-12));
    CHECK(rmse(std::vector<double>{3, 4}, std::vector<double>{3, 4}) == 0.0);
    CHECK(rmse(std::vector<double>{9}, std::vector<double>{5}) == 0.0);  // clamped to 5
    CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), DomainError);
    CHECK_THROWS_AS(rmse(std::vector<double>{1}, std::vector<double>{1, 2}), DomainError);
}

TEST_CASE("constant ratings give a constant predictor") {
    std::vector<Interaction> data;
    for (int u = 0; u < 10; ++u)
        for (int i = 0; i < 10; ++i) data.push_back({"u" + std::to_string(u), "i" + std::to_string(i), 3.5, 0});
    PredictorConfig cfg;
    auto m = train_predictor(data, nullptr, cfg);
    CHECK(m.mu == doctest::Approx(3.5));
    CHECK(m.predict("stranger", "unknown") == doctest::Approx(3.5));
    // residual error is the initial factor noise decaying under SGD
    CHECK(std::abs(m.predict("u1", "i2") - 3.5) < 0.05);
    for (const auto& [_, b] : m.item_bias) CHECK(std::abs(b) < 0.02);
    CHECK(rmse(m, data) < 0.05);
    CHECK(train_predictor(data, nullptr, cfg) == m);
    CHECK_THROWS_AS(train_predictor({}, nullptr, cfg), DomainError);
}

TEST_CASE("planted signal is learnable only with features") {
    auto syn = planted_signal(7);
    PredictorConfig cfg;
    cfg.seed = 7;
    auto with = train_predictor(syn.interactions, &syn.features, cfg);
    const double r_with = rmse(with, syn.interactions);
    CHECK(r_with < 0.1);

    // Plain MF memorises most of its training ratings, so the gap shows on held-out items.
    auto split = split_interactions(syn.interactions, 7);
    auto held_with = train_predictor(split.train, &syn.features, cfg);
    auto held_without = train_predictor(split.train, nullptr, cfg);
    const double t_with = rmse(held_with, split.test);
    const double t_without = rmse(held_without, split.test);
    MESSAGE("train rmse " << r_with << "; test rmse with " << t_with << ", without " << t_without);
    CHECK(t_with < 0.2);
    CHECK(t_without > 0.5);

    // the mean predictor bounds the trained model on its own training data
    std::vector<double> mu(syn.interactions.size(), with.mu), truth;
    for (const auto& x : syn.interactions) truth.push_back(x.rating);
    CHECK(r_with <= rmse(mu, truth));

    CHECK(train_predictor(split.train, &syn.features, cfg) == held_with);
    FeatureMap ragged = syn.features;
    ragged.begin()->second.push_back(1.0);
    CHECK_THROWS_AS(train_predictor(syn.interactions, &ragged, cfg), DomainError);
}

TEST_CASE("run_ablation") {
    auto syn = planted_signal(3, 60, 300, 4);
    PredictorConfig cfg;
    cfg.epochs = 20;
    std::vector<AblationConfig> configs{{"none", std::nullopt, false, 0.0},
                                        {"kg", syn.features, true, 0.8},
                                        {"kg-again", syn.features, true, 0.8},
                                        {"missing", std::nullopt, true, 0.0}};
    auto rows = run_ablation(syn.interactions, configs, {1, 2, 3, 4, 5}, cfg);
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].runs.size() == 5);
    double mean = 0;
    for (double r : rows[1].runs) mean += r / 5;
    CHECK(rows[1].mean_rmse == doctest::Approx(mean).epsilon(1e-12));
    double var = 0;
    for (double r : rows[1].runs) var += (r - mean) * (r - mean) / 4;
    CHECK(rows[1].std == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    CHECK(rows[1].runs == rows[2].runs);
    CHECK(rows[1].mean_rmse < rows[0].mean_rmse);
    CHECK(rows[1].coverage == 0.8);

    auto csv = report_csv(rows);
    CHECK(csv.rfind("config,mean_rmse,std,coverage\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("load_interactions") {
    test::TempDir dir;
    test::write_text(dir / "r.tsv", "u1\ti1\t4\t100\nbad line\nu2\ti2\tx\t1\nu2\ti3\t2.5\t7\n");
    auto rows = load_interactions(dir / "r.tsv");
    REQUIRE(rows.size() == 2);
    CHECK(rows[1] == Interaction{"u2", "i3", 2.5, 7});
    CHECK(load_interactions(test::fixture_dir() / "toy" / "interactions.tsv").size() == 218);
    CHECK_THROWS_AS(load_interactions(dir / "none.tsv"), FatalInputError);
}
