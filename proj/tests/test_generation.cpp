#include <doctest.h>

#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include "forge/generation.hpp"
#include "forge/mock_backend.hpp"
#include "test_support.hpp"

using namespace forge;
using namespace forge::generation;

namespace {

ingest::CoBuyPair pair_of(const std::string& a, const std::string& ta, const std::string& b, const std::string& tb) {
    return ingest::make_pair(ingest::Item{a, ta, "Clothing", {}, {}, ""}, ingest::Item{b, tb, "Clothing", {}, {}, ""});
}

class ScriptedBackend : public TextGenerator {
  public:
    explicit ScriptedBackend(int failures_before_success) : failures_(failures_before_success) {}
    std::vector<std::string> complete(const std::string&, const GenerationConfig&) override {
        ++calls;
        if (calls <= failures_) throw std::runtime_error("503");
        return {"pockets and zippers. Extra.", "pockets and zippers. Again."};
    }
    int calls = 0;

  private:
    int failures_;
};

class EchoBackend : public TextGenerator {
  public:
    std::vector<std::string> complete(const std::string& prompt, const GenerationConfig& cfg) override {
        std::lock_guard lock(mu);
        prompts.push_back(prompt);
        if (prompt.find("Broken") != std::string::npos) throw std::runtime_error("boom");
        std::vector<std::string> out;
        for (int i = 0; i < cfg.samples_per_prompt; ++i) out.push_back("tail " + std::to_string(i % 2) + ".");
        return out;
    }
    std::mutex mu;
    std::vector<std::string> prompts;
};

}  // namespace

TEST_CASE("relation table") {
    CHECK(relation_table().size() == 19);
    std::set<std::string_view> names;
    for (const auto& r : relation_table()) {
        names.insert(r.name);
        CHECK(relation_from_name(r.name) == r.relation);
        CHECK(info(r.relation).name == r.name);
    }
    CHECK(names.size() == 19);
    CHECK(info(Relation::Open).continuation.empty());
    CHECK(info(Relation::UsedFor).group == RelationGroup::Function);
    CHECK(info(Relation::CauseDesire).group == RelationGroup::Human);
    CHECK(info(Relation::MadeOf).group == RelationGroup::Item);
    CHECK_THROWS_AS(relation_from_name("Likes"), DomainError);
}

TEST_CASE("render_prompt") {
    const auto p = pair_of("a", "Camera Case", "b", "Tripod");
    CHECK(render_prompt(p, Relation::HasA) == "A user bought Camera Case and Tripod because they both have");
    CHECK(render_prompt(p, Relation::Cause) == "A user bought Camera Case and Tripod because the person wants to");
    CHECK(render_prompt(p, Relation::Open) == "A user bought Camera Case and Tripod because");
    CHECK(render_prompt(p, Relation::UsedFor) == "A user bought Camera Case and Tripod because they are both used for");
}

TEST_CASE("postprocess") {
    CHECK(postprocess("pockets and zippers. They also look nice.") == std::optional<std::string>("pockets and zippers."));
    CHECK_FALSE(postprocess("a").has_value());
    CHECK_FALSE(postprocess("").has_value());
    CHECK_FALSE(postprocess(" ... ").has_value());
    CHECK(postprocess("  pockets.  ") == std::optional<std::string>("pockets."));
    CHECK(postprocess("it keeps you warm in winter") == std::optional<std::string>("it keeps you warm in winter"));
    CHECK(postprocess("he said \"go.\" Then left.") == std::optional<std::string>("he said \"go.\""));

    const std::string prompt = "A user bought X and Y because they both have";
    CHECK(postprocess("they both have pockets. More.", prompt) == std::optional<std::string>("pockets."));
    CHECK(postprocess(prompt + " pockets. More.", prompt) == std::optional<std::string>("pockets."));

    SUBCASE("idempotent on its own output") {
        for (const char* raw : {"pockets and zippers. They also", "  a   b c!!  d", "x y z", "Dr. Who? yes.", "one"}) {
            auto once = postprocess(raw);
            if (once) CHECK(postprocess(*once) == once);
        }
    }
}

TEST_CASE("split_sentences") {
    CHECK(split_sentences("One. Two! Three") == std::vector<std::string>{"One.", "Two!", "Three"});
    CHECK(split_sentences("").empty());
}

TEST_CASE("dedup_corpus drops exact duplicates only") {
    std::vector<Assertion> in;
    for (int i = 0; i < 83; ++i) in.push_back({"", "p" + std::to_string(i % 7), Relation::UsedFor, "t" + std::to_string(i), ""});
    for (int i = 0; i < 17; ++i) in.push_back(in[static_cast<std::size_t>(i * 3)]);
    auto out = dedup_corpus(in);
    CHECK(out.size() == 83);
    CHECK(dedup_corpus(out).size() == 83);
    // same tail under another relation is kept
    in.push_back({"", "p0", Relation::HasA, "t0", ""});
    CHECK(dedup_corpus(in).size() == 84);
}

TEST_CASE("assertion ids") {
    CHECK(make_assertion_id("p", Relation::UsedFor, "x.") == make_assertion_id("p", Relation::UsedFor, "x."));
    CHECK(make_assertion_id("p", Relation::UsedFor, "x.") != make_assertion_id("p", Relation::HasA, "x."));
    GenerationRecord r{"as_1", "pr_1", Relation::HasA, "prompt", "raw", std::nullopt, 2};
    auto back = generation_from_json(to_json(r));
    CHECK(back.assertion_id == "as_1");
    CHECK(back.relation == Relation::HasA);
    CHECK_FALSE(back.tail.has_value());
    CHECK(back.sample_index == 2);
}

TEST_CASE("generate retries with exponential backoff") {
    GenerationConfig cfg;
    cfg.samples_per_prompt = 3;
    cfg.max_attempts = 3;
    cfg.initial_backoff = std::chrono::milliseconds(10);
    std::vector<long> waits;
    auto sleeper = [&](std::chrono::milliseconds d) { waits.push_back(static_cast<long>(d.count())); };

    SUBCASE("success after two failures") {
        ScriptedBackend b(2);
        auto out = generate(b, "p", cfg, sleeper);
        CHECK(b.calls == 3);
        CHECK(waits == std::vector<long>{10, 20});
        REQUIRE(out.size() == 3);
        CHECK(out[2].empty());  // padded
    }
    SUBCASE("gives up") {
        ScriptedBackend b(5);
        CHECK_THROWS_AS(generate(b, "p", cfg, sleeper), GenerationError);
        CHECK(b.calls == 3);
    }
}

TEST_CASE("run_generation collects failures and orders records") {
    EchoBackend b;
    GenerationConfig cfg;
    cfg.samples_per_prompt = 3;
    cfg.max_attempts = 1;
    cfg.max_in_flight = 3;
    std::vector<ingest::CoBuyPair> pairs{pair_of("a", "Hat", "b", "Scarf"), pair_of("c", "Broken Lamp", "d", "Bulb"),
                                         pair_of("e", "Pen", "f", "Ink")};
    auto run = run_generation(b, pairs, {Relation::UsedFor, Relation::HasA}, cfg);
    CHECK(b.prompts.size() == 6);
    CHECK(run.failures.size() == 2);
    CHECK(run.records.size() == 4 * 3);
    for (std::size_t i = 1; i < run.records.size(); ++i) {
        const auto& x = run.records[i - 1];
        const auto& y = run.records[i];
        CHECK(std::tie(x.pair_id, x.relation, x.sample_index) < std::tie(y.pair_id, y.relation, y.sample_index));
    }
    // samples 0 and 2 share a tail
    CHECK(assertions_of(run.records).size() == 4 * 2);
}

TEST_CASE("HttpGenerator against the mock backend") {
    test::TempDir dir;
    test::write_text(dir / "pool.tsv", "UsedFor\this daughter.\nUsedFor\ta picnic.\nHasA\tpockets.\n");
    mock::MockServer server(mock::load_tail_pool(dir / "pool.tsv"));
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread t([&] { server.listen(); });

    GenerationConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
    cfg.samples_per_prompt = 4;
    HttpGenerator gen;
    const auto prompt = render_prompt(pair_of("a", "Hat", "b", "Scarf"), Relation::UsedFor);
    auto texts = gen.complete(prompt, cfg);
    CHECK(texts.size() == 4);
    for (const auto& s : texts) {
        auto tail = postprocess(s, prompt);
        REQUIRE(tail);
        CHECK((*tail == "his daughter." || *tail == "a picnic."));
    }
    CHECK(gen.complete(prompt, cfg) == texts);

    GenerationConfig bad = cfg;
    bad.endpoint = "http://127.0.0.1:1";
    bad.max_attempts = 2;
    bad.initial_backoff = std::chrono::milliseconds(1);
    CHECK_THROWS_AS(generate(gen, prompt, bad), GenerationError);

    server.stop();
    t.join();
}
