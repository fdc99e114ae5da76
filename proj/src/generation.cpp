#include "forge/generation.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

namespace forge::generation {

namespace {
constexpr std::array<RelationInfo, kRelationCount> kRelations{{
    {Relation::Open, "Open", RelationGroup::Open, ""},
    {Relation::HasA, "HasA", RelationGroup::Item, "they both have"},
    {Relation::HasProperty, "HasProperty", RelationGroup::Item, "they both have a property of"},
    {Relation::RelatedTo, "RelatedTo", RelationGroup::Item, "they both are related to"},
    {Relation::SimilarTo, "SimilarTo", RelationGroup::Item, "they both are similar to"},
    {Relation::PartOf, "PartOf", RelationGroup::Item, "they both are a part of"},
    {Relation::IsA, "IsA", RelationGroup::Item, "they both are a type of"},
    {Relation::MadeOf, "MadeOf", RelationGroup::Item, "they both are made of"},
    {Relation::CreatedBy, "CreatedBy", RelationGroup::Item, "they are created by"},
    {Relation::DistinctFrom, "DistinctFrom", RelationGroup::Item, "they are distinct from"},
    {Relation::DerivedFrom, "DerivedFrom", RelationGroup::Item, "they are derived from"},
    {Relation::UsedFor, "UsedFor", RelationGroup::Function, "they are both used for"},
    {Relation::CapableOf, "CapableOf", RelationGroup::Function, "they both are capable of"},
    {Relation::SymbolOf, "SymbolOf", RelationGroup::Function, "they both are symbols of"},
    {Relation::MannerOf, "MannerOf", RelationGroup::Function, "they both are a manner of"},
    {Relation::DefinedAs, "DefinedAs", RelationGroup::Function, "they both are defined as"},
    {Relation::Result, "Result", RelationGroup::Human, "as a result, the person"},
    {Relation::Cause, "Cause", RelationGroup::Human, "the person wants to"},
    {Relation::CauseDesire, "CauseDesire", RelationGroup::Human, "the person wants his"},
}};

// Lowercased tokens that end in '.' without ending a sentence.
const std::set<std::string> kAbbreviations{
    "mr.", "mrs.", "ms.", "dr.", "st.", "vs.", "etc.", "e.g.", "i.e.", "inc.", "no.",
    "jr.", "sr.", "approx.", "u.s.", "fig.", "oz.", "lb.", "lbs.", "in.", "ft.", "co.",
};

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }
bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

bool has_word_char(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) != 0; });
}
}  // namespace

const std::array<RelationInfo, kRelationCount>& relation_table() { return kRelations; }

const RelationInfo& info(Relation r) { return kRelations[static_cast<std::size_t>(r)]; }

std::string_view name(Relation r) { return info(r).name; }

std::string_view group_name(RelationGroup g) {
    switch (g) {
        case RelationGroup::Open: return "Open";
        case RelationGroup::Item: return "Item";
        case RelationGroup::Function: return "Function";
        case RelationGroup::Human: return "Human";
    }
    return "?";
}

Relation relation_from_name(std::string_view n) {
    for (const auto& r : kRelations)
        if (r.name == n) return r.relation;
    throw DomainError("unknown relation: " + std::string(n));
}

std::string render_prompt(const ingest::CoBuyPair& pair, Relation relation) {
    std::string out = "A user bought " + normalize_ws(pair.item1.title) + " and " +
                      normalize_ws(pair.item2.title) + " because";
    auto cont = info(relation).continuation;
    if (!cont.empty()) {
        out += ' ';
        out += cont;
    }
    return out;
}

std::vector<std::string> HttpGenerator::complete(const std::string& prompt, const GenerationConfig& cfg) {
    // Split "scheme://host:port/base" so the base path is preserved.
    const auto scheme_end = cfg.endpoint.find("://");
    const auto path_start =
        cfg.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string origin = cfg.endpoint.substr(0, path_start);
    std::string base = path_start == std::string::npos ? "" : cfg.endpoint.substr(path_start);
    while (!base.empty() && base.back() == '/') base.pop_back();

    httplib::Client cli(origin);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    const json body{{"prompt", prompt},
                    {"max_tokens", cfg.max_tokens},
                    {"top_p", cfg.top_p},
                    {"n", cfg.samples_per_prompt}};
    auto res = cli.Post(base + "/v1/generate", body.dump(), "application/json");
    if (!res) throw GenerationError("request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw GenerationError("HTTP " + std::to_string(res->status));
    auto parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("texts") || !parsed["texts"].is_array())
        throw GenerationError("malformed response body");
    std::vector<std::string> texts;
    for (const auto& t : parsed["texts"]) texts.push_back(t.is_string() ? t.get<std::string>() : "");
    return texts;
}

std::vector<std::string> generate(TextGenerator& backend, const std::string& prompt,
                                  const GenerationConfig& cfg,
                                  const std::function<void(std::chrono::milliseconds)>& sleep) {
    auto backoff = cfg.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
        try {
            auto texts = backend.complete(prompt, cfg);
            texts.resize(static_cast<std::size_t>(cfg.samples_per_prompt));
            return texts;
        } catch (const std::exception& e) {
            last_error = e.what();
            spdlog::debug("generation attempt {}/{} failed: {}", attempt, cfg.max_attempts, last_error);
        }
        if (attempt < cfg.max_attempts) {
            if (sleep) {
                sleep(backoff);
            } else {
                std::this_thread::sleep_for(backoff);
            }
            backoff *= 2;
        }
    }
    throw GenerationError("giving up after " + std::to_string(cfg.max_attempts) + " attempts: " + last_error);
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    const std::string norm = normalize_ws(text);
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < norm.size()) {
        if (!is_terminator(norm[i])) {
            ++i;
            continue;
        }
        std::size_t end = i + 1;
        while (end < norm.size() && (is_terminator(norm[end]) || is_closer(norm[end]))) ++end;
        const bool at_boundary = end == norm.size() || norm[end] == ' ';
        if (!at_boundary) {
            i = end;
            continue;
        }
        if (norm[i] == '.') {
            const auto tok_begin = norm.rfind(' ', i);
            const auto tok = to_lower(
                std::string_view(norm).substr(tok_begin == std::string::npos ? 0 : tok_begin + 1,
                                              end - (tok_begin == std::string::npos ? 0 : tok_begin + 1)));
            if (kAbbreviations.count(tok) && end < norm.size()) {
                i = end;
                continue;
            }
        }
        out.push_back(trim(std::string_view(norm).substr(start, end - start)));
        start = end;
        i = end;
    }
    auto rest = trim(std::string_view(norm).substr(std::min(start, norm.size())));
    if (!rest.empty()) out.push_back(rest);
    return out;
}

namespace {
std::string strip_echo(const std::string& text, std::string_view prompt) {
    if (prompt.empty()) return text;
    const auto raw_tokens = split_ws(text);
    const auto prompt_tokens = split_ws(prompt);
    // Longest suffix of the prompt (full prompt included) that the text starts with.
    for (std::size_t len = prompt_tokens.size(); len >= 2; --len) {
        if (len > raw_tokens.size()) continue;
        const std::size_t off = prompt_tokens.size() - len;
        if (std::equal(prompt_tokens.begin() + static_cast<std::ptrdiff_t>(off), prompt_tokens.end(),
                       raw_tokens.begin())) {
            return join(std::vector<std::string>(raw_tokens.begin() + static_cast<std::ptrdiff_t>(len),
                                                 raw_tokens.end()),
                        " ");
        }
    }
    return text;
}
}  // namespace

std::optional<std::string> postprocess(std::string_view raw, std::string_view prompt) {
    const std::string text = strip_echo(normalize_ws(raw), prompt);
    const auto sentences = split_sentences(text);
    if (sentences.empty()) return std::nullopt;
    const std::string& first = sentences.front();
    if (!has_word_char(first)) return std::nullopt;
    const bool terminated = is_terminator(first.back()) ||
                            (first.size() > 1 && is_closer(first.back()) && is_terminator(first[first.size() - 2]));
    if (!terminated && split_ws(first).size() < 3) return std::nullopt;
    return first;
}

std::string make_assertion_id(const std::string& pair_id, Relation r, const std::string& tail) {
    return stable_id("as_", {pair_id, name(r), tail});
}

json to_json(const GenerationRecord& r) {
    return json{{"assertion_id", r.assertion_id},
                {"pair_id", r.pair_id},
                {"relation", name(r.relation)},
                {"prompt", r.prompt},
                {"raw", r.raw},
                {"tail", r.tail ? json(*r.tail) : json(nullptr)},
                {"sample", r.sample_index}};
}

GenerationRecord generation_from_json(const json& j) {
    GenerationRecord r;
    r.assertion_id = j.at("assertion_id").get<std::string>();
    r.pair_id = j.at("pair_id").get<std::string>();
    r.relation = relation_from_name(j.at("relation").get<std::string>());
    r.prompt = j.value("prompt", std::string{});
    r.raw = j.value("raw", std::string{});
    if (auto it = j.find("tail"); it != j.end() && it->is_string()) r.tail = it->get<std::string>();
    r.sample_index = j.value("sample", std::size_t{0});
    return r;
}

std::vector<Assertion> dedup_corpus(const std::vector<Assertion>& assertions) {
    std::set<std::tuple<std::string, Relation, std::string>> seen;
    std::vector<Assertion> out;
    for (const auto& a : assertions) {
        if (seen.emplace(a.pair_id, a.relation, a.tail).second) out.push_back(a);
    }
    return out;
}

GenerationRun run_generation(TextGenerator& backend, const std::vector<ingest::CoBuyPair>& pairs,
                             const std::vector<Relation>& relations, const GenerationConfig& cfg) {
    struct Job {
        const ingest::CoBuyPair* pair;
        Relation relation;
    };
    std::vector<Job> jobs;
    for (const auto& p : pairs)
        for (auto r : relations) jobs.push_back({&p, r});

    GenerationRun run;
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < jobs.size(); k = next++) {
            const auto& job = jobs[k];
            const std::string prompt = render_prompt(*job.pair, job.relation);
            std::vector<GenerationRecord> local;
            try {
                auto texts = generate(backend, prompt, cfg);
                spdlog::debug("generated pair={} relation={} n={}", job.pair->pair_id, name(job.relation),
                              texts.size());
                for (std::size_t s = 0; s < texts.size(); ++s) {
                    GenerationRecord rec;
                    rec.pair_id = job.pair->pair_id;
                    rec.relation = job.relation;
                    rec.prompt = prompt;
                    rec.raw = texts[s];
                    rec.sample_index = s;
                    rec.tail = postprocess(texts[s], prompt);
                    rec.assertion_id = rec.tail ? make_assertion_id(rec.pair_id, rec.relation, *rec.tail)
                                                : stable_id("as_", {rec.pair_id, name(rec.relation), "#discarded",
                                                                    std::to_string(s)});
                    local.push_back(std::move(rec));
                }
            } catch (const GenerationError& e) {
                spdlog::warn("generation failed for pair={} relation={}: {}", job.pair->pair_id,
                             name(job.relation), e.what());
                std::lock_guard lock(mu);
                run.failures.push_back({job.pair->pair_id, job.relation, e.what()});
                continue;
            }
            std::lock_guard lock(mu);
            for (auto& r : local) run.records.push_back(std::move(r));
        }
    };

    const std::size_t n_threads = std::max<std::size_t>(1, std::min(cfg.max_in_flight, jobs.size()));
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t + 1 < n_threads; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    std::sort(run.records.begin(), run.records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.pair_id, a.relation, a.sample_index) < std::tie(b.pair_id, b.relation, b.sample_index);
    });
    std::sort(run.failures.begin(), run.failures.end(), [](const auto& a, const auto& b) {
        return std::tie(a.pair_id, a.relation) < std::tie(b.pair_id, b.relation);
    });
    return run;
}

std::vector<Assertion> assertions_of(const std::vector<GenerationRecord>& records) {
    std::vector<Assertion> out;
    for (const auto& r : records) {
        if (!r.tail) continue;
        out.push_back({r.assertion_id, r.pair_id, r.relation, *r.tail, r.raw});
    }
    return dedup_corpus(out);
}

}  // namespace forge::generation
