#pragma once

#include <array>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forge/common.hpp"
#include "forge/ingest.hpp"

namespace forge::generation {

enum class Relation {
    Open,
    HasA,
    HasProperty,
    RelatedTo,
    SimilarTo,
    PartOf,
    IsA,
    MadeOf,
    CreatedBy,
    DistinctFrom,
    DerivedFrom,
    UsedFor,
    CapableOf,
    SymbolOf,
    MannerOf,
    DefinedAs,
    Result,
    Cause,
    CauseDesire,
};

enum class RelationGroup { Open, Item, Function, Human };

inline constexpr std::size_t kRelationCount = 19;

struct RelationInfo {
    Relation relation;
    std::string_view name;
    RelationGroup group;
    std::string_view continuation;  // appended after "because"; empty for Open
};

const std::array<RelationInfo, kRelationCount>& relation_table();
const RelationInfo& info(Relation r);
std::string_view name(Relation r);
std::string_view group_name(RelationGroup g);
/// Throws DomainError on an unknown name.
Relation relation_from_name(std::string_view name);

struct GenerationConfig {
    int max_tokens = 100;
    double top_p = 0.9;
    int samples_per_prompt = 3;
    std::string endpoint;
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
    std::size_t max_in_flight = 4;
};

/// "A user bought {title1} and {title2} because {continuation}".
std::string render_prompt(const ingest::CoBuyPair& pair, Relation relation);

/// Thrown when the text-generation service fails after all retries.
class GenerationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Text-generation backend. `complete` performs a single attempt and throws
/// on failure; retrying is layered on top by `generate`.
class TextGenerator {
  public:
    virtual ~TextGenerator() = default;
    virtual std::vector<std::string> complete(const std::string& prompt, const GenerationConfig& cfg) = 0;
};

/// POST {endpoint}/v1/generate {prompt, max_tokens, top_p, n} -> {texts: [...]}.
class HttpGenerator : public TextGenerator {
  public:
    explicit HttpGenerator(std::chrono::seconds timeout = std::chrono::seconds(120))
        : timeout_(timeout) {}
    std::vector<std::string> complete(const std::string& prompt, const GenerationConfig& cfg) override;

  private:
    std::chrono::seconds timeout_;
};

/// Calls the backend with exponential backoff. Returns exactly
/// cfg.samples_per_prompt strings (padding with empty strings if the service
/// returned fewer). Throws GenerationError after cfg.max_attempts failures.
std::vector<std::string> generate(TextGenerator& backend, const std::string& prompt,
                                  const GenerationConfig& cfg,
                                  const std::function<void(std::chrono::milliseconds)>& sleep = {});

/// Splits off the first complete sentence. Returns nullopt when the text has
/// no complete sentence. If `prompt` is given, an echoed prompt (or echoed
/// tail of it, at least two tokens) at the start of `raw` is removed first.
std::optional<std::string> postprocess(std::string_view raw, std::string_view prompt = {});

/// Sentence segmentation used by postprocess; exposed for testing.
std::vector<std::string> split_sentences(std::string_view text);

struct Assertion {
    std::string assertion_id;
    std::string pair_id;
    Relation relation = Relation::Open;
    std::string tail;
    std::string raw;
};

std::string make_assertion_id(const std::string& pair_id, Relation r, const std::string& tail);

/// One line of generations.jsonl. `tail` is null for discarded outputs.
struct GenerationRecord {
    std::string assertion_id;
    std::string pair_id;
    Relation relation = Relation::Open;
    std::string prompt;
    std::string raw;
    std::optional<std::string> tail;
    std::size_t sample_index = 0;
};

json to_json(const GenerationRecord& r);
GenerationRecord generation_from_json(const json& j);

/// Removes exact (pair_id, relation, tail) duplicates, keeping first occurrences.
std::vector<Assertion> dedup_corpus(const std::vector<Assertion>& assertions);

struct FailedRequest {
    std::string pair_id;
    Relation relation;
    std::string error;
};

struct GenerationRun {
    std::vector<GenerationRecord> records;  // ordered by (pair_id, relation, sample)
    std::vector<FailedRequest> failures;
};

/// Renders and generates every (pair, relation) combination with at most
/// cfg.max_in_flight concurrent requests. Failures are collected rather than
/// aborting the run.
GenerationRun run_generation(TextGenerator& backend, const std::vector<ingest::CoBuyPair>& pairs,
                             const std::vector<Relation>& relations, const GenerationConfig& cfg);

/// Surviving, deduplicated assertions of a run.
std::vector<Assertion> assertions_of(const std::vector<GenerationRecord>& records);

}  // namespace forge::generation
