#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "forge/annotation.hpp"
#include "forge/common.hpp"
#include "forge/generation.hpp"
#include "forge/ingest.hpp"

namespace forge::population {

struct ScoredAssertion {
    generation::Assertion assertion;
    double plausibility = 0.0;
    double typicality = 0.0;
};

json to_json(const ScoredAssertion& s);
ScoredAssertion scored_from_json(const json& j);

enum class ExampleLabel { Negative = 0, Positive = 1 };

struct LabeledExample {
    std::string assertion_id;
    std::string text;
    ExampleLabel label = ExampleLabel::Negative;
    annotation::Task task = annotation::Task::Plausibility;
};

/// Plausibility: majority label. Typicality: > 0.8 positive, < 0.2
/// negative, anything in between is excluded. `texts` maps assertion_id to
/// the naturalized sentence; labels without a text are skipped.
std::vector<LabeledExample> derive_training_labels(annotation::Task task,
                                                   const std::vector<annotation::Label>& labels,
                                                   const std::map<std::string, std::string>& texts);

/// Label-stratified shuffled split. The train side gets round(N * ratio)
/// examples; each non-majority class contributes floor(n_c * ratio) and the
/// majority class takes the remainder.
std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_train_dev(
    std::vector<LabeledExample> examples, double ratio, std::uint64_t seed);

/// "text \t label" rows.
std::string to_tsv(const std::vector<LabeledExample>& examples);

// ------------------------------------------------------------------ scorers

struct Scores {
    double plausibility;
    double typicality;
};

class ScorerError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class Scorer {
  public:
    virtual ~Scorer() = default;
    /// Returns one entry per assertion; nullopt marks a missing score.
    /// Throws ScorerError on backend failure.
    virtual std::vector<std::optional<Scores>> score(const std::vector<generation::Assertion>& batch,
                                                     const std::vector<std::string>& texts) = 0;
};

/// scores.jsonl {assertion_id, plausibility, typicality}. Booleans or 0/1
/// labels are accepted as probabilities.
class FileScorer : public Scorer {
  public:
    explicit FileScorer(const std::filesystem::path& path);
    std::vector<std::optional<Scores>> score(const std::vector<generation::Assertion>& batch,
                                             const std::vector<std::string>& texts) override;
    std::size_t size() const { return scores_.size(); }

  private:
    std::map<std::string, Scores> scores_;
};

/// POST {endpoint}/v1/score {texts:[...]} -> {plausibility:[...], typicality:[...]}.
class HttpScorer : public Scorer {
  public:
    explicit HttpScorer(std::string endpoint) : endpoint_(std::move(endpoint)) {}
    std::vector<std::optional<Scores>> score(const std::vector<generation::Assertion>& batch,
                                             const std::vector<std::string>& texts) override;

  private:
    std::string endpoint_;
};

struct ScoringOptions {
    std::size_t batch_size = 64;
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
};

struct ScoringResult {
    std::vector<ScoredAssertion> scored;
    std::size_t dropped = 0;
};

/// Scores every assertion. `texts[i]` is the naturalized sentence sent to
/// HTTP scorers. Missing scores drop the assertion; a scorer that still
/// fails after retries aborts with ScorerError.
ScoringResult score_assertions(Scorer& scorer, const std::vector<generation::Assertion>& assertions,
                               const std::vector<std::string>& texts, const ScoringOptions& opts = {});

/// Keeps plausibility > plau_t and, if given, typicality > typ_t.
std::vector<ScoredAssertion> filter_by_threshold(const std::vector<ScoredAssertion>& scored, double plau_t,
                                                 std::optional<double> typ_t = std::nullopt);

struct PrPoint {
    double threshold;
    double precision;
    double recall;
};

/// Precision/recall of "score >= threshold" at every distinct prediction and
/// at the 0.5/0.7/0.8/0.9 cut points. Thresholds with no predicted positive
/// are omitted. Sorted by ascending threshold.
std::vector<PrPoint> pr_curve(const std::vector<double>& predictions, const std::vector<int>& gold);

/// Average ranks (1-based), ties share the mean rank.
std::vector<double> average_ranks(const std::vector<double>& xs);

/// Spearman's rho as the Pearson correlation of average ranks. Throws
/// DomainError on unequal lengths, fewer than two points, or zero rank variance.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

/// Lowercased, punctuation-stripped tokens with stop-words removed.
std::vector<std::string> content_tokens(std::string_view text);

/// Fraction of tails with at least one content token missing from the
/// union of the pair's title tokens. Pairs not in `pairs` are skipped.
double novelty_ratio(const std::vector<ScoredAssertion>& scored,
                     const std::map<std::string, ingest::CoBuyPair>& pairs);

}  // namespace forge::population
