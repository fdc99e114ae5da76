#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "forge/common.hpp"
#include "forge/ingest.hpp"

namespace forge::annotation {

// ------------------------------------------------------------------ metrics

enum class PlausibilityLabel { Implausible = 0, Plausible = 1 };

/// Strict majority over 0/1 votes. Throws DomainError on an even or empty panel.
PlausibilityLabel majority_vote(const std::vector<int>& votes);

/// Typicality scale: strong 1.0, weak 0.5, reject 0.0, implausible -1.0.
bool is_legal_typicality(double value);

/// Mean of the mapped ratings. Throws DomainError when empty or when a
/// value is off the 4-point scale.
double typicality_score(const std::vector<double>& ratings);

/// Micro-averaged fraction of agreeing unordered rater pairs. Items with
/// fewer than two votes contribute nothing.
double pairwise_agreement(const std::vector<std::vector<int>>& votes_by_item);

/// Fleiss' kappa over an items x categories count matrix. Every row must sum
/// to the same n >= 2 (DomainError otherwise).
double fleiss_kappa(const std::vector<std::vector<int>>& counts);

struct AgreementReport {
    double pairwise_agreement = 0.0;
    double fleiss_kappa = 0.0;
    std::size_t n_items = 0;
    std::size_t n_raters = 0;
};

/// Agreement over items that carry exactly `raters` binary votes.
AgreementReport agreement_report(const std::vector<std::vector<int>>& votes_by_item, std::size_t raters);

// ------------------------------------------------------------------ service state

enum class Task { Plausibility, Typicality };

std::string_view task_name(Task t);
std::optional<Task> task_from_name(std::string_view s);

/// An assertion offered for annotation, with the display fields of both items.
struct CardSource {
    std::string assertion_id;
    std::string sentence;  // prompt + tail
    std::string relation;
    ingest::Item item1;
    ingest::Item item2;
};

json card_to_json(const CardSource& c, Task task);

struct Vote {
    std::string assertion_id;
    std::string worker_id;
    Task task = Task::Plausibility;
    double value = 0.0;
    std::int64_t timestamp = 0;
};

json to_json(const Vote& v);
Vote vote_from_json(const json& j);

struct VoteResult {
    bool accepted = false;
    std::string reason;  // empty when accepted
};

struct Progress {
    std::size_t votes = 0;
    std::size_t items = 0;
    std::size_t complete_items = 0;
};

struct Label {
    std::string assertion_id;
    std::optional<PlausibilityLabel> plausibility;
    std::optional<double> typicality;
};

json to_json(const Label& l);
Label label_from_json(const json& j);

/// Event-sourced annotation state. All public methods are thread-safe; the
/// vote log is appended under the same lock that checks uniqueness.
class AnnotationStore {
  public:
    struct Options {
        std::size_t plausibility_target = 3;
        std::size_t typicality_target = 5;
        std::optional<std::filesystem::path> vote_log;  // votes.jsonl
    };

    explicit AnnotationStore(Options opts);

    void add_card(Task task, CardSource card);
    void register_worker(const std::string& worker_id, bool qualified);

    /// Replays votes.jsonl (if configured and present). Returns votes loaded.
    std::size_t replay();

    /// Up to n cards this worker has neither voted on nor been served,
    /// fewest votes first (ties by assertion_id). Empty for unknown workers.
    std::vector<json> batch(Task task, std::size_t n, const std::string& worker_id);

    VoteResult vote(const Vote& v);

    Progress progress(Task task) const;
    std::vector<Vote> votes() const;
    /// Labels over assertions with a complete (and, for plausibility, odd) panel.
    std::vector<Label> labels() const;
    AgreementReport plausibility_agreement() const;

  private:
    bool apply_locked(const Vote& v);

    Options opts_;
    mutable std::mutex mu_;
    std::map<Task, std::map<std::string, CardSource>> cards_;
    std::map<std::string, bool> workers_;
    std::map<Task, std::map<std::string, std::map<std::string, double>>> votes_;  // task -> id -> worker -> v
    std::set<std::tuple<Task, std::string, std::string>> served_;  // task, worker, assertion
    std::vector<Vote> log_;
};

}  // namespace forge::annotation
