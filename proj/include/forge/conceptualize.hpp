#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "forge/common.hpp"

namespace forge::conceptualize {

struct ConceptEntry {
    std::string concept_name;
    double likelihood = 0.0;
};

/// IsA likelihoods keyed by lowercased entity span.
class ConceptTable {
  public:
    /// Adds (or accumulates onto) an entry. Non-finite or non-positive
    /// likelihoods are rejected with DomainError.
    void add(std::string_view entity, std::string_view concept_name, double likelihood);
    /// Concepts of a span, ordered by likelihood desc then name asc.
    std::vector<ConceptEntry> lookup(std::string_view span) const;
    bool contains(std::string_view span) const;
    std::size_t size() const { return entries_.size(); }
    std::size_t max_span_tokens() const { return max_span_tokens_; }

  private:
    std::map<std::string, std::map<std::string, double>> entries_;
    std::size_t max_span_tokens_ = 0;
};

struct TableLoad {
    ConceptTable table;
    std::size_t skipped = 0;
};

/// entity \t concept \t likelihood rows; duplicate (entity, concept) rows are summed.
TableLoad load_concept_table(const std::filesystem::path& path);

struct AbstractIntention {
    std::string node_id;
    std::string source_tail_id;
    std::string concept_name;
    std::string span;
    double weight = 0.0;
    std::string abstract_tail;
};

json to_json(const AbstractIntention& a);
AbstractIntention abstract_from_json(const json& j);

/// Node id of an abstract intention; a function of its text, so re-running
/// with the same (tail, concept) reproduces the same node.
std::string abstract_node_id(const std::string& abstract_tail);

struct ConceptualizeOptions {
    std::size_t top_k = 10;
    double min_weight = 0.01;
};

/// Replaces the longest table span of `tail` (scanning right to left among
/// spans of equal length) with each of its top-k concepts. Weights are the
/// span's likelihoods normalized over its full concept list.
std::vector<AbstractIntention> conceptualize_tail(const std::string& source_tail_id, const std::string& tail,
                                                  const ConceptTable& table, const ConceptualizeOptions& opts);

}  // namespace forge::conceptualize
