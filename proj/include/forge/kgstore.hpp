#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/conceptualize.hpp"
#include "forge/generation.hpp"
#include "forge/ingest.hpp"
#include "forge/mining.hpp"
#include "forge/population.hpp"

namespace forge::kg {

inline constexpr int kFormatVersion = 1;

enum class NodeKind { Item, Intention, Abstract };
enum class EdgeKind { Assert, ConceptAssert, IsaWeight };

std::string_view kind_name(NodeKind k);
std::string_view kind_name(EdgeKind k);

struct Node {
    std::string id;
    NodeKind kind = NodeKind::Item;
    std::string text;                 // intention / abstract text
    std::optional<ingest::Item> item;  // item display fields, when known

    bool operator==(const Node&) const = default;
};

/// ASSERT and CONCEPT_ASSERT edges have two sources (the item pair, sorted)
/// and carry relation and scores; ISA_WEIGHT edges have one source (the
/// intention) and carry a weight.
struct Edge {
    std::string edge_id;
    EdgeKind kind = EdgeKind::Assert;
    std::vector<std::string> src;
    std::string dst;
    std::optional<generation::Relation> relation;
    std::optional<double> plausibility;
    std::optional<double> typicality;
    std::optional<double> weight;

    bool operator==(const Edge&) const = default;
};

class KnowledgeGraph {
  public:
    std::map<std::string, Node> nodes;
    std::map<std::string, Edge> edges;

    bool operator==(const KnowledgeGraph&) const = default;

    std::vector<const Edge*> edges_of(EdgeKind kind) const;
    const Node* node(const std::string& id) const;
};

std::string intention_id(const std::string& text);
std::string pair_key(const std::vector<std::string>& src);

class ReferentialError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct AssemblyInput {
    const std::map<std::string, ingest::CoBuyPair>* pairs = nullptr;  // by pair_id
    std::vector<population::ScoredAssertion> scored;
    std::vector<mining::PatternAssignment> assignments;
    std::vector<conceptualize::AbstractIntention> abstracts;
    double plau_threshold = 0.5;
};

/// Builds the graph. Intention text is the simplified tail when the
/// assertion has a pattern and the raw tail otherwise. Throws
/// ReferentialError when a scored assertion names an unknown pair or an
/// assignment names an unknown assertion.
KnowledgeGraph assemble(const AssemblyInput& in);

/// Recomputes CONCEPT_ASSERT edges from ASSERT + ISA_WEIGHT edges and drops
/// nodes and ISA_WEIGHT edges no longer reachable from an ASSERT edge.
void rebuild_derived(KnowledgeGraph& kg);

/// Sub-graph whose ASSERT edges satisfy plausibility > plau_t (and
/// typicality > typ_t when given).
KnowledgeGraph filter_edges(const KnowledgeGraph& kg, double plau_t, std::optional<double> typ_t = std::nullopt);

/// Every CONCEPT_ASSERT edge has an ASSERT edge on the same pair and
/// relation whose intention links to the abstract node via ISA_WEIGHT.
bool joinable(const KnowledgeGraph& kg);

/// No edge endpoint is missing from the node set.
bool no_dangling(const KnowledgeGraph& kg);

struct RelationStats {
    std::size_t assert_edges = 0;
    std::size_t distinct_tails = 0;
    double avg_tail_tokens = 0.0;

    bool operator==(const RelationStats&) const = default;
};

struct KGStats {
    std::size_t item_nodes = 0;
    std::size_t intention_nodes = 0;
    std::size_t abstract_nodes = 0;
    std::size_t assert_edges = 0;
    std::size_t concept_assert_edges = 0;
    std::size_t isa_weight_edges = 0;
    std::size_t cobuy_pairs = 0;
    double avg_tail_tokens = 0.0;
    std::map<std::string, RelationStats> per_relation;

    std::size_t total_edges() const { return assert_edges + concept_assert_edges + isa_weight_edges; }
    bool operator==(const KGStats&) const = default;
};

KGStats stats(const KnowledgeGraph& kg);
json to_json(const KGStats& s);

/// Writes nodes.jsonl and edges.jsonl (header line + rows sorted by id).
void export_graph(const KnowledgeGraph& kg, const std::filesystem::path& dir);
/// Throws FatalInputError on a missing file or a version mismatch.
KnowledgeGraph import_graph(const std::filesystem::path& dir);

struct SubcategoryAssertion {
    std::string subcategory1;
    std::string subcategory2;
    std::string relation;
    std::string tail;
    std::size_t count = 0;
    double mean_typicality = 0.0;
};

/// Frequent intentions shared by co-buy pairs of the same subcategory pair,
/// counting ASSERT edges with typicality > min_typicality. Subcategory is the
/// last entry of an item's path (its category when the path is empty).
std::vector<SubcategoryAssertion> subcategory_common_assertions(const KnowledgeGraph& kg,
                                                                double min_typicality, std::size_t min_count);

}  // namespace forge::kg
