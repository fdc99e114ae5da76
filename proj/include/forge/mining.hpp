#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "forge/common.hpp"
#include "forge/generation.hpp"

namespace forge::mining {

// ------------------------------------------------------------------ trees

struct DepNode {
    int index = 0;  // 1-based CoNLL-U token id
    std::string surface;
    std::string lemma;
    std::string upos;
    std::string ner;
    std::string deprel;
    int head = -1;  // position in DepTree::nodes, -1 for the root
    bool space_after = true;
};

struct DepEdge {
    int head;   // position in DepTree::nodes
    int child;  // position in DepTree::nodes
    std::string label;
};

/// A dependency tree. Nodes are kept in sentence order.
struct DepTree {
    std::string sent_id;
    std::string text;
    std::vector<DepNode> nodes;
    int root = -1;

    std::vector<DepEdge> edges() const;
    std::vector<std::vector<int>> children() const;
};

/// Checks the single-root, in-range, acyclic invariants.
bool is_valid_tree(const DepTree& tree);

struct ConlluParse {
    std::vector<DepTree> trees;
    std::size_t skipped = 0;  // sentences that were not trees
};

/// Reads blank-line separated 10-column CoNLL-U blocks. Multiword ranges and
/// empty nodes are ignored; "# sent_id" and "# text" comments are kept.
ConlluParse parse_conllu(std::string_view text);

/// Node label used for mining: UPOS for open-class words, UPOS plus the
/// lowercased lemma for pronouns, determiners, adpositions and conjunctions.
std::string node_label(const DepNode& node);

// ------------------------------------------------------------------ patterns

struct PatternNode {
    std::string label;
    int parent = -1;  // -1 for the pattern root
    std::string dep;  // label of the edge from the parent
};

/// A connected, rooted sub-tree pattern. `nodes` are in canonical preorder,
/// so two patterns are isomorphic exactly when their canonical strings match.
struct TreePattern {
    std::string pattern_id;
    generation::Relation relation = generation::Relation::Open;
    std::vector<PatternNode> nodes;
    std::string canonical;
    std::size_t support = 0;
    std::size_t perfect_match_count = 0;

    std::size_t size() const { return nodes.size(); }
};

/// Rebuilds `nodes` in canonical order and returns the canonical string.
std::string canonicalize(std::vector<PatternNode>& nodes);

/// Pattern with canonical form and id filled in.
TreePattern make_pattern(std::vector<PatternNode> nodes, generation::Relation relation);

json to_json(const TreePattern& p);
TreePattern pattern_from_json(const json& j);

/// Maps pattern nodes onto tree node positions respecting labels, edge
/// labels and edge direction. Returns the first embedding in sentence order.
std::optional<std::vector<int>> find_embedding(const TreePattern& pattern, const DepTree& tree);
bool matches(const TreePattern& pattern, const DepTree& tree);

struct MiningOptions {
    std::size_t min_support = 2;  // a pattern must occur in more than this many trees
    std::size_t max_nodes = 12;
};

/// Default threshold scaled from 500 occurrences per 90,000 trees, at least 2.
std::size_t default_min_support(std::size_t n_trees);

/// Every connected sub-tree pattern (up to max_nodes) contained in more
/// than min_support trees. Sorted by (size desc, pattern_id asc).
std::vector<TreePattern> mine_patterns(const std::vector<DepTree>& trees, const MiningOptions& opts,
                                       generation::Relation relation);

/// Orders patterns for longest-first assignment: size desc, pattern_id asc.
void sort_longest_first(std::vector<TreePattern>& patterns);

/// Trees for which `pattern` is the first match in longest-first order
/// among `candidates` (which must include it).
std::size_t perfect_match_count(const TreePattern& pattern, const std::vector<TreePattern>& candidates,
                                const std::vector<DepTree>& trees);

/// perfect_match_count for every candidate at once, in the candidates' order.
std::vector<std::size_t> perfect_match_counts(const std::vector<TreePattern>& candidates,
                                              const std::vector<DepTree>& trees);

/// Longest-first greedy selection: walking candidates largest first, a
/// pattern is kept when it matches more than `min_perfect` trees not already
/// claimed by a kept pattern; it then claims them. Kept patterns carry their
/// final perfect_match_count.
std::vector<TreePattern> select_patterns(std::vector<TreePattern> candidates, const std::vector<DepTree>& trees,
                                         std::size_t min_perfect);

/// Applies an operator allow list (if non-empty) and deny list of pattern ids.
std::vector<TreePattern> apply_revision(std::vector<TreePattern> patterns, const std::set<std::string>& allow,
                                        const std::set<std::string>& deny);

struct PatternAssignment {
    std::string assertion_id;
    std::optional<std::string> pattern_id;
    std::string simplified_tail;
};

json to_json(const PatternAssignment& a);
PatternAssignment assignment_from_json(const json& j);

/// Surfaces of the given node positions in sentence order, honouring SpaceAfter=No.
std::string render_nodes(const DepTree& tree, std::vector<int> positions);

/// First matching pattern in longest-first order (the input order does not
/// matter). Without a match the tail is the full tree text.
PatternAssignment assign_pattern(const DepTree& tree, const std::vector<TreePattern>& patterns);

/// Fraction of assignments with a pattern. 0 for an empty list.
double coverage(const std::vector<PatternAssignment>& assignments);

}  // namespace forge::mining
