#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "forge/common.hpp"
#include "forge/embed.hpp"
#include "forge/kgstore.hpp"
#include "forge/mining.hpp"

namespace forge::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag = "forge");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text);

std::filesystem::path fixture_dir();

/// Random dependency tree with n nodes in shuffled sentence order, open-class
/// UPOS labels drawn from the first `n_labels` of NOUN/VERB/ADJ/ADV and
/// relations from the first `n_deps` of obj/nmod/amod/advmod.
mining::DepTree random_tree(Rng& rng, std::size_t n, std::size_t n_labels, std::size_t n_deps);

/// Tree from "form/UPOS/head/deprel" tokens (1-based heads, 0 = root).
mining::DepTree tree_from(const std::string& annotated, const std::string& text = "");

/// Graph assembled from random pairs, tails, pattern assignments and concepts.
kg::KnowledgeGraph random_kg(Rng& rng, std::size_t n_pairs);

/// Copy of the toy fixture config under `dir` with absolute input paths, the
/// work dir at dir/work, both service endpoints at `endpoint` and the
/// annotation port at 0. Returns the config path.
std::filesystem::path write_toy_config(const std::filesystem::path& dir, const std::string& endpoint);

/// Canonical string of a pattern, built independently of mining::canonicalize.
std::string oracle_canon(const mining::TreePattern& p);
/// Canonical forms of every connected node subset (UPOS labels) of a tree.
std::set<std::string> all_subtrees(const mining::DepTree& t, std::size_t max_nodes);
/// Brute-force frequent sub-trees: canonical form -> number of trees containing it.
std::map<std::string, std::size_t> oracle_mine(const std::vector<mining::DepTree>& trees, std::size_t min_support,
                                               std::size_t max_nodes);

/// Eight (pair, relation, tail) triples over six items and two relations.
std::vector<embed::Triple> toy_triples();

/// Largest relative gap between the analytic gradient of embed::triple_loss
/// and central differences, over `points` random points with loss > 0 and
/// both distances above 1e-3. Every coordinate of all six inputs is checked.
double worst_gradient_error(Rng& rng, std::size_t points, std::size_t d);

double brute_pairwise(const std::vector<std::vector<int>>& items);
double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace forge::test
