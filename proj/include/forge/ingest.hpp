#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "forge/common.hpp"

namespace forge::ingest {

struct Item {
    std::string id;
    std::string title;
    std::string category;
    std::vector<std::string> subcategory_path;
    std::vector<std::string> image_urls;
    std::string url;

    /// Top-level category used for sampling. Falls back to the first path entry.
    std::string top_category() const;

    bool operator==(const Item&) const = default;
};

json to_json(const Item& item);
/// Returns nullopt when required fields are missing or the title is blank.
std::optional<Item> item_from_json(const json& j);

class ItemCatalog {
  public:
    /// Inserts or replaces (last record wins).
    void upsert(Item item);
    const Item* find(const std::string& id) const;
    bool contains(const std::string& id) const { return items_.count(id) != 0; }
    std::size_t size() const { return items_.size(); }
    const std::map<std::string, Item>& items() const { return items_; }

  private:
    std::map<std::string, Item> items_;
};

struct CatalogLoad {
    ItemCatalog catalog;
    std::size_t malformed = 0;
};

/// One JSON object per line. Malformed lines are skipped and counted.
CatalogLoad load_catalog(const std::filesystem::path& path);

using Edge = std::pair<std::string, std::string>;  // sorted: first < second

class CoBuyGraph {
  public:
    /// Adds an undirected edge. Self-loops are ignored. Returns true if new.
    bool add_edge(const std::string& a, const std::string& b);
    void add_node(const std::string& id) { adjacency_[id]; }

    std::size_t node_count() const { return adjacency_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    std::size_t degree(const std::string& id) const;
    bool has_edge(const std::string& a, const std::string& b) const;
    const std::set<Edge>& edges() const { return edges_; }
    std::vector<std::string> nodes() const;

  private:
    std::map<std::string, std::set<std::string>> adjacency_;
    std::set<Edge> edges_;
};

struct GraphBuild {
    CoBuyGraph graph;
    std::size_t skipped_unknown = 0;
};

/// Builds a simple undirected graph. Records naming ids absent from
/// `catalog` are skipped and counted; pass nullptr to accept every id.
GraphBuild build_cobuy_graph(const std::vector<Edge>& records, const ItemCatalog* catalog);

/// Reads two tab-separated ids per line.
std::vector<Edge> load_cobuy_tsv(const std::filesystem::path& path);

struct CoBuyPair {
    Item item1;
    Item item2;
    std::string pair_id;
};

/// Deterministic id of an unordered pair.
std::string make_pair_id(const std::string& a, const std::string& b);
CoBuyPair make_pair(const Item& a, const Item& b);

struct SampleOptions {
    std::set<std::string> categories;  // empty = every category
    std::size_t n = 0;
    std::size_t min_degree = 5;
    std::uint64_t seed = 0;
    bool require_title_quality = true;
};

/// Uniformly samples edges (without replacement) whose endpoints both have
/// degree > min_degree and a requested top-level category. Result is sorted
/// by pair_id.
std::vector<CoBuyPair> sample_pairs(const CoBuyGraph& graph, const ItemCatalog& catalog,
                                    const SampleOptions& opts);

/// False for titles that look like keyword spam: a token repeated three or
/// more times in a row, a single token making up more than half the title,
/// or more than 40 tokens.
bool title_quality_filter(const Item& item);

json pair_to_json(const CoBuyPair& p);
/// Resolves a pairs.jsonl row against the catalog. Throws FatalInputError
/// when an item is unknown.
CoBuyPair pair_from_json(const json& j, const ItemCatalog& catalog);

}  // namespace forge::ingest
