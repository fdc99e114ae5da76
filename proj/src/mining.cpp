#include "forge/mining.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

namespace forge::mining {

std::vector<DepEdge> DepTree::edges() const {
    std::vector<DepEdge> out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].head >= 0) out.push_back({nodes[i].head, static_cast<int>(i), nodes[i].deprel});
    }
    return out;
}

std::vector<std::vector<int>> DepTree::children() const {
    std::vector<std::vector<int>> out(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].head >= 0) out[static_cast<std::size_t>(nodes[i].head)].push_back(static_cast<int>(i));
    }
    return out;
}

bool is_valid_tree(const DepTree& tree) {
    const int n = static_cast<int>(tree.nodes.size());
    if (n == 0) return false;
    int roots = 0;
    for (int i = 0; i < n; ++i) {
        const int h = tree.nodes[static_cast<std::size_t>(i)].head;
        if (h == -1) {
            ++roots;
            if (i != tree.root) return false;
        } else if (h < 0 || h >= n || h == i) {
            return false;
        }
    }
    if (roots != 1) return false;
    // Every node must reach the root within n steps.
    for (int i = 0; i < n; ++i) {
        int cur = i;
        for (int steps = 0; cur != -1; ++steps) {
            if (steps > n) return false;
            cur = tree.nodes[static_cast<std::size_t>(cur)].head;
        }
    }
    return true;
}

namespace {

std::optional<DepTree> build_tree(const std::vector<std::vector<std::string>>& rows, std::string sent_id,
                                  std::string text) {
    DepTree tree;
    tree.sent_id = std::move(sent_id);
    tree.text = std::move(text);
    std::unordered_map<int, int> position_of;
    std::vector<int> heads;
    for (const auto& cols : rows) {
        DepNode node;
        try {
            node.index = std::stoi(cols[0]);
            heads.push_back(cols[6] == "_" ? -2 : std::stoi(cols[6]));
        } catch (const std::exception&) {
            return std::nullopt;
        }
        node.surface = cols[1];
        node.lemma = cols[2] == "_" ? cols[1] : cols[2];
        node.upos = cols[3];
        node.deprel = cols[7];
        for (const auto& kv : split(cols[9], '|')) {
            if (kv == "SpaceAfter=No") node.space_after = false;
            if (kv.rfind("NER=", 0) == 0) node.ner = kv.substr(4);
        }
        position_of[node.index] = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(std::move(node));
    }
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const int h = heads[i];
        if (h == 0) {
            tree.nodes[i].head = -1;
            if (tree.root != -1) return std::nullopt;  // second root
            tree.root = static_cast<int>(i);
        } else {
            auto it = position_of.find(h);
            if (it == position_of.end()) return std::nullopt;
            tree.nodes[i].head = it->second;
        }
    }
    if (!is_valid_tree(tree)) return std::nullopt;
    if (tree.text.empty()) {
        std::vector<int> all(tree.nodes.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        tree.text = render_nodes(tree, all);
    }
    return tree;
}

}  // namespace

ConlluParse parse_conllu(std::string_view text) {
    ConlluParse out;
    std::vector<std::vector<std::string>> rows;
    std::string sent_id, sent_text;
    bool broken = false;

    auto flush = [&] {
        if (!rows.empty() || broken) {
            auto tree = broken ? std::nullopt : build_tree(rows, sent_id, sent_text);
            if (tree) {
                out.trees.push_back(std::move(*tree));
            } else {
                ++out.skipped;
                spdlog::warn("conllu: skipping sentence '{}' that is not a well-formed tree", sent_id);
            }
        }
        rows.clear();
        sent_id.clear();
        sent_text.clear();
        broken = false;
    };

    for (const auto& raw_line : split(text, '\n')) {
        std::string line = raw_line;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) {
            flush();
            continue;
        }
        if (line[0] == '#') {
            auto eq = line.find('=');
            if (eq != std::string::npos) {
                const auto key = trim(std::string_view(line).substr(1, eq - 1));
                const auto value = trim(std::string_view(line).substr(eq + 1));
                if (key == "sent_id") sent_id = value;
                if (key == "text") sent_text = value;
            }
            continue;
        }
        auto cols = split(line, '\t');
        if (cols.size() != 10) {
            broken = true;
            continue;
        }
        if (cols[0].find('-') != std::string::npos || cols[0].find('.') != std::string::npos) continue;
        rows.push_back(std::move(cols));
    }
    flush();
    return out;
}

std::string node_label(const DepNode& node) {
    static const std::unordered_set<std::string> closed{"PRON", "DET", "ADP", "CCONJ", "SCONJ"};
    if (closed.count(node.upos)) return node.upos + "/" + to_lower(node.lemma);
    return node.upos;
}

// ------------------------------------------------------------------ canonical form

namespace {

std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '\\' || c == '(' || c == ')' || c == ',' || c == '>') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

/// Canonical string of `nodes` plus the old->new index permutation of the
/// canonical preorder.
std::string canonical_order(const std::vector<PatternNode>& nodes, std::vector<int>& order) {
    const std::size_t n = nodes.size();
    std::vector<std::vector<int>> kids(n);
    int root = -1;
    for (std::size_t i = 0; i < n; ++i) {
        if (nodes[i].parent < 0) {
            root = static_cast<int>(i);
        } else {
            kids[static_cast<std::size_t>(nodes[i].parent)].push_back(static_cast<int>(i));
        }
    }
    if (root < 0) throw DomainError("pattern without root");

    std::vector<std::string> canon(n);
    std::vector<std::string> edge_key(n);
    std::function<void(int)> build = [&](int u) {
        auto& ks = kids[static_cast<std::size_t>(u)];
        for (int c : ks) {
            build(c);
            edge_key[static_cast<std::size_t>(c)] =
                escape(nodes[static_cast<std::size_t>(c)].dep) + ">" + canon[static_cast<std::size_t>(c)];
        }
        std::sort(ks.begin(), ks.end(), [&](int a, int b) {
            return edge_key[static_cast<std::size_t>(a)] < edge_key[static_cast<std::size_t>(b)];
        });
        std::string s = escape(nodes[static_cast<std::size_t>(u)].label) + "(";
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (i) s += ",";
            s += edge_key[static_cast<std::size_t>(ks[i])];
        }
        s += ")";
        canon[static_cast<std::size_t>(u)] = std::move(s);
    };
    build(root);

    order.assign(n, -1);
    int next = 0;
    std::function<void(int)> walk = [&](int u) {
        order[static_cast<std::size_t>(u)] = next++;
        for (int c : kids[static_cast<std::size_t>(u)]) walk(c);
    };
    walk(root);
    return canon[static_cast<std::size_t>(root)];
}

std::vector<PatternNode> reorder(const std::vector<PatternNode>& nodes, const std::vector<int>& order) {
    std::vector<PatternNode> out(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        PatternNode n = nodes[i];
        n.parent = n.parent < 0 ? -1 : order[static_cast<std::size_t>(n.parent)];
        out[static_cast<std::size_t>(order[i])] = std::move(n);
    }
    return out;
}

}  // namespace

std::string canonicalize(std::vector<PatternNode>& nodes) {
    std::vector<int> order;
    auto canon = canonical_order(nodes, order);
    nodes = reorder(nodes, order);
    return canon;
}

TreePattern make_pattern(std::vector<PatternNode> nodes, generation::Relation relation) {
    TreePattern p;
    p.relation = relation;
    p.canonical = canonicalize(nodes);
    p.nodes = std::move(nodes);
    p.pattern_id = stable_id("pt_", {generation::name(relation), p.canonical});
    return p;
}

json to_json(const TreePattern& p) {
    json nodes = json::array();
    for (const auto& n : p.nodes) nodes.push_back({{"label", n.label}, {"parent", n.parent}, {"dep", n.dep}});
    return json{{"pattern_id", p.pattern_id},
                {"relation", generation::name(p.relation)},
                {"size", p.size()},
                {"canonical", p.canonical},
                {"support", p.support},
                {"perfect_match_count", p.perfect_match_count},
                {"nodes", nodes}};
}

TreePattern pattern_from_json(const json& j) {
    std::vector<PatternNode> nodes;
    for (const auto& n : j.at("nodes"))
        nodes.push_back({n.at("label").get<std::string>(), n.at("parent").get<int>(), n.value("dep", "")});
    auto p = make_pattern(std::move(nodes), generation::relation_from_name(j.at("relation").get<std::string>()));
    p.pattern_id = j.value("pattern_id", p.pattern_id);
    p.support = j.value("support", std::size_t{0});
    p.perfect_match_count = j.value("perfect_match_count", std::size_t{0});
    return p;
}

// ------------------------------------------------------------------ matching

namespace {

struct IndexedTree {
    std::vector<std::string> labels;
    std::vector<std::string> deps;
    std::vector<std::vector<int>> children;

    explicit IndexedTree(const DepTree& t) : children(t.children()) {
        labels.reserve(t.nodes.size());
        for (const auto& n : t.nodes) {
            labels.push_back(node_label(n));
            deps.push_back(n.deprel);
        }
    }
};

class Matcher {
  public:
    Matcher(const TreePattern& p, const IndexedTree& t) : p_(p), t_(t), map_(p.nodes.size(), -1) {
        kids_.resize(p.nodes.size());
        for (std::size_t i = 1; i < p.nodes.size(); ++i)
            kids_[static_cast<std::size_t>(p.nodes[i].parent)].push_back(static_cast<int>(i));
    }

    std::optional<std::vector<int>> run() {
        if (p_.nodes.empty()) return std::nullopt;
        for (std::size_t t = 0; t < t_.labels.size(); ++t) {
            if (match(0, static_cast<int>(t))) return map_;
        }
        return std::nullopt;
    }

  private:
    bool match(int u, int t) {
        if (p_.nodes[static_cast<std::size_t>(u)].label != t_.labels[static_cast<std::size_t>(t)]) return false;
        map_[static_cast<std::size_t>(u)] = t;
        std::vector<char> used(t_.children[static_cast<std::size_t>(t)].size(), 0);
        return assign_children(u, t, 0, used);
    }

    bool assign_children(int u, int t, std::size_t k, std::vector<char>& used) {
        const auto& pk = kids_[static_cast<std::size_t>(u)];
        if (k == pk.size()) return true;
        const int pc = pk[k];
        const auto& tk = t_.children[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < tk.size(); ++i) {
            if (used[i]) continue;
            const int tc = tk[i];
            if (p_.nodes[static_cast<std::size_t>(pc)].dep != t_.deps[static_cast<std::size_t>(tc)]) continue;
            if (!match(pc, tc)) continue;
            used[i] = 1;
            if (assign_children(u, t, k + 1, used)) return true;
            used[i] = 0;
        }
        return false;
    }

    const TreePattern& p_;
    const IndexedTree& t_;
    std::vector<std::vector<int>> kids_;
    std::vector<int> map_;
};

}  // namespace

std::optional<std::vector<int>> find_embedding(const TreePattern& pattern, const DepTree& tree) {
    IndexedTree it(tree);
    return Matcher(pattern, it).run();
}

bool matches(const TreePattern& pattern, const DepTree& tree) { return find_embedding(pattern, tree).has_value(); }

// ------------------------------------------------------------------ mining

std::size_t default_min_support(std::size_t n_trees) {
    const auto scaled = std::llround(500.0 * static_cast<double>(n_trees) / 90000.0);
    return std::max<std::size_t>(2, static_cast<std::size_t>(scaled));
}

namespace {

struct Embedding {
    std::uint32_t tree;
    std::vector<int> map;  // pattern node -> tree node position
};

struct Growth {
    std::vector<PatternNode> nodes;
    std::vector<Embedding> embeddings;
};

std::size_t distinct_trees(const std::vector<Embedding>& embs) {
    std::size_t count = 0;
    std::uint32_t last = UINT32_MAX;
    for (const auto& e : embs) {  // embeddings are grouped by tree
        if (e.tree != last) ++count;
        last = e.tree;
    }
    return count;
}

/// One embedding per (tree, image set); automorphic duplicates add nothing.
void dedup_embeddings(std::vector<Embedding>& embs) {
    std::vector<std::pair<std::vector<int>, std::size_t>> keyed;
    keyed.reserve(embs.size());
    for (std::size_t i = 0; i < embs.size(); ++i) {
        std::vector<int> key = embs[i].map;
        std::sort(key.begin(), key.end());
        key.insert(key.begin(), static_cast<int>(embs[i].tree));
        keyed.emplace_back(std::move(key), i);
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<Embedding> out;
    for (std::size_t i = 0; i < keyed.size(); ++i) {
        if (i && keyed[i].first == keyed[i - 1].first) continue;
        out.push_back(std::move(embs[keyed[i].second]));
    }
    embs = std::move(out);
}

class Miner {
  public:
    Miner(const std::vector<DepTree>& trees, const MiningOptions& opts, generation::Relation relation)
        : opts_(opts), relation_(relation) {
        index_.reserve(trees.size());
        for (const auto& t : trees) index_.emplace_back(t);
    }

    std::vector<TreePattern> run() {
        std::map<std::string, Growth> seeds;
        for (std::uint32_t ti = 0; ti < index_.size(); ++ti) {
            for (std::size_t n = 0; n < index_[ti].labels.size(); ++n) {
                auto& g = seeds[index_[ti].labels[n]];
                if (g.nodes.empty()) g.nodes.push_back({index_[ti].labels[n], -1, ""});
                g.embeddings.push_back({ti, {static_cast<int>(n)}});
            }
        }
        for (auto& [label, g] : seeds) {
            std::vector<PatternNode> nodes = g.nodes;
            const auto canon = canonicalize(nodes);
            visit(canon, std::move(g));
        }
        sort_longest_first(found_);
        return std::move(found_);
    }

  private:
    void visit(const std::string& canon, Growth g) {
        if (!visited_.insert(canon).second) return;
        const std::size_t support = distinct_trees(g.embeddings);
        if (support <= opts_.min_support) return;

        TreePattern p;
        p.relation = relation_;
        p.nodes = g.nodes;
        p.canonical = canon;
        p.pattern_id = stable_id("pt_", {generation::name(relation_), canon});
        p.support = support;
        found_.push_back(std::move(p));
        if (g.nodes.size() >= opts_.max_nodes) return;

        for (auto& [child_canon, child] : extend(g)) {
            if (visited_.count(child_canon)) continue;
            dedup_embeddings(child.embeddings);
            visit(child_canon, std::move(child));
        }
    }

    std::map<std::string, Growth> extend(const Growth& g) {
        struct Ext {
            std::string canon;
            std::vector<int> order;
            std::vector<PatternNode> nodes;
        };
        std::map<std::tuple<int, std::string, std::string>, Ext> cache;
        std::map<std::string, Growth> out;

        for (const auto& emb : g.embeddings) {
            const auto& tree = index_[emb.tree];
            std::vector<char> in_image(tree.labels.size(), 0);
            for (int t : emb.map) in_image[static_cast<std::size_t>(t)] = 1;
            for (std::size_t u = 0; u < g.nodes.size(); ++u) {
                for (int c : tree.children[static_cast<std::size_t>(emb.map[u])]) {
                    if (in_image[static_cast<std::size_t>(c)]) continue;
                    auto key = std::make_tuple(static_cast<int>(u), tree.deps[static_cast<std::size_t>(c)],
                                               tree.labels[static_cast<std::size_t>(c)]);
                    auto it = cache.find(key);
                    if (it == cache.end()) {
                        Ext ext;
                        ext.nodes = g.nodes;
                        ext.nodes.push_back({std::get<2>(key), static_cast<int>(u), std::get<1>(key)});
                        ext.canon = canonical_order(ext.nodes, ext.order);
                        ext.nodes = reorder(ext.nodes, ext.order);
                        it = cache.emplace(std::move(key), std::move(ext)).first;
                    }
                    const auto& ext = it->second;
                    auto& grown = out[ext.canon];
                    if (grown.nodes.empty()) grown.nodes = ext.nodes;
                    std::vector<int> map(emb.map.size() + 1);
                    for (std::size_t k = 0; k < emb.map.size(); ++k)
                        map[static_cast<std::size_t>(ext.order[k])] = emb.map[k];
                    map[static_cast<std::size_t>(ext.order.back())] = c;
                    grown.embeddings.push_back({emb.tree, std::move(map)});
                }
            }
        }
        return out;
    }

    MiningOptions opts_;
    generation::Relation relation_;
    std::vector<IndexedTree> index_;
    std::unordered_set<std::string> visited_;
    std::vector<TreePattern> found_;
};

}  // namespace

std::vector<TreePattern> mine_patterns(const std::vector<DepTree>& trees, const MiningOptions& opts,
                                       generation::Relation relation) {
    if (opts.min_support < 1) throw DomainError("min_support must be at least 1");
    if (trees.empty()) return {};
    return Miner(trees, opts, relation).run();
}

void sort_longest_first(std::vector<TreePattern>& patterns) {
    std::sort(patterns.begin(), patterns.end(), [](const TreePattern& a, const TreePattern& b) {
        if (a.size() != b.size()) return a.size() > b.size();
        return a.pattern_id < b.pattern_id;
    });
}

namespace {
std::vector<std::size_t> longest_first_order(const std::vector<TreePattern>& patterns) {
    std::vector<std::size_t> order(patterns.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (patterns[a].size() != patterns[b].size()) return patterns[a].size() > patterns[b].size();
        return patterns[a].pattern_id < patterns[b].pattern_id;
    });
    return order;
}
}  // namespace

std::vector<std::size_t> perfect_match_counts(const std::vector<TreePattern>& candidates,
                                              const std::vector<DepTree>& trees) {
    const auto order = longest_first_order(candidates);
    std::vector<std::size_t> counts(candidates.size(), 0);
    for (const auto& tree : trees) {
        IndexedTree it(tree);
        for (std::size_t idx : order) {
            if (Matcher(candidates[idx], it).run()) {
                ++counts[idx];
                break;
            }
        }
    }
    return counts;
}

std::size_t perfect_match_count(const TreePattern& pattern, const std::vector<TreePattern>& candidates,
                                const std::vector<DepTree>& trees) {
    auto all = candidates;
    const bool present = std::any_of(all.begin(), all.end(),
                                     [&](const TreePattern& c) { return c.pattern_id == pattern.pattern_id; });
    if (!present) all.push_back(pattern);
    const auto counts = perfect_match_counts(all, trees);
    for (std::size_t i = 0; i < all.size(); ++i)
        if (all[i].pattern_id == pattern.pattern_id) return counts[i];
    return 0;
}

std::vector<TreePattern> select_patterns(std::vector<TreePattern> candidates, const std::vector<DepTree>& trees,
                                         std::size_t min_perfect) {
    sort_longest_first(candidates);
    std::vector<IndexedTree> index;
    index.reserve(trees.size());
    for (const auto& t : trees) index.emplace_back(t);
    std::vector<char> claimed(trees.size(), 0);
    std::vector<TreePattern> kept;
    for (auto& cand : candidates) {
        std::vector<std::size_t> hits;
        for (std::size_t t = 0; t < index.size(); ++t) {
            if (!claimed[t] && Matcher(cand, index[t]).run()) hits.push_back(t);
        }
        if (hits.size() <= min_perfect) continue;
        for (auto t : hits) claimed[t] = 1;
        cand.perfect_match_count = hits.size();
        kept.push_back(std::move(cand));
    }
    return kept;
}

std::vector<TreePattern> apply_revision(std::vector<TreePattern> patterns, const std::set<std::string>& allow,
                                        const std::set<std::string>& deny) {
    std::erase_if(patterns, [&](const TreePattern& p) {
        return deny.count(p.pattern_id) || (!allow.empty() && !allow.count(p.pattern_id));
    });
    return patterns;
}

json to_json(const PatternAssignment& a) {
    return json{{"assertion_id", a.assertion_id},
                {"pattern_id", a.pattern_id ? json(*a.pattern_id) : json(nullptr)},
                {"simplified_tail", a.simplified_tail}};
}

PatternAssignment assignment_from_json(const json& j) {
    PatternAssignment a;
    a.assertion_id = j.at("assertion_id").get<std::string>();
    if (auto it = j.find("pattern_id"); it != j.end() && it->is_string()) a.pattern_id = it->get<std::string>();
    a.simplified_tail = j.value("simplified_tail", std::string{});
    return a;
}

std::string render_nodes(const DepTree& tree, std::vector<int> positions) {
    std::sort(positions.begin(), positions.end());
    std::string out;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto& node = tree.nodes[static_cast<std::size_t>(positions[i])];
        if (i > 0) {
            const auto& prev = tree.nodes[static_cast<std::size_t>(positions[i - 1])];
            const bool glued = !prev.space_after && positions[i] == positions[i - 1] + 1;
            if (!glued) out += ' ';
        }
        out += node.surface;
    }
    return out;
}

PatternAssignment assign_pattern(const DepTree& tree, const std::vector<TreePattern>& patterns) {
    PatternAssignment a;
    IndexedTree it(tree);
    for (std::size_t idx : longest_first_order(patterns)) {
        if (auto emb = Matcher(patterns[idx], it).run()) {
            a.pattern_id = patterns[idx].pattern_id;
            a.simplified_tail = render_nodes(tree, *emb);
            return a;
        }
    }
    a.simplified_tail = tree.text;
    return a;
}

double coverage(const std::vector<PatternAssignment>& assignments) {
    if (assignments.empty()) return 0.0;
    const auto hit = std::count_if(assignments.begin(), assignments.end(),
                                   [](const PatternAssignment& a) { return a.pattern_id.has_value(); });
    return static_cast<double>(hit) / static_cast<double>(assignments.size());
}

}  // namespace forge::mining
