#include "forge/kgstore.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <tuple>

namespace forge::kg {

std::string_view kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::Item: return "item";
        case NodeKind::Intention: return "intention";
        case NodeKind::Abstract: return "abstract";
    }
    return "?";
}

std::string_view kind_name(EdgeKind k) {
    switch (k) {
        case EdgeKind::Assert: return "ASSERT";
        case EdgeKind::ConceptAssert: return "CONCEPT_ASSERT";
        case EdgeKind::IsaWeight: return "ISA_WEIGHT";
    }
    return "?";
}

namespace {
NodeKind node_kind_from(std::string_view s) {
    if (s == "item") return NodeKind::Item;
    if (s == "intention") return NodeKind::Intention;
    if (s == "abstract") return NodeKind::Abstract;
    throw FatalInputError("unknown node kind: " + std::string(s));
}

EdgeKind edge_kind_from(std::string_view s) {
    if (s == "ASSERT") return EdgeKind::Assert;
    if (s == "CONCEPT_ASSERT") return EdgeKind::ConceptAssert;
    if (s == "ISA_WEIGHT") return EdgeKind::IsaWeight;
    throw FatalInputError("unknown edge kind: " + std::string(s));
}

std::string assert_edge_id(const std::string& pair, generation::Relation r, const std::string& dst) {
    return stable_id("ea_", {pair, generation::name(r), dst});
}
std::string concept_edge_id(const std::string& pair, generation::Relation r, const std::string& dst) {
    return stable_id("ec_", {pair, generation::name(r), dst});
}
std::string isa_edge_id(const std::string& intention, const std::string& abstract) {
    return stable_id("ei_", {intention, abstract});
}

void keep_max(std::optional<double>& slot, double v) {
    if (!slot || v > *slot) slot = v;
}
}  // namespace

std::vector<const Edge*> KnowledgeGraph::edges_of(EdgeKind kind) const {
    std::vector<const Edge*> out;
    for (const auto& [_, e] : edges)
        if (e.kind == kind) out.push_back(&e);
    return out;
}

const Node* KnowledgeGraph::node(const std::string& id) const {
    auto it = nodes.find(id);
    return it == nodes.end() ? nullptr : &it->second;
}

std::string intention_id(const std::string& text) { return stable_id("in_", {text}); }

std::string pair_key(const std::vector<std::string>& src) { return join(src, "\t"); }

KnowledgeGraph assemble(const AssemblyInput& in) {
    if (!in.pairs && !in.scored.empty()) throw ReferentialError("assemble: pair table required");
    KnowledgeGraph kg;

    std::map<std::string, const population::ScoredAssertion*> by_id;
    for (const auto& s : in.scored) {
        if (!in.pairs->count(s.assertion.pair_id))
            throw ReferentialError("assertion " + s.assertion.assertion_id + " names unknown pair " +
                                   s.assertion.pair_id);
        by_id[s.assertion.assertion_id] = &s;
    }
    std::map<std::string, const mining::PatternAssignment*> assignment_of;
    for (const auto& a : in.assignments) {
        if (!by_id.count(a.assertion_id))
            throw ReferentialError("assignment names unknown assertion " + a.assertion_id);
        assignment_of[a.assertion_id] = &a;
    }

    for (const auto& s : in.scored) {
        if (!(s.plausibility > in.plau_threshold)) continue;
        const auto& pair = in.pairs->at(s.assertion.pair_id);
        auto asg = assignment_of.find(s.assertion.assertion_id);
        const std::string text = asg != assignment_of.end() && asg->second->pattern_id
                                     ? asg->second->simplified_tail
                                     : s.assertion.tail;
        const std::string tail_id = intention_id(text);

        for (const auto* item : {&pair.item1, &pair.item2}) {
            kg.nodes.try_emplace(item->id, Node{item->id, NodeKind::Item, {}, *item});
        }
        kg.nodes.try_emplace(tail_id, Node{tail_id, NodeKind::Intention, text, std::nullopt});

        const auto id = assert_edge_id(pair.pair_id, s.assertion.relation, tail_id);
        auto [it, fresh] = kg.edges.try_emplace(id);
        Edge& e = it->second;
        if (fresh) {
            e.edge_id = id;
            e.kind = EdgeKind::Assert;
            e.src = {pair.item1.id, pair.item2.id};
            std::sort(e.src.begin(), e.src.end());
            e.dst = tail_id;
            e.relation = s.assertion.relation;
        }
        keep_max(e.plausibility, s.plausibility);
        keep_max(e.typicality, s.typicality);
    }

    for (const auto& a : in.abstracts) {
        if (!kg.nodes.count(a.source_tail_id)) continue;  // source filtered out
        if (!(a.weight > 0.0 && a.weight <= 1.0)) {
            spdlog::warn("skipping abstract {} with weight {}", a.node_id, a.weight);
            continue;
        }
        kg.nodes.try_emplace(a.node_id, Node{a.node_id, NodeKind::Abstract, a.abstract_tail, std::nullopt});
        const auto id = isa_edge_id(a.source_tail_id, a.node_id);
        auto [it, fresh] = kg.edges.try_emplace(id);
        if (fresh) {
            it->second.edge_id = id;
            it->second.kind = EdgeKind::IsaWeight;
            it->second.src = {a.source_tail_id};
            it->second.dst = a.node_id;
        }
        keep_max(it->second.weight, a.weight);
    }

    rebuild_derived(kg);
    return kg;
}

void rebuild_derived(KnowledgeGraph& kg) {
    std::erase_if(kg.edges, [](const auto& kv) { return kv.second.kind == EdgeKind::ConceptAssert; });

    std::set<std::string> used_items, used_intentions;
    std::multimap<std::string, const Edge*> asserts_by_intention;
    for (const auto& [_, e] : kg.edges) {
        if (e.kind != EdgeKind::Assert) continue;
        used_intentions.insert(e.dst);
        for (const auto& s : e.src) used_items.insert(s);
        asserts_by_intention.emplace(e.dst, &e);
    }
    std::erase_if(kg.edges, [&](const auto& kv) {
        return kv.second.kind == EdgeKind::IsaWeight && !used_intentions.count(kv.second.src.front());
    });

    std::set<std::string> used_abstracts;
    std::vector<Edge> derived;
    std::map<std::string, std::size_t> derived_index;
    for (const auto& [_, isa] : kg.edges) {
        if (isa.kind != EdgeKind::IsaWeight) continue;
        used_abstracts.insert(isa.dst);
        auto [lo, hi] = asserts_by_intention.equal_range(isa.src.front());
        for (auto it = lo; it != hi; ++it) {
            const Edge& a = *it->second;
            const auto id = concept_edge_id(pair_key(a.src), *a.relation, isa.dst);
            auto [pos, fresh] = derived_index.try_emplace(id, derived.size());
            if (fresh) {
                Edge e;
                e.edge_id = id;
                e.kind = EdgeKind::ConceptAssert;
                e.src = a.src;
                e.dst = isa.dst;
                e.relation = a.relation;
                derived.push_back(std::move(e));
            }
            Edge& e = derived[pos->second];
            keep_max(e.plausibility, *a.plausibility);
            keep_max(e.typicality, *a.typicality);
        }
    }
    for (auto& e : derived) {
        auto id = e.edge_id;
        kg.edges.emplace(std::move(id), std::move(e));
    }

    std::erase_if(kg.nodes, [&](const auto& kv) {
        switch (kv.second.kind) {
            case NodeKind::Item: return !used_items.count(kv.first);
            case NodeKind::Intention: return !used_intentions.count(kv.first);
            case NodeKind::Abstract: return !used_abstracts.count(kv.first);
        }
        return false;
    });
}

KnowledgeGraph filter_edges(const KnowledgeGraph& kg, double plau_t, std::optional<double> typ_t) {
    KnowledgeGraph out = kg;
    std::erase_if(out.edges, [&](const auto& kv) {
        const Edge& e = kv.second;
        if (e.kind != EdgeKind::Assert) return false;
        return !(e.plausibility.value_or(0.0) > plau_t) || (typ_t && !(e.typicality.value_or(0.0) > *typ_t));
    });
    rebuild_derived(out);
    return out;
}

bool joinable(const KnowledgeGraph& kg) {
    std::set<std::tuple<std::string, generation::Relation, std::string>> asserts;  // pair, rel, intention
    std::multimap<std::string, std::string> isa_by_abstract;
    for (const auto& [_, e] : kg.edges) {
        if (e.kind == EdgeKind::Assert) asserts.emplace(pair_key(e.src), *e.relation, e.dst);
        if (e.kind == EdgeKind::IsaWeight) isa_by_abstract.emplace(e.dst, e.src.front());
    }
    for (const auto& [_, e] : kg.edges) {
        if (e.kind != EdgeKind::ConceptAssert) continue;
        bool supported = false;
        auto [lo, hi] = isa_by_abstract.equal_range(e.dst);
        for (auto it = lo; it != hi && !supported; ++it)
            supported = asserts.count({pair_key(e.src), *e.relation, it->second}) != 0;
        if (!supported) return false;
    }
    return true;
}

bool no_dangling(const KnowledgeGraph& kg) {
    for (const auto& [_, e] : kg.edges) {
        if (!kg.nodes.count(e.dst)) return false;
        for (const auto& s : e.src)
            if (!kg.nodes.count(s)) return false;
    }
    return true;
}

KGStats stats(const KnowledgeGraph& kg) {
    KGStats s;
    for (const auto& [_, n] : kg.nodes) {
        switch (n.kind) {
            case NodeKind::Item: ++s.item_nodes; break;
            case NodeKind::Intention: ++s.intention_nodes; break;
            case NodeKind::Abstract: ++s.abstract_nodes; break;
        }
    }
    std::set<std::string> pairs;
    std::map<std::string, std::set<std::string>> tails;
    std::map<std::string, std::size_t> tokens;
    std::size_t total_tokens = 0;
    for (const auto& [_, e] : kg.edges) {
        switch (e.kind) {
            case EdgeKind::Assert: {
                ++s.assert_edges;
                pairs.insert(pair_key(e.src));
                const std::string rel(generation::name(*e.relation));
                auto& rs = s.per_relation[rel];
                ++rs.assert_edges;
                tails[rel].insert(e.dst);
                const auto* n = kg.node(e.dst);
                const std::size_t len = n ? split_ws(n->text).size() : 0;
                tokens[rel] += len;
                total_tokens += len;
                break;
            }
            case EdgeKind::ConceptAssert: ++s.concept_assert_edges; break;
            case EdgeKind::IsaWeight: ++s.isa_weight_edges; break;
        }
    }
    s.cobuy_pairs = pairs.size();
    if (s.assert_edges) s.avg_tail_tokens = static_cast<double>(total_tokens) / static_cast<double>(s.assert_edges);
    for (auto& [rel, rs] : s.per_relation) {
        rs.distinct_tails = tails[rel].size();
        rs.avg_tail_tokens = static_cast<double>(tokens[rel]) / static_cast<double>(rs.assert_edges);
    }
    return s;
}

json to_json(const KGStats& s) {
    json per = json::object();
    for (const auto& [rel, rs] : s.per_relation)
        per[rel] = {{"assert_edges", rs.assert_edges},
                    {"distinct_tails", rs.distinct_tails},
                    {"avg_tail_tokens", rs.avg_tail_tokens}};
    return json{{"item_nodes", s.item_nodes},
                {"intention_nodes", s.intention_nodes},
                {"abstract_nodes", s.abstract_nodes},
                {"assert_edges", s.assert_edges},
                {"concept_assert_edges", s.concept_assert_edges},
                {"isa_weight_edges", s.isa_weight_edges},
                {"total_edges", s.total_edges()},
                {"cobuy_pairs", s.cobuy_pairs},
                {"avg_tail_tokens", s.avg_tail_tokens},
                {"per_relation", per}};
}

namespace {
json header(std::string_view kind) {
    return json{{"format", "forge-kg"}, {"version", kFormatVersion}, {"file", kind}};
}

json node_json(const Node& n) {
    json j{{"id", n.id}, {"kind", kind_name(n.kind)}};
    if (n.kind != NodeKind::Item) j["text"] = n.text;
    if (n.item) j["item"] = ingest::to_json(*n.item);
    return j;
}

json edge_json(const Edge& e) {
    json j{{"edge_id", e.edge_id}, {"kind", kind_name(e.kind)}, {"src", e.src}, {"dst", e.dst}};
    if (e.relation) j["relation"] = generation::name(*e.relation);
    if (e.plausibility) j["plausibility"] = *e.plausibility;
    if (e.typicality) j["typicality"] = *e.typicality;
    if (e.weight) j["weight"] = *e.weight;
    return j;
}

std::vector<json> read_versioned(const std::filesystem::path& path, std::string_view kind) {
    if (!std::filesystem::exists(path)) throw FatalInputError("missing graph file " + path.string());
    std::ifstream in(path);
    if (!in) throw FatalInputError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FatalInputError(path.string() + ": missing header");
    auto h = json::parse(line, nullptr, false);
    if (h.is_discarded() || h.value("format", "") != "forge-kg" || h.value("file", "") != kind)
        throw FatalInputError(path.string() + ": not a forge-kg " + std::string(kind) + " file");
    if (h.value("version", -1) != kFormatVersion)
        throw FatalInputError(path.string() + ": unsupported format version " + h.value("version", json()).dump());
    std::vector<json> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw FatalInputError(path.string() + ":" + std::to_string(line_no) + ": bad JSON");
        rows.push_back(std::move(j));
    }
    return rows;
}
}  // namespace

void export_graph(const KnowledgeGraph& kg, const std::filesystem::path& dir) {
    std::string nodes = header("nodes").dump() + "\n";
    for (const auto& [_, n] : kg.nodes) nodes += node_json(n).dump() + "\n";
    std::string edges = header("edges").dump() + "\n";
    for (const auto& [_, e] : kg.edges) edges += edge_json(e).dump() + "\n";
    write_file_atomic(dir / "nodes.jsonl", nodes);
    write_file_atomic(dir / "edges.jsonl", edges);
}

KnowledgeGraph import_graph(const std::filesystem::path& dir) {
    KnowledgeGraph kg;
    for (const auto& j : read_versioned(dir / "nodes.jsonl", "nodes")) {
        Node n;
        n.id = j.at("id").get<std::string>();
        n.kind = node_kind_from(j.at("kind").get<std::string>());
        n.text = j.value("text", std::string{});
        if (auto it = j.find("item"); it != j.end()) {
            auto item = ingest::item_from_json(*it);
            if (!item) throw FatalInputError("node " + n.id + ": bad item fields");
            n.item = std::move(*item);
        }
        auto id = n.id;
        kg.nodes.emplace(std::move(id), std::move(n));
    }
    for (const auto& j : read_versioned(dir / "edges.jsonl", "edges")) {
        Edge e;
        e.edge_id = j.at("edge_id").get<std::string>();
        e.kind = edge_kind_from(j.at("kind").get<std::string>());
        e.src = j.at("src").get<std::vector<std::string>>();
        e.dst = j.at("dst").get<std::string>();
        if (auto it = j.find("relation"); it != j.end())
            e.relation = generation::relation_from_name(it->get<std::string>());
        if (auto it = j.find("plausibility"); it != j.end()) e.plausibility = it->get<double>();
        if (auto it = j.find("typicality"); it != j.end()) e.typicality = it->get<double>();
        if (auto it = j.find("weight"); it != j.end()) e.weight = it->get<double>();
        auto id = e.edge_id;
        kg.edges.emplace(std::move(id), std::move(e));
    }
    if (!no_dangling(kg)) throw FatalInputError(dir.string() + ": edges reference missing nodes");
    return kg;
}

std::vector<SubcategoryAssertion> subcategory_common_assertions(const KnowledgeGraph& kg,
                                                                double min_typicality, std::size_t min_count) {
    auto subcategory = [&](const std::string& id) -> std::string {
        const auto* n = kg.node(id);
        if (!n || !n->item) return "";
        if (!n->item->subcategory_path.empty()) return n->item->subcategory_path.back();
        return n->item->top_category();
    };
    std::map<std::tuple<std::string, std::string, std::string, std::string>, std::pair<std::size_t, double>> groups;
    for (const auto& [_, e] : kg.edges) {
        if (e.kind != EdgeKind::Assert || !(e.typicality.value_or(0.0) > min_typicality)) continue;
        auto a = subcategory(e.src[0]);
        auto b = subcategory(e.src[1]);
        if (a.empty() || b.empty()) continue;
        if (b < a) std::swap(a, b);
        const auto* tail = kg.node(e.dst);
        auto& g = groups[{a, b, std::string(generation::name(*e.relation)), tail ? tail->text : e.dst}];
        ++g.first;
        g.second += *e.typicality;
    }
    std::vector<SubcategoryAssertion> out;
    for (const auto& [key, g] : groups) {
        if (g.first < min_count) continue;
        out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), g.first,
                       g.second / static_cast<double>(g.first)});
    }
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
        return std::tie(x.subcategory1, x.subcategory2, y.count, x.relation, x.tail) <
               std::tie(y.subcategory1, y.subcategory2, x.count, y.relation, y.tail);
    });
    return out;
}

}  // namespace forge::kg
