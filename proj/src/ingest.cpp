#include "forge/ingest.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <unordered_map>

namespace forge::ingest {

std::string Item::top_category() const {
    if (!category.empty()) return category;
    if (!subcategory_path.empty()) return subcategory_path.front();
    return {};
}

json to_json(const Item& item) {
    return json{{"id", item.id},
                {"title", item.title},
                {"category", item.category},
                {"subcategory_path", item.subcategory_path},
                {"image_urls", item.image_urls},
                {"url", item.url}};
}

std::optional<Item> item_from_json(const json& j) {
    if (!j.is_object()) return std::nullopt;
    auto id = j.find("id");
    auto title = j.find("title");
    if (id == j.end() || title == j.end() || !title->is_string()) return std::nullopt;
    Item item;
    if (id->is_string()) {
        item.id = id->get<std::string>();
    } else if (id->is_number_integer()) {
        item.id = std::to_string(id->get<long long>());
    } else {
        return std::nullopt;
    }
    item.title = trim(title->get<std::string>());
    if (item.id.empty() || item.title.empty()) return std::nullopt;

    auto str_list = [](const json& v) {
        std::vector<std::string> out;
        if (!v.is_array()) return out;
        for (const auto& e : v)
            if (e.is_string()) out.push_back(e.get<std::string>());
        return out;
    };
    item.category = j.value("category", std::string{});
    if (auto it = j.find("subcategory_path"); it != j.end()) item.subcategory_path = str_list(*it);
    if (auto it = j.find("image_urls"); it != j.end()) item.image_urls = str_list(*it);
    item.url = j.value("url", std::string{});
    return item;
}

void ItemCatalog::upsert(Item item) {
    auto id = item.id;
    items_.insert_or_assign(std::move(id), std::move(item));
}

const Item* ItemCatalog::find(const std::string& id) const {
    auto it = items_.find(id);
    return it == items_.end() ? nullptr : &it->second;
}

CatalogLoad load_catalog(const std::filesystem::path& path) {
    CatalogLoad out;
    std::size_t invalid = 0;
    out.malformed = for_each_jsonl(path, [&](std::size_t line_no, const json& j) {
        auto item = item_from_json(j);
        if (!item) {
            spdlog::warn("{}:{}: not a valid item record", path.string(), line_no);
            ++invalid;
            return;
        }
        out.catalog.upsert(std::move(*item));
    });
    out.malformed += invalid;
    if (out.malformed) spdlog::warn("{}: skipped {} malformed lines", path.string(), out.malformed);
    return out;
}

bool CoBuyGraph::add_edge(const std::string& a, const std::string& b) {
    if (a == b) return false;
    Edge e = a < b ? Edge{a, b} : Edge{b, a};
    if (!edges_.insert(e).second) return false;
    adjacency_[a].insert(b);
    adjacency_[b].insert(a);
    return true;
}

std::size_t CoBuyGraph::degree(const std::string& id) const {
    auto it = adjacency_.find(id);
    return it == adjacency_.end() ? 0 : it->second.size();
}

bool CoBuyGraph::has_edge(const std::string& a, const std::string& b) const {
    return edges_.count(a < b ? Edge{a, b} : Edge{b, a}) != 0;
}

std::vector<std::string> CoBuyGraph::nodes() const {
    std::vector<std::string> out;
    out.reserve(adjacency_.size());
    for (const auto& [id, _] : adjacency_) out.push_back(id);
    return out;
}

GraphBuild build_cobuy_graph(const std::vector<Edge>& records, const ItemCatalog* catalog) {
    GraphBuild out;
    for (const auto& [a, b] : records) {
        if (catalog && (!catalog->contains(a) || !catalog->contains(b))) {
            ++out.skipped_unknown;
            continue;
        }
        if (a == b) continue;
        out.graph.add_edge(a, b);
    }
    if (out.skipped_unknown)
        spdlog::warn("co-buy graph: skipped {} records with unknown ids", out.skipped_unknown);
    return out;
}

std::vector<Edge> load_cobuy_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FatalInputError("cannot read " + path.string());
    std::vector<Edge> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cols = split(line, '\t');
        if (cols.size() < 2 || trim(cols[0]).empty() || trim(cols[1]).empty()) {
            spdlog::warn("{}:{}: expected two tab-separated ids", path.string(), line_no);
            continue;
        }
        out.emplace_back(trim(cols[0]), trim(cols[1]));
    }
    return out;
}

std::string make_pair_id(const std::string& a, const std::string& b) {
    return a < b ? stable_id("pr_", {a, b}) : stable_id("pr_", {b, a});
}

CoBuyPair make_pair(const Item& a, const Item& b) {
    CoBuyPair p;
    if (a.id < b.id) {
        p.item1 = a;
        p.item2 = b;
    } else {
        p.item1 = b;
        p.item2 = a;
    }
    p.pair_id = make_pair_id(a.id, b.id);
    return p;
}

std::vector<CoBuyPair> sample_pairs(const CoBuyGraph& graph, const ItemCatalog& catalog,
                                    const SampleOptions& opts) {
    auto eligible_node = [&](const std::string& id) -> const Item* {
        if (graph.degree(id) <= opts.min_degree) return nullptr;
        const Item* item = catalog.find(id);
        if (!item) return nullptr;
        if (!opts.categories.empty() && !opts.categories.count(item->top_category())) return nullptr;
        if (opts.require_title_quality && !title_quality_filter(*item)) return nullptr;
        return item;
    };

    std::vector<std::pair<const Item*, const Item*>> eligible;
    for (const auto& [a, b] : graph.edges()) {
        const Item* ia = eligible_node(a);
        const Item* ib = ia ? eligible_node(b) : nullptr;
        if (ia && ib) eligible.emplace_back(ia, ib);
    }

    // Partial Fisher-Yates over the canonically ordered edge list.
    Rng rng(opts.seed);
    const std::size_t take = std::min(opts.n, eligible.size());
    for (std::size_t i = 0; i < take; ++i) {
        std::swap(eligible[i], eligible[i + rng.below(eligible.size() - i)]);
    }
    std::vector<CoBuyPair> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(make_pair(*eligible[i].first, *eligible[i].second));
    std::sort(out.begin(), out.end(),
              [](const CoBuyPair& x, const CoBuyPair& y) { return x.pair_id < y.pair_id; });
    return out;
}

bool title_quality_filter(const Item& item) {
    auto tokens = split_ws(item.title);
    if (tokens.empty() || tokens.size() > 40) return false;
    for (auto& t : tokens) t = to_lower(t);

    std::size_t run = 1;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        run = tokens[i] == tokens[i - 1] ? run + 1 : 1;
        if (run >= 3) return false;
    }
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& t : tokens) {
        if (2 * ++counts[t] > tokens.size() && tokens.size() > 1) return false;
    }
    return true;
}

json pair_to_json(const CoBuyPair& p) {
    return json{{"pair_id", p.pair_id}, {"item1_id", p.item1.id}, {"item2_id", p.item2.id}};
}

CoBuyPair pair_from_json(const json& j, const ItemCatalog& catalog) {
    const auto a = j.at("item1_id").get<std::string>();
    const auto b = j.at("item2_id").get<std::string>();
    const auto* ia = catalog.find(a);
    const auto* ib = catalog.find(b);
    if (!ia || !ib) throw FatalInputError("pair names unknown item " + (ia ? b : a));
    return make_pair(*ia, *ib);
}

}  // namespace forge::ingest
