#include "forge/conceptualize.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace forge::conceptualize {

void ConceptTable::add(std::string_view entity, std::string_view concept_name, double likelihood) {
    if (!std::isfinite(likelihood) || likelihood <= 0.0) throw DomainError("likelihood must be finite and > 0");
    const auto key = to_lower(normalize_ws(entity));
    const auto con = normalize_ws(concept_name);
    if (key.empty() || con.empty()) throw DomainError("empty entity or concept");
    entries_[key][con] += likelihood;
    max_span_tokens_ = std::max(max_span_tokens_, split_ws(key).size());
}

std::vector<ConceptEntry> ConceptTable::lookup(std::string_view span) const {
    std::vector<ConceptEntry> out;
    auto it = entries_.find(to_lower(normalize_ws(span)));
    if (it == entries_.end()) return out;
    for (const auto& [c, l] : it->second) out.push_back({c, l});
    std::stable_sort(out.begin(), out.end(),
                     [](const ConceptEntry& a, const ConceptEntry& b) { return a.likelihood > b.likelihood; });
    return out;
}

bool ConceptTable::contains(std::string_view span) const {
    return entries_.count(to_lower(normalize_ws(span))) != 0;
}

TableLoad load_concept_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FatalInputError("cannot read " + path.string());
    TableLoad out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cols = split(line, '\t');
        try {
            if (cols.size() != 3) throw DomainError("expected 3 columns");
            std::size_t used = 0;
            const double l = std::stod(trim(cols[2]), &used);
            if (used != trim(cols[2]).size()) throw DomainError("trailing characters in likelihood");
            out.table.add(cols[0], cols[1], l);
        } catch (const std::exception& e) {
            ++out.skipped;
            spdlog::warn("{}:{}: skipping concept row: {}", path.string(), line_no, e.what());
        }
    }
    return out;
}

json to_json(const AbstractIntention& a) {
    return json{{"node_id", a.node_id},       {"source_tail_id", a.source_tail_id},
                {"concept", a.concept_name},  {"span", a.span},
                {"weight", a.weight},         {"abstract_tail", a.abstract_tail}};
}

AbstractIntention abstract_from_json(const json& j) {
    AbstractIntention a;
    a.node_id = j.at("node_id").get<std::string>();
    a.source_tail_id = j.at("source_tail_id").get<std::string>();
    a.concept_name = j.at("concept").get<std::string>();
    a.span = j.value("span", std::string{});
    a.weight = j.at("weight").get<double>();
    a.abstract_tail = j.at("abstract_tail").get<std::string>();
    return a;
}

std::string abstract_node_id(const std::string& abstract_tail) { return stable_id("ab_", {abstract_tail}); }

namespace {
struct Token {
    std::string lead;  // leading punctuation
    std::string core;  // lowercased match key
    std::string surface_core;
    std::string trail;  // trailing punctuation
};

Token split_token(const std::string& raw) {
    std::size_t b = 0, e = raw.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(raw[e - 1]))) --e;
    return {raw.substr(0, b), to_lower(raw.substr(b, e - b)), raw.substr(b, e - b), raw.substr(e)};
}
}  // namespace

std::vector<AbstractIntention> conceptualize_tail(const std::string& source_tail_id, const std::string& tail,
                                                  const ConceptTable& table, const ConceptualizeOptions& opts) {
    if (opts.top_k < 1) throw DomainError("top_k must be at least 1");
    const auto raw_tokens = split_ws(tail);
    std::vector<Token> tokens;
    for (const auto& t : raw_tokens) tokens.push_back(split_token(t));

    const std::size_t n = tokens.size();
    std::size_t span_begin = 0, span_len = 0;
    std::string span_key;
    for (std::size_t len = std::min(n, table.max_span_tokens()); len >= 1 && span_len == 0; --len) {
        for (std::size_t start = n - len + 1; start-- > 0;) {
            // Only the outer edges of a span may carry punctuation.
            bool ok = true;
            std::vector<std::string> parts;
            for (std::size_t k = start; k < start + len; ++k) {
                const auto& t = tokens[k];
                if (t.core.empty() || (k > start && !t.lead.empty()) || (k + 1 < start + len && !t.trail.empty())) {
                    ok = false;
                    break;
                }
                parts.push_back(t.core);
            }
            if (!ok) continue;
            auto key = join(parts, " ");
            if (table.contains(key)) {
                span_begin = start;
                span_len = len;
                span_key = std::move(key);
                break;
            }
        }
    }
    if (span_len == 0) return {};

    const auto concepts = table.lookup(span_key);
    double total = 0.0;
    for (const auto& c : concepts) total += c.likelihood;

    std::vector<AbstractIntention> out;
    for (const auto& c : concepts) {
        if (out.size() >= opts.top_k) break;
        const double w = c.likelihood / total;
        if (w < opts.min_weight) break;  // concepts are sorted by weight
        std::vector<std::string> words(raw_tokens.begin(), raw_tokens.begin() + static_cast<std::ptrdiff_t>(span_begin));
        words.push_back(tokens[span_begin].lead + c.concept_name + tokens[span_begin + span_len - 1].trail);
        words.insert(words.end(), raw_tokens.begin() + static_cast<std::ptrdiff_t>(span_begin + span_len),
                     raw_tokens.end());
        AbstractIntention a;
        a.source_tail_id = source_tail_id;
        a.concept_name = c.concept_name;
        a.span = span_key;
        a.weight = w;
        a.abstract_tail = join(words, " ");
        a.node_id = abstract_node_id(a.abstract_tail);
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace forge::conceptualize
