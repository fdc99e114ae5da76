#include "forge/pipeline.hpp"

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "forge/ingest.hpp"
#include "forge/kgstore.hpp"
#include "forge/population.hpp"

namespace forge::pipeline {

namespace fs = std::filesystem;
using generation::Relation;

// ------------------------------------------------------------------ config

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s{
        {"paths",
         {"items", "cobuy", "work_dir", "parses", "parse_index", "concepts", "interactions", "tail_vectors", "scores",
          "labels", "pattern_allow", "pattern_deny"}},
        {"run", {"seed"}},
        {"ingest", {"categories", "sample_size", "min_degree", "title_filter"}},
        {"generation",
         {"endpoint", "max_tokens", "top_p", "samples_per_prompt", "max_attempts", "initial_backoff_ms",
          "max_in_flight", "relations"}},
        {"annotation", {"host", "port", "static_dir", "workers", "plausibility_target", "typicality_target"}},
        {"population", {"scorer", "endpoint", "batch_size", "plau_threshold", "typ_threshold", "split_ratio"}},
        {"mining", {"min_support", "max_nodes", "min_perfect"}},
        {"conceptualize", {"top_k", "min_weight"}},
        {"embed", {"d", "gamma", "lr", "epochs", "negatives", "tails_trainable", "structure_epochs"}},
        {"receval", {"seeds", "factors", "lr", "reg", "epochs", "thresholds"}},
    };
    return s;
}

class Reader {
  public:
    Reader(const boost::property_tree::ptree& tree, fs::path base) : tree_(tree), base_(std::move(base)) {}

    std::optional<std::string> raw(const std::string& section, const std::string& key) const {
        auto sec = tree_.get_child_optional(section);
        if (!sec) return std::nullopt;
        auto v = sec->get_optional<std::string>(key);
        if (!v) return std::nullopt;
        return trim(*v);
    }

    template <class T>
    void get(const std::string& section, const std::string& key, T& out) const {
        auto v = raw(section, key);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                const auto s = to_lower(*v);
                if (s == "true" || s == "yes" || s == "1") out = true;
                else if (s == "false" || s == "no" || s == "0") out = false;
                else throw boost::bad_lexical_cast();
            } else if constexpr (std::is_unsigned_v<T>) {
                if (!v->empty() && (*v)[0] == '-') throw boost::bad_lexical_cast();
                out = boost::lexical_cast<T>(*v);
            } else {
                out = boost::lexical_cast<T>(*v);
            }
        } catch (const boost::bad_lexical_cast&) {
            throw ConfigError(section + "." + key + ": cannot parse '" + *v + "'");
        }
    }

    void path(const std::string& section, const std::string& key, fs::path& out) const {
        if (auto v = raw(section, key); v && !v->empty()) out = resolve(*v);
    }
    void path(const std::string& section, const std::string& key, std::optional<fs::path>& out) const {
        if (auto v = raw(section, key); v && !v->empty()) out = resolve(*v);
    }

    std::vector<std::string> list(const std::string& section, const std::string& key) const {
        std::vector<std::string> out;
        if (auto v = raw(section, key))
            for (const auto& part : split(*v, ','))
                if (auto t = trim(part); !t.empty()) out.push_back(t);
        return out;
    }

  private:
    fs::path resolve(const std::string& p) const {
        fs::path path(p);
        return path.is_absolute() ? path : (base_ / path).lexically_normal();
    }

    const boost::property_tree::ptree& tree_;
    fs::path base_;
};

template <class T>
std::vector<T> parse_list(const std::vector<std::string>& parts, const std::string& where) {
    std::vector<T> out;
    for (const auto& p : parts) {
        try {
            out.push_back(boost::lexical_cast<T>(p));
        } catch (const boost::bad_lexical_cast&) {
            throw ConfigError(where + ": cannot parse '" + p + "'");
        }
    }
    return out;
}

}  // namespace

PipelineConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw MissingInputError(path);
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
        auto it = schema().find(section);
        if (it == schema().end()) throw ConfigError("config: unknown section [" + section + "]");
        if (!body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
        for (const auto& [key, _] : body)
            if (!it->second.count(key)) throw ConfigError("config: unknown key " + section + "." + key);
    }

    PipelineConfig cfg;
    const Reader r(tree, fs::absolute(path).parent_path());
    auto& p = cfg.paths;
    p.work_dir = "work";
    r.path("paths", "work_dir", p.work_dir);
    if (p.work_dir.is_relative()) p.work_dir = (fs::absolute(path).parent_path() / p.work_dir).lexically_normal();
    r.path("paths", "items", p.items);
    r.path("paths", "cobuy", p.cobuy);
    r.path("paths", "parses", p.parses);
    r.path("paths", "parse_index", p.parse_index);
    r.path("paths", "concepts", p.concepts);
    r.path("paths", "interactions", p.interactions);
    r.path("paths", "tail_vectors", p.tail_vectors);
    r.path("paths", "scores", p.scores);
    r.path("paths", "labels", p.labels);
    r.path("paths", "pattern_allow", p.pattern_allow);
    r.path("paths", "pattern_deny", p.pattern_deny);

    r.get("run", "seed", cfg.seed);

    for (const auto& c : r.list("ingest", "categories")) cfg.categories.insert(c);
    r.get("ingest", "sample_size", cfg.sample_size);
    r.get("ingest", "min_degree", cfg.min_degree);
    r.get("ingest", "title_filter", cfg.title_filter);

    auto& g = cfg.generation;
    if (auto v = r.raw("generation", "endpoint")) g.endpoint = *v;
    r.get("generation", "max_tokens", g.max_tokens);
    r.get("generation", "top_p", g.top_p);
    r.get("generation", "samples_per_prompt", g.samples_per_prompt);
    r.get("generation", "max_attempts", g.max_attempts);
    long backoff = g.initial_backoff.count();
    r.get("generation", "initial_backoff_ms", backoff);
    g.initial_backoff = std::chrono::milliseconds(backoff);
    r.get("generation", "max_in_flight", g.max_in_flight);
    const auto rels = r.list("generation", "relations");
    if (rels.empty() || (rels.size() == 1 && to_lower(rels[0]) == "all")) {
        for (const auto& info : generation::relation_table()) cfg.relations.push_back(info.relation);
    } else {
        for (const auto& name : rels) {
            try {
                cfg.relations.push_back(generation::relation_from_name(name));
            } catch (const DomainError&) {
                throw ConfigError("generation.relations: unknown relation '" + name + "'");
            }
        }
    }

    if (auto v = r.raw("annotation", "host")) cfg.annotation_host = *v;
    r.get("annotation", "port", cfg.annotation_port);
    r.path("annotation", "static_dir", cfg.annotation_static);
    cfg.workers = r.list("annotation", "workers");
    r.get("annotation", "plausibility_target", cfg.plausibility_target);
    r.get("annotation", "typicality_target", cfg.typicality_target);

    if (auto v = r.raw("population", "scorer")) cfg.scorer = to_lower(*v);
    if (auto v = r.raw("population", "endpoint")) cfg.scorer_endpoint = *v;
    r.get("population", "batch_size", cfg.score_batch);
    r.get("population", "plau_threshold", cfg.plau_threshold);
    if (r.raw("population", "typ_threshold")) {
        double t = 0.0;
        r.get("population", "typ_threshold", t);
        cfg.typ_threshold = t;
    }
    r.get("population", "split_ratio", cfg.split_ratio);

    r.get("mining", "min_support", cfg.min_support);
    r.get("mining", "max_nodes", cfg.max_nodes);
    r.get("mining", "min_perfect", cfg.min_perfect);

    r.get("conceptualize", "top_k", cfg.concepts.top_k);
    r.get("conceptualize", "min_weight", cfg.concepts.min_weight);

    auto& t = cfg.train;
    r.get("embed", "d", t.d);
    r.get("embed", "gamma", t.gamma);
    r.get("embed", "lr", t.lr);
    r.get("embed", "epochs", t.epochs);
    r.get("embed", "negatives", t.negatives);
    r.get("embed", "tails_trainable", t.tails_trainable);
    r.get("embed", "structure_epochs", cfg.structure_epochs);

    cfg.receval_seeds = parse_list<std::uint64_t>(r.list("receval", "seeds"), "receval.seeds");
    r.get("receval", "factors", cfg.predictor.factors);
    r.get("receval", "lr", cfg.predictor.lr);
    r.get("receval", "reg", cfg.predictor.reg);
    r.get("receval", "epochs", cfg.predictor.epochs);
    if (r.raw("receval", "thresholds"))
        cfg.ablation_thresholds = parse_list<double>(r.list("receval", "thresholds"), "receval.thresholds");

    validate(cfg);
    return cfg;
}

void validate(const PipelineConfig& cfg) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("config: " + what);
    };
    auto prob = [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; };
    require(!cfg.paths.work_dir.empty(), "paths.work_dir must be set");
    require(cfg.generation.max_tokens > 0, "generation.max_tokens must be positive");
    require(cfg.generation.top_p > 0.0 && cfg.generation.top_p <= 1.0, "generation.top_p must be in (0, 1]");
    require(cfg.generation.samples_per_prompt > 0, "generation.samples_per_prompt must be positive");
    require(cfg.generation.max_attempts > 0, "generation.max_attempts must be positive");
    require(cfg.generation.max_in_flight > 0, "generation.max_in_flight must be positive");
    require(cfg.annotation_port >= 0 && cfg.annotation_port < 65536, "annotation.port out of range");
    require(cfg.plausibility_target % 2 == 1, "annotation.plausibility_target must be odd");
    require(cfg.typicality_target > 0, "annotation.typicality_target must be positive");
    require(cfg.scorer == "file" || cfg.scorer == "http", "population.scorer must be 'file' or 'http'");
    require(cfg.score_batch > 0, "population.batch_size must be positive");
    require(prob(cfg.plau_threshold), "population.plau_threshold must be in [0, 1]");
    require(!cfg.typ_threshold || prob(*cfg.typ_threshold), "population.typ_threshold must be in [0, 1]");
    require(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0, "population.split_ratio must be in (0, 1)");
    require(cfg.max_nodes >= 1, "mining.max_nodes must be positive");
    require(cfg.concepts.top_k >= 1, "conceptualize.top_k must be positive");
    require(prob(cfg.concepts.min_weight), "conceptualize.min_weight must be in [0, 1]");
    require(cfg.train.d >= 1, "embed.d must be positive");
    require(cfg.train.gamma > 0.0, "embed.gamma must be positive");
    require(cfg.train.lr >= 0.0, "embed.lr must be non-negative");
    require(cfg.train.negatives >= 1, "embed.negatives must be positive");
    require(cfg.predictor.lr > 0.0, "receval.lr must be positive");
    require(cfg.predictor.reg >= 0.0, "receval.reg must be non-negative");
    for (double t : cfg.ablation_thresholds) require(prob(t), "receval.thresholds must lie in [0, 1]");
}

void apply(PipelineConfig& cfg, const Overrides& o) {
    if (o.seed) cfg.seed = *o.seed;
    if (o.threshold) cfg.plau_threshold = *o.threshold;
    if (o.min_support) cfg.min_support = *o.min_support;
    validate(cfg);
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"ingest",   "generate",      "annotate-serve", "populate",
                                                "mine",     "conceptualize", "assemble",       "embed",
                                                "receval",  "report"};
    return names;
}

fs::path stage_dir(const PipelineConfig& cfg, const std::string& stage) {
    return cfg.paths.work_dir / (stage == "assemble" ? std::string("kg") : stage);
}

// ------------------------------------------------------------------ artifacts

namespace {

fs::path out(const PipelineConfig& cfg, const std::string& stage, const std::string& file) {
    return stage_dir(cfg, stage) / file;
}

void require_path(const fs::path& p, const std::string& what) {
    if (p.empty()) throw ConfigError("config: " + what + " is not set");
}

std::vector<json> read_artifact(const fs::path& path) {
    std::vector<json> rows;
    const auto bad = for_each_jsonl(path, [&](std::size_t, const json& j) { rows.push_back(j); });
    if (bad) throw FatalInputError(path.string() + ": " + std::to_string(bad) + " malformed lines");
    return rows;
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) { write_file_atomic(path, to_jsonl(rows)); }

ingest::ItemCatalog catalog_of(const PipelineConfig& cfg) {
    return ingest::load_catalog(cfg.paths.items).catalog;
}

std::map<std::string, ingest::CoBuyPair> pairs_of(const PipelineConfig& cfg, const ingest::ItemCatalog& catalog) {
    std::map<std::string, ingest::CoBuyPair> pairs;
    for (const auto& j : read_artifact(out(cfg, "ingest", "pairs.jsonl"))) {
        auto p = ingest::pair_from_json(j, catalog);
        pairs.emplace(p.pair_id, std::move(p));
    }
    return pairs;
}

std::vector<population::ScoredAssertion> scored_of(const PipelineConfig& cfg) {
    std::vector<population::ScoredAssertion> out_rows;
    for (const auto& j : read_artifact(out(cfg, "populate", "scored.jsonl")))
        out_rows.push_back(population::scored_from_json(j));
    return out_rows;
}

std::vector<mining::PatternAssignment> assignments_of(const PipelineConfig& cfg) {
    std::vector<mining::PatternAssignment> rows;
    for (const auto& j : read_artifact(out(cfg, "mine", "assignments.jsonl")))
        rows.push_back(mining::assignment_from_json(j));
    return rows;
}

std::vector<generation::Assertion> generated_assertions(const PipelineConfig& cfg) {
    std::vector<generation::GenerationRecord> records;
    for (const auto& j : read_artifact(out(cfg, "generate", "generations.jsonl")))
        records.push_back(generation::generation_from_json(j));
    return generation::dedup_corpus(generation::assertions_of(records));
}

std::string sentence_of(const ingest::CoBuyPair& pair, const generation::Assertion& a) {
    return normalize_ws(generation::render_prompt(pair, a.relation) + " " + a.tail);
}

std::set<std::string> read_id_list(const std::optional<fs::path>& path) {
    std::set<std::string> ids;
    if (!path) return ids;
    for (const auto& line : split(read_file(*path), '\n'))
        if (auto t = trim(line); !t.empty() && t[0] != '#') ids.insert(t);
    return ids;
}

/// Intention text used in the graph: the simplified tail when a pattern matched.
std::map<std::string, std::string> intention_texts(const std::vector<population::ScoredAssertion>& scored,
                                                   const std::vector<mining::PatternAssignment>& assignments) {
    std::map<std::string, std::string> texts;
    for (const auto& s : scored) texts[s.assertion.assertion_id] = s.assertion.tail;
    for (const auto& a : assignments)
        if (a.pattern_id && texts.count(a.assertion_id)) texts[a.assertion_id] = a.simplified_tail;
    return texts;
}

// ------------------------------------------------------------------ stages

void stage_ingest(const PipelineConfig& cfg) {
    const auto catalog = catalog_of(cfg);
    auto build = ingest::build_cobuy_graph(ingest::load_cobuy_tsv(cfg.paths.cobuy), &catalog);
    ingest::SampleOptions opts;
    opts.categories = cfg.categories;
    opts.n = cfg.sample_size;
    opts.min_degree = cfg.min_degree;
    opts.seed = cfg.seed;
    opts.require_title_quality = cfg.title_filter;
    const auto pairs = ingest::sample_pairs(build.graph, catalog, opts);
    if (pairs.size() < cfg.sample_size)
        spdlog::warn("only {} eligible pairs for a requested sample of {}", pairs.size(), cfg.sample_size);

    std::vector<json> rows;
    for (const auto& p : pairs) rows.push_back(ingest::pair_to_json(p));
    write_jsonl(out(cfg, "ingest", "pairs.jsonl"), rows);
    write_file_atomic(out(cfg, "ingest", "stats.json"),
                      json{{"items", catalog.size()},
                           {"graph_nodes", build.graph.node_count()},
                           {"graph_edges", build.graph.edge_count()},
                           {"skipped_unknown", build.skipped_unknown},
                           {"pairs", pairs.size()}}
                          .dump(2));
    spdlog::info("ingest: {} pairs from {} co-buy edges", pairs.size(), build.graph.edge_count());
}

void stage_generate(const PipelineConfig& cfg) {
    const auto catalog = catalog_of(cfg);
    const auto pairs_map = pairs_of(cfg, catalog);
    std::vector<ingest::CoBuyPair> pairs;
    for (const auto& [_, p] : pairs_map) pairs.push_back(p);
    generation::HttpGenerator backend;
    const auto run = generation::run_generation(backend, pairs, cfg.relations, cfg.generation);

    std::vector<json> rows, failures;
    for (const auto& r : run.records) rows.push_back(generation::to_json(r));
    for (const auto& f : run.failures)
        failures.push_back({{"pair_id", f.pair_id}, {"relation", generation::name(f.relation)}, {"error", f.error}});
    write_jsonl(out(cfg, "generate", "generations.jsonl"), rows);
    write_jsonl(out(cfg, "generate", "failures.jsonl"), failures);
    if (!pairs.empty() && run.records.empty())
        throw generation::GenerationError("every generation request failed; see failures.jsonl");
    spdlog::info("generate: {} records, {} failed requests", run.records.size(), run.failures.size());
}

void stage_populate(const PipelineConfig& cfg) {
    const auto catalog = catalog_of(cfg);
    const auto pairs = pairs_of(cfg, catalog);
    const auto assertions = generated_assertions(cfg);

    std::vector<std::string> texts;
    std::map<std::string, std::string> by_id;
    for (const auto& a : assertions) {
        auto it = pairs.find(a.pair_id);
        if (it == pairs.end()) throw FatalInputError("assertion " + a.assertion_id + " names unknown pair " + a.pair_id);
        texts.push_back(sentence_of(it->second, a));
        by_id[a.assertion_id] = texts.back();
    }

    std::unique_ptr<population::Scorer> scorer;
    if (cfg.scorer == "file") {
        if (!cfg.paths.scores) throw ConfigError("config: population.scorer = file needs paths.scores");
        scorer = std::make_unique<population::FileScorer>(*cfg.paths.scores);
    } else {
        scorer = std::make_unique<population::HttpScorer>(cfg.scorer_endpoint);
    }
    population::ScoringOptions sopts;
    sopts.batch_size = cfg.score_batch;
    auto result = population::score_assertions(*scorer, assertions, texts, sopts);
    std::sort(result.scored.begin(), result.scored.end(), [](const auto& a, const auto& b) {
        return a.assertion.assertion_id < b.assertion.assertion_id;
    });

    std::vector<json> rows;
    for (const auto& s : result.scored) rows.push_back(population::to_json(s));
    write_jsonl(out(cfg, "populate", "scored.jsonl"), rows);

    json sizes = json::object();
    for (double t : {0.5, 0.7, 0.8, 0.9})
        sizes[fmt::format("{:.1f}", t)] = population::filter_by_threshold(result.scored, t).size();
    const auto kept = population::filter_by_threshold(result.scored, cfg.plau_threshold, cfg.typ_threshold);
    write_file_atomic(out(cfg, "populate", "stats.json"),
                      json{{"assertions", assertions.size()},
                           {"scored", result.scored.size()},
                           {"dropped", result.dropped},
                           {"kept", kept.size()},
                           {"size_by_threshold", sizes},
                           {"novelty_ratio", kept.empty() ? 0.0 : population::novelty_ratio(kept, pairs)}}
                          .dump(2));

    if (cfg.paths.labels) {
        std::vector<annotation::Label> labels;
        for (const auto& j : read_artifact(*cfg.paths.labels)) labels.push_back(annotation::label_from_json(j));
        for (auto task : {annotation::Task::Plausibility, annotation::Task::Typicality}) {
            auto examples = population::derive_training_labels(task, labels, by_id);
            auto [train, dev] = population::split_train_dev(std::move(examples), cfg.split_ratio, cfg.seed);
            const std::string name(annotation::task_name(task));
            write_file_atomic(out(cfg, "populate", name + "_train.tsv"), population::to_tsv(train));
            write_file_atomic(out(cfg, "populate", name + "_dev.tsv"), population::to_tsv(dev));
        }
    }
    spdlog::info("populate: {} scored, {} dropped, {} above threshold", result.scored.size(), result.dropped,
                 kept.size());
}

void stage_mine(const PipelineConfig& cfg) {
    const auto scored = scored_of(cfg);
    auto parse = mining::parse_conllu(read_file(cfg.paths.parses));
    if (parse.skipped) spdlog::warn("{}: skipped {} invalid parses", cfg.paths.parses.string(), parse.skipped);

    std::map<std::string, std::size_t> by_text, by_sent;
    for (std::size_t i = 0; i < parse.trees.size(); ++i) {
        by_text.try_emplace(normalize_ws(parse.trees[i].text), i);
        if (!parse.trees[i].sent_id.empty()) by_sent.try_emplace(parse.trees[i].sent_id, i);
    }
    std::map<std::string, std::string> index;
    if (cfg.paths.parse_index)
        for (const auto& j : read_artifact(*cfg.paths.parse_index))
            index[j.at("assertion_id").get<std::string>()] = j.at("sent_id").get<std::string>();

    struct Group {
        std::vector<mining::DepTree> trees;
        std::vector<std::string> ids;
    };
    std::map<Relation, Group> groups;
    std::vector<mining::PatternAssignment> assignments;
    for (const auto& s : scored) {
        const auto& a = s.assertion;
        std::optional<std::size_t> tree;
        if (auto it = index.find(a.assertion_id); it != index.end()) {
            if (auto t = by_sent.find(it->second); t != by_sent.end()) tree = t->second;
        } else if (auto t = by_text.find(normalize_ws(a.tail)); t != by_text.end()) {
            tree = t->second;
        }
        if (!tree) {
            assignments.push_back({a.assertion_id, std::nullopt, a.tail});
            continue;
        }
        groups[a.relation].trees.push_back(parse.trees[*tree]);
        groups[a.relation].ids.push_back(a.assertion_id);
    }

    const auto allow = read_id_list(cfg.paths.pattern_allow);
    const auto deny = read_id_list(cfg.paths.pattern_deny);
    std::vector<json> pattern_rows;
    json stats = json::object();
    for (const auto& [rel, g] : groups) {
        mining::MiningOptions opts;
        opts.min_support = cfg.min_support ? cfg.min_support : mining::default_min_support(g.trees.size());
        opts.max_nodes = cfg.max_nodes;
        auto candidates = mining::mine_patterns(g.trees, opts, rel);
        const auto n_candidates = candidates.size();
        auto patterns = mining::apply_revision(mining::select_patterns(std::move(candidates), g.trees, cfg.min_perfect),
                                               allow, deny);
        std::vector<mining::PatternAssignment> local;
        for (std::size_t i = 0; i < g.trees.size(); ++i) {
            auto asg = mining::assign_pattern(g.trees[i], patterns);
            asg.assertion_id = g.ids[i];
            local.push_back(asg);
        }
        for (const auto& p : patterns) pattern_rows.push_back(mining::to_json(p));
        stats[std::string(generation::name(rel))] = {{"trees", g.trees.size()},
                                                     {"min_support", opts.min_support},
                                                     {"candidates", n_candidates},
                                                     {"selected", patterns.size()},
                                                     {"coverage", mining::coverage(local)}};
        assignments.insert(assignments.end(), local.begin(), local.end());
    }
    std::sort(assignments.begin(), assignments.end(),
              [](const auto& a, const auto& b) { return a.assertion_id < b.assertion_id; });
    std::vector<json> rows;
    for (const auto& a : assignments) rows.push_back(mining::to_json(a));
    write_jsonl(out(cfg, "mine", "patterns.jsonl"), pattern_rows);
    write_jsonl(out(cfg, "mine", "assignments.jsonl"), rows);
    stats["overall_coverage"] = mining::coverage(assignments);
    write_file_atomic(out(cfg, "mine", "stats.json"), stats.dump(2));
    spdlog::info("mine: {} patterns, coverage {:.3f}", pattern_rows.size(), mining::coverage(assignments));
}

void stage_conceptualize(const PipelineConfig& cfg) {
    const auto scored = scored_of(cfg);
    const auto texts = intention_texts(scored, assignments_of(cfg));
    auto load = conceptualize::load_concept_table(cfg.paths.concepts);
    if (load.skipped) spdlog::warn("{}: skipped {} rows", cfg.paths.concepts.string(), load.skipped);

    std::set<std::string> distinct;
    for (const auto& [_, t] : texts) distinct.insert(t);
    std::vector<conceptualize::AbstractIntention> abstracts;
    for (const auto& t : distinct) {
        auto found = conceptualize::conceptualize_tail(kg::intention_id(t), t, load.table, cfg.concepts);
        abstracts.insert(abstracts.end(), found.begin(), found.end());
    }
    std::sort(abstracts.begin(), abstracts.end(), [](const auto& a, const auto& b) {
        return std::tie(a.source_tail_id, a.node_id) < std::tie(b.source_tail_id, b.node_id);
    });
    std::vector<json> rows;
    for (const auto& a : abstracts) rows.push_back(conceptualize::to_json(a));
    write_jsonl(out(cfg, "conceptualize", "abstracts.jsonl"), rows);
    spdlog::info("conceptualize: {} abstract intentions from {} tails", abstracts.size(), distinct.size());
}

void stage_assemble(const PipelineConfig& cfg) {
    const auto catalog = catalog_of(cfg);
    const auto pairs = pairs_of(cfg, catalog);
    kg::AssemblyInput in;
    in.pairs = &pairs;
    in.scored = scored_of(cfg);
    in.assignments = assignments_of(cfg);
    for (const auto& j : read_artifact(out(cfg, "conceptualize", "abstracts.jsonl")))
        in.abstracts.push_back(conceptualize::abstract_from_json(j));
    in.plau_threshold = cfg.plau_threshold;
    auto graph = kg::assemble(in);
    if (cfg.typ_threshold) graph = kg::filter_edges(graph, cfg.plau_threshold, cfg.typ_threshold);
    if (!kg::joinable(graph) || !kg::no_dangling(graph)) throw std::logic_error("assembled graph failed its checks");
    kg::export_graph(graph, stage_dir(cfg, "assemble"));
    const auto s = kg::stats(graph);
    write_file_atomic(out(cfg, "assemble", "stats.json"), kg::to_json(s).dump(2));
    spdlog::info("assemble: {} nodes, {} edges", graph.nodes.size(), s.total_edges());
}

void stage_embed(const PipelineConfig& cfg) {
    const auto graph = kg::import_graph(stage_dir(cfg, "assemble"));
    const auto triples = embed::triples_from_kg(graph);
    if (triples.empty()) throw ConfigError("embed: the graph has no ASSERT edges");

    embed::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    std::optional<embed::VectorFile> tail_file;
    if (cfg.paths.tail_vectors) {
        tail_file = embed::read_vectors(*cfg.paths.tail_vectors);
        if (tail_file->d != tc.d)
            throw ConfigError(fmt::format("embed: tail vectors have dimension {}, embed.d is {}", tail_file->d, tc.d));
        tc.tail_init = tail_file->vectors;
    }
    const auto result = embed::train(triples, tc);
    embed::export_item_vectors(result.table, out(cfg, "embed", "item_vectors.tsv"));
    std::string log = "epoch,mean_loss,train_loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
        log += fmt::format("{},{:.8f},{:.8f}\n", e + 1, result.epoch_loss[e], result.train_loss[e]);
    write_file_atomic(out(cfg, "embed", "train_log.csv"), log);

    const auto catalog = catalog_of(cfg);
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& [_, p] : pairs_of(cfg, catalog)) edges.emplace_back(p.item1.id, p.item2.id);
    embed::TrainConfig sc = cfg.train;
    sc.seed = cfg.seed;
    sc.epochs = cfg.structure_epochs;
    sc.tails_are_items = true;
    const auto structure = embed::train(embed::cobuy_triples(edges), sc);
    embed::export_item_vectors(structure.table, out(cfg, "embed", "structure_vectors.tsv"));

    embed::VectorMap text_vectors;
    for (const auto& [id, n] : graph.nodes) {
        if (n.kind != kg::NodeKind::Intention) continue;
        if (tail_file) text_vectors[id] = tail_file->vectors.at(id);
        else text_vectors[id] = embed::hashed_text_vector(n.text, tc.d);
    }
    embed::write_vectors(text_vectors, tc.d, out(cfg, "embed", "tail_text_vectors.tsv"));
    spdlog::info("embed: {} triples, final loss {:.4f}", triples.size(), result.epoch_loss.back());
}

double kg_coverage(const kg::KnowledgeGraph& graph, const std::set<std::string>& items) {
    if (items.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& id : items)
        if (const auto* node = graph.node(id); node && node->kind == kg::NodeKind::Item) ++n;
    return static_cast<double>(n) / static_cast<double>(items.size());
}

void stage_receval(const PipelineConfig& cfg) {
    const auto data = receval::load_interactions(cfg.paths.interactions);
    if (data.empty()) throw ConfigError("receval: no usable interactions");
    const auto graph = kg::import_graph(stage_dir(cfg, "assemble"));
    const auto item_vectors = embed::read_vectors(out(cfg, "embed", "item_vectors.tsv"));
    const auto structure = embed::read_vectors(out(cfg, "embed", "structure_vectors.tsv"));
    const auto tail_vectors = embed::read_vectors(out(cfg, "embed", "tail_text_vectors.tsv"));

    std::vector<std::uint64_t> seeds = cfg.receval_seeds;
    if (seeds.empty())
        for (std::uint64_t k = 0; k < 5; ++k) seeds.push_back(cfg.seed + k);

    std::set<std::string> items;
    for (const auto& x : data) items.insert(x.item);
    auto restrict_to = [&](const embed::VectorMap& m) {
        receval::FeatureMap f;
        for (const auto& id : items)
            if (auto it = m.find(id); it != m.end()) f[id] = it->second;
        return f;
    };
    auto structure_coverage = [&] {
        std::size_t n = 0;
        for (const auto& id : items) n += structure.vectors.count(id);
        return static_cast<double>(n) / static_cast<double>(items.size());
    };

    std::vector<receval::AblationConfig> configs;
    configs.push_back({"none", std::nullopt, false, 0.0});
    configs.push_back({"structure-only", restrict_to(structure.vectors), true, structure_coverage()});
    receval::FeatureMap text;
    for (const auto& id : items)
        if (const auto* n = graph.node(id); n && n->kind == kg::NodeKind::Item)
            text[id] = embed::avg_pool_tail_features(id, graph, tail_vectors.vectors, tail_vectors.d);
    configs.push_back({"text-only", text, true, kg_coverage(graph, items)});
    configs.push_back({"kg", restrict_to(item_vectors.vectors), true, kg_coverage(graph, items)});

    std::vector<double> thresholds = cfg.ablation_thresholds;
    thresholds.push_back(cfg.plau_threshold);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    const auto first_split = receval::split_interactions(data, seeds.front());
    json matched = json::array();
    for (double t : thresholds) {
        const auto filtered = kg::filter_edges(graph, t, cfg.typ_threshold);
        const auto m = receval::match_kg(filtered, first_split.train);
        const auto triples = embed::triples_from_kg(m.kg);
        const auto s = kg::stats(m.kg);
        matched.push_back({{"threshold", t},
                           {"assert_edges", s.assert_edges},
                           {"total_edges", s.total_edges()},
                           {"item_nodes", s.item_nodes},
                           {"coverage", m.coverage}});
        const std::string name = fmt::format("matched-kg@{:.2f}", t);
        if (triples.empty()) {
            configs.push_back({name, std::nullopt, true, m.coverage});
            continue;
        }
        embed::TrainConfig tc = cfg.train;
        tc.seed = cfg.seed;
        if (cfg.paths.tail_vectors) tc.tail_init = tail_vectors.vectors;
        configs.push_back({name, restrict_to(embed::train(triples, tc).table.items), true, m.coverage});
    }

    const auto rows = receval::run_ablation(data, configs, seeds, cfg.predictor);
    write_file_atomic(out(cfg, "receval", "report.csv"), receval::report_csv(rows));
    write_file_atomic(out(cfg, "receval", "matched.json"), matched.dump(2));
    for (const auto& r : rows) spdlog::info("receval: {} rmse {:.4f} ± {:.4f}", r.config, r.mean_rmse, r.std);
}

std::string md_row(const std::vector<std::string>& cells) { return "| " + join(cells, " | ") + " |\n"; }

void stage_report(const PipelineConfig& cfg) {
    const auto kg_stats = json::parse(read_file(out(cfg, "assemble", "stats.json")));
    const auto pop_stats = json::parse(read_file(out(cfg, "populate", "stats.json")));
    const auto mine_stats = json::parse(read_file(out(cfg, "mine", "stats.json")));
    const auto matched = json::parse(read_file(out(cfg, "receval", "matched.json")));
    const auto csv = read_file(out(cfg, "receval", "report.csv"));
    const auto graph = kg::import_graph(stage_dir(cfg, "assemble"));

    std::string md = "# Knowledge graph report\n\n## Size\n\n";
    md += md_row({"quantity", "value"}) + md_row({"---", "---"});
    for (const char* k : {"item_nodes", "intention_nodes", "abstract_nodes", "assert_edges", "concept_assert_edges",
                          "isa_weight_edges", "total_edges", "cobuy_pairs", "avg_tail_tokens"})
        md += md_row({k, kg_stats.at(k).is_number_float() ? fmt::format("{:.2f}", kg_stats.at(k).get<double>())
                                                          : kg_stats.at(k).dump()});

    md += "\n## Relations\n\n" + md_row({"relation", "edges", "distinct tails", "avg tail tokens", "pattern coverage"}) +
          md_row({"---", "---", "---", "---", "---"});
    for (const auto& [rel, rs] : kg_stats.at("per_relation").items()) {
        const auto cov = mine_stats.contains(rel) ? fmt::format("{:.3f}", mine_stats[rel]["coverage"].get<double>())
                                                  : std::string("-");
        md += md_row({rel, rs["assert_edges"].dump(), rs["distinct_tails"].dump(),
                      fmt::format("{:.2f}", rs["avg_tail_tokens"].get<double>()), cov});
    }

    md += "\n## Population\n\n" + md_row({"plausibility threshold", "assertions kept"}) + md_row({"---", "---"});
    for (const auto& [t, n] : pop_stats.at("size_by_threshold").items()) md += md_row({t, n.dump()});
    md += fmt::format("\nNovelty ratio of kept assertions: {:.3f}\n", pop_stats.at("novelty_ratio").get<double>());

    md += "\n## Matched subsets\n\n" + md_row({"threshold", "ASSERT edges", "total edges", "coverage"}) +
          md_row({"---", "---", "---", "---"});
    for (const auto& m : matched)
        md += md_row({fmt::format("{:.2f}", m["threshold"].get<double>()), m["assert_edges"].dump(),
                      m["total_edges"].dump(), fmt::format("{:.4f}", m["coverage"].get<double>())});

    md += "\n## Rating prediction\n\n";
    bool header = true;
    for (const auto& line : split(csv, '\n')) {
        if (trim(line).empty()) continue;
        md += md_row(split(line, ','));
        if (header) md += md_row({"---", "---", "---", "---"});
        header = false;
    }

    const auto common = kg::subcategory_common_assertions(graph, 0.5, 2);
    json common_rows = json::array();
    if (!common.empty()) {
        md += "\n## Shared intentions by subcategory pair\n\n" +
              md_row({"subcategory 1", "subcategory 2", "relation", "tail", "count"}) +
              md_row({"---", "---", "---", "---", "---"});
        for (std::size_t i = 0; i < common.size() && i < 10; ++i) {
            const auto& c = common[i];
            md += md_row({c.subcategory1, c.subcategory2, c.relation, c.tail, std::to_string(c.count)});
        }
    }
    for (const auto& c : common)
        common_rows.push_back({{"subcategory1", c.subcategory1},
                               {"subcategory2", c.subcategory2},
                               {"relation", c.relation},
                               {"tail", c.tail},
                               {"count", c.count},
                               {"mean_typicality", c.mean_typicality}});

    write_file_atomic(out(cfg, "report", "report.md"), md);
    write_file_atomic(out(cfg, "report", "summary.json"),
                      json{{"kg", kg_stats},
                           {"population", pop_stats},
                           {"mining", mine_stats},
                           {"matched", matched},
                           {"subcategory_common", common_rows}}
                          .dump(2));
    spdlog::info("report: written to {}", stage_dir(cfg, "report").string());
}

// ------------------------------------------------------------------ manifests

struct StageSpec {
    std::vector<fs::path> inputs;
    std::vector<std::string> outputs;  // file names within the stage dir
    json params;
    std::function<void(const PipelineConfig&)> run;
};

StageSpec spec_of(const std::string& name, const PipelineConfig& cfg) {
    const auto& p = cfg.paths;
    auto o = [&](const std::string& stage, const std::string& file) { return out(cfg, stage, file); };
    const std::vector<fs::path> kg_files{o("assemble", "nodes.jsonl"), o("assemble", "edges.jsonl")};
    StageSpec s;
    if (name == "ingest") {
        require_path(p.items, "paths.items");
        require_path(p.cobuy, "paths.cobuy");
        s.inputs = {p.items, p.cobuy};
        s.outputs = {"pairs.jsonl", "stats.json"};
        s.params = {{"categories", cfg.categories}, {"n", cfg.sample_size}, {"min_degree", cfg.min_degree},
                    {"seed", cfg.seed},             {"title_filter", cfg.title_filter}};
        s.run = stage_ingest;
    } else if (name == "generate") {
        if (cfg.generation.endpoint.empty()) throw ConfigError("config: generation.endpoint is not set");
        s.inputs = {p.items, o("ingest", "pairs.jsonl")};
        s.outputs = {"generations.jsonl", "failures.jsonl"};
        json rels = json::array();
        for (auto r : cfg.relations) rels.push_back(generation::name(r));
        s.params = {{"endpoint", cfg.generation.endpoint},
                    {"max_tokens", cfg.generation.max_tokens},
                    {"top_p", cfg.generation.top_p},
                    {"n", cfg.generation.samples_per_prompt},
                    {"relations", rels}};
        s.run = stage_generate;
    } else if (name == "populate") {
        s.inputs = {p.items, o("ingest", "pairs.jsonl"), o("generate", "generations.jsonl")};
        if (cfg.scorer == "file" && p.scores) s.inputs.push_back(*p.scores);
        if (p.labels) s.inputs.push_back(*p.labels);
        s.outputs = {"scored.jsonl", "stats.json"};
        if (p.labels)
            for (const char* f : {"plausibility_train.tsv", "plausibility_dev.tsv", "typicality_train.tsv",
                                  "typicality_dev.tsv"})
                s.outputs.emplace_back(f);
        s.params = {{"scorer", cfg.scorer},
                    {"endpoint", cfg.scorer_endpoint},
                    {"plau_threshold", cfg.plau_threshold},
                    {"typ_threshold", cfg.typ_threshold ? json(*cfg.typ_threshold) : json(nullptr)},
                    {"split_ratio", cfg.split_ratio},
                    {"seed", cfg.seed}};
        s.run = stage_populate;
    } else if (name == "mine") {
        require_path(p.parses, "paths.parses");
        s.inputs = {o("populate", "scored.jsonl"), p.parses};
        for (const auto& extra : {p.parse_index, p.pattern_allow, p.pattern_deny})
            if (extra) s.inputs.push_back(*extra);
        s.outputs = {"patterns.jsonl", "assignments.jsonl", "stats.json"};
        s.params = {{"min_support", cfg.min_support}, {"max_nodes", cfg.max_nodes}, {"min_perfect", cfg.min_perfect}};
        s.run = stage_mine;
    } else if (name == "conceptualize") {
        require_path(p.concepts, "paths.concepts");
        s.inputs = {o("populate", "scored.jsonl"), o("mine", "assignments.jsonl"), p.concepts};
        s.outputs = {"abstracts.jsonl"};
        s.params = {{"top_k", cfg.concepts.top_k}, {"min_weight", cfg.concepts.min_weight}};
        s.run = stage_conceptualize;
    } else if (name == "assemble") {
        s.inputs = {p.items, o("ingest", "pairs.jsonl"), o("populate", "scored.jsonl"), o("mine", "assignments.jsonl"),
                    o("conceptualize", "abstracts.jsonl")};
        s.outputs = {"nodes.jsonl", "edges.jsonl", "stats.json"};
        s.params = {{"plau_threshold", cfg.plau_threshold},
                    {"typ_threshold", cfg.typ_threshold ? json(*cfg.typ_threshold) : json(nullptr)}};
        s.run = stage_assemble;
    } else if (name == "embed") {
        s.inputs = kg_files;
        s.inputs.push_back(p.items);
        s.inputs.push_back(o("ingest", "pairs.jsonl"));
        if (p.tail_vectors) s.inputs.push_back(*p.tail_vectors);
        s.outputs = {"item_vectors.tsv", "train_log.csv", "structure_vectors.tsv", "tail_text_vectors.tsv"};
        s.params = {{"d", cfg.train.d},           {"gamma", cfg.train.gamma},
                    {"lr", cfg.train.lr},         {"epochs", cfg.train.epochs},
                    {"negatives", cfg.train.negatives}, {"tails_trainable", cfg.train.tails_trainable},
                    {"structure_epochs", cfg.structure_epochs}, {"seed", cfg.seed}};
        s.run = stage_embed;
    } else if (name == "receval") {
        require_path(p.interactions, "paths.interactions");
        s.inputs = kg_files;
        for (const char* f : {"item_vectors.tsv", "structure_vectors.tsv", "tail_text_vectors.tsv"})
            s.inputs.push_back(o("embed", f));
        s.inputs.push_back(p.interactions);
        if (p.tail_vectors) s.inputs.push_back(*p.tail_vectors);
        s.outputs = {"report.csv", "matched.json"};
        s.params = {{"seeds", cfg.receval_seeds},
                    {"seed", cfg.seed},
                    {"factors", cfg.predictor.factors},
                    {"lr", cfg.predictor.lr},
                    {"reg", cfg.predictor.reg},
                    {"epochs", cfg.predictor.epochs},
                    {"thresholds", cfg.ablation_thresholds},
                    {"plau_threshold", cfg.plau_threshold},
                    {"embed", {{"d", cfg.train.d}, {"gamma", cfg.train.gamma}, {"lr", cfg.train.lr},
                               {"epochs", cfg.train.epochs}, {"negatives", cfg.train.negatives}}}};
        s.run = stage_receval;
    } else if (name == "report") {
        s.inputs = kg_files;
        for (const auto& f : {o("assemble", "stats.json"), o("populate", "stats.json"), o("mine", "stats.json"),
                              o("receval", "report.csv"), o("receval", "matched.json")})
            s.inputs.push_back(f);
        s.outputs = {"report.md", "summary.json"};
        s.params = json::object();
        s.run = stage_report;
    } else {
        throw ConfigError("unknown stage '" + name + "'");
    }
    return s;
}

json digests(const std::vector<fs::path>& paths) {
    json out = json::array();
    for (const auto& p : paths) out.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    return out;
}

bool manifest_matches(const fs::path& manifest, const json& expected_inputs, const json& params, const fs::path& dir,
                      const std::vector<std::string>& outputs) {
    if (!fs::exists(manifest)) return false;
    auto m = json::parse(read_file(manifest), nullptr, false);
    if (m.is_discarded() || m.value("inputs", json()) != expected_inputs || m.value("params", json()) != params)
        return false;
    const auto recorded = m.value("outputs", json::array());
    if (recorded.size() != outputs.size()) return false;
    for (const auto& o : recorded) {
        const fs::path p = dir / o.value("file", "");
        if (!fs::exists(p) || sha256_file(p) != o.value("sha256", "")) return false;
    }
    return true;
}

}  // namespace

StageStatus run_stage(const std::string& name, const PipelineConfig& cfg, const RunOptions& opts) {
    if (name == "all") {
        for (const auto& s : stage_names())
            if (s != "annotate-serve") run_stage(s, cfg, opts);
        return StageStatus::Ran;
    }
    if (name == "annotate-serve") throw ConfigError("annotate-serve is interactive; use serve_annotation");
    const auto spec = spec_of(name, cfg);
    for (const auto& in : spec.inputs)
        if (!fs::exists(in)) throw MissingInputError(in);

    const auto dir = stage_dir(cfg, name);
    const auto manifest = dir / "manifest.json";
    const auto inputs = digests(spec.inputs);
    if (!opts.force && manifest_matches(manifest, inputs, spec.params, dir, spec.outputs)) {
        spdlog::info("{}: inputs unchanged, skipping", name);
        return StageStatus::Skipped;
    }
    fs::create_directories(dir);
    fs::remove(manifest);  // a half-finished run must not look complete
    spec.run(cfg);

    json outputs = json::array();
    for (const auto& f : spec.outputs) {
        const auto p = dir / f;
        if (!fs::exists(p)) throw std::logic_error(name + " did not produce " + f);
        outputs.push_back({{"file", f}, {"sha256", sha256_file(p)}});
    }
    write_file_atomic(manifest, json{{"stage", name}, {"inputs", inputs}, {"params", spec.params}, {"outputs", outputs}}
                                    .dump(2));
    return StageStatus::Ran;
}

void serve_annotation(const PipelineConfig& cfg,
                      const std::function<void(annotation::AnnotationServer&, int)>& on_ready) {
    const auto generations = out(cfg, "generate", "generations.jsonl");
    for (const auto& in : {cfg.paths.items, out(cfg, "ingest", "pairs.jsonl"), generations})
        if (!fs::exists(in)) throw MissingInputError(in);
    if (cfg.workers.empty()) throw ConfigError("config: annotation.workers is empty");

    const auto catalog = catalog_of(cfg);
    const auto pairs = pairs_of(cfg, catalog);
    const auto dir = stage_dir(cfg, "annotate");
    fs::create_directories(dir);

    annotation::AnnotationStore::Options sopts;
    sopts.plausibility_target = cfg.plausibility_target;
    sopts.typicality_target = cfg.typicality_target;
    sopts.vote_log = dir / "votes.jsonl";
    annotation::AnnotationStore store(sopts);
    for (const auto& a : generated_assertions(cfg)) {
        const auto& pair = pairs.at(a.pair_id);
        annotation::CardSource card{a.assertion_id, sentence_of(pair, a), std::string(generation::name(a.relation)),
                                    pair.item1, pair.item2};
        store.add_card(annotation::Task::Plausibility, card);
        store.add_card(annotation::Task::Typicality, card);
    }
    for (const auto& w : cfg.workers) store.register_worker(w, true);
    const auto replayed = store.replay();
    if (replayed) spdlog::info("annotate-serve: replayed {} votes", replayed);

    annotation::AnnotationServer server(store, cfg.annotation_static);
    const int port = server.bind(cfg.annotation_host, cfg.annotation_port);
    if (port < 0) throw ConfigError(fmt::format("cannot bind {}:{}", cfg.annotation_host, cfg.annotation_port));
    spdlog::info("annotate-serve: listening on {}:{}", cfg.annotation_host, port);
    if (on_ready) on_ready(server, port);
    server.listen();

    std::vector<json> rows;
    for (const auto& l : store.labels()) rows.push_back(annotation::to_json(l));
    write_jsonl(dir / "labels.jsonl", rows);
    spdlog::info("annotate-serve: wrote {} labels", rows.size());
}

}  // namespace forge::pipeline
