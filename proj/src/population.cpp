#include "forge/population.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <thread>

namespace forge::population {

json to_json(const ScoredAssertion& s) {
    return json{{"assertion_id", s.assertion.assertion_id},
                {"pair_id", s.assertion.pair_id},
                {"relation", generation::name(s.assertion.relation)},
                {"tail", s.assertion.tail},
                {"plausibility", s.plausibility},
                {"typicality", s.typicality}};
}

ScoredAssertion scored_from_json(const json& j) {
    ScoredAssertion s;
    s.assertion.assertion_id = j.at("assertion_id").get<std::string>();
    s.assertion.pair_id = j.at("pair_id").get<std::string>();
    s.assertion.relation = generation::relation_from_name(j.at("relation").get<std::string>());
    s.assertion.tail = j.at("tail").get<std::string>();
    s.plausibility = j.at("plausibility").get<double>();
    s.typicality = j.at("typicality").get<double>();
    return s;
}

std::vector<LabeledExample> derive_training_labels(annotation::Task task,
                                                   const std::vector<annotation::Label>& labels,
                                                   const std::map<std::string, std::string>& texts) {
    std::vector<LabeledExample> out;
    for (const auto& l : labels) {
        auto text = texts.find(l.assertion_id);
        if (text == texts.end()) continue;
        std::optional<ExampleLabel> label;
        if (task == annotation::Task::Plausibility && l.plausibility) {
            label = *l.plausibility == annotation::PlausibilityLabel::Plausible ? ExampleLabel::Positive
                                                                                : ExampleLabel::Negative;
        } else if (task == annotation::Task::Typicality && l.typicality) {
            if (*l.typicality > 0.8) label = ExampleLabel::Positive;
            else if (*l.typicality < 0.2) label = ExampleLabel::Negative;
        }
        if (label) out.push_back({l.assertion_id, text->second, *label, task});
    }
    return out;
}

std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_train_dev(
    std::vector<LabeledExample> examples, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0) throw DomainError("split ratio must lie in [0, 1]");
    std::sort(examples.begin(), examples.end(),
              [](const auto& a, const auto& b) { return a.assertion_id < b.assertion_id; });
    std::vector<LabeledExample> pos, neg;
    for (auto& e : examples) (e.label == ExampleLabel::Positive ? pos : neg).push_back(std::move(e));
    Rng rng(seed);
    rng.shuffle(pos);
    rng.shuffle(neg);

    const std::size_t total = pos.size() + neg.size();
    const auto train_total = static_cast<std::size_t>(std::llround(static_cast<double>(total) * ratio));
    auto& majority = pos.size() >= neg.size() ? pos : neg;
    auto& minority = pos.size() >= neg.size() ? neg : pos;
    const auto minority_train =
        static_cast<std::size_t>(std::floor(static_cast<double>(minority.size()) * ratio + 1e-9));
    const std::size_t majority_train = std::min(majority.size(), train_total - std::min(train_total, minority_train));

    std::vector<LabeledExample> train, dev;
    auto take = [&](std::vector<LabeledExample>& v, std::size_t k) {
        for (std::size_t i = 0; i < v.size(); ++i) (i < k ? train : dev).push_back(std::move(v[i]));
    };
    take(majority, majority_train);
    take(minority, minority_train);
    rng.shuffle(train);
    rng.shuffle(dev);
    return {std::move(train), std::move(dev)};
}

std::string to_tsv(const std::vector<LabeledExample>& examples) {
    std::string out;
    for (const auto& e : examples) {
        std::string text = e.text;
        std::replace(text.begin(), text.end(), '\t', ' ');
        std::replace(text.begin(), text.end(), '\n', ' ');
        out += text + '\t' + (e.label == ExampleLabel::Positive ? "1" : "0") + '\n';
    }
    return out;
}

namespace {
double as_probability(const json& v) {
    if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
    return v.get<double>();
}
}  // namespace

FileScorer::FileScorer(const std::filesystem::path& path) {
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            scores_[j.at("assertion_id").get<std::string>()] = {as_probability(j.at("plausibility")),
                                                                 as_probability(j.at("typicality"))};
        } catch (const std::exception& e) {
            spdlog::warn("{}:{}: bad score record: {}", path.string(), line, e.what());
        }
    });
}

std::vector<std::optional<Scores>> FileScorer::score(const std::vector<generation::Assertion>& batch,
                                                     const std::vector<std::string>&) {
    std::vector<std::optional<Scores>> out;
    out.reserve(batch.size());
    for (const auto& a : batch) {
        auto it = scores_.find(a.assertion_id);
        out.push_back(it == scores_.end() ? std::nullopt : std::optional<Scores>(it->second));
    }
    return out;
}

std::vector<std::optional<Scores>> HttpScorer::score(const std::vector<generation::Assertion>& batch,
                                                     const std::vector<std::string>& texts) {
    const auto scheme_end = endpoint_.find("://");
    const auto path_start = endpoint_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string base = path_start == std::string::npos ? "" : endpoint_.substr(path_start);
    while (!base.empty() && base.back() == '/') base.pop_back();
    httplib::Client cli(endpoint_.substr(0, path_start));
    cli.set_read_timeout(std::chrono::seconds(120));

    auto res = cli.Post(base + "/v1/score", json{{"texts", texts}}.dump(), "application/json");
    if (!res) throw ScorerError("score request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw ScorerError("score request returned HTTP " + std::to_string(res->status));
    auto body = json::parse(res->body, nullptr, false);
    if (body.is_discarded()) throw ScorerError("malformed score response");
    const auto& plau = body.value("plausibility", json::array());
    const auto& typ = body.value("typicality", json::array());
    std::vector<std::optional<Scores>> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (i < plau.size() && i < typ.size() && !plau[i].is_null() && !typ[i].is_null())
            out[i] = Scores{as_probability(plau[i]), as_probability(typ[i])};
    }
    return out;
}

ScoringResult score_assertions(Scorer& scorer, const std::vector<generation::Assertion>& assertions,
                               const std::vector<std::string>& texts, const ScoringOptions& opts) {
    if (texts.size() != assertions.size()) throw DomainError("one text per assertion required");
    ScoringResult result;
    const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
    for (std::size_t start = 0; start < assertions.size(); start += bs) {
        const std::size_t end = std::min(assertions.size(), start + bs);
        std::vector<generation::Assertion> batch(assertions.begin() + static_cast<std::ptrdiff_t>(start),
                                                 assertions.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<std::string> batch_texts(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                             texts.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<std::optional<Scores>> scores;
        auto backoff = opts.initial_backoff;
        for (int attempt = 1;; ++attempt) {
            try {
                scores = scorer.score(batch, batch_texts);
                break;
            } catch (const ScorerError& e) {
                if (attempt >= opts.max_attempts) throw;
                spdlog::warn("scoring attempt {}/{} failed: {}", attempt, opts.max_attempts, e.what());
                std::this_thread::sleep_for(backoff);
                backoff *= 2;
            }
        }
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (i >= scores.size() || !scores[i]) {
                ++result.dropped;
                continue;
            }
            result.scored.push_back({batch[i], scores[i]->plausibility, scores[i]->typicality});
        }
    }
    if (result.dropped) spdlog::warn("scoring: dropped {} assertions without scores", result.dropped);
    return result;
}

std::vector<ScoredAssertion> filter_by_threshold(const std::vector<ScoredAssertion>& scored, double plau_t,
                                                 std::optional<double> typ_t) {
    std::vector<ScoredAssertion> out;
    for (const auto& s : scored) {
        if (s.plausibility > plau_t && (!typ_t || s.typicality > *typ_t)) out.push_back(s);
    }
    return out;
}

std::vector<PrPoint> pr_curve(const std::vector<double>& predictions, const std::vector<int>& gold) {
    if (predictions.size() != gold.size()) throw DomainError("predictions and gold differ in length");
    std::set<double> thresholds(predictions.begin(), predictions.end());
    thresholds.insert({0.5, 0.7, 0.8, 0.9});
    std::size_t positives = 0;
    for (int g : gold) {
        if (g != 0 && g != 1) throw DomainError("gold labels must be binary");
        positives += static_cast<std::size_t>(g);
    }
    std::vector<PrPoint> out;
    for (double t : thresholds) {
        std::size_t tp = 0, predicted = 0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            if (predictions[i] >= t) {
                ++predicted;
                tp += static_cast<std::size_t>(gold[i]);
            }
        }
        if (predicted == 0) continue;
        out.push_back({t, static_cast<double>(tp) / static_cast<double>(predicted),
                       positives == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(positives)});
    }
    return out;
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> order(xs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw DomainError("spearman: unequal lengths");
    if (xs.size() < 2) throw DomainError("spearman: need at least two points");
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw DomainError("spearman: zero rank variance");
    return sxy / std::sqrt(sxx * syy);
}

namespace {
const std::set<std::string> kStopWords{
    "a",    "an",   "the",  "and",   "or",    "but",  "if",    "of",   "to",    "in",
    "on",   "at",   "by",   "for",   "with",  "from", "as",    "is",   "are",   "was",
    "were", "be",   "been", "being", "it",    "its",  "this",  "that", "these", "those",
    "they", "them", "their", "he",   "she",   "his",  "her",   "both", "have",  "has",
    "had",  "do",   "does", "can",   "could", "will", "would", "so",   "not",   "also",
};
}  // namespace

std::vector<std::string> content_tokens(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char c : text) {
        if (std::isalnum(c) || c == '\'' || c == '-') {
            cleaned.push_back(static_cast<char>(std::tolower(c)));
        } else {
            cleaned.push_back(' ');
        }
    }
    std::vector<std::string> out;
    for (auto& tok : split_ws(cleaned)) {
        while (!tok.empty() && (tok.front() == '\'' || tok.front() == '-')) tok.erase(tok.begin());
        while (!tok.empty() && (tok.back() == '\'' || tok.back() == '-')) tok.pop_back();
        if (!tok.empty() && !kStopWords.count(tok)) out.push_back(std::move(tok));
    }
    return out;
}

double novelty_ratio(const std::vector<ScoredAssertion>& scored,
                     const std::map<std::string, ingest::CoBuyPair>& pairs) {
    std::size_t counted = 0, novel = 0;
    for (const auto& s : scored) {
        auto it = pairs.find(s.assertion.pair_id);
        if (it == pairs.end()) continue;
        std::set<std::string> title_tokens;
        for (auto& t : content_tokens(it->second.item1.title)) title_tokens.insert(t);
        for (auto& t : content_tokens(it->second.item2.title)) title_tokens.insert(t);
        ++counted;
        for (const auto& t : content_tokens(s.assertion.tail)) {
            if (!title_tokens.count(t)) {
                ++novel;
                break;
            }
        }
    }
    return counted == 0 ? 0.0 : static_cast<double>(novel) / static_cast<double>(counted);
}

}  // namespace forge::population
