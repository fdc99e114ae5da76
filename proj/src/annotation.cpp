#include "forge/annotation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace forge::annotation {

PlausibilityLabel majority_vote(const std::vector<int>& votes) {
    if (votes.empty() || votes.size() % 2 == 0)
        throw DomainError("majority vote needs an odd number of votes, got " + std::to_string(votes.size()));
    std::size_t yes = 0;
    for (int v : votes) {
        if (v != 0 && v != 1) throw DomainError("plausibility votes must be 0 or 1");
        yes += static_cast<std::size_t>(v);
    }
    return 2 * yes > votes.size() ? PlausibilityLabel::Plausible : PlausibilityLabel::Implausible;
}

bool is_legal_typicality(double value) {
    return value == 1.0 || value == 0.5 || value == 0.0 || value == -1.0;
}

double typicality_score(const std::vector<double>& ratings) {
    if (ratings.empty()) throw DomainError("typicality score of an empty rating list");
    double sum = 0.0;
    for (double r : ratings) {
        if (!is_legal_typicality(r)) throw DomainError("typicality rating off the 4-point scale");
        sum += r;
    }
    return sum / static_cast<double>(ratings.size());
}

double pairwise_agreement(const std::vector<std::vector<int>>& votes_by_item) {
    std::uint64_t agree = 0, total = 0;
    for (const auto& votes : votes_by_item) {
        std::map<int, std::uint64_t> counts;
        for (int v : votes) ++counts[v];
        const std::uint64_t n = votes.size();
        if (n < 2) continue;
        total += n * (n - 1) / 2;
        for (const auto& [_, c] : counts) agree += c * (c - 1) / 2;
    }
    return total == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(total);
}

double fleiss_kappa(const std::vector<std::vector<int>>& counts) {
    if (counts.empty()) throw DomainError("fleiss kappa of an empty matrix");
    const std::size_t k = counts.front().size();
    const long n = std::accumulate(counts.front().begin(), counts.front().end(), 0L);
    if (n < 2) throw DomainError("fleiss kappa needs at least two raters per item");
    std::vector<double> column(k, 0.0);
    double p_bar = 0.0;
    for (const auto& row : counts) {
        if (row.size() != k) throw DomainError("ragged count matrix");
        long sum = 0, sq = 0;
        for (std::size_t j = 0; j < k; ++j) {
            if (row[j] < 0) throw DomainError("negative count");
            sum += row[j];
            sq += static_cast<long>(row[j]) * row[j];
            column[j] += row[j];
        }
        if (sum != n) throw DomainError("rows must sum to the same rater count");
        p_bar += static_cast<double>(sq - n) / static_cast<double>(n * (n - 1));
    }
    const double items = static_cast<double>(counts.size());
    p_bar /= items;
    double p_e = 0.0;
    for (double c : column) {
        const double p = c / (items * static_cast<double>(n));
        p_e += p * p;
    }
    if (1.0 - p_e <= 1e-15) return 1.0;  // single category used; p_bar is 1 too
    return (p_bar - p_e) / (1.0 - p_e);
}

AgreementReport agreement_report(const std::vector<std::vector<int>>& votes_by_item, std::size_t raters) {
    AgreementReport rep;
    rep.n_raters = raters;
    std::vector<std::vector<int>> full;
    std::vector<std::vector<int>> counts;
    for (const auto& votes : votes_by_item) {
        if (votes.size() != raters) continue;
        full.push_back(votes);
        std::vector<int> row(2, 0);
        for (int v : votes) ++row[v ? 1 : 0];
        counts.push_back(row);
    }
    rep.n_items = full.size();
    if (full.empty() || raters < 2) return rep;
    rep.pairwise_agreement = pairwise_agreement(full);
    rep.fleiss_kappa = fleiss_kappa(counts);
    return rep;
}

std::string_view task_name(Task t) { return t == Task::Plausibility ? "plausibility" : "typicality"; }

std::optional<Task> task_from_name(std::string_view s) {
    if (s == "plausibility") return Task::Plausibility;
    if (s == "typicality") return Task::Typicality;
    return std::nullopt;
}

namespace {
json item_card(const ingest::Item& item) {
    std::vector<std::string> images(item.image_urls.begin(),
                                    item.image_urls.begin() +
                                        static_cast<std::ptrdiff_t>(std::min<std::size_t>(3, item.image_urls.size())));
    return json{{"id", item.id},
                {"title", item.title},
                {"category", item.top_category()},
                {"url", item.url},
                {"image_urls", images}};
}

bool legal_value(Task task, double v) {
    return task == Task::Plausibility ? (v == 0.0 || v == 1.0) : is_legal_typicality(v);
}
}  // namespace

json card_to_json(const CardSource& c, Task task) {
    json answers = task == Task::Plausibility
                       ? json::array({json{{"label", "plausible"}, {"value", 1}},
                                      json{{"label", "implausible"}, {"value", 0}}})
                       : json::array({json{{"label", "strongly acceptable"}, {"value", 1.0}},
                                      json{{"label", "weakly acceptable"}, {"value", 0.5}},
                                      json{{"label", "rejected"}, {"value", 0.0}},
                                      json{{"label", "implausible"}, {"value", -1.0}}});
    return json{{"assertion_id", c.assertion_id},
                {"task", task_name(task)},
                {"sentence", c.sentence},
                {"relation", c.relation},
                {"items", json::array({item_card(c.item1), item_card(c.item2)})},
                {"answers", answers}};
}

json to_json(const Vote& v) {
    return json{{"assertion_id", v.assertion_id},
                {"worker_id", v.worker_id},
                {"task", task_name(v.task)},
                {"value", v.value},
                {"timestamp", v.timestamp}};
}

Vote vote_from_json(const json& j) {
    Vote v;
    v.assertion_id = j.at("assertion_id").get<std::string>();
    v.worker_id = j.at("worker_id").get<std::string>();
    auto task = task_from_name(j.at("task").get<std::string>());
    if (!task) throw DomainError("unknown task");
    v.task = *task;
    v.value = j.at("value").get<double>();
    v.timestamp = j.value("timestamp", std::int64_t{0});
    return v;
}

json to_json(const Label& l) {
    json j{{"assertion_id", l.assertion_id}};
    if (l.plausibility) j["plausibility_label"] = static_cast<int>(*l.plausibility);
    if (l.typicality) j["typicality_score"] = *l.typicality;
    return j;
}

Label label_from_json(const json& j) {
    Label l;
    l.assertion_id = j.at("assertion_id").get<std::string>();
    if (auto it = j.find("plausibility_label"); it != j.end() && !it->is_null())
        l.plausibility = it->get<int>() ? PlausibilityLabel::Plausible : PlausibilityLabel::Implausible;
    if (auto it = j.find("typicality_score"); it != j.end() && !it->is_null()) l.typicality = it->get<double>();
    return l;
}

AnnotationStore::AnnotationStore(Options opts) : opts_(std::move(opts)) {}

void AnnotationStore::add_card(Task task, CardSource card) {
    std::lock_guard lock(mu_);
    auto id = card.assertion_id;
    cards_[task].insert_or_assign(std::move(id), std::move(card));
}

void AnnotationStore::register_worker(const std::string& worker_id, bool qualified) {
    std::lock_guard lock(mu_);
    workers_[worker_id] = qualified;
}

bool AnnotationStore::apply_locked(const Vote& v) {
    auto& by_worker = votes_[v.task][v.assertion_id];
    if (by_worker.count(v.worker_id)) return false;
    by_worker[v.worker_id] = v.value;
    served_.emplace(v.task, v.worker_id, v.assertion_id);
    log_.push_back(v);
    return true;
}

std::size_t AnnotationStore::replay() {
    if (!opts_.vote_log || !std::filesystem::exists(*opts_.vote_log)) return 0;
    std::lock_guard lock(mu_);
    std::size_t loaded = 0;
    const auto bad = for_each_jsonl(*opts_.vote_log, [&](std::size_t line, const json& j) {
        try {
            if (apply_locked(vote_from_json(j))) ++loaded;
        } catch (const std::exception& e) {
            spdlog::warn("{}:{}: bad vote record: {}", opts_.vote_log->string(), line, e.what());
        }
    });
    if (bad) spdlog::warn("{}: {} unreadable lines", opts_.vote_log->string(), bad);
    return loaded;
}

std::vector<json> AnnotationStore::batch(Task task, std::size_t n, const std::string& worker_id) {
    std::lock_guard lock(mu_);
    std::vector<json> out;
    auto w = workers_.find(worker_id);
    if (w == workers_.end() || !w->second) return out;

    std::vector<std::pair<std::size_t, const CardSource*>> candidates;
    const auto& task_votes = votes_[task];
    for (const auto& [id, card] : cards_[task]) {
        if (served_.count({task, worker_id, id})) continue;
        auto it = task_votes.find(id);
        candidates.emplace_back(it == task_votes.end() ? 0 : it->second.size(), &card);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < candidates.size() && out.size() < n; ++i) {
        const auto* card = candidates[i].second;
        served_.emplace(task, worker_id, card->assertion_id);
        out.push_back(card_to_json(*card, task));
    }
    return out;
}

VoteResult AnnotationStore::vote(const Vote& v) {
    std::lock_guard lock(mu_);
    auto w = workers_.find(v.worker_id);
    if (w == workers_.end() || !w->second) return {false, "unknown worker"};
    if (!cards_[v.task].count(v.assertion_id)) return {false, "unknown assertion"};
    if (!legal_value(v.task, v.value)) return {false, "illegal value"};
    auto& by_worker = votes_[v.task][v.assertion_id];
    if (by_worker.count(v.worker_id)) return {false, "duplicate"};
    if (!served_.count({v.task, v.worker_id, v.assertion_id})) return {false, "not served"};

    Vote stamped = v;
    if (stamped.timestamp == 0)
        stamped.timestamp = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count();
    if (opts_.vote_log) {
        if (opts_.vote_log->has_parent_path()) std::filesystem::create_directories(opts_.vote_log->parent_path());
        std::ofstream out(*opts_.vote_log, std::ios::app);
        out << to_json(stamped).dump() << '\n';
        out.flush();
        if (!out) return {false, "storage failure"};
    }
    apply_locked(stamped);
    return {true, ""};
}

Progress AnnotationStore::progress(Task task) const {
    std::lock_guard lock(mu_);
    Progress p;
    auto cards = cards_.find(task);
    p.items = cards == cards_.end() ? 0 : cards->second.size();
    const std::size_t target = task == Task::Plausibility ? opts_.plausibility_target : opts_.typicality_target;
    if (auto it = votes_.find(task); it != votes_.end()) {
        for (const auto& [_, by_worker] : it->second) {
            p.votes += by_worker.size();
            if (by_worker.size() >= target) ++p.complete_items;
        }
    }
    return p;
}

std::vector<Vote> AnnotationStore::votes() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::vector<Label> AnnotationStore::labels() const {
    std::lock_guard lock(mu_);
    std::map<std::string, Label> out;
    if (auto it = votes_.find(Task::Plausibility); it != votes_.end()) {
        for (const auto& [id, by_worker] : it->second) {
            if (by_worker.size() < opts_.plausibility_target || by_worker.size() % 2 == 0) continue;
            std::vector<int> vs;
            for (const auto& [_, v] : by_worker) vs.push_back(static_cast<int>(v));
            out[id].assertion_id = id;
            out[id].plausibility = majority_vote(vs);
        }
    }
    if (auto it = votes_.find(Task::Typicality); it != votes_.end()) {
        for (const auto& [id, by_worker] : it->second) {
            if (by_worker.size() < opts_.typicality_target) continue;
            std::vector<double> vs;
            for (const auto& [_, v] : by_worker) vs.push_back(v);
            out[id].assertion_id = id;
            out[id].typicality = typicality_score(vs);
        }
    }
    std::vector<Label> labels;
    for (auto& [_, l] : out) labels.push_back(std::move(l));
    return labels;
}

AgreementReport AnnotationStore::plausibility_agreement() const {
    std::lock_guard lock(mu_);
    std::vector<std::vector<int>> by_item;
    if (auto it = votes_.find(Task::Plausibility); it != votes_.end()) {
        for (const auto& [_, by_worker] : it->second) {
            std::vector<int> vs;
            for (const auto& [__, v] : by_worker) vs.push_back(static_cast<int>(v));
            by_item.push_back(std::move(vs));
        }
    }
    return agreement_report(by_item, opts_.plausibility_target);
}

}  // namespace forge::annotation
