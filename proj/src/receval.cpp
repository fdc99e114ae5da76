#include "forge/receval.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace forge::receval {

std::vector<Interaction> load_interactions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FatalInputError("cannot read " + path.string());
    std::vector<Interaction> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty() || line[0] == '#') continue;
        const auto cols = split(line, '\t');
        try {
            if (cols.size() < 3) throw DomainError("expected user, item, rating[, timestamp]");
            Interaction x{trim(cols[0]), trim(cols[1]), std::stod(cols[2]), 0};
            if (cols.size() > 3) x.timestamp = std::stoll(cols[3]);
            if (x.user.empty() || x.item.empty()) throw DomainError("empty id");
            if (!(x.rating >= 1.0 && x.rating <= 5.0)) throw DomainError("rating outside [1, 5]");
            out.push_back(std::move(x));
        } catch (const std::exception& e) {
            spdlog::warn("{}:{}: skipping interaction: {}", path.string(), line_no, e.what());
        }
    }
    return out;
}

Split split_interactions(const std::vector<Interaction>& data, std::uint64_t seed) {
    std::map<std::string, std::vector<Interaction>> by_user;
    for (const auto& x : data) by_user[x.user].push_back(x);
    Split s;
    for (auto& [user, rows] : by_user) {
        std::sort(rows.begin(), rows.end(), [](const Interaction& a, const Interaction& b) {
            return std::tie(a.timestamp, a.item, a.rating) < std::tie(b.timestamp, b.item, b.rating);
        });
        const std::size_t n = rows.size();
        if (n < 3) {
            s.train.insert(s.train.end(), rows.begin(), rows.end());
            continue;
        }
        Rng rng(seed ^ fnv1a64(user));
        rng.shuffle(rows);
        const auto held = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) / 10.0)));
        s.test.insert(s.test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(held));
        s.dev.insert(s.dev.end(), rows.begin() + static_cast<std::ptrdiff_t>(held),
                     rows.begin() + static_cast<std::ptrdiff_t>(2 * held));
        s.train.insert(s.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(2 * held), rows.end());
    }
    return s;
}

MatchedKG match_kg(const kg::KnowledgeGraph& graph, const std::vector<Interaction>& train) {
    std::map<std::string, std::set<std::string>> users_of;
    for (const auto& x : train) users_of[x.item].insert(x.user);
    auto co_bought = [&](const std::string& a, const std::string& b) {
        auto ia = users_of.find(a);
        auto ib = users_of.find(b);
        if (ia == users_of.end() || ib == users_of.end()) return false;
        const auto& small = ia->second.size() <= ib->second.size() ? ia->second : ib->second;
        const auto& large = &small == &ia->second ? ib->second : ia->second;
        return std::any_of(small.begin(), small.end(), [&](const std::string& u) { return large.count(u) != 0; });
    };

    MatchedKG m;
    m.kg = graph;
    std::erase_if(m.kg.edges, [&](const auto& kv) {
        const auto& e = kv.second;
        return e.kind == kg::EdgeKind::Assert && !co_bought(e.src.at(0), e.src.at(1));
    });
    kg::rebuild_derived(m.kg);

    if (!users_of.empty()) {
        std::size_t covered = 0;
        for (const auto& [item, _] : users_of) {
            const auto* n = m.kg.node(item);
            if (n && n->kind == kg::NodeKind::Item) ++covered;
        }
        m.coverage = static_cast<double>(covered) / static_cast<double>(users_of.size());
    }
    return m;
}

namespace {
double dot(const embed::Vec& a, const embed::Vec& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size() && k < b.size(); ++k) s += a[k] * b[k];
    return s;
}

template <class M>
const typename M::mapped_type* lookup(const M& m, const std::string& key) {
    auto it = m.find(key);
    return it == m.end() ? nullptr : &it->second;
}
}  // namespace

double Predictor::predict(const std::string& user, const std::string& item) const {
    double y = mu;
    if (const auto* b = lookup(user_bias, user)) y += *b;
    if (const auto* b = lookup(item_bias, item)) y += *b;
    const auto* pu = lookup(user_factors, user);
    const auto* qi = lookup(item_factors, item);
    if (pu && qi) y += dot(*pu, *qi);
    if (const auto* f = lookup(features, item)) y += dot(w, *f);
    return y;
}

Predictor train_predictor(const std::vector<Interaction>& train, const FeatureMap* features,
                          const PredictorConfig& cfg) {
    if (train.empty()) throw DomainError("train_predictor: empty training data");
    Predictor m;
    std::size_t fdim = 0;
    if (features) {
        for (const auto& [id, f] : *features) {
            if (fdim == 0) fdim = f.size();
            if (f.size() != fdim) throw DomainError("feature vector " + id + " has wrong dimension");
        }
        m.features = *features;
    }
    m.w.assign(fdim, 0.0);

    double sum = 0.0;
    std::set<std::string> users, items;
    for (const auto& x : train) {
        sum += x.rating;
        users.insert(x.user);
        items.insert(x.item);
    }
    m.mu = sum / static_cast<double>(train.size());

    Rng rng(cfg.seed);
    auto init = [&] {
        embed::Vec v(cfg.factors);
        for (double& x : v) x = cfg.init_scale * rng.normal();
        return v;
    };
    for (const auto& u : users) {
        m.user_bias[u] = 0.0;
        m.user_factors[u] = init();
    }
    for (const auto& i : items) {
        m.item_bias[i] = 0.0;
        m.item_factors[i] = init();
    }

    std::vector<std::size_t> order(train.size());
    const embed::Vec zero(fdim, 0.0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (std::size_t idx : order) {
            const auto& x = train[idx];
            double& bu = m.user_bias[x.user];
            double& bi = m.item_bias[x.item];
            auto& pu = m.user_factors[x.user];
            auto& qi = m.item_factors[x.item];
            const auto* fp = lookup(m.features, x.item);
            const auto& f = fp ? *fp : zero;
            const double err = x.rating - (m.mu + bu + bi + dot(pu, qi) + dot(m.w, f));
            bu += cfg.lr * (err - cfg.reg * bu);
            bi += cfg.lr * (err - cfg.reg * bi);
            for (std::size_t k = 0; k < cfg.factors; ++k) {
                const double puk = pu[k];
                pu[k] += cfg.lr * (err * qi[k] - cfg.reg * puk);
                qi[k] += cfg.lr * (err * puk - cfg.reg * qi[k]);
            }
            for (std::size_t k = 0; k < fdim; ++k) m.w[k] += cfg.lr * (err * f[k] - cfg.reg * m.w[k]);
        }
    }
    return m;
}

double rmse(const std::vector<double>& predictions, const std::vector<double>& truth) {
    if (predictions.empty()) throw DomainError("rmse: empty input");
    if (predictions.size() != truth.size()) throw DomainError("rmse: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = std::clamp(predictions[i], 1.0, 5.0) - truth[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(predictions.size()));
}

double rmse(const Predictor& model, const std::vector<Interaction>& test) {
    std::vector<double> pred, truth;
    for (const auto& x : test) {
        pred.push_back(model.predict(x.user, x.item));
        truth.push_back(x.rating);
    }
    return rmse(pred, truth);
}

std::vector<AblationRow> run_ablation(const std::vector<Interaction>& data, const std::vector<AblationConfig>& configs,
                                      const std::vector<std::uint64_t>& seeds, PredictorConfig cfg) {
    if (seeds.empty()) throw DomainError("run_ablation: no seeds");
    std::vector<Split> splits;
    for (auto seed : seeds) splits.push_back(split_interactions(data, seed));

    std::vector<AblationRow> rows;
    for (const auto& c : configs) {
        if (c.requires_features && !c.features) {
            spdlog::warn("ablation config '{}' skipped: features not available", c.name);
            continue;
        }
        AblationRow row{c.name, 0.0, 0.0, c.coverage, {}};
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            cfg.seed = seeds[s];
            const auto model = train_predictor(splits[s].train, c.features ? &*c.features : nullptr, cfg);
            row.runs.push_back(rmse(model, splits[s].test));
        }
        const double n = static_cast<double>(row.runs.size());
        row.mean_rmse = std::accumulate(row.runs.begin(), row.runs.end(), 0.0) / n;
        if (row.runs.size() > 1) {
            double ss = 0.0;
            for (double r : row.runs) ss += (r - row.mean_rmse) * (r - row.mean_rmse);
            row.std = std::sqrt(ss / (n - 1.0));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string report_csv(const std::vector<AblationRow>& rows) {
    std::string out = "config,mean_rmse,std,coverage\n";
    for (const auto& r : rows) out += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", r.config, r.mean_rmse, r.std, r.coverage);
    return out;
}

Synthetic planted_signal(std::uint64_t seed, std::size_t users, std::size_t items, std::size_t feature_dim) {
    if (feature_dim == 0) throw DomainError("planted_signal: feature_dim must be positive");
    Rng rng(seed);
    Synthetic s;
    // Features are random signs. Only the first one moves the rating, by
    // +-1.8 around 3, so ratings stay inside [1, 5] and are exactly linear
    // in the features; the others are distractors.
    std::vector<double> item_effect(items);
    for (std::size_t i = 0; i < items; ++i) {
        embed::Vec f(feature_dim);
        for (double& x : f) x = rng.below(2) ? 1.0 : -1.0;
        item_effect[i] = 1.8 * f[0];
        s.features[fmt::format("item{:04d}", i)] = std::move(f);
    }
    for (std::size_t u = 0; u < users; ++u) {
        const double user_bias = 0.1 * rng.normal();
        const std::size_t n = 12 + rng.below(7);
        std::set<std::size_t> picked;
        while (picked.size() < std::min(n, items)) picked.insert(rng.below(items));
        std::int64_t ts = 0;
        for (auto i : picked) {
            const double y = std::clamp(3.0 + item_effect[i] + user_bias + 0.05 * rng.normal(), 1.0, 5.0);
            s.interactions.push_back({fmt::format("user{:04d}", u), fmt::format("item{:04d}", i), y, ts++});
        }
    }
    return s;
}

}  // namespace forge::receval
