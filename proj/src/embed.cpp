#include "forge/embed.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace forge::embed {

namespace {
void check_dims(std::initializer_list<const Vec*> vs) {
    const auto d = (*vs.begin())->size();
    for (const auto* v : vs)
        if (v->size() != d) throw DomainError("triple_loss: dimension mismatch");
}

// (a + b) / 2 + r - e
Vec head_offset(const Vec& a, const Vec& b, const Vec& r, const Vec& e) {
    Vec out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = 0.5 * (a[k] + b[k]) + r[k] - e[k];
    return out;
}

double norm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void axpy(Vec& y, double a, const Vec& x) {
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * x[k];
}

void clip_to_ball(Vec& v, double radius) {
    // a vector already rescaled can sit an ulp above the radius; leave it
    const double n = norm(v);
    if (n > radius * (1.0 + 1e-12))
        for (double& x : v) x *= radius / n;
}

Vec random_vec(Rng& rng, std::size_t d) {
    const double bound = 6.0 / std::sqrt(static_cast<double>(d));
    Vec v(d);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return v;
}
}  // namespace

double triple_loss(const Vec& p1, const Vec& p2, const Vec& r, const Vec& e, const Vec& n1, const Vec& n2,
                   double gamma) {
    check_dims({&p1, &p2, &r, &e, &n1, &n2});
    const double dp = norm(head_offset(p1, p2, r, e));
    const double dn = norm(head_offset(n1, n2, r, e));
    return std::max(0.0, gamma + dp - dn);
}

double triple_loss_grad(const Vec& p1, const Vec& p2, const Vec& r, const Vec& e, const Vec& n1, const Vec& n2,
                        double gamma, TripleGrad& g) {
    check_dims({&p1, &p2, &r, &e, &n1, &n2});
    const auto d = p1.size();
    for (Vec* v : {&g.p1, &g.p2, &g.r, &g.e, &g.n1, &g.n2}) v->assign(d, 0.0);

    Vec up = head_offset(p1, p2, r, e);
    Vec un = head_offset(n1, n2, r, e);
    const double dp = norm(up);
    const double dn = norm(un);
    const double loss = gamma + dp - dn;
    if (loss <= 0.0) return 0.0;

    for (double& x : up) x = dp > 0.0 ? x / dp : 0.0;
    for (double& x : un) x = dn > 0.0 ? x / dn : 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        g.p1[k] = g.p2[k] = 0.5 * up[k];
        g.n1[k] = g.n2[k] = -0.5 * un[k];
        g.r[k] = up[k] - un[k];
        g.e[k] = un[k] - up[k];
    }
    return loss;
}

std::vector<Triple> triples_from_kg(const kg::KnowledgeGraph& graph) {
    std::vector<Triple> out;
    for (const auto* e : graph.edges_of(kg::EdgeKind::Assert))
        out.push_back({e->src.at(0), e->src.at(1), std::string(generation::name(*e->relation)), e->dst});
    return out;
}

std::vector<Triple> cobuy_triples(const std::vector<std::pair<std::string, std::string>>& edges) {
    std::vector<Triple> out;
    out.reserve(edges.size());
    for (const auto& [a, b] : edges) out.push_back({a, a, "co_buy", b});
    return out;
}

namespace {
std::vector<std::string> item_universe(const std::vector<Triple>& triples, const TrainConfig& cfg,
                                       const std::vector<std::string>& extra) {
    std::set<std::string> ids(extra.begin(), extra.end());
    for (const auto& t : triples) {
        ids.insert(t.h1);
        ids.insert(t.h2);
        if (cfg.tails_are_items) ids.insert(t.tail);
    }
    return {ids.begin(), ids.end()};
}

struct Probe {
    std::size_t triple;
    bool first;  // corrupted position
    const std::string* item;
};

// Fixed negatives for the per-epoch loss: every single-position corruption
// when that is small, otherwise a seeded sample per triple.
std::vector<Probe> probe_negatives(const std::vector<Triple>& triples, const std::vector<const std::string*>& universe,
                                   std::uint64_t seed) {
    constexpr std::size_t kExhaustiveLimit = 100000;
    constexpr std::size_t kSampled = 8;
    std::vector<Probe> out;
    if (triples.size() * universe.size() * 2 <= kExhaustiveLimit) {
        for (std::size_t i = 0; i < triples.size(); ++i)
            for (bool first : {true, false})
                for (const auto* item : universe)
                    if (*item != (first ? triples[i].h1 : triples[i].h2)) out.push_back({i, first, item});
        return out;
    }
    Rng rng(seed ^ 0xd1b54a32d192ed03ULL);
    for (std::size_t i = 0; i < triples.size(); ++i)
        for (std::size_t k = 0; k < kSampled; ++k) out.push_back({i, rng.uniform() < 0.5, universe[rng.below(universe.size())]});
    return out;
}

double probe_loss(const EmbeddingTable& t, const std::vector<Triple>& triples, const std::vector<Probe>& probes,
                  const TrainConfig& cfg) {
    if (probes.empty()) return 0.0;
    double total = 0.0;
    for (const auto& p : probes) {
        const auto& tr = triples[p.triple];
        const Vec& e = cfg.tails_are_items ? t.items.at(tr.tail) : t.tails.at(tr.tail);
        const Vec& n1 = p.first ? t.items.at(*p.item) : t.items.at(tr.h1);
        const Vec& n2 = p.first ? t.items.at(tr.h2) : t.items.at(*p.item);
        total += triple_loss(t.items.at(tr.h1), t.items.at(tr.h2), t.relations.at(tr.relation), e, n1, n2, cfg.gamma);
    }
    return total / static_cast<double>(probes.size());
}
}  // namespace

EmbeddingTable initialize(const std::vector<Triple>& triples, const TrainConfig& cfg,
                          const std::vector<std::string>& extra_items) {
    if (cfg.d == 0) throw DomainError("embedding dimension must be positive");
    if (!(cfg.gamma > 0.0)) throw DomainError("margin must be positive");
    Rng rng(cfg.seed);
    EmbeddingTable t;
    t.d = cfg.d;
    for (const auto& id : item_universe(triples, cfg, extra_items)) {
        auto v = random_vec(rng, cfg.d);
        clip_to_ball(v, 1.0);
        t.items.emplace(id, std::move(v));
    }
    std::set<std::string> rels, tails;
    for (const auto& tr : triples) {
        rels.insert(tr.relation);
        if (!cfg.tails_are_items) tails.insert(tr.tail);
    }
    for (const auto& r : rels) {
        auto v = random_vec(rng, cfg.d);
        const double n = norm(v);
        if (n > 0.0)
            for (double& x : v) x /= n;
        t.relations.emplace(r, std::move(v));
    }
    for (const auto& id : tails) {
        if (cfg.tail_init) {
            auto it = cfg.tail_init->find(id);
            if (it == cfg.tail_init->end()) throw FatalInputError("tail vectors do not cover tail " + id);
            if (it->second.size() != cfg.d)
                throw FatalInputError("tail vector for " + id + " has dimension " + std::to_string(it->second.size()));
            t.tails.emplace(id, it->second);
        } else {
            t.tails.emplace(id, random_vec(rng, cfg.d));
        }
    }
    return t;
}

TrainResult train(const std::vector<Triple>& triples, const TrainConfig& cfg,
                  const std::vector<std::string>& extra_items) {
    if (triples.empty()) throw DomainError("train: no triples");
    if (cfg.negatives == 0) throw DomainError("train: negatives must be at least 1");
    TrainResult res{initialize(triples, cfg, extra_items), {}, {}};
    auto& t = res.table;

    std::vector<const std::string*> universe;
    for (const auto& [id, _] : t.items) universe.push_back(&id);

    const double tail_lr = cfg.tail_init ? (cfg.tails_trainable ? cfg.lr * 0.1 : 0.0) : cfg.lr;
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const auto probes = probe_negatives(triples, universe, cfg.seed);
    std::vector<std::size_t> order(triples.size());
    TripleGrad g;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t idx : order) {
            const auto& tr = triples[idx];
            Vec& p1 = t.items.at(tr.h1);
            Vec& p2 = t.items.at(tr.h2);
            Vec& r = t.relations.at(tr.relation);
            Vec& e = cfg.tails_are_items ? t.items.at(tr.tail) : t.tails.at(tr.tail);
            for (std::size_t k = 0; k < cfg.negatives; ++k) {
                const bool first = rng.uniform() < 0.5;
                const std::string& kept = first ? tr.h2 : tr.h1;
                const std::string& replaced = first ? tr.h1 : tr.h2;
                const std::string* pick = universe[rng.below(universe.size())];
                for (int tries = 0; *pick == replaced && universe.size() > 1 && tries < 16; ++tries)
                    pick = universe[rng.below(universe.size())];
                Vec& nk = t.items.at(kept);
                Vec& nc = t.items.at(*pick);
                Vec& n1 = first ? nc : nk;
                Vec& n2 = first ? nk : nc;

                const double loss = triple_loss_grad(p1, p2, r, e, n1, n2, cfg.gamma, g);
                total += loss;
                if (loss <= 0.0) continue;
                // Gradients are computed before any update, so aliased
                // vectors (a repeated item) receive the sum of their parts.
                axpy(p1, -cfg.lr, g.p1);
                axpy(p2, -cfg.lr, g.p2);
                axpy(n1, -cfg.lr, g.n1);
                axpy(n2, -cfg.lr, g.n2);
                axpy(r, -cfg.lr, g.r);
                axpy(e, cfg.tails_are_items ? -cfg.lr : -tail_lr, g.e);
            }
        }
        for (auto& [_, v] : t.items) clip_to_ball(v, 1.0);
        res.train_loss.push_back(total / static_cast<double>(triples.size() * cfg.negatives));
        res.epoch_loss.push_back(probe_loss(t, triples, probes, cfg));
        spdlog::debug("epoch {} mean loss {:.6f}", epoch + 1, res.epoch_loss.back());
    }
    return res;
}

void write_vectors(const VectorMap& vectors, std::size_t d, const std::filesystem::path& path) {
    std::string out = "# dim=" + std::to_string(d) + "\n";
    for (const auto& [id, v] : vectors) {
        if (v.size() != d) throw DomainError("vector " + id + " has wrong dimension");
        out += id;
        out += '\t';
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (!std::isfinite(v[k])) throw DomainError("non-finite entry in vector " + id);
            if (k) out += ' ';
            out += format_double(v[k]);
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

VectorFile read_vectors(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FatalInputError("cannot read " + path.string());
    VectorFile out;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# dim=", 0) != 0)
        throw FatalInputError(path.string() + ": missing '# dim=' header");
    try {
        out.d = std::stoul(line.substr(6));
    } catch (const std::exception&) {
        throw FatalInputError(path.string() + ": bad dimension header");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw FatalInputError(path.string() + ":" + std::to_string(line_no) + ": no tab");
        Vec v;
        std::istringstream ss(line.substr(tab + 1));
        double x;
        while (ss >> x) v.push_back(x);
        if (!ss.eof() || v.size() != out.d)
            throw FatalInputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(out.d) + " values");
        out.vectors[line.substr(0, tab)] = std::move(v);
    }
    return out;
}

void export_item_vectors(const EmbeddingTable& table, const std::filesystem::path& path) {
    write_vectors(table.items, table.d, path);
}

Vec avg_pool_tail_features(const std::string& item_id, const kg::KnowledgeGraph& graph,
                           const VectorMap& tail_vectors, std::size_t d) {
    std::set<std::string> tails;
    for (const auto* e : graph.edges_of(kg::EdgeKind::Assert))
        if (std::find(e->src.begin(), e->src.end(), item_id) != e->src.end()) tails.insert(e->dst);
    Vec out(d, 0.0);
    for (const auto& id : tails) {
        auto it = tail_vectors.find(id);
        if (it == tail_vectors.end()) throw FatalInputError("no vector for tail " + id);
        if (it->second.size() != d) throw FatalInputError("tail vector " + id + " has wrong dimension");
        axpy(out, 1.0 / static_cast<double>(tails.size()), it->second);
    }
    return out;
}

Vec hashed_text_vector(std::string_view text, std::size_t d) {
    Vec v(d, 0.0);
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        const auto h = fnv1a64(word);
        v[h % d] += (h >> 63) ? 1.0 : -1.0;
        word.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else
            flush();
    }
    flush();
    const double n = norm(v);
    if (n > 0.0)
        for (double& x : v) x /= n;
    return v;
}

}  // namespace forge::embed
