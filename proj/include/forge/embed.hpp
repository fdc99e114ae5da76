#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/kgstore.hpp"

namespace forge::embed {

using Vec = std::vector<double>;
using VectorMap = std::map<std::string, Vec>;

struct EmbeddingTable {
    std::size_t d = 0;
    VectorMap items;
    VectorMap relations;
    VectorMap tails;

    bool operator==(const EmbeddingTable&) const = default;
};

struct TrainConfig {
    std::size_t d = 64;
    double gamma = 1.0;
    double lr = 0.01;
    std::size_t epochs = 100;
    std::size_t negatives = 1;
    std::uint64_t seed = 0;
    std::optional<VectorMap> tail_init;  // pretrained tail vectors
    bool tails_trainable = true;          // only consulted with tail_init; such tails move at lr * 0.1
    /// Tails name items (single-item TransE over co-buy edges).
    bool tails_are_items = false;
};

/// Head pair (h1, h2), relation and tail. For single-item triples h1 == h2.
struct Triple {
    std::string h1;
    std::string h2;
    std::string relation;
    std::string tail;
};

/// max(0, gamma + |(p1+p2)/2 + r - e| - |(n1+n2)/2 + r - e|).
/// Throws DomainError on a dimension mismatch.
double triple_loss(const Vec& p1, const Vec& p2, const Vec& r, const Vec& e, const Vec& n1, const Vec& n2,
                   double gamma);

struct TripleGrad {
    Vec p1, p2, r, e, n1, n2;
};

/// Loss plus its gradient. Where a distance is zero its direction is taken
/// as zero; at loss == 0 every gradient is zero.
double triple_loss_grad(const Vec& p1, const Vec& p2, const Vec& r, const Vec& e, const Vec& n1, const Vec& n2,
                        double gamma, TripleGrad& grad);

/// ASSERT edges as (pair, relation, intention) triples, sorted by edge id.
std::vector<Triple> triples_from_kg(const kg::KnowledgeGraph& kg);

/// Co-buy edges as single-item triples under one dummy relation.
std::vector<Triple> cobuy_triples(const std::vector<std::pair<std::string, std::string>>& edges);

/// Initial table: items and relations uniform in [-6/sqrt(d), 6/sqrt(d)]
/// then scaled into the unit ball (relations to unit norm); tails from
/// tail_init when given, otherwise uniform. `extra_items` join the item
/// universe used for negatives.
EmbeddingTable initialize(const std::vector<Triple>& triples, const TrainConfig& cfg,
                          const std::vector<std::string>& extra_items = {});

struct TrainResult {
    EmbeddingTable table;
    /// Mean hinge loss after each epoch over a fixed set of corrupted heads.
    std::vector<double> epoch_loss;
    /// Mean loss of the sampled negatives seen during each epoch.
    std::vector<double> train_loss;
};

/// Single-threaded SGD; bit-identical for a fixed seed. Throws DomainError
/// when there are no triples and FatalInputError when tail_init misses a tail.
TrainResult train(const std::vector<Triple>& triples, const TrainConfig& cfg,
                  const std::vector<std::string>& extra_items = {});

/// "# dim=<d>" header, then "id \t v1 v2 ..." rows sorted by id.
void write_vectors(const VectorMap& vectors, std::size_t d, const std::filesystem::path& path);
struct VectorFile {
    std::size_t d = 0;
    VectorMap vectors;
};
/// Throws FatalInputError on a missing file, a bad header or a ragged row.
VectorFile read_vectors(const std::filesystem::path& path);

void export_item_vectors(const EmbeddingTable& table, const std::filesystem::path& path);

/// Mean of the vectors of distinct intention nodes joined to `item_id` by an
/// ASSERT edge; a zero vector of dimension d when there are none. Throws
/// FatalInputError when a neighbour has no vector.
Vec avg_pool_tail_features(const std::string& item_id, const kg::KnowledgeGraph& kg, const VectorMap& tail_vectors,
                           std::size_t d);

/// Feature-hashed bag of lowercased words, L2-normalised. Stand-in text
/// encoder when no sentence-embedding file is available.
Vec hashed_text_vector(std::string_view text, std::size_t d);

}  // namespace forge::embed
