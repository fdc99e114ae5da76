#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/embed.hpp"
#include "forge/kgstore.hpp"

namespace forge::receval {

struct Interaction {
    std::string user;
    std::string item;
    double rating = 0.0;
    std::int64_t timestamp = 0;

    bool operator==(const Interaction&) const = default;
};

/// user \t item \t rating \t timestamp. Bad rows are skipped with a warning.
std::vector<Interaction> load_interactions(const std::filesystem::path& path);

struct Split {
    std::vector<Interaction> train;
    std::vector<Interaction> dev;
    std::vector<Interaction> test;
};

/// Per-user shuffled 8:1:1 split. Users with n >= 3 interactions give
/// max(1, round(n/10)) to dev and to test; smaller users go wholly to train.
Split split_interactions(const std::vector<Interaction>& data, std::uint64_t seed);

struct MatchedKG {
    kg::KnowledgeGraph kg;
    double coverage = 0.0;  // |KG items ∩ dataset items| / |dataset items|
};

/// Keeps ASSERT edges whose head pair was bought by one user in `train`
/// (plus the concept edges they support).
MatchedKG match_kg(const kg::KnowledgeGraph& graph, const std::vector<Interaction>& train);

struct PredictorConfig {
    std::size_t factors = 8;
    double lr = 0.01;
    double reg = 0.02;
    std::size_t epochs = 60;
    double init_scale = 0.1;
    std::uint64_t seed = 0;
};

using FeatureMap = embed::VectorMap;

/// y = mu + b_u + b_i + <u, v_i> + <w, f_i>. Unknown users, items and
/// features contribute zero.
class Predictor {
  public:
    double predict(const std::string& user, const std::string& item) const;

    double mu = 0.0;
    std::map<std::string, double> user_bias;
    std::map<std::string, double> item_bias;
    std::map<std::string, embed::Vec> user_factors;
    std::map<std::string, embed::Vec> item_factors;
    embed::Vec w;
    FeatureMap features;

    bool operator==(const Predictor&) const = default;
};

/// SGD with L2 regularisation. Throws DomainError on empty training data or
/// ragged feature vectors.
Predictor train_predictor(const std::vector<Interaction>& train, const FeatureMap* features,
                          const PredictorConfig& cfg);

/// Root mean squared error with predictions clamped to [1, 5].
/// Throws DomainError on an empty test set.
double rmse(const Predictor& model, const std::vector<Interaction>& test);
double rmse(const std::vector<double>& predictions, const std::vector<double>& truth);

struct AblationConfig {
    std::string name;
    std::optional<FeatureMap> features;  // nullopt: plain MF
    bool requires_features = false;      // skipped when features are missing
    double coverage = 0.0;
};

struct AblationRow {
    std::string config;
    double mean_rmse = 0.0;
    double std = 0.0;  // sample standard deviation over seeds
    double coverage = 0.0;
    std::vector<double> runs;

    bool operator==(const AblationRow&) const = default;
};

/// Each seed re-splits the data and retrains; RMSE is measured on the test side.
std::vector<AblationRow> run_ablation(const std::vector<Interaction>& data, const std::vector<AblationConfig>& configs,
                                      const std::vector<std::uint64_t>& seeds, PredictorConfig cfg);

std::string report_csv(const std::vector<AblationRow>& rows);

struct Synthetic {
    std::vector<Interaction> interactions;
    FeatureMap features;
};

/// Ratings driven by a linear function of hidden item features, with most
/// items rated by only a handful of users so that a model without features
/// cannot estimate their biases.
Synthetic planted_signal(std::uint64_t seed, std::size_t users = 200, std::size_t items = 3000,
                         std::size_t feature_dim = 4);

}  // namespace forge::receval
