#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "forge/annotation_service.hpp"
#include "forge/common.hpp"
#include "forge/conceptualize.hpp"
#include "forge/embed.hpp"
#include "forge/generation.hpp"
#include "forge/mining.hpp"
#include "forge/receval.hpp"

namespace forge::pipeline {

/// Invalid configuration or stage precondition. Maps to exit code 3.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A declared stage input does not exist. Maps to exit code 2.
class MissingInputError : public std::runtime_error {
  public:
    explicit MissingInputError(const std::filesystem::path& p)
        : std::runtime_error("missing input: " + p.string()), path(p) {}
    std::filesystem::path path;
};

struct Paths {
    std::filesystem::path items;
    std::filesystem::path cobuy;
    std::filesystem::path work_dir;
    std::filesystem::path parses;
    std::optional<std::filesystem::path> parse_index;  // jsonl {assertion_id, sent_id}
    std::filesystem::path concepts;
    std::filesystem::path interactions;
    std::optional<std::filesystem::path> tail_vectors;
    std::optional<std::filesystem::path> scores;  // file scorer input
    std::optional<std::filesystem::path> labels;  // annotation labels.jsonl
    std::optional<std::filesystem::path> pattern_allow;
    std::optional<std::filesystem::path> pattern_deny;
};

struct PipelineConfig {
    Paths paths;
    std::uint64_t seed = 0;

    std::set<std::string> categories;
    std::size_t sample_size = 0;
    std::size_t min_degree = 5;
    bool title_filter = true;

    generation::GenerationConfig generation;
    std::vector<generation::Relation> relations;

    std::string annotation_host = "127.0.0.1";
    int annotation_port = 8080;
    std::optional<std::filesystem::path> annotation_static;
    std::vector<std::string> workers;
    std::size_t plausibility_target = 3;
    std::size_t typicality_target = 5;

    std::string scorer = "file";  // file | http
    std::string scorer_endpoint;
    std::size_t score_batch = 64;
    double plau_threshold = 0.5;
    std::optional<double> typ_threshold;
    double split_ratio = 0.8;

    std::size_t min_support = 0;  // 0: scaled default
    std::size_t max_nodes = 12;
    std::size_t min_perfect = 1;

    conceptualize::ConceptualizeOptions concepts;

    embed::TrainConfig train;
    std::size_t structure_epochs = 50;

    std::vector<std::uint64_t> receval_seeds;  // empty: seed .. seed+4
    receval::PredictorConfig predictor;
    std::vector<double> ablation_thresholds{0.5, 0.7, 0.9};
};

/// Parses an INI file. Relative paths resolve against the file's directory.
/// Unknown sections or keys, unparsable values and out-of-range settings
/// raise ConfigError.
PipelineConfig load_config(const std::filesystem::path& path);
void validate(const PipelineConfig& cfg);

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    std::optional<std::size_t> min_support;
};
void apply(PipelineConfig& cfg, const Overrides& o);

const std::vector<std::string>& stage_names();

enum class StageStatus { Ran, Skipped };

struct RunOptions {
    bool force = false;  // ignore a matching manifest
};

/// Runs one batch stage (every stage but annotate-serve). Outputs are
/// written atomically and recorded in <work>/<stage>/manifest.json together
/// with the SHA-256 of every input; a stage whose manifest still matches is
/// skipped. "all" runs ingest through report in order.
StageStatus run_stage(const std::string& name, const PipelineConfig& cfg, const RunOptions& opts = {});

/// Serves annotation cards built from the generated assertions until the
/// server is stopped, then writes <work>/annotate/labels.jsonl.
/// `on_ready` receives the server and its bound port.
void serve_annotation(const PipelineConfig& cfg,
                      const std::function<void(annotation::AnnotationServer&, int port)>& on_ready = {});

/// Stage directory under the work dir.
std::filesystem::path stage_dir(const PipelineConfig& cfg, const std::string& stage);

}  // namespace forge::pipeline
