#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gracelab/analysis.hpp"
#include "gracelab/corpus.hpp"
#include "gracelab/grace.hpp"
#include "gracelab/model.hpp"
#include "gracelab/probes.hpp"

namespace gracelab::store {

struct AnalysisConfig {
    analysis::RelationThresholds thresholds;
    double high_impact_fraction = 0.70;
    /// Rows per capability in the top/bottom impact table.
    std::uint32_t top_k = 5;
};

/// Four domains: "target" linked strongly to "strong" and weakly to
/// "weak", plus an "unlinked" domain.
corpus::CorpusSpec example_corpus();

struct ExperimentConfig {
    corpus::CorpusSpec corpus = example_corpus();
    /// vocab_size is taken from the resolved corpus.
    model::ModelConfig model{256, 32, 2, 2, 64, 0};
    model::TrainConfig pretrain = default_pretrain();
    grace::GraceConfig grace = default_grace();
    probes::ProbeConfig probes{100, 128, 63, 0};
    /// Empty means default_probe_specs() of the corpus.
    std::vector<probes::ProbeSpec> probe_specs;
    AnalysisConfig analysis;
    std::vector<std::string> targets{"target"};
    /// Target sequences sampled into each unlearning set.
    std::uint32_t unlearn_count = 200;
    /// Held-out sequences per domain scored in the token-delta case study.
    std::uint32_t delta_docs = 16;
    std::uint64_t master_seed = 0;
    std::filesystem::path output_dir = "runs";

    static model::TrainConfig default_pretrain();
    static grace::GraceConfig default_grace();
};

/// Every stage seed comes from master_seed through derive_seed():
///   grammar                 Grammar
///   documents of domain i   Corpus, i
///   model init              ModelInit
///   pretrain batches        Pretrain
///   target k splits         Splits, k
///   target k randomizer     Randomizer, k
///   target k ascent         GraceAscent, k
///   target k retraining     GraceRetrain, k
///   probes                  Probes
///   token-delta docs of i   TokenDelta, i
/// Seed fields inside the nested sections are overwritten with these.
void apply_seed_fanout(ExperimentConfig& cfg);

/// Throws InvalidArgument naming the first violated constraint.
void validate(const ExperimentConfig& cfg);

/// Parses a config document. Absent keys keep their defaults; the corpus is
/// resolved, the seed fan-out applied and the result validated.
ExperimentConfig config_from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = {});
ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});

/// Canonical form of a config: every field, defaults included.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Config with every default filled in and an example corpus.
nlohmann::json default_config_json();

/// SHA-256 of the canonical JSON without output_dir.
std::string config_hash(const ExperimentConfig& cfg);

/// "run-" + first 12 hex digits of the config hash.
std::string run_id(const ExperimentConfig& cfg);

/// Capability labels used as matrix columns (the subtype) and the
/// taxonomy that groups them.
std::vector<probes::ProbeSpec> probe_specs(const ExperimentConfig& cfg);
analysis::Taxonomy taxonomy(const ExperimentConfig& cfg);

// ---- registry ----

enum class Stage { Generated, Pretrained, Unlearned, Evaluated, Analyzed };

std::string_view to_string(Stage s) noexcept;
Stage stage_from_string(std::string_view s);

struct RunRecord {
    std::string run_id;
    std::string config_hash;
    Stage stage = Stage::Generated;
    std::optional<std::string> target;
    std::string status;  // "completed" or "failed"
    std::string timestamp;
    std::vector<std::string> artifacts;  // relative to the run directory
    std::string error;
};

nlohmann::json record_to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);

/// Append-only JSONL log of stage commits in <run_dir>/registry.jsonl.
class Registry {
public:
    explicit Registry(std::filesystem::path run_dir);

    [[nodiscard]] std::vector<RunRecord> records() const;
    void append(const RunRecord& r) const;

    /// The latest completed record of (stage, target) whose artifacts are
    /// all present on disk.
    [[nodiscard]] std::optional<RunRecord> completed(Stage s, const std::optional<std::string>& target = {}) const;

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path dir_;
    std::filesystem::path path_;
};

/// A stage failure; what() starts with the stage name.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& message);
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// ---- pipeline ----

/// Layout: <output_dir>/<run_id>/{corpus,checkpoints,traces,results,reports}
/// plus config.json and registry.jsonl. Each stage reads its inputs from
/// disk, writes files with write-then-rename and then appends a registry
/// record, so a crash never leaves a stage recorded without its artifacts.
class Pipeline {
public:
    explicit Pipeline(ExperimentConfig cfg);

    [[nodiscard]] const ExperimentConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const std::string& run_id() const noexcept { return run_id_; }
    [[nodiscard]] const std::filesystem::path& run_dir() const noexcept { return run_dir_; }
    [[nodiscard]] const Registry& registry() const noexcept { return registry_; }

    RunRecord generate();
    RunRecord pretrain();
    RunRecord unlearn(const std::string& target);
    RunRecord evaluate();
    RunRecord analyze();
    /// Writes reports/ from the evaluation results; needs EVALUATED.
    std::vector<std::filesystem::path> report();

    /// Runs every stage from the first one whose registry record or
    /// artifacts are missing, then emits the report.
    RunRecord run();

    [[nodiscard]] bool is_complete(Stage s, const std::optional<std::string>& target = {}) const;

private:
    template <class Fn>
    RunRecord commit(Stage s, const std::optional<std::string>& target, Fn&& body);
    void require(Stage s, const std::optional<std::string>& target = {}) const;
    void write_config() const;

    ExperimentConfig cfg_;
    std::string hash_;
    std::string run_id_;
    std::filesystem::path run_dir_;
    Registry registry_;
};

/// Analysis outputs derived from the capability results table.
struct AnalysisBundle {
    analysis::PerformanceMatrix matrix;
    std::vector<std::string> high_impact;
    analysis::CorrelationMatrix corpus_corr;
    analysis::ClusterTree corpus_tree;
    std::vector<std::string> corpus_excluded;
    analysis::RelationClassification corpus_relations;
    std::optional<analysis::CorrelationMatrix> capability_corr;
    std::optional<analysis::ClusterTree> capability_tree;
    std::vector<std::string> capability_excluded;
    std::optional<analysis::RelationClassification> capability_relations;
};

AnalysisBundle analyze_results(const std::vector<probes::ResultRow>& rows, const ExperimentConfig& cfg);

/// Top/bottom-k table: columns {capability, rank_type, rank, corpus, gamma};
/// "top" rows are the largest declines (most negative gamma).
std::string top_bottom_csv(const analysis::PerformanceMatrix& m, std::size_t k);

/// Cluster tree JSON plus the labels left out for UNDEFINED correlations.
nlohmann::json cluster_json(const analysis::ClusterTree& t, const std::vector<std::string>& excluded);

}  // namespace gracelab::store
