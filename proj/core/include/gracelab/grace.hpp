#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gracelab/corpus.hpp"
#include "gracelab/model.hpp"

namespace gracelab::grace {

struct GraceConfig {
    /// Ascent steps between perplexity checks.
    std::uint32_t eval_interval = 10;
    /// Relative slack before the dev-set check starts a retraining round.
    double dev_tolerance = 0.005;
    /// Retraining instances drawn per round.
    std::uint32_t resample_size = 2048;
    /// The run ends once PPL(target_eval) >= endpoint_ratio * randomized baseline.
    double endpoint_ratio = 1.0;
    std::uint64_t max_ascent_steps = 5000;
    /// A retraining round gives up after this many multiples of eval_interval.
    std::uint32_t retrain_bound_factor = 10;
    /// Descent steps between dev-set checks inside a retraining round.
    std::uint32_t retrain_eval_interval = 1;
    model::TrainConfig ascent_tc = default_ascent();
    model::TrainConfig retrain_tc = {};
    corpus::RandomizerConfig randomizer = {};

    static model::TrainConfig default_ascent() {
        model::TrainConfig tc;
        tc.learning_rate = 3e-5;
        return tc;
    }

    [[nodiscard]] std::uint64_t retrain_step_bound() const noexcept {
        return static_cast<std::uint64_t>(retrain_bound_factor) * eval_interval;
    }
};

void validate(const GraceConfig& gc);

enum class Phase { Unlearn, Retrain, Eval };
enum class Outcome { EndpointReached, MaxSteps, Aborted };

std::string_view to_string(Phase p) noexcept;
std::string_view to_string(Outcome o) noexcept;
Phase phase_from_string(std::string_view s);
Outcome outcome_from_string(std::string_view s);

struct TraceEvent {
    /// Model step counter when the event was logged.
    std::uint64_t step = 0;
    Phase phase = Phase::Eval;
    /// Cumulative ascent steps at the time of the event.
    std::uint64_t ascent_steps = 0;
    std::optional<double> ppl_target;
    std::optional<double> ppl_dev;
    /// UNLEARN: mean batch loss over the block.
    std::optional<double> loss;
    /// RETRAIN: round number (1-based), descent steps taken, whether the
    /// dev set returned to its starting perplexity.
    std::optional<std::uint32_t> round;
    std::optional<std::uint64_t> retrain_steps;
    std::optional<bool> restored;
};

struct Baselines {
    double ppl_dev_0 = 0.0;
    double ppl_rand = 0.0;
    double ppl_target_0 = 0.0;
};

struct GraceTrace {
    std::vector<TraceEvent> events;
    Baselines baselines;
    Outcome outcome = Outcome::Aborted;
    std::string message;
};

/// PPL of the original model over the piece-shuffled target evaluation set.
double endpoint_baseline(const model::ModelState& original,
                         const corpus::DocumentSet& target_eval,
                         const corpus::RandomizerConfig& rcfg);

/// `k` sequences from `pool`: without replacement when the pool is large
/// enough, otherwise with replacement. The stream is keyed by (seed, round).
corpus::DocumentSet resample_retrain_set(const corpus::DocumentSet& pool,
                                         std::size_t k,
                                         std::uint32_t round,
                                         std::uint64_t seed);

/// Indices drawn by resample_retrain_set, exposed for tests.
std::vector<std::size_t> resample_indices(std::size_t pool_size, std::size_t k, std::uint32_t round,
                                          std::uint64_t seed);

struct GraceResult {
    model::ModelState model;
    GraceTrace trace;
};

/// Alternates blocks of gradient ascent on plan.unlearn_set with
/// retraining rounds on resampled plan.retrain_pool batches whenever the
/// dev-set perplexity rises above its starting value (plus tolerance).
/// Stops once the target evaluation perplexity reaches the randomized-text
/// baseline while the dev set is within tolerance, or the ascent budget is
/// exhausted. A non-finite step ends the run as Aborted with the last
/// finite model.
GraceResult run_grace(model::ModelState model, const corpus::SplitPlan& plan, const GraceConfig& gc);

/// Returns one message per violated trace invariant; empty when the trace
/// is legal.
std::vector<std::string> validate_trace(const GraceTrace& trace, const GraceConfig& gc);

/// Fraction of non-decreasing target-PPL transitions between consecutive
/// EVAL events that directly follow an UNLEARN block. 1.0 when there are
/// fewer than two such events.
double unlearn_monotone_fraction(const GraceTrace& trace);

// JSONL: one event per line followed by a footer record.
std::string to_jsonl(const GraceTrace& trace);
GraceTrace trace_from_jsonl(std::string_view text);
void write_trace(const GraceTrace& trace, const std::filesystem::path& path);
GraceTrace read_trace(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const GraceConfig& gc);
void from_json(const nlohmann::json& j, GraceConfig& gc);

}  // namespace gracelab::grace
