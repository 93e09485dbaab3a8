#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gracelab/corpus.hpp"

namespace gracelab::model {

/// Decoder-only transformer hyperparameters.
///
/// Architecture (pre-norm, no biases):
///   x = tok_embed[token] + pos_embed[position]
///   per layer: x += attn(rmsnorm(x)) ; x += mlp(rmsnorm(x))
///   logits = rmsnorm(x) * lm_head
/// The MLP is D -> 4D -> D with tanh-approximated GELU.
///
/// Parameter count, with V = vocab_size, C = context_len, D = embed_dim,
/// L = num_layers:
///   2*V*D + C*D + L*(12*D*D + 2*D) + D
struct ModelConfig {
    std::uint32_t vocab_size = 256;
    std::uint32_t embed_dim = 64;
    std::uint32_t num_layers = 2;
    std::uint32_t num_heads = 2;
    std::uint32_t context_len = 64;
    std::uint64_t seed = 0;

    bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& config);

/// A named slice of the flat parameter array, stored row-major.
struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
};

/// Segments in storage order:
///   tok_embed [V,D], pos_embed [C,D],
///   for each layer l: layer<l>.ln1_gain [1,D], layer<l>.attn_qkv [D,3D],
///     layer<l>.attn_out [D,D], layer<l>.ln2_gain [1,D],
///     layer<l>.mlp_in [D,4D], layer<l>.mlp_out [4D,D],
///   lnf_gain [1,D], lm_head [D,V]
std::vector<Segment> parameter_layout(const ModelConfig& config);

std::size_t parameter_count(const ModelConfig& config);

struct ModelState {
    ModelConfig config;
    std::vector<float> parameters;
    std::uint64_t step_counter = 0;

    [[nodiscard]] std::span<const float> segment(std::string_view name) const;
    [[nodiscard]] std::span<float> segment(std::string_view name);
};

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
    double learning_rate = 3e-4;
    std::uint32_t batch_size = 16;
    std::uint64_t max_steps = 1000;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Global L2 norm bound on the gradient; nullopt disables clipping.
    std::optional<double> grad_clip = 1.0;
    /// Seed of batch shuffling for procedures that sample batches.
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

ModelState init_model(const ModelConfig& config);

using Batch = std::span<const corpus::TokenSequence>;

/// Summed negative log-likelihood and the number of predicted tokens.
///
/// Every sequence is scored with a BOS token prepended, so each of its
/// tokens is a predicted position. Sequences longer than context_len are
/// cut into consecutive windows; each window restarts attention.
struct NllSum {
    double total = 0.0;
    std::size_t tokens = 0;

    [[nodiscard]] double mean() const noexcept { return total / static_cast<double>(tokens); }
};

NllSum nll_sum(const ModelState& model, Batch batch);

/// Mean per-token NLL over every predicted position of the batch.
double nll(const ModelState& model, Batch batch);

/// One NLL per token of `seq`, in order.
std::vector<double> token_nlls(const ModelState& model, const corpus::TokenSequence& seq);

/// Most likely token after `prefix` (read as BOS + prefix, keeping the last
/// context_len inputs). Lowest id wins a tie.
corpus::TokenId predict_next(const ModelState& model, std::span<const corpus::TokenId> prefix);

/// exp of the token-pooled mean NLL.
double perplexity(const ModelState& model, const corpus::DocumentSet& docs);

/// Mean NLL over the batch together with its gradient with respect to every
/// parameter, in storage order.
struct LossGradient {
    NllSum loss;
    std::vector<double> gradient;
};

LossGradient loss_and_gradient(const ModelState& model, Batch batch);

/// Mean NLL evaluated with explicit double-precision parameters; used by
/// finite-difference checks.
double nll_at(const ModelConfig& config, std::span<const double> parameters, Batch batch);

enum class Direction { Descent, Ascent };

struct StepStats {
    double loss = 0.0;           // batch mean NLL before the update
    double grad_norm = 0.0;      // before clipping
};

/// Gradient-based update rule with its moment buffers. One instance belongs
/// to one training loop; moments persist across calls.
class Optimizer {
public:
    explicit Optimizer(TrainConfig config);

    /// Computes the batch gradient and moves the parameters against it
    /// (Descent) or along it (Ascent). On a non-finite loss, gradient or
    /// updated parameter, throws NonFiniteError and leaves `model` and the
    /// moments untouched.
    StepStats step(ModelState& model, Batch batch, Direction direction);

    [[nodiscard]] const TrainConfig& config() const noexcept { return config_; }

private:
    TrainConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t t_ = 0;
};

StepStats descent_step(ModelState& model, Batch batch, Optimizer& optimizer);
StepStats ascent_step(ModelState& model, Batch batch, Optimizer& optimizer);

struct DomainPerplexity {
    std::string domain;
    double ppl = 0.0;
};

struct PretrainResult {
    ModelState model;
    std::vector<DomainPerplexity> baseline;
    std::vector<double> loss_trace;  // batch loss per step
};

/// Runs tc.max_steps descent steps over batches drawn from epochs of a
/// seeded shuffle of every sequence in `corpus`, then scores each domain.
PretrainResult pretrain(ModelState model, std::span<const corpus::DocumentSet> corpus, const TrainConfig& tc);

/// Cycles through seeded shuffles of a document set, one batch at a time.
class BatchSampler {
public:
    BatchSampler(const corpus::DocumentSet& docs, std::size_t batch_size, std::uint64_t seed);

    std::span<const corpus::TokenSequence> next();

private:
    void reshuffle();

    const corpus::DocumentSet* docs_;
    std::size_t batch_size_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::vector<corpus::TokenSequence> batch_;
};

// Checkpoints: <stem>.json manifest + <stem>.bin little-endian float32 array.
struct CheckpointManifest {
    ModelConfig config;
    std::uint64_t step_counter = 0;
    std::size_t parameter_count = 0;
    std::string content_sha256;
    nlohmann::json seed_lineage = nlohmann::json::object();
    std::vector<Segment> segments;
};

CheckpointManifest save_checkpoint(const ModelState& model,
                                   const std::filesystem::path& stem,
                                   const nlohmann::json& seed_lineage = nlohmann::json::object());

/// Loads and verifies the content hash against the manifest.
ModelState load_checkpoint(const std::filesystem::path& stem, CheckpointManifest* manifest = nullptr);

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path weights_path(const std::filesystem::path& stem);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace gracelab::model
