#include "gracelab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "gracelab/error.hpp"
#include "gracelab/seeds.hpp"
#include "transformer.hpp"

namespace gracelab::model {

namespace {

std::vector<double> widen(std::span<const float> p) {
    return {p.begin(), p.end()};
}

NllSum score(const ModelConfig& config, std::span<const double> params, Batch batch, std::span<double> grad) {
    if (batch.empty()) {
        throw InvalidArgument("empty batch");
    }
    const auto off = detail::offsets(config);
    NllSum out;
    std::vector<corpus::TokenId> buf;
    for (const auto& seq : batch) {
        if (seq.tokens.empty()) {
            throw InvalidArgument("empty sequence in batch");
        }
        for (auto t : seq.tokens) {
            if (t >= config.vocab_size) {
                throw InvalidArgument(fmt::format("token id {} outside vocabulary of {}", t, config.vocab_size));
            }
        }
        detail::for_each_window(seq, config.context_len, buf, [&](auto in, auto tgt) {
            out.total += detail::window_forward_backward(config, off, params, in, tgt, grad, nullptr);
            out.tokens += in.size();
        });
    }
    return out;
}

}  // namespace

void validate(const ModelConfig& c) {
    if (c.vocab_size < corpus::kFirstFreeToken + 1 || c.embed_dim == 0 || c.num_layers == 0 || c.num_heads == 0) {
        throw InvalidArgument("model config: sizes must be positive and vocab_size > 2");
    }
    if (c.embed_dim % c.num_heads != 0) {
        throw InvalidArgument(fmt::format("model config: embed_dim {} not divisible by num_heads {}", c.embed_dim,
                                          c.num_heads));
    }
    if (c.context_len < 2) {
        throw InvalidArgument("model config: context_len must be >= 2");
    }
}

void validate(const TrainConfig& c) {
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
        throw InvalidArgument("train config: learning_rate must be positive");
    }
    if (c.batch_size == 0) {
        throw InvalidArgument("train config: batch_size must be positive");
    }
    if (c.grad_clip && !(*c.grad_clip > 0.0)) {
        throw InvalidArgument("train config: grad_clip must be positive");
    }
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.eps > 0.0)) {
        throw InvalidArgument("train config: invalid Adam constants");
    }
}

std::vector<Segment> parameter_layout(const ModelConfig& c) {
    validate(c);
    const auto off = detail::offsets(c);
    const std::size_t V = c.vocab_size;
    const std::size_t D = c.embed_dim;
    std::vector<Segment> segs{{"tok_embed", off.tok, V, D}, {"pos_embed", off.pos, c.context_len, D}};
    for (std::size_t l = 0; l < off.layers.size(); ++l) {
        const auto& lo = off.layers[l];
        const auto name = [l](std::string_view part) { return fmt::format("layer{}.{}", l, part); };
        segs.push_back({name("ln1_gain"), lo.ln1, 1, D});
        segs.push_back({name("attn_qkv"), lo.qkv, D, 3 * D});
        segs.push_back({name("attn_out"), lo.attn_out, D, D});
        segs.push_back({name("ln2_gain"), lo.ln2, 1, D});
        segs.push_back({name("mlp_in"), lo.mlp_in, D, 4 * D});
        segs.push_back({name("mlp_out"), lo.mlp_out, 4 * D, D});
    }
    segs.push_back({"lnf_gain", off.lnf, 1, D});
    segs.push_back({"lm_head", off.head, D, V});
    return segs;
}

std::size_t parameter_count(const ModelConfig& c) {
    validate(c);
    return detail::offsets(c).total;
}

std::span<const float> ModelState::segment(std::string_view name) const {
    for (const auto& s : parameter_layout(config)) {
        if (s.name == name) {
            return std::span<const float>(parameters).subspan(s.offset, s.size());
        }
    }
    throw InvalidArgument(fmt::format("no parameter segment '{}'", name));
}

std::span<float> ModelState::segment(std::string_view name) {
    for (const auto& s : parameter_layout(config)) {
        if (s.name == name) {
            return std::span<float>(parameters).subspan(s.offset, s.size());
        }
    }
    throw InvalidArgument(fmt::format("no parameter segment '{}'", name));
}

ModelState init_model(const ModelConfig& config) {
    const auto layout = parameter_layout(config);
    ModelState m{config, std::vector<float>(parameter_count(config), 0.0f), 0};
    std::mt19937_64 rng(config.seed);
    const double D = config.embed_dim;
    const double residual_scale = 1.0 / std::sqrt(2.0 * config.num_layers);
    for (const auto& s : layout) {
        auto dst = std::span<float>(m.parameters).subspan(s.offset, s.size());
        double stddev = 0.0;
        if (s.name.ends_with("_gain")) {
            std::fill(dst.begin(), dst.end(), 1.0f);
            continue;
        }
        if (s.name == "tok_embed" || s.name == "pos_embed") {
            stddev = 0.1;
        } else if (s.name.ends_with("attn_out") || s.name.ends_with("mlp_out")) {
            stddev = residual_scale / std::sqrt(static_cast<double>(s.rows));
        } else {
            stddev = 1.0 / std::sqrt(s.name == "lm_head" ? D : static_cast<double>(s.rows));
        }
        std::normal_distribution<double> normal(0.0, stddev);
        for (auto& v : dst) {
            v = static_cast<float>(normal(rng));
        }
    }
    return m;
}

NllSum nll_sum(const ModelState& model, Batch batch) {
    const auto params = widen(model.parameters);
    return score(model.config, params, batch, {});
}

double nll(const ModelState& model, Batch batch) {
    return nll_sum(model, batch).mean();
}

double nll_at(const ModelConfig& config, std::span<const double> parameters, Batch batch) {
    return score(config, parameters, batch, {}).mean();
}

std::vector<double> token_nlls(const ModelState& model, const corpus::TokenSequence& seq) {
    if (seq.tokens.empty()) {
        throw InvalidArgument("token_nlls: empty sequence");
    }
    const auto params = widen(model.parameters);
    const auto off = detail::offsets(model.config);
    std::vector<double> out;
    out.reserve(seq.tokens.size());
    std::vector<corpus::TokenId> buf;
    detail::for_each_window(seq, model.config.context_len, buf, [&](auto in, auto tgt) {
        detail::window_forward_backward(model.config, off, params, in, tgt, {}, &out);
    });
    return out;
}

corpus::TokenId predict_next(const ModelState& model, std::span<const corpus::TokenId> prefix) {
    std::vector<corpus::TokenId> inputs;
    inputs.reserve(prefix.size() + 1);
    inputs.push_back(corpus::kBosToken);
    inputs.insert(inputs.end(), prefix.begin(), prefix.end());
    const std::size_t keep = std::min<std::size_t>(inputs.size(), model.config.context_len);
    const std::span<const corpus::TokenId> window(inputs.data() + inputs.size() - keep, keep);
    for (auto t : window) {
        if (t >= model.config.vocab_size) {
            throw InvalidArgument(fmt::format("predict_next: token {} outside vocabulary", t));
        }
    }
    const std::vector<corpus::TokenId> targets(keep, corpus::kBosToken);
    std::vector<corpus::TokenId> best;
    detail::window_forward_backward(model.config, detail::offsets(model.config), widen(model.parameters), window,
                                    targets, {}, nullptr, &best);
    return best.back();
}

double perplexity(const ModelState& model, const corpus::DocumentSet& docs) {
    if (docs.empty()) {
        throw InvalidArgument("perplexity: empty document set");
    }
    return std::exp(nll(model, docs.sequences));
}

LossGradient loss_and_gradient(const ModelState& model, Batch batch) {
    const auto params = widen(model.parameters);
    LossGradient out;
    out.gradient.assign(params.size(), 0.0);
    out.loss = score(model.config, params, batch, out.gradient);
    const double inv = 1.0 / static_cast<double>(out.loss.tokens);
    for (auto& g : out.gradient) {
        g *= inv;
    }
    return out;
}

Optimizer::Optimizer(TrainConfig config) : config_(config) {
    validate(config_);
}

StepStats Optimizer::step(ModelState& model, Batch batch, Direction direction) {
    auto lg = loss_and_gradient(model, batch);
    const double loss = lg.loss.mean();
    double sq = 0.0;
    for (double g : lg.gradient) {
        sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(loss) || !std::isfinite(norm)) {
        throw NonFiniteError(fmt::format("non-finite loss or gradient at step {}", model.step_counter));
    }
    double clip = 1.0;
    if (config_.grad_clip && norm > *config_.grad_clip) {
        clip = *config_.grad_clip / norm;
    }
    const double sign = direction == Direction::Descent ? 1.0 : -1.0;
    const double lr = config_.learning_rate;

    std::vector<float> next(model.parameters.size());
    std::vector<double> m;
    std::vector<double> v;
    if (config_.optimizer == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double g = lg.gradient[i] * clip;
            next[i] = static_cast<float>(model.parameters[i] - lr * sign * g);
        }
    } else {
        m = m_.empty() ? std::vector<double>(next.size(), 0.0) : m_;
        v = v_.empty() ? std::vector<double>(next.size(), 0.0) : v_;
        const std::uint64_t t = t_ + 1;
        const double b1 = config_.beta1;
        const double b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double g = sign * lg.gradient[i] * clip;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
            next[i] = static_cast<float>(model.parameters[i] - update);
        }
    }
    if (!std::all_of(next.begin(), next.end(), [](float x) { return std::isfinite(x); })) {
        throw NonFiniteError(fmt::format("non-finite parameters after step {}", model.step_counter));
    }
    if (config_.optimizer == OptimizerKind::Adam) {
        m_ = std::move(m);
        v_ = std::move(v);
        ++t_;
    }
    model.parameters = std::move(next);
    ++model.step_counter;
    return {loss, norm};
}

StepStats descent_step(ModelState& model, Batch batch, Optimizer& optimizer) {
    return optimizer.step(model, batch, Direction::Descent);
}

StepStats ascent_step(ModelState& model, Batch batch, Optimizer& optimizer) {
    return optimizer.step(model, batch, Direction::Ascent);
}

BatchSampler::BatchSampler(const corpus::DocumentSet& docs, std::size_t batch_size, std::uint64_t seed)
    : docs_(&docs), batch_size_(batch_size), rng_(seed) {
    if (docs.empty()) {
        throw InvalidArgument("BatchSampler: empty document set");
    }
    if (batch_size == 0) {
        throw InvalidArgument("BatchSampler: batch_size must be positive");
    }
    order_.resize(docs.size());
    reshuffle();
}

void BatchSampler::reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
}

std::span<const corpus::TokenSequence> BatchSampler::next() {
    batch_.clear();
    while (batch_.size() < batch_size_) {
        if (cursor_ == order_.size()) {
            reshuffle();
        }
        batch_.push_back(docs_->sequences[order_[cursor_++]]);
        if (batch_.size() == docs_->size()) {
            break;
        }
    }
    return batch_;
}

PretrainResult pretrain(ModelState model, std::span<const corpus::DocumentSet> corpus, const TrainConfig& tc) {
    if (corpus.empty()) {
        throw InvalidArgument("pretrain: empty corpus");
    }
    corpus::DocumentSet pooled{std::string(corpus::kMixedDomain), {}};
    for (const auto& set : corpus) {
        if (set.empty()) {
            throw InvalidArgument(fmt::format("pretrain: domain '{}' has no documents", set.domain));
        }
        pooled.sequences.insert(pooled.sequences.end(), set.sequences.begin(), set.sequences.end());
    }

    PretrainResult result{std::move(model), {}, {}};
    if (tc.max_steps > 0) {
        validate(tc);
        Optimizer opt(tc);
        BatchSampler sampler(pooled, tc.batch_size, tc.seed);
        result.loss_trace.reserve(tc.max_steps);
        for (std::uint64_t s = 0; s < tc.max_steps; ++s) {
            result.loss_trace.push_back(descent_step(result.model, sampler.next(), opt).loss);
        }
    }
    for (const auto& set : corpus) {
        result.baseline.push_back({set.domain, perplexity(result.model, set)});
    }
    return result;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},     {"num_layers", c.num_layers},
         {"num_heads", c.num_heads},   {"context_len", c.context_len}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c = {};
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.context_len = j.value("context_len", c.context_len);
    c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"max_steps", c.max_steps},
         {"optimizer", c.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"},
         {"adam_beta1", c.beta1},
         {"adam_beta2", c.beta2},
         {"adam_eps", c.eps},
         {"grad_clip", c.grad_clip ? nlohmann::json(*c.grad_clip) : nlohmann::json(nullptr)},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig defaults = c;
    c.learning_rate = j.value("learning_rate", defaults.learning_rate);
    c.batch_size = j.value("batch_size", defaults.batch_size);
    c.max_steps = j.value("max_steps", defaults.max_steps);
    const auto opt = j.value("optimizer", std::string(defaults.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"));
    if (opt == "sgd") {
        c.optimizer = OptimizerKind::Sgd;
    } else if (opt == "adam") {
        c.optimizer = OptimizerKind::Adam;
    } else {
        throw InvalidArgument(fmt::format("unknown optimizer '{}'", opt));
    }
    c.beta1 = j.value("adam_beta1", defaults.beta1);
    c.beta2 = j.value("adam_beta2", defaults.beta2);
    c.eps = j.value("adam_eps", defaults.eps);
    if (j.contains("grad_clip")) {
        c.grad_clip = j.at("grad_clip").is_null() ? std::nullopt : std::optional<double>(j.at("grad_clip").get<double>());
    }
    c.seed = j.value("seed", defaults.seed);
}

}  // namespace gracelab::model
