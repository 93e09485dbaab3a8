#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gracelab/corpus.hpp"
#include "gracelab/model.hpp"

namespace gracelab::model::detail {

struct LayerOffsets {
    std::size_t ln1 = 0;
    std::size_t qkv = 0;
    std::size_t attn_out = 0;
    std::size_t ln2 = 0;
    std::size_t mlp_in = 0;
    std::size_t mlp_out = 0;
};

struct Offsets {
    std::size_t tok = 0;
    std::size_t pos = 0;
    std::vector<LayerOffsets> layers;
    std::size_t lnf = 0;
    std::size_t head = 0;
    std::size_t total = 0;
};

Offsets offsets(const ModelConfig& config);

/// Scores one window: `inputs[t]` predicts `targets[t]`, inputs.size() <=
/// context_len. Returns the summed NLL. When `grad` is non-null the
/// gradient of that sum is accumulated into it; when `per_token` is
/// non-null one NLL per position is appended; `argmax` likewise receives
/// the most likely token per position (lowest id on ties).
double window_forward_backward(const ModelConfig& config,
                               const Offsets& off,
                               std::span<const double> params,
                               std::span<const corpus::TokenId> inputs,
                               std::span<const corpus::TokenId> targets,
                               std::span<double> grad,
                               std::vector<double>* per_token,
                               std::vector<corpus::TokenId>* argmax = nullptr);

/// Applies `fn(inputs, targets)` to every window of `seq` (BOS prepended).
template <class Fn>
void for_each_window(const corpus::TokenSequence& seq, std::size_t context_len, std::vector<corpus::TokenId>& buf,
                     Fn&& fn) {
    buf.clear();
    buf.reserve(seq.tokens.size() + 1);
    buf.push_back(corpus::kBosToken);
    buf.insert(buf.end(), seq.tokens.begin(), seq.tokens.end());
    const std::size_t predicted = seq.tokens.size();
    for (std::size_t start = 0; start < predicted; start += context_len) {
        const std::size_t len = std::min(context_len, predicted - start);
        fn(std::span<const corpus::TokenId>(buf.data() + start, len),
           std::span<const corpus::TokenId>(buf.data() + start + 1, len));
    }
}

}  // namespace gracelab::model::detail
