#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gracelab/corpus.hpp"
#include "gracelab/model.hpp"

namespace gracelab::probes {

struct CapabilityId {
    std::string category;
    std::string subtype;

    auto operator<=>(const CapabilityId&) const = default;
    bool operator==(const CapabilityId&) const = default;
};

enum class Metric { NegPpl, Accuracy };

std::string_view to_string(Metric m) noexcept;
Metric metric_from_string(std::string_view s);

struct CapabilityResult {
    CapabilityId capability;
    double score = 0.0;  // higher is better
    Metric metric = Metric::NegPpl;
};

/// What a capability measures: -PPL on held-out text of `domain`, or
/// next-token exact match on cloze items drawn from its grammar.
struct ProbeSpec {
    CapabilityId capability;
    std::string domain;
    Metric metric = Metric::NegPpl;
};

/// A grammar derivation cut just before the last token of a phrase. The
/// phrase is fixed by its first token, so `answer` is the only continuation
/// the grammar admits.
struct ClozeItem {
    std::vector<corpus::TokenId> prefix;
    corpus::TokenId answer = 0;

    bool operator==(const ClozeItem&) const = default;
};

struct Probe {
    ProbeSpec spec;
    corpus::DocumentSet heldout;     // NEG_PPL
    std::vector<ClozeItem> cloze;    // ACCURACY
};

struct ProbeConfig {
    std::uint32_t ppl_docs = 64;
    std::uint32_t cloze_items = 128;
    /// Longest cloze prefix; keep it below the model context length so
    /// the answer position sees the whole prefix.
    std::uint32_t max_prefix_len = 63;
    std::uint64_t seed = 0;
};

/// Materialized probes, sorted by capability.
struct ProbeSuite {
    std::vector<Probe> probes;
};

/// One NEG_PPL and one ACCURACY capability per domain. The category is the
/// connected component of the link graph (named after its smallest member)
/// and the subtypes are "<domain>/ppl" and "<domain>/cloze".
std::vector<ProbeSpec> default_probe_specs(const corpus::CorpusSpec& spec);

/// Generates held-out documents and cloze items from each referenced
/// domain's grammar with seeds derived from cfg.seed (so they do not
/// coincide with the training draw). Throws on an empty spec list, an
/// unknown domain or a repeated capability.
ProbeSuite build_suite(const corpus::CorpusSpec& spec, std::vector<ProbeSpec> specs, const ProbeConfig& cfg);

/// One result per probe, in suite order.
std::vector<CapabilityResult> evaluate_capabilities(const model::ModelState& model, const ProbeSuite& suite);

struct TokenLossDelta {
    corpus::TokenSequence tokens;
    std::vector<double> per_token_delta;
};

/// nll_after - nll_before at every predicted position of `seq`. Throws when
/// the two models differ in architecture.
TokenLossDelta token_loss_delta(const model::ModelState& before,
                                const model::ModelState& after,
                                const corpus::TokenSequence& seq);

double mean_delta(const TokenLossDelta& d);

// ---- file formats ----

/// One row of the capability results table.
struct ResultRow {
    std::string run_id;
    std::string corpus_unlearned;
    CapabilityResult result;
};

std::string results_to_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> results_from_csv(std::string_view text);

/// {"tokens": [...], "deltas": [...]} plus the domain tag.
nlohmann::json delta_to_json(const TokenLossDelta& d);
TokenLossDelta delta_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const ProbeSpec& p);
void from_json(const nlohmann::json& j, ProbeSpec& p);
void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

}  // namespace gracelab::probes
