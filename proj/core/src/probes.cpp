#include "gracelab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "gracelab/csv.hpp"
#include "gracelab/error.hpp"
#include "gracelab/seeds.hpp"

namespace gracelab::probes {

namespace {

// Cloze generation gives up on a domain after this many documents without a
// usable phrase per requested item.
constexpr int kClozeAttempts = 64;

std::uint64_t probe_seed(std::uint64_t seed, const ProbeSpec& p) {
    return mix64(seed ^ hash_name(p.domain) ^ mix64(hash_name(p.capability.category + "\x1f" + p.capability.subtype)));
}

std::vector<ClozeItem> make_cloze(const corpus::DomainSpec& domain, std::uint32_t count, std::uint32_t max_prefix,
                                  std::uint64_t seed) {
    const corpus::DomainGrammar grammar(domain);
    std::mt19937_64 rng(seed);
    std::vector<ClozeItem> items;
    std::vector<std::size_t> bounds;
    int misses = 0;
    while (items.size() < count) {
        bounds.clear();
        const auto doc = grammar.sample_document(rng, &bounds);
        // Complete phrases of length >= 2 whose answer fits the prefix limit.
        // The final phrase may have been truncated, so it is never used.
        std::vector<std::pair<std::size_t, std::size_t>> usable;
        for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
            const std::size_t begin = bounds[k];
            const std::size_t end = bounds[k + 1];
            if (end - begin >= 2 && end - 1 <= max_prefix) {
                usable.emplace_back(begin, end);
            }
        }
        if (usable.empty()) {
            if (++misses > kClozeAttempts * static_cast<int>(count)) {
                throw InvalidArgument(fmt::format("cannot build cloze items for domain '{}': documents too short "
                                                  "or prefix limit {} too small",
                                                  domain.name, max_prefix));
            }
            continue;
        }
        std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
        const auto [begin, end] = usable[pick(rng)];
        ClozeItem item;
        item.prefix.assign(doc.tokens.begin(), doc.tokens.begin() + static_cast<std::ptrdiff_t>(end - 1));
        item.answer = doc.tokens[end - 1];
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace

std::string_view to_string(Metric m) noexcept {
    return m == Metric::NegPpl ? "NEG_PPL" : "ACCURACY";
}

Metric metric_from_string(std::string_view s) {
    if (s == "NEG_PPL") {
        return Metric::NegPpl;
    }
    if (s == "ACCURACY") {
        return Metric::Accuracy;
    }
    throw InvalidArgument(fmt::format("unknown metric '{}'", s));
}

std::vector<ProbeSpec> default_probe_specs(const corpus::CorpusSpec& spec) {
    // Union-find over domain indices.
    const std::size_t n = spec.domains.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    const auto find = [&](std::size_t i) {
        while (parent[i] != i) {
            i = parent[i] = parent[parent[i]];
        }
        return i;
    };
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) {
        index[spec.domains[i].name] = i;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& link : spec.domains[i].links) {
            const auto it = index.find(link.other);
            if (it != index.end() && link.weight > 0.0) {
                parent[find(i)] = find(it->second);
            }
        }
    }
    std::map<std::size_t, std::string> category;
    for (std::size_t i = 0; i < n; ++i) {
        auto& name = category[find(i)];
        if (name.empty() || spec.domains[i].name < name) {
            name = spec.domains[i].name;
        }
    }
    std::vector<ProbeSpec> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& d = spec.domains[i].name;
        const auto& cat = category[find(i)];
        out.push_back({{cat, d + "/ppl"}, d, Metric::NegPpl});
        out.push_back({{cat, d + "/cloze"}, d, Metric::Accuracy});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.capability < b.capability; });
    return out;
}

ProbeSuite build_suite(const corpus::CorpusSpec& spec, std::vector<ProbeSpec> specs, const ProbeConfig& cfg) {
    if (specs.empty()) {
        throw InvalidArgument("probe suite is empty");
    }
    if (cfg.ppl_docs == 0 || cfg.cloze_items == 0) {
        throw InvalidArgument("probe suite: ppl_docs and cloze_items must be positive");
    }
    std::sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) { return a.capability < b.capability; });
    for (std::size_t i = 1; i < specs.size(); ++i) {
        if (specs[i].capability == specs[i - 1].capability) {
            throw InvalidArgument(fmt::format("probe suite: capability {}/{} listed twice",
                                              specs[i].capability.category, specs[i].capability.subtype));
        }
    }
    ProbeSuite suite;
    for (auto& p : specs) {
        if (!spec.has_domain(p.domain)) {
            throw InvalidArgument(fmt::format("probe {}/{} references unknown domain '{}'", p.capability.category,
                                              p.capability.subtype, p.domain));
        }
        Probe probe{p, {}, {}};
        const auto& domain = spec.domain(p.domain);
        const auto seed = probe_seed(cfg.seed, p);
        if (p.metric == Metric::NegPpl) {
            auto held = domain;
            held.doc_count = cfg.ppl_docs;
            probe.heldout = corpus::generate_domain(held, seed);
        } else {
            probe.cloze = make_cloze(domain, cfg.cloze_items, cfg.max_prefix_len, seed);
        }
        suite.probes.push_back(std::move(probe));
    }
    return suite;
}

std::vector<CapabilityResult> evaluate_capabilities(const model::ModelState& model, const ProbeSuite& suite) {
    if (suite.probes.empty()) {
        throw InvalidArgument("evaluate_capabilities: empty suite");
    }
    std::vector<CapabilityResult> out;
    out.reserve(suite.probes.size());
    for (const auto& probe : suite.probes) {
        CapabilityResult r{probe.spec.capability, 0.0, probe.spec.metric};
        if (probe.spec.metric == Metric::NegPpl) {
            r.score = -model::perplexity(model, probe.heldout);
        } else {
            if (probe.cloze.empty()) {
                throw InvalidArgument("evaluate_capabilities: accuracy probe without cloze items");
            }
            std::size_t hits = 0;
            for (const auto& item : probe.cloze) {
                hits += model::predict_next(model, item.prefix) == item.answer ? 1 : 0;
            }
            r.score = static_cast<double>(hits) / static_cast<double>(probe.cloze.size());
        }
        if (!std::isfinite(r.score)) {
            throw NonFiniteError(fmt::format("capability {}/{} scored a non-finite value", r.capability.category,
                                             r.capability.subtype));
        }
        out.push_back(r);
    }
    return out;
}

TokenLossDelta token_loss_delta(const model::ModelState& before,
                                const model::ModelState& after,
                                const corpus::TokenSequence& seq) {
    auto a = before.config;
    auto b = after.config;
    a.seed = b.seed = 0;
    if (!(a == b) || before.parameters.size() != after.parameters.size()) {
        throw InvalidArgument("token_loss_delta: models differ in architecture");
    }
    const auto nb = model::token_nlls(before, seq);
    const auto na = model::token_nlls(after, seq);
    TokenLossDelta d{seq, std::vector<double>(nb.size())};
    for (std::size_t i = 0; i < nb.size(); ++i) {
        d.per_token_delta[i] = na[i] - nb[i];
    }
    return d;
}

double mean_delta(const TokenLossDelta& d) {
    if (d.per_token_delta.empty()) {
        throw InvalidArgument("mean_delta: no positions");
    }
    return std::accumulate(d.per_token_delta.begin(), d.per_token_delta.end(), 0.0) /
           static_cast<double>(d.per_token_delta.size());
}

std::string results_to_csv(const std::vector<ResultRow>& rows) {
    csv::Table t{{"run_id", "corpus_unlearned", "category", "subtype", "metric", "score"}, {}};
    for (const auto& r : rows) {
        t.rows.push_back({r.run_id, r.corpus_unlearned, r.result.capability.category, r.result.capability.subtype,
                          std::string(to_string(r.result.metric)), csv::format_double(r.result.score)});
    }
    return csv::to_string(t);
}

std::vector<ResultRow> results_from_csv(std::string_view text) {
    const auto t = csv::parse(text);
    const auto ir = t.column("run_id");
    const auto ic = t.column("corpus_unlearned");
    const auto ik = t.column("category");
    const auto is = t.column("subtype");
    const auto im = t.column("metric");
    const auto iv = t.column("score");
    std::vector<ResultRow> out;
    for (const auto& row : t.rows) {
        out.push_back({row[ir], row[ic], {{row[ik], row[is]}, csv::parse_double(row[iv]), metric_from_string(row[im])}});
    }
    return out;
}

nlohmann::json delta_to_json(const TokenLossDelta& d) {
    return {{"domain", d.tokens.domain}, {"tokens", d.tokens.tokens}, {"deltas", d.per_token_delta}};
}

TokenLossDelta delta_from_json(const nlohmann::json& j) {
    TokenLossDelta d;
    d.tokens.domain = j.value("domain", std::string());
    d.tokens.tokens = j.at("tokens").get<std::vector<corpus::TokenId>>();
    d.per_token_delta = j.at("deltas").get<std::vector<double>>();
    if (d.tokens.tokens.size() != d.per_token_delta.size()) {
        throw InvalidArgument("token delta: tokens and deltas differ in length");
    }
    return d;
}

void to_json(nlohmann::json& j, const ProbeSpec& p) {
    j = {{"category", p.capability.category},
         {"subtype", p.capability.subtype},
         {"domain", p.domain},
         {"metric", to_string(p.metric)}};
}

void from_json(const nlohmann::json& j, ProbeSpec& p) {
    p.capability.category = j.at("category").get<std::string>();
    p.capability.subtype = j.at("subtype").get<std::string>();
    p.domain = j.at("domain").get<std::string>();
    p.metric = metric_from_string(j.at("metric").get<std::string>());
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
    j = {{"ppl_docs", c.ppl_docs}, {"cloze_items", c.cloze_items}, {"max_prefix_len", c.max_prefix_len}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
    const ProbeConfig defaults = c;
    c.ppl_docs = j.value("ppl_docs", defaults.ppl_docs);
    c.cloze_items = j.value("cloze_items", defaults.cloze_items);
    c.max_prefix_len = j.value("max_prefix_len", defaults.max_prefix_len);
    c.seed = j.value("seed", defaults.seed);
}

}  // namespace gracelab::probes
