#include <algorithm>
#include <cctype>
#include <set>

#include <fmt/format.h>

#include "gracelab/error.hpp"
#include "gracelab/io.hpp"
#include "gracelab/seeds.hpp"
#include "gracelab/store.hpp"

namespace gracelab::store {

namespace {

const std::set<std::string> kTopLevelKeys{"corpus",  "model",         "pretrain",   "grace",       "probes", "analysis",
                                          "targets", "unlearn_count", "delta_docs", "master_seed", "output_dir"};

// Recursive object merge. Unlike RFC 7396 merge-patch, a null value replaces
// the default instead of deleting the key (grad_clip uses null to disable).
void overlay(nlohmann::json& base, const nlohmann::json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (base.contains(it.key())) {
            overlay(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

corpus::DomainSpec example_domain(std::string name, corpus::TokenId begin, double shared,
                                  std::vector<corpus::DomainLink> links) {
    corpus::DomainSpec d;
    d.name = std::move(name);
    d.vocab_block = {begin, begin + 24};
    d.shared_fraction = shared;
    d.links = std::move(links);
    d.doc_count = 1000;
    d.min_doc_length = 24;
    d.max_doc_length = 48;
    return d;
}

}  // namespace

corpus::CorpusSpec example_corpus() {
    corpus::CorpusSpec cs;
    cs.domains = {
        example_domain("target", 2, 0.4, {{"strong", 0.6, {}, 0}, {"weak", 0.2, {}, 0}}),
        example_domain("strong", 26, 0.6, {}),
        example_domain("weak", 50, 0.2, {}),
        example_domain("unlinked", 74, 0.0, {}),
    };
    return cs;
}

model::TrainConfig ExperimentConfig::default_pretrain() {
    model::TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.max_steps = 1500;
    return tc;
}

grace::GraceConfig ExperimentConfig::default_grace() {
    grace::GraceConfig gc;
    gc.resample_size = 512;
    gc.max_ascent_steps = 3000;
    return gc;
}

void apply_seed_fanout(ExperimentConfig& cfg) {
    const auto m = cfg.master_seed;
    cfg.model.seed = derive_seed(m, SeedStream::ModelInit);
    cfg.pretrain.seed = derive_seed(m, SeedStream::Pretrain);
    cfg.probes.seed = derive_seed(m, SeedStream::Probes);
    // Per-target streams (splits, randomizer, ascent, retrain) are derived
    // by the pipeline from the target index; the nested grace seeds hold
    // the index-0 values for reference.
    cfg.grace.randomizer.seed = derive_seed(m, SeedStream::Randomizer, 0);
    cfg.grace.ascent_tc.seed = derive_seed(m, SeedStream::GraceAscent, 0);
    cfg.grace.retrain_tc.seed = derive_seed(m, SeedStream::GraceRetrain, 0);
}

std::vector<probes::ProbeSpec> probe_specs(const ExperimentConfig& cfg) {
    return cfg.probe_specs.empty() ? probes::default_probe_specs(cfg.corpus) : cfg.probe_specs;
}

analysis::Taxonomy taxonomy(const ExperimentConfig& cfg) {
    analysis::Taxonomy t;
    for (const auto& p : probe_specs(cfg)) {
        t[p.capability.subtype] = {p.capability.category, p.capability.subtype};
    }
    return t;
}

void validate(const ExperimentConfig& cfg) {
    model::validate(cfg.model);
    model::validate(cfg.pretrain);
    grace::validate(cfg.grace);
    analysis::validate(cfg.analysis.thresholds);
    if (cfg.model.vocab_size != cfg.corpus.vocab_size) {
        throw InvalidArgument("config: model vocab_size must equal the resolved corpus vocabulary");
    }
    if (cfg.targets.empty()) {
        throw InvalidArgument("config: targets must name at least one domain");
    }
    std::set<std::string> seen;
    for (const auto& t : cfg.targets) {
        if (!cfg.corpus.has_domain(t)) {
            throw InvalidArgument(fmt::format("config: target '{}' is not a domain", t));
        }
        if (!seen.insert(t).second) {
            throw InvalidArgument(fmt::format("config: target '{}' listed twice", t));
        }
        if (cfg.corpus.domain(t).doc_count < cfg.unlearn_count + 1) {
            throw InvalidArgument(fmt::format("config: target '{}' has {} documents, need more than unlearn_count {}", t,
                                              cfg.corpus.domain(t).doc_count, cfg.unlearn_count));
        }
    }
    for (const auto& d : cfg.corpus.domains) {
        const bool safe = !d.name.empty() && d.name != "none" && d.name != "." && d.name != ".." &&
                          std::all_of(d.name.begin(), d.name.end(), [](unsigned char c) {
                              return std::isalnum(c) != 0 || c == '_' || c == '-' || c == '.';
                          });
        if (!safe) {
            throw InvalidArgument(fmt::format(
                "config: domain name '{}' must use letters, digits, '_', '-' or '.' and must not be 'none'", d.name));
        }
    }
    if (cfg.corpus.domains.size() < 2) {
        throw InvalidArgument("config: need at least two domains");
    }
    if (cfg.unlearn_count == 0) {
        throw InvalidArgument("config: unlearn_count must be positive");
    }
    if (cfg.delta_docs == 0) {
        throw InvalidArgument("config: delta_docs must be positive");
    }
    if (cfg.probes.max_prefix_len >= cfg.model.context_len) {
        throw InvalidArgument(fmt::format("config: probes.max_prefix_len {} must be below context_len {}",
                                          cfg.probes.max_prefix_len, cfg.model.context_len));
    }
    if (!(cfg.analysis.high_impact_fraction >= 0.0 && cfg.analysis.high_impact_fraction < 1.0)) {
        throw InvalidArgument("config: high_impact_fraction must lie in [0, 1)");
    }
    if (cfg.analysis.top_k == 0) {
        throw InvalidArgument("config: top_k must be positive");
    }
    std::set<std::string> subtypes;
    for (const auto& p : probe_specs(cfg)) {
        if (!cfg.corpus.has_domain(p.domain)) {
            throw InvalidArgument(fmt::format("config: probe '{}' references unknown domain '{}'", p.capability.subtype,
                                              p.domain));
        }
        if (!subtypes.insert(p.capability.subtype).second) {
            throw InvalidArgument(fmt::format("config: probe subtype '{}' is not unique", p.capability.subtype));
        }
    }
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json model = cfg.model;
    model.erase("vocab_size");
    nlohmann::json probes = cfg.probes;
    probes["specs"] = cfg.probe_specs;
    return {{"corpus", cfg.corpus},
            {"model", model},
            {"pretrain", cfg.pretrain},
            {"grace", cfg.grace},
            {"probes", probes},
            {"analysis",
             {{"correlated_min", cfg.analysis.thresholds.correlated_min},
              {"complementary_max", cfg.analysis.thresholds.complementary_max},
              {"orthogonal_band", cfg.analysis.thresholds.orthogonal_band},
              {"high_impact_fraction", cfg.analysis.high_impact_fraction},
              {"top_k", cfg.analysis.top_k}}},
            {"targets", cfg.targets},
            {"unlearn_count", cfg.unlearn_count},
            {"delta_docs", cfg.delta_docs},
            {"master_seed", cfg.master_seed},
            {"output_dir", cfg.output_dir.string()}};
}

nlohmann::json default_config_json() {
    return config_to_json(ExperimentConfig{});
}

ExperimentConfig config_from_json(const nlohmann::json& user, std::optional<std::uint64_t> seed_override) {
    if (!user.is_object()) {
        throw InvalidArgument("config: top level must be an object");
    }
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (!kTopLevelKeys.contains(it.key())) {
            throw InvalidArgument(fmt::format("config: unknown key '{}'", it.key()));
        }
    }
    if (user.contains("model") && user.at("model").contains("vocab_size")) {
        throw InvalidArgument("config: model.vocab_size is derived from the corpus and cannot be set");
    }
    auto j = default_config_json();
    // A user corpus replaces the example one wholesale.
    if (user.contains("corpus")) {
        j["corpus"] = nlohmann::json::object();
    }
    overlay(j, user);

    try {
        ExperimentConfig cfg;
        cfg.corpus = j.at("corpus").get<corpus::CorpusSpec>();
        cfg.model = j.at("model").get<model::ModelConfig>();
        cfg.pretrain = j.at("pretrain").get<model::TrainConfig>();
        cfg.grace = j.at("grace").get<grace::GraceConfig>();
        cfg.probes = j.at("probes").get<probes::ProbeConfig>();
        cfg.probe_specs = j.at("probes").value("specs", nlohmann::json::array()).get<std::vector<probes::ProbeSpec>>();
        const auto& a = j.at("analysis");
        cfg.analysis.thresholds.correlated_min = a.at("correlated_min").get<double>();
        cfg.analysis.thresholds.complementary_max = a.at("complementary_max").get<double>();
        cfg.analysis.thresholds.orthogonal_band = a.at("orthogonal_band").get<double>();
        cfg.analysis.high_impact_fraction = a.at("high_impact_fraction").get<double>();
        cfg.analysis.top_k = a.at("top_k").get<std::uint32_t>();
        cfg.targets = j.at("targets").get<std::vector<std::string>>();
        cfg.unlearn_count = j.at("unlearn_count").get<std::uint32_t>();
        cfg.delta_docs = j.at("delta_docs").get<std::uint32_t>();
        cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
        cfg.output_dir = j.at("output_dir").get<std::string>();
        if (seed_override) {
            cfg.master_seed = *seed_override;
        }
        cfg.corpus = corpus::resolve_corpus(cfg.corpus, derive_seed(cfg.master_seed, SeedStream::Grammar));
        cfg.model.vocab_size = cfg.corpus.vocab_size;
        apply_seed_fanout(cfg);
        validate(cfg);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(fmt::format("config: {}", e.what()));
    }
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(fmt::format("config {}: {}", path.string(), e.what()));
    }
    return config_from_json(j, seed_override);
}

std::string config_hash(const ExperimentConfig& cfg) {
    auto j = config_to_json(cfg);
    j.erase("output_dir");
    return sha256_hex(j.dump());
}

std::string run_id(const ExperimentConfig& cfg) {
    return "run-" + config_hash(cfg).substr(0, 12);
}

}  // namespace gracelab::store
