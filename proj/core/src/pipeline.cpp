#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gracelab/csv.hpp"
#include "gracelab/error.hpp"
#include "gracelab/io.hpp"
#include "gracelab/seeds.hpp"
#include "gracelab/store.hpp"
#include "store_internal.hpp"

namespace gracelab::store {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kBeforeTag = "none";

std::string stage_label(Stage s, const std::optional<std::string>& target) {
    return target ? fmt::format("{}({})", to_string(s), *target) : std::string(to_string(s));
}

std::string corpus_file(const std::string& domain) {
    return "corpus/" + domain + ".jsonl";
}

const std::string kPretrained = "checkpoints/pretrained";

std::string unlearned_stem(const std::string& target) {
    return "checkpoints/unlearned-" + target;
}

std::string trace_file(const std::string& target) {
    return "traces/" + target + ".jsonl";
}

std::string grace_summary_file(const std::string& target) {
    return "results/grace-" + target + ".json";
}

std::string delta_file(const std::string& target, const std::string& domain) {
    return "results/token_deltas/" + target + "/" + domain + ".json";
}

const std::string kCapabilities = "results/capabilities.csv";
const std::string kDomainPpl = "results/domain_ppl.csv";
const std::string kDeltaMeans = "results/token_delta_means.csv";

std::vector<std::string> checkpoint_files(const std::string& stem) {
    return {stem + ".bin", stem + ".json"};
}

std::size_t target_index(const ExperimentConfig& cfg, const std::string& target) {
    const auto it = std::find(cfg.targets.begin(), cfg.targets.end(), target);
    if (it == cfg.targets.end()) {
        throw InvalidArgument(fmt::format("'{}' is not a configured target", target));
    }
    return static_cast<std::size_t>(it - cfg.targets.begin());
}

std::string write_text(const fs::path& run_dir, const std::string& rel, std::string_view content) {
    write_file_atomic(run_dir / rel, content);
    return rel;
}

std::string write_json(const fs::path& run_dir, const std::string& rel, const nlohmann::json& j) {
    return write_text(run_dir, rel, j.dump(2) + "\n");
}

std::vector<corpus::DocumentSet> load_corpus(const fs::path& run_dir, const ExperimentConfig& cfg) {
    std::vector<corpus::DocumentSet> sets;
    for (const auto& d : cfg.corpus.domains) {
        sets.push_back(corpus::read_jsonl(run_dir / corpus_file(d.name)));
    }
    return sets;
}

// Labels whose own correlation is UNDEFINED are dropped before clustering.
std::pair<analysis::CorrelationMatrix, std::vector<std::string>> defined_part(const analysis::CorrelationMatrix& c) {
    std::vector<std::size_t> keep;
    std::vector<std::string> excluded;
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        const bool ok = std::all_of(c.r[i].begin(), c.r[i].end(), [](const auto& v) { return v.has_value(); });
        (ok ? static_cast<void>(keep.push_back(i)) : excluded.push_back(c.labels[i]));
    }
    // Removing a zero-variance label clears the UNDEFINED entries it caused
    // in other rows; re-admit rows that are defined on the kept subset.
    keep.clear();
    std::vector<bool> dropped(c.labels.size(), false);
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        dropped[i] = !c.r[i][i].has_value();
    }
    excluded.clear();
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        bool ok = !dropped[i];
        for (std::size_t k = 0; ok && k < c.labels.size(); ++k) {
            ok = dropped[k] || c.r[i][k].has_value();
        }
        if (ok) {
            keep.push_back(i);
        } else {
            excluded.push_back(c.labels[i]);
        }
    }
    analysis::CorrelationMatrix sub;
    for (auto i : keep) {
        sub.labels.push_back(c.labels[i]);
        std::vector<std::optional<double>> row;
        for (auto k : keep) {
            row.push_back(c.r[i][k]);
        }
        sub.r.push_back(std::move(row));
    }
    return {sub, excluded};
}

analysis::ClusterTree cluster_defined(const analysis::CorrelationMatrix& c, std::vector<std::string>& excluded,
                                      std::string_view what) {
    auto [sub, dropped] = defined_part(c);
    excluded = dropped;
    if (!excluded.empty()) {
        spdlog::warn("{} clustering: leaving out {} label(s) with UNDEFINED correlation: {}", what, excluded.size(),
                     fmt::join(excluded, ", "));
    }
    if (sub.labels.empty()) {
        return {};
    }
    return analysis::hierarchical_cluster(sub);
}

struct GraceSummary {
    std::string target;
    std::string outcome;
    std::string message;
    grace::Baselines baselines;
    double final_ppl_target = 0.0;
    double final_ppl_dev = 0.0;
    std::uint64_t ascent_steps = 0;
    std::size_t retrain_rounds = 0;
    std::size_t unrestored_rounds = 0;
    double monotone_fraction = 1.0;
    std::vector<std::string> violations;
};

nlohmann::json summary_json(const GraceSummary& s) {
    return {{"target", s.target},
            {"outcome", s.outcome},
            {"message", s.message},
            {"ppl_dev_0", s.baselines.ppl_dev_0},
            {"ppl_rand", s.baselines.ppl_rand},
            {"ppl_target_0", s.baselines.ppl_target_0},
            {"final_ppl_target", s.final_ppl_target},
            {"final_ppl_dev", s.final_ppl_dev},
            {"ascent_steps", s.ascent_steps},
            {"retrain_rounds", s.retrain_rounds},
            {"unrestored_rounds", s.unrestored_rounds},
            {"unlearn_monotone_fraction", s.monotone_fraction},
            {"trace_violations", s.violations}};
}

GraceSummary summarize(const std::string& target, const grace::GraceTrace& trace, const grace::GraceConfig& gc) {
    GraceSummary s;
    s.target = target;
    s.outcome = std::string(grace::to_string(trace.outcome));
    s.message = trace.message;
    s.baselines = trace.baselines;
    for (const auto& e : trace.events) {
        if (e.phase == grace::Phase::Eval) {
            s.final_ppl_target = e.ppl_target.value_or(0.0);
            s.final_ppl_dev = e.ppl_dev.value_or(0.0);
        }
        if (e.phase == grace::Phase::Retrain) {
            ++s.retrain_rounds;
            s.unrestored_rounds += e.restored.value_or(false) ? 0 : 1;
        }
        s.ascent_steps = std::max(s.ascent_steps, e.ascent_steps);
    }
    s.monotone_fraction = grace::unlearn_monotone_fraction(trace);
    s.violations = grace::validate_trace(trace, gc);
    return s;
}

}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg)
    : cfg_(std::move(cfg)),
      hash_(config_hash(cfg_)),
      run_id_(store::run_id(cfg_)),
      run_dir_(cfg_.output_dir / run_id_),
      registry_(run_dir_) {}

bool Pipeline::is_complete(Stage s, const std::optional<std::string>& target) const {
    const auto rec = registry_.completed(s, target);
    return rec && rec->config_hash == hash_;
}

void Pipeline::require(Stage s, const std::optional<std::string>& target) const {
    if (!is_complete(s, target)) {
        throw InvalidArgument(fmt::format("stage {} has not completed (or its artifacts are missing) in {}",
                                          stage_label(s, target), run_dir_.string()));
    }
}

void Pipeline::write_config() const {
    const auto path = run_dir_ / "config.json";
    const auto text = config_to_json(cfg_).dump(2) + "\n";
    if (!fs::exists(path) || read_file(path) != text) {
        write_file_atomic(path, text);
    }
}

template <class Fn>
RunRecord Pipeline::commit(Stage s, const std::optional<std::string>& target, Fn&& body) {
    const auto label = stage_label(s, target);
    RunRecord rec{run_id_, hash_, s, target, "completed", {}, {}, {}};
    try {
        write_config();
        spdlog::info("[{}] {} started", run_id_, label);
        rec.artifacts = body();
    } catch (const std::exception& e) {
        rec.status = "failed";
        rec.error = e.what();
        rec.timestamp = utc_timestamp();
        try {
            registry_.append(rec);
        } catch (const std::exception& inner) {
            spdlog::error("could not record failure of {}: {}", label, inner.what());
        }
        throw StageError(label, e.what());
    }
    rec.timestamp = utc_timestamp();
    registry_.append(rec);
    spdlog::info("[{}] {} completed", run_id_, label);
    return rec;
}

RunRecord Pipeline::generate() {
    return commit(Stage::Generated, std::nullopt, [&] {
        std::vector<std::string> files;
        for (std::size_t i = 0; i < cfg_.corpus.domains.size(); ++i) {
            const auto& d = cfg_.corpus.domains[i];
            const auto docs = corpus::generate_domain(d, derive_seed(cfg_.master_seed, SeedStream::Corpus, i));
            corpus::write_jsonl(docs, run_dir_ / corpus_file(d.name));
            files.push_back(corpus_file(d.name));
        }
        files.push_back(write_json(run_dir_, "corpus/spec.json",
                                   {{"corpus", cfg_.corpus}, {"vocab_size", cfg_.corpus.vocab_size}}));
        return files;
    });
}

RunRecord Pipeline::pretrain() {
    return commit(Stage::Pretrained, std::nullopt, [&] {
        require(Stage::Generated);
        const auto sets = load_corpus(run_dir_, cfg_);
        auto result = model::pretrain(model::init_model(cfg_.model), sets, cfg_.pretrain);
        model::save_checkpoint(result.model, run_dir_ / kPretrained,
                               {{"master_seed", cfg_.master_seed},
                                {"model_init", cfg_.model.seed},
                                {"pretrain_batches", cfg_.pretrain.seed}});

        csv::Table base{{"domain", "ppl"}, {}};
        for (const auto& b : result.baseline) {
            base.rows.push_back({b.domain, csv::format_double(b.ppl)});
        }
        csv::Table loss{{"step", "loss"}, {}};
        for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
            loss.rows.push_back({std::to_string(i + 1), csv::format_double(result.loss_trace[i])});
        }
        auto files = checkpoint_files(kPretrained);
        files.push_back(write_text(run_dir_, "results/pretrain_baseline.csv", csv::to_string(base)));
        files.push_back(write_text(run_dir_, "results/pretrain_loss.csv", csv::to_string(loss)));
        return files;
    });
}

RunRecord Pipeline::unlearn(const std::string& target) {
    return commit(Stage::Unlearned, target, [&] {
        const auto k = target_index(cfg_, target);
        require(Stage::Pretrained);
        const auto sets = load_corpus(run_dir_, cfg_);
        const corpus::DocumentSet* target_set = nullptr;
        std::vector<corpus::DocumentSet> others;
        for (const auto& s : sets) {
            if (s.domain == target) {
                target_set = &s;
            } else {
                others.push_back(s);
            }
        }
        const auto plan = corpus::make_splits(*target_set, others, cfg_.unlearn_count,
                                              derive_seed(cfg_.master_seed, SeedStream::Splits, k));
        auto gc = cfg_.grace;
        gc.randomizer.seed = derive_seed(cfg_.master_seed, SeedStream::Randomizer, k);
        gc.ascent_tc.seed = derive_seed(cfg_.master_seed, SeedStream::GraceAscent, k);
        gc.retrain_tc.seed = derive_seed(cfg_.master_seed, SeedStream::GraceRetrain, k);

        const auto original = model::load_checkpoint(run_dir_ / kPretrained);
        auto result = grace::run_grace(original, plan, gc);
        if (result.trace.outcome != grace::Outcome::EndpointReached) {
            spdlog::warn("[{}] unlearning '{}' ended {}: {}", run_id_, target, grace::to_string(result.trace.outcome),
                         result.trace.message);
        }
        const auto stem = unlearned_stem(target);
        model::save_checkpoint(result.model, run_dir_ / stem,
                               {{"master_seed", cfg_.master_seed},
                                {"parent", kPretrained},
                                {"target", target},
                                {"splits", derive_seed(cfg_.master_seed, SeedStream::Splits, k)},
                                {"randomizer", gc.randomizer.seed},
                                {"ascent_batches", gc.ascent_tc.seed},
                                {"retrain_batches", gc.retrain_tc.seed}});
        grace::write_trace(result.trace, run_dir_ / trace_file(target));
        auto files = checkpoint_files(stem);
        files.push_back(trace_file(target));
        files.push_back(write_json(run_dir_, grace_summary_file(target), summary_json(summarize(target, result.trace, gc))));
        return files;
    });
}

RunRecord Pipeline::evaluate() {
    return commit(Stage::Evaluated, std::nullopt, [&] {
        for (const auto& t : cfg_.targets) {
            require(Stage::Unlearned, t);
        }
        const auto suite = probes::build_suite(cfg_.corpus, probe_specs(cfg_), cfg_.probes);
        const auto original = model::load_checkpoint(run_dir_ / kPretrained);
        const auto before = probes::evaluate_capabilities(original, suite);

        // Held-out documents for the token-delta case study.
        std::vector<corpus::DocumentSet> delta_sets;
        for (std::size_t i = 0; i < cfg_.corpus.domains.size(); ++i) {
            auto d = cfg_.corpus.domains[i];
            d.doc_count = cfg_.delta_docs;
            delta_sets.push_back(corpus::generate_domain(d, derive_seed(cfg_.master_seed, SeedStream::TokenDelta, i)));
        }

        std::vector<probes::ResultRow> rows;
        for (const auto& r : before) {
            rows.push_back({run_id_, std::string(kBeforeTag), r});
        }
        csv::Table ppl{{"corpus_unlearned", "capability", "domain", "ppl_before", "ppl_after", "relative_change"}, {}};
        csv::Table means{{"corpus_unlearned", "domain", "sequences", "tokens", "mean_delta"}, {}};
        std::vector<std::string> files;

        for (const auto& target : cfg_.targets) {
            const auto after_model = model::load_checkpoint(run_dir_ / unlearned_stem(target));
            const auto after = probes::evaluate_capabilities(after_model, suite);
            for (std::size_t i = 0; i < after.size(); ++i) {
                rows.push_back({run_id_, target, after[i]});
                if (after[i].metric == probes::Metric::NegPpl) {
                    const double b = -before[i].score;
                    const double a = -after[i].score;
                    ppl.rows.push_back({target, after[i].capability.subtype, suite.probes[i].spec.domain,
                                        csv::format_double(b), csv::format_double(a), csv::format_double((a - b) / b)});
                }
            }
            for (const auto& set : delta_sets) {
                nlohmann::json seqs = nlohmann::json::array();
                double sum = 0.0;
                std::size_t tokens = 0;
                for (const auto& seq : set.sequences) {
                    const auto d = probes::token_loss_delta(original, after_model, seq);
                    for (double v : d.per_token_delta) {
                        sum += v;
                    }
                    tokens += d.per_token_delta.size();
                    seqs.push_back(probes::delta_to_json(d));
                }
                files.push_back(write_json(run_dir_, delta_file(target, set.domain), seqs));
                means.rows.push_back({target, set.domain, std::to_string(set.size()), std::to_string(tokens),
                                      csv::format_double(sum / static_cast<double>(tokens))});
            }
        }
        files.push_back(write_text(run_dir_, kCapabilities, probes::results_to_csv(rows)));
        files.push_back(write_text(run_dir_, kDomainPpl, csv::to_string(ppl)));
        files.push_back(write_text(run_dir_, kDeltaMeans, csv::to_string(means)));
        return files;
    });
}

AnalysisBundle analyze_results(const std::vector<probes::ResultRow>& rows, const ExperimentConfig& cfg) {
    analysis::Scores before;
    std::vector<std::pair<std::string, analysis::Scores>> after;
    for (const auto& r : rows) {
        const auto& label = r.result.capability.subtype;
        if (r.corpus_unlearned == kBeforeTag) {
            before.emplace_back(label, r.result.score);
            continue;
        }
        auto it = std::find_if(after.begin(), after.end(), [&](const auto& p) { return p.first == r.corpus_unlearned; });
        if (it == after.end()) {
            after.emplace_back(r.corpus_unlearned, analysis::Scores{});
            it = std::prev(after.end());
        }
        it->second.emplace_back(label, r.result.score);
    }
    if (before.empty() || after.empty()) {
        throw InvalidArgument("capability results need baseline rows and at least one unlearned corpus");
    }

    AnalysisBundle b;
    b.matrix = analysis::build_matrix(before, after);
    b.high_impact = analysis::high_impact(b.matrix, cfg.analysis.high_impact_fraction);
    b.corpus_corr = analysis::corpus_correlation_matrix(b.matrix, taxonomy(cfg));
    b.corpus_tree = cluster_defined(b.corpus_corr, b.corpus_excluded, "corpus");
    b.corpus_relations = analysis::classify_relations(b.corpus_corr, cfg.analysis.thresholds);
    if (b.matrix.corpora.size() >= 2) {
        b.capability_corr = analysis::capability_correlation_matrix(b.matrix);
        b.capability_tree = cluster_defined(*b.capability_corr, b.capability_excluded, "capability");
        b.capability_relations = analysis::classify_relations(*b.capability_corr, cfg.analysis.thresholds);
    } else {
        spdlog::info("capability correlation skipped: it needs at least two unlearned corpora");
    }
    return b;
}

nlohmann::json cluster_json(const analysis::ClusterTree& t, const std::vector<std::string>& excluded) {
    auto j = analysis::tree_to_json(t);
    j["excluded_undefined"] = excluded;
    return j;
}

std::string top_bottom_csv(const analysis::PerformanceMatrix& m, std::size_t k) {
    csv::Table t{{"capability", "rank_type", "rank", "corpus", "gamma"}, {}};
    const std::size_t n = m.corpora.size();
    for (std::size_t j = 0; j < m.capabilities.size(); ++j) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = i;
        }
        const auto emit = [&](std::string_view type, auto less) {
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                if (m.gamma[a][j] != m.gamma[b][j]) {
                    return less(m.gamma[a][j], m.gamma[b][j]);
                }
                return m.corpora[a] < m.corpora[b];
            });
            for (std::size_t r = 0; r < std::min(k, n); ++r) {
                t.rows.push_back({m.capabilities[j], std::string(type), std::to_string(r + 1), m.corpora[idx[r]],
                                  csv::format_double(m.gamma[idx[r]][j])});
            }
        };
        emit("top", std::less<double>());
        emit("bottom", std::greater<double>());
    }
    return csv::to_string(t);
}

namespace {

std::vector<std::string> write_bundle(const fs::path& run_dir, const std::string& dir, const AnalysisBundle& b) {
    std::vector<std::string> files;
    files.push_back(write_text(run_dir, dir + "/performance_matrix.csv", analysis::matrix_to_csv(b.matrix)));
    csv::Table hi{{"corpus"}, {}};
    for (const auto& c : b.high_impact) {
        hi.rows.push_back({c});
    }
    files.push_back(write_text(run_dir, dir + "/high_impact.csv", csv::to_string(hi)));
    files.push_back(write_text(run_dir, dir + "/corpus_correlation.csv", analysis::correlation_to_csv(b.corpus_corr)));
    files.push_back(write_json(run_dir, dir + "/corpus_clusters.json", cluster_json(b.corpus_tree, b.corpus_excluded)));
    files.push_back(write_text(run_dir, dir + "/corpus_relations.csv", analysis::relations_to_csv(b.corpus_relations)));
    if (b.capability_corr) {
        files.push_back(
            write_text(run_dir, dir + "/capability_correlation.csv", analysis::correlation_to_csv(*b.capability_corr)));
        files.push_back(write_json(run_dir, dir + "/capability_clusters.json",
                                   cluster_json(*b.capability_tree, b.capability_excluded)));
        files.push_back(write_text(run_dir, dir + "/capability_relations.csv",
                                   analysis::relations_to_csv(*b.capability_relations)));
    }
    return files;
}

std::string fmt_num(double v) {
    return fmt::format("{:.4g}", v);
}

}  // namespace

RunRecord Pipeline::analyze() {
    return commit(Stage::Analyzed, std::nullopt, [&] {
        require(Stage::Evaluated);
        const auto rows = probes::results_from_csv(read_file(run_dir_ / kCapabilities));
        return write_bundle(run_dir_, "results", analyze_results(rows, cfg_));
    });
}

std::vector<fs::path> Pipeline::report() {
    const std::string label = "REPORT";
    try {
        require(Stage::Evaluated);
        write_config();
        const auto rows = probes::results_from_csv(read_file(run_dir_ / kCapabilities));
        const auto bundle = analyze_results(rows, cfg_);
        auto files = write_bundle(run_dir_, "reports", bundle);
        files.push_back(write_text(run_dir_, "reports/top_bottom_k.csv", top_bottom_csv(bundle.matrix, cfg_.analysis.top_k)));
        files.push_back(write_text(run_dir_, "reports/capabilities.csv", read_file(run_dir_ / kCapabilities)));
        files.push_back(write_text(run_dir_, "reports/domain_ppl.csv", read_file(run_dir_ / kDomainPpl)));
        files.push_back(write_text(run_dir_, "reports/token_delta_means.csv", read_file(run_dir_ / kDeltaMeans)));

        // Heatmap bundle: every scored sequence, grouped by (target, domain).
        nlohmann::json heat = nlohmann::json::array();
        for (const auto& t : cfg_.targets) {
            for (const auto& d : cfg_.corpus.domains) {
                heat.push_back({{"corpus_unlearned", t},
                                {"domain", d.name},
                                {"sequences", nlohmann::json::parse(read_file(run_dir_ / delta_file(t, d.name)))}});
            }
        }
        files.push_back(write_json(run_dir_, "reports/token_deltas.json", heat));

        std::string md = fmt::format("# Run {}\n\nconfig hash `{}`, master seed {}\n\n", run_id_, hash_, cfg_.master_seed);
        md += "## Unlearning\n\n| target | outcome | ascent steps | retrain rounds | PPL target start | PPL target end | "
              "randomized baseline | dev start | dev end |\n|---|---|---|---|---|---|---|---|---|\n";
        for (const auto& t : cfg_.targets) {
            const auto s = nlohmann::json::parse(read_file(run_dir_ / grace_summary_file(t)));
            md += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n", t, s.at("outcome").get<std::string>(),
                              s.at("ascent_steps").get<std::uint64_t>(), s.at("retrain_rounds").get<std::size_t>(),
                              fmt_num(s.at("ppl_target_0").get<double>()), fmt_num(s.at("final_ppl_target").get<double>()),
                              fmt_num(s.at("ppl_rand").get<double>()), fmt_num(s.at("ppl_dev_0").get<double>()),
                              fmt_num(s.at("final_ppl_dev").get<double>()));
        }
        md += "\n## Domain perplexity\n\n| unlearned | domain | before | after | change |\n|---|---|---|---|---|\n";
        const auto ppl = csv::parse(read_file(run_dir_ / kDomainPpl));
        for (const auto& r : ppl.rows) {
            md += fmt::format("| {} | {} | {} | {} | {:+.2f}% |\n", r[0], r[2], fmt_num(csv::parse_double(r[3])),
                              fmt_num(csv::parse_double(r[4])), 100.0 * csv::parse_double(r[5]));
        }
        md += "\n## Mean token loss delta\n\n| unlearned | domain | mean delta |\n|---|---|---|\n";
        const auto means = csv::parse(read_file(run_dir_ / kDeltaMeans));
        for (const auto& r : means.rows) {
            md += fmt::format("| {} | {} | {} |\n", r[0], r[1], fmt_num(csv::parse_double(r[4])));
        }
        md += fmt::format("\n## High-impact corpora (fraction {})\n\n", cfg_.analysis.high_impact_fraction);
        md += bundle.high_impact.empty() ? std::string("none\n") : fmt::format("{}\n", fmt::join(bundle.high_impact, ", "));
        md += "\n## Corpus relations\n\n";
        if (bundle.corpus_relations.pairs.empty()) {
            md += "fewer than two corpora\n";
        }
        for (const auto& p : bundle.corpus_relations.pairs) {
            md += fmt::format("- {} / {}: r = {}, {}\n", p.a, p.b, p.r ? fmt_num(*p.r) : "UNDEFINED",
                              analysis::to_string(p.relation));
        }
        md += "\n## Capability correlation\n\n";
        if (bundle.capability_corr) {
            std::size_t counts[4] = {0, 0, 0, 0};
            for (const auto& p : bundle.capability_relations->pairs) {
                ++counts[static_cast<int>(p.relation)];
            }
            md += fmt::format("{} capabilities; pairs: {} correlated, {} complementary, {} orthogonal, {} unclassified\n",
                              bundle.capability_corr->labels.size(), counts[0], counts[1], counts[2], counts[3]);
        } else {
            md += "skipped: needs at least two unlearned corpora\n";
        }
        files.push_back(write_text(run_dir_, "reports/summary.md", md));

        std::vector<fs::path> out;
        for (const auto& f : files) {
            out.push_back(run_dir_ / f);
        }
        spdlog::info("[{}] report written to {}", run_id_, (run_dir_ / "reports").string());
        return out;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(label, e.what());
    }
}

RunRecord Pipeline::run() {
    struct Step {
        Stage stage;
        std::optional<std::string> target;
    };
    std::vector<Step> steps{{Stage::Generated, std::nullopt}, {Stage::Pretrained, std::nullopt}};
    for (const auto& t : cfg_.targets) {
        steps.push_back({Stage::Unlearned, t});
    }
    steps.push_back({Stage::Evaluated, std::nullopt});
    steps.push_back({Stage::Analyzed, std::nullopt});

    std::size_t first = steps.size();
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (!is_complete(steps[i].stage, steps[i].target)) {
            first = i;
            break;
        }
    }
    if (first > 0 && first < steps.size()) {
        spdlog::info("[{}] resuming at {}", run_id_, stage_label(steps[first].stage, steps[first].target));
    }
    std::optional<RunRecord> last;
    for (std::size_t i = first; i < steps.size(); ++i) {
        switch (steps[i].stage) {
            case Stage::Generated: last = generate(); break;
            case Stage::Pretrained: last = pretrain(); break;
            case Stage::Unlearned: last = unlearn(*steps[i].target); break;
            case Stage::Evaluated: last = evaluate(); break;
            case Stage::Analyzed: last = analyze(); break;
        }
    }
    if (!last) {
        last = registry_.completed(Stage::Analyzed);
    }
    report();
    return *last;
}

}  // namespace gracelab::store
