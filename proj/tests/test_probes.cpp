#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "gracelab/error.hpp"
#include "gracelab/probes.hpp"
#include "support.hpp"

using namespace gracelab;
using namespace gracelab::probes;
using corpus::DocumentSet;
using testing_support::domain;

namespace {

struct Fixture {
    corpus::CorpusSpec spec;
    std::vector<DocumentSet> data;
    model::ModelState init;
    model::ModelState trained;
};

// t linked to s, u on its own.
const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture x;
        auto t = domain("t", 2, 12, 150, 12, 20);
        auto s = domain("s", 12, 22, 150, 12, 20);
        auto u = domain("u", 22, 32, 150, 12, 20);
        t.shared_fraction = 0.4;
        s.shared_fraction = 0.4;
        t.links = {{"s", 1.0, {}, 0}};
        x.spec = corpus::resolve_corpus({{t, s, u}, 8, 0}, 5);
        for (std::size_t i = 0; i < 3; ++i) {
            x.data.push_back(corpus::generate_domain(x.spec.domains[i], 10 + i));
        }
        x.init = model::init_model({x.spec.vocab_size, 16, 1, 2, 32, 3});
        model::TrainConfig tc;
        tc.learning_rate = 1e-2;
        tc.max_steps = 300;
        tc.seed = 6;
        x.trained = model::pretrain(x.init, x.data, tc).model;
        return x;
    }();
    return f;
}

ProbeConfig small_probes() {
    return {20, 40, 15, 99};
}

model::ModelState ascend(model::ModelState m, const DocumentSet& docs, std::size_t steps) {
    model::TrainConfig tc;
    tc.learning_rate = 1e-3;
    model::Optimizer opt(tc);
    model::BatchSampler sampler(docs, 16, 1);
    for (std::size_t i = 0; i < steps; ++i) {
        model::ascent_step(m, sampler.next(), opt);
    }
    return m;
}

}  // namespace

TEST(Probes, UniformModelScoresMinusVocab) {
    auto d = domain("x", 2, 9, 10, 8, 12);
    const auto spec = corpus::resolve_corpus({{d, domain("y", 9, 16)}, 8, 0}, 1);
    ASSERT_EQ(spec.vocab_size, 16u);
    auto m = model::init_model({16, 4, 1, 2, 16, 1});
    std::fill(m.parameters.begin(), m.parameters.end(), 0.0f);
    const auto suite = build_suite(spec, {{{"c", "x/ppl"}, "x", Metric::NegPpl}}, {5, 1, 15, 1});
    const auto res = evaluate_capabilities(m, suite);
    ASSERT_EQ(res.size(), 1u);
    EXPECT_NEAR(res[0].score, -16.0, 1e-9);
    EXPECT_EQ(res[0].metric, Metric::NegPpl);
}

TEST(Probes, DefaultSpecsFollowLinkComponents) {
    const auto specs = default_probe_specs(fixture().spec);
    ASSERT_EQ(specs.size(), 6u);
    for (const auto& p : specs) {
        const std::string expected_cat = p.domain == "u" ? "u" : "s";
        EXPECT_EQ(p.capability.category, expected_cat) << p.domain;
        const std::string suffix = p.metric == Metric::NegPpl ? "/ppl" : "/cloze";
        EXPECT_EQ(p.capability.subtype, p.domain + suffix);
    }
}

TEST(Probes, SuiteIsDeterministicAndHeldOut) {
    const auto& f = fixture();
    const auto specs = default_probe_specs(f.spec);
    const auto a = build_suite(f.spec, specs, small_probes());
    const auto b = build_suite(f.spec, specs, small_probes());
    ASSERT_EQ(a.probes.size(), b.probes.size());
    for (std::size_t i = 0; i < a.probes.size(); ++i) {
        EXPECT_EQ(a.probes[i].heldout, b.probes[i].heldout);
        EXPECT_EQ(a.probes[i].cloze, b.probes[i].cloze);
        if (i > 0) {
            EXPECT_LT(a.probes[i - 1].spec.capability, a.probes[i].spec.capability);
        }
    }
    for (const auto& p : a.probes) {
        if (p.spec.metric == Metric::NegPpl) {
            EXPECT_EQ(p.heldout.size(), 20u);
            EXPECT_NE(p.heldout.sequences.front(), f.data[0].sequences.front());
        } else {
            EXPECT_EQ(p.cloze.size(), 40u);
            for (const auto& item : p.cloze) {
                EXPECT_LE(item.prefix.size(), 15u);
                EXPECT_FALSE(item.prefix.empty());
            }
        }
    }
    EXPECT_EQ(evaluate_capabilities(f.trained, a).front().score,
              evaluate_capabilities(f.trained, b).front().score);
}

TEST(Probes, SuiteErrors) {
    const auto& f = fixture();
    EXPECT_THROW(build_suite(f.spec, {}, small_probes()), InvalidArgument);
    EXPECT_THROW(build_suite(f.spec, {{{"c", "z"}, "nope", Metric::NegPpl}}, small_probes()), InvalidArgument);
    EXPECT_THROW(build_suite(f.spec,
                             {{{"c", "a"}, "t", Metric::NegPpl}, {{"c", "a"}, "s", Metric::Accuracy}},
                             small_probes()),
                 InvalidArgument);
}

TEST(Probes, TrainingRaisesClozeAccuracy) {
    const auto& f = fixture();
    const auto suite = build_suite(f.spec, {{{"c", "t/cloze"}, "t", Metric::Accuracy}}, small_probes());
    const double before = evaluate_capabilities(f.init, suite)[0].score;
    const double after = evaluate_capabilities(f.trained, suite)[0].score;
    EXPECT_GE(after, 0.5);
    EXPECT_GT(after, before);
    EXPECT_GE(before, 0.0);
    EXPECT_LE(after, 1.0);
}

TEST(TokenDelta, ZeroForIdenticalModels) {
    const auto& f = fixture();
    const auto d = token_loss_delta(f.trained, f.trained, f.data[0].sequences[0]);
    EXPECT_EQ(d.per_token_delta.size(), d.tokens.tokens.size());
    for (double v : d.per_token_delta) {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_EQ(mean_delta(d), 0.0);
}

TEST(TokenDelta, AscentRaisesTargetLossMoreThanUnlinked) {
    const auto& f = fixture();
    const auto after = ascend(f.trained, f.data[0], 20);
    double target = 0.0;
    double unlinked = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        target += mean_delta(token_loss_delta(f.trained, after, f.data[0].sequences[i]));
        unlinked += mean_delta(token_loss_delta(f.trained, after, f.data[2].sequences[i]));
    }
    EXPECT_GT(target, 0.0);
    EXPECT_LT(std::abs(unlinked), target);
}

TEST(TokenDelta, SumMatchesTotalNllChange) {
    const auto& f = fixture();
    const auto after = ascend(f.trained, f.data[0], 5);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& seq = f.data[1].sequences[i];
        const auto d = token_loss_delta(f.trained, after, seq);
        const std::vector<corpus::TokenSequence> one{seq};
        const double total = model::nll_sum(after, one).total - model::nll_sum(f.trained, one).total;
        const double sum = std::accumulate(d.per_token_delta.begin(), d.per_token_delta.end(), 0.0);
        EXPECT_NEAR(sum, total, 1e-9);
    }
}

TEST(TokenDelta, ArchitectureMismatch) {
    const auto& f = fixture();
    const auto other = model::init_model({f.spec.vocab_size, 8, 1, 2, 32, 3});
    EXPECT_THROW(token_loss_delta(f.trained, other, f.data[0].sequences[0]), InvalidArgument);
    // The seed alone does not make models incompatible.
    auto reseeded = f.trained;
    reseeded.config.seed = 1234;
    EXPECT_NO_THROW(token_loss_delta(f.trained, reseeded, f.data[0].sequences[0]));
}

TEST(Formats, ResultsCsvRoundTrip) {
    std::vector<ResultRow> rows{{"run-1", "none", {{"cat", "a/ppl"}, -3.25, Metric::NegPpl}},
                                {"run-1", "t", {{"cat", "a,cloze"}, 0.125, Metric::Accuracy}}};
    const auto back = results_from_csv(results_to_csv(rows));
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].run_id, rows[i].run_id);
        EXPECT_EQ(back[i].corpus_unlearned, rows[i].corpus_unlearned);
        EXPECT_EQ(back[i].result.capability, rows[i].result.capability);
        EXPECT_EQ(back[i].result.score, rows[i].result.score);
        EXPECT_EQ(back[i].result.metric, rows[i].result.metric);
    }
    EXPECT_THROW(metric_from_string("BLEU"), InvalidArgument);
}

TEST(Formats, DeltaJsonRoundTrip) {
    const auto& f = fixture();
    const auto after = ascend(f.trained, f.data[0], 2);
    const auto d = token_loss_delta(f.trained, after, f.data[0].sequences[3]);
    const auto back = delta_from_json(nlohmann::json::parse(delta_to_json(d).dump()));
    EXPECT_EQ(back.tokens, d.tokens);
    EXPECT_EQ(back.per_token_delta, d.per_token_delta);
}

TEST(Formats, SpecAndConfigJson) {
    const ProbeSpec p{{"c", "t/cloze"}, "t", Metric::Accuracy};
    const nlohmann::json j = p;
    EXPECT_EQ(j.at("metric"), "ACCURACY");
    const auto back = j.get<ProbeSpec>();
    EXPECT_EQ(back.capability, p.capability);
    EXPECT_EQ(back.domain, p.domain);
    const nlohmann::json cj = small_probes();
    EXPECT_EQ(cj.get<ProbeConfig>().cloze_items, 40u);
}
