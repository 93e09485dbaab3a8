#include <set>

#include <gtest/gtest.h>

#include "gracelab/error.hpp"
#include "gracelab/grace.hpp"
#include "support.hpp"

using namespace gracelab;
using namespace gracelab::grace;
using corpus::DocumentSet;
using testing_support::domain;
using testing_support::TempDir;

namespace {

// Two linked domains and a pretrained model shared by the tests below.
struct Fixture {
    corpus::CorpusSpec spec;
    std::vector<DocumentSet> data;
    model::ModelState model;
    corpus::SplitPlan plan;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture x;
        auto a = domain("a", 2, 14, 120, 12, 20);
        auto b = domain("b", 14, 26, 120, 12, 20);
        a.shared_fraction = 0.3;
        b.shared_fraction = 0.3;
        a.links = {{"b", 0.5, {}, 0}};
        x.spec = corpus::resolve_corpus({{a, b}, 8, 0}, 21);
        x.data = {corpus::generate_domain(x.spec.domains[0], 1), corpus::generate_domain(x.spec.domains[1], 2)};
        model::TrainConfig tc;
        tc.learning_rate = 1e-2;
        tc.max_steps = 300;
        tc.batch_size = 16;
        tc.seed = 4;
        x.model = model::pretrain(model::init_model({x.spec.vocab_size, 16, 1, 2, 32, 9}), x.data, tc).model;
        const std::vector<DocumentSet> nt{x.data[1]};
        x.plan = corpus::make_splits(x.data[0], nt, 80, 5);
        return x;
    }();
    return f;
}

GraceConfig small_config() {
    GraceConfig gc;
    gc.eval_interval = 5;
    gc.resample_size = 64;
    gc.max_ascent_steps = 2000;
    gc.ascent_tc.learning_rate = 3e-4;
    gc.ascent_tc.seed = 1;
    gc.retrain_tc.learning_rate = 1e-3;
    gc.retrain_tc.seed = 2;
    gc.randomizer.seed = 3;
    return gc;
}

}  // namespace

TEST(EndpointBaseline, RandomizedTextRaisesPerplexity) {
    const auto& f = fixture();
    const double rand = endpoint_baseline(f.model, f.plan.target_eval_set, {4, 11});
    EXPECT_GT(rand, model::perplexity(f.model, f.plan.target_eval_set));
    EXPECT_EQ(rand, endpoint_baseline(f.model, f.plan.target_eval_set, {4, 11}));
}

TEST(EndpointBaseline, IdentityRandomizer) {
    const auto& f = fixture();
    const DocumentSet singles{"a", {{{3}, "a"}, {{4}, "a"}, {{5}, "a"}}};
    EXPECT_EQ(endpoint_baseline(f.model, singles, {1, 1}), model::perplexity(f.model, singles));
    EXPECT_THROW(endpoint_baseline(f.model, DocumentSet{"a", {}}, {1, 1}), InvalidArgument);
}

TEST(Resample, FullDrawIsPermutation) {
    auto idx = resample_indices(50, 50, 1, 7);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        EXPECT_EQ(idx[i], i);
    }
}

TEST(Resample, RoundsUseDifferentStreams) {
    const auto r1 = resample_indices(1000, 100, 1, 7);
    const auto r2 = resample_indices(1000, 100, 2, 7);
    EXPECT_NE(r1, r2);
    EXPECT_EQ(r1, resample_indices(1000, 100, 1, 7));
    EXPECT_EQ(std::set<std::size_t>(r1.begin(), r1.end()).size(), 100u);  // without replacement
}

TEST(Resample, WithReplacementWhenPoolIsSmall) {
    const auto r = resample_indices(10, 30, 1, 7);
    EXPECT_EQ(r.size(), 30u);
    for (auto i : r) {
        EXPECT_LT(i, 10u);
    }
    EXPECT_THROW(resample_retrain_set(DocumentSet{"x", {}}, 3, 1, 1), InvalidArgument);
}

TEST(RunGrace, ImmediateEndpoint) {
    const auto& f = fixture();
    auto gc = small_config();
    gc.endpoint_ratio = 1e-6;  // already reached at entry
    const auto r = run_grace(f.model, f.plan, gc);
    EXPECT_EQ(r.trace.outcome, Outcome::EndpointReached);
    for (const auto& e : r.trace.events) {
        EXPECT_EQ(e.ascent_steps, 0u);
    }
    EXPECT_EQ(r.model.parameters, f.model.parameters);
}

TEST(RunGrace, TwoDomainRunReachesEndpoint) {
    const auto& f = fixture();
    const auto gc = small_config();
    const auto r = run_grace(f.model, f.plan, gc);
    ASSERT_EQ(r.trace.outcome, Outcome::EndpointReached) << r.trace.message;
    const auto& last = r.trace.events.back();
    ASSERT_EQ(last.phase, Phase::Eval);
    EXPECT_GE(*last.ppl_target, gc.endpoint_ratio * r.trace.baselines.ppl_rand);
    EXPECT_LE(*last.ppl_dev, r.trace.baselines.ppl_dev_0 * (1 + gc.dev_tolerance));
    EXPECT_TRUE(validate_trace(r.trace, gc).empty());
    EXPECT_GE(unlearn_monotone_fraction(r.trace), 0.9);

    // Baselines come from the pristine model.
    EXPECT_DOUBLE_EQ(r.trace.baselines.ppl_dev_0, model::perplexity(f.model, f.plan.dev_set));
    EXPECT_DOUBLE_EQ(r.trace.baselines.ppl_rand,
                     endpoint_baseline(f.model, f.plan.target_eval_set, gc.randomizer));

    // Every RETRAIN is entered from a failed dev check and ends restored.
    const auto& ev = r.trace.events;
    for (std::size_t i = 0; i < ev.size(); ++i) {
        if (ev[i].phase != Phase::Retrain) {
            continue;
        }
        ASSERT_GT(i, 0u);
        EXPECT_GT(*ev[i - 1].ppl_dev, r.trace.baselines.ppl_dev_0 * (1 + gc.dev_tolerance));
        ASSERT_LT(i + 1, ev.size());
        EXPECT_LE(*ev[i + 1].ppl_dev, r.trace.baselines.ppl_dev_0);
    }
}

TEST(RunGrace, Deterministic) {
    const auto& f = fixture();
    const auto gc = small_config();
    const auto a = run_grace(f.model, f.plan, gc);
    const auto b = run_grace(f.model, f.plan, gc);
    EXPECT_EQ(a.model.parameters, b.model.parameters);
    EXPECT_EQ(to_jsonl(a.trace), to_jsonl(b.trace));
}

TEST(RunGrace, MaxStepsBound) {
    const auto& f = fixture();
    auto gc = small_config();
    gc.max_ascent_steps = 10;
    gc.ascent_tc.learning_rate = 1e-6;
    const auto r = run_grace(f.model, f.plan, gc);
    EXPECT_EQ(r.trace.outcome, Outcome::MaxSteps);
    EXPECT_LE(r.trace.events.back().ascent_steps, 10u);
    EXPECT_TRUE(validate_trace(r.trace, gc).empty());
}

TEST(RunGrace, NonFiniteAscentAborts) {
    const auto& f = fixture();
    auto gc = small_config();
    gc.ascent_tc.learning_rate = 1e300;
    gc.ascent_tc.optimizer = model::OptimizerKind::Sgd;
    gc.ascent_tc.grad_clip.reset();
    const auto r = run_grace(f.model, f.plan, gc);
    EXPECT_EQ(r.trace.outcome, Outcome::Aborted);
    for (float p : r.model.parameters) {
        ASSERT_TRUE(std::isfinite(p));
    }
}

TEST(RunGrace, EmptySplitErrors) {
    const auto& f = fixture();
    auto plan = f.plan;
    plan.dev_set.sequences.clear();
    EXPECT_THROW(run_grace(f.model, plan, small_config()), InvalidArgument);
}

TEST(Trace, ValidatorFlagsIllegalTraces) {
    GraceConfig gc;
    GraceTrace t;
    t.baselines = {2.0, 10.0, 3.0};
    t.outcome = Outcome::EndpointReached;
    t.events = {{0, Phase::Eval, 0, 3.0, 2.0}, {5, Phase::Unlearn, 10}, {5, Phase::Eval, 10, 4.0, 2.5}};
    // Endpoint claimed but target PPL 4 < 10; and the dev check failed
    // without a retraining round before the run ended.
    EXPECT_FALSE(validate_trace(t, gc).empty());

    GraceTrace no_baseline = t;
    no_baseline.events.erase(no_baseline.events.begin());
    EXPECT_FALSE(validate_trace(no_baseline, gc).empty());
}

TEST(Trace, MonotoneFraction) {
    GraceTrace t;
    t.events = {{0, Phase::Eval, 0, 1.0, 1.0},  {1, Phase::Unlearn, 10}, {1, Phase::Eval, 10, 2.0, 1.0},
                {2, Phase::Unlearn, 20},        {2, Phase::Eval, 20, 1.5, 1.0}, {3, Phase::Unlearn, 30},
                {3, Phase::Eval, 30, 3.0, 1.0}};
    EXPECT_DOUBLE_EQ(unlearn_monotone_fraction(t), 0.5);
}

TEST(Trace, JsonlRoundTrip) {
    const auto& f = fixture();
    const auto r = run_grace(f.model, f.plan, small_config());
    TempDir dir("trace");
    write_trace(r.trace, dir.path() / "t.jsonl");
    const auto back = read_trace(dir.path() / "t.jsonl");
    EXPECT_EQ(to_jsonl(back), to_jsonl(r.trace));
    EXPECT_EQ(back.outcome, r.trace.outcome);
    EXPECT_EQ(back.events.size(), r.trace.events.size());
}

TEST(GraceConfigJson, RoundTripAndValidation) {
    auto gc = small_config();
    gc.dev_tolerance = 0.01;
    const nlohmann::json j = gc;
    GraceConfig back;
    from_json(j, back);
    EXPECT_EQ(nlohmann::json(back), j);
    gc.endpoint_ratio = 1.5;
    EXPECT_THROW(validate(gc), InvalidArgument);
}
