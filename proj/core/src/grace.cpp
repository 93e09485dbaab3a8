#include "gracelab/grace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gracelab/error.hpp"
#include "gracelab/io.hpp"
#include "gracelab/seeds.hpp"

namespace gracelab::grace {

void validate(const GraceConfig& gc) {
    if (gc.eval_interval == 0) {
        throw InvalidArgument("grace: eval_interval must be positive");
    }
    if (!(gc.dev_tolerance >= 0.0)) {
        throw InvalidArgument("grace: dev_tolerance must be non-negative");
    }
    if (gc.resample_size == 0) {
        throw InvalidArgument("grace: resample_size must be positive");
    }
    if (!(gc.endpoint_ratio > 0.0 && gc.endpoint_ratio <= 1.0)) {
        throw InvalidArgument("grace: endpoint_ratio must lie in (0, 1]");
    }
    if (gc.max_ascent_steps == 0) {
        throw InvalidArgument("grace: max_ascent_steps must be >= 1");
    }
    if (gc.retrain_bound_factor == 0 || gc.retrain_eval_interval == 0) {
        throw InvalidArgument("grace: retrain bounds must be positive");
    }
    if (gc.randomizer.max_piece_len < 1) {
        throw InvalidArgument("grace: randomizer max_piece_len must be >= 1");
    }
    model::validate(gc.ascent_tc);
    model::validate(gc.retrain_tc);
}

std::string_view to_string(Phase p) noexcept {
    switch (p) {
        case Phase::Unlearn: return "UNLEARN";
        case Phase::Retrain: return "RETRAIN";
        case Phase::Eval: return "EVAL";
    }
    return "?";
}

std::string_view to_string(Outcome o) noexcept {
    switch (o) {
        case Outcome::EndpointReached: return "ENDPOINT_REACHED";
        case Outcome::MaxSteps: return "MAX_STEPS";
        case Outcome::Aborted: return "ABORTED";
    }
    return "?";
}

Phase phase_from_string(std::string_view s) {
    for (auto p : {Phase::Unlearn, Phase::Retrain, Phase::Eval}) {
        if (to_string(p) == s) {
            return p;
        }
    }
    throw InvalidArgument(fmt::format("unknown phase '{}'", s));
}

Outcome outcome_from_string(std::string_view s) {
    for (auto o : {Outcome::EndpointReached, Outcome::MaxSteps, Outcome::Aborted}) {
        if (to_string(o) == s) {
            return o;
        }
    }
    throw InvalidArgument(fmt::format("unknown outcome '{}'", s));
}

double endpoint_baseline(const model::ModelState& original,
                         const corpus::DocumentSet& target_eval,
                         const corpus::RandomizerConfig& rcfg) {
    if (target_eval.empty()) {
        throw InvalidArgument("endpoint_baseline: empty target evaluation set");
    }
    return model::perplexity(original, corpus::randomize_set(target_eval, rcfg));
}

std::vector<std::size_t> resample_indices(std::size_t pool_size, std::size_t k, std::uint32_t round,
                                          std::uint64_t seed) {
    if (pool_size == 0) {
        throw InvalidArgument("resample_retrain_set: empty pool");
    }
    std::mt19937_64 rng(derive_seed(seed, SeedStream::GraceRetrain, round));
    std::vector<std::size_t> idx;
    if (pool_size >= k) {
        idx.resize(pool_size);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(k);
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
        idx.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            idx.push_back(pick(rng));
        }
    }
    return idx;
}

corpus::DocumentSet resample_retrain_set(const corpus::DocumentSet& pool,
                                         std::size_t k,
                                         std::uint32_t round,
                                         std::uint64_t seed) {
    corpus::DocumentSet out{pool.domain, {}};
    for (auto i : resample_indices(pool.size(), k, round, seed)) {
        out.sequences.push_back(pool.sequences[i]);
    }
    return out;
}

GraceResult run_grace(model::ModelState model, const corpus::SplitPlan& plan, const GraceConfig& gc) {
    validate(gc);
    if (plan.unlearn_set.empty() || plan.target_eval_set.empty() || plan.retrain_pool.empty() ||
        plan.dev_set.empty()) {
        throw InvalidArgument("run_grace: every split must be non-empty");
    }

    GraceResult result{std::move(model), {}};
    auto& m = result.model;
    auto& trace = result.trace;

    trace.baselines.ppl_dev_0 = model::perplexity(m, plan.dev_set);
    trace.baselines.ppl_rand = endpoint_baseline(m, plan.target_eval_set, gc.randomizer);
    trace.baselines.ppl_target_0 = model::perplexity(m, plan.target_eval_set);
    const double endpoint = gc.endpoint_ratio * trace.baselines.ppl_rand;
    const double trigger = trace.baselines.ppl_dev_0 * (1.0 + gc.dev_tolerance);

    std::uint64_t ascent_total = 0;
    const auto log_eval = [&](double pt, double pd) {
        TraceEvent e;
        e.step = m.step_counter;
        e.phase = Phase::Eval;
        e.ascent_steps = ascent_total;
        e.ppl_target = pt;
        e.ppl_dev = pd;
        trace.events.push_back(e);
    };
    const auto finished = [&](double pt, double pd) { return pt >= endpoint && pd <= trigger; };

    log_eval(trace.baselines.ppl_target_0, trace.baselines.ppl_dev_0);
    if (finished(trace.baselines.ppl_target_0, trace.baselines.ppl_dev_0)) {
        trace.outcome = Outcome::EndpointReached;
        return result;
    }

    model::Optimizer ascent_opt(gc.ascent_tc);
    model::Optimizer retrain_opt(gc.retrain_tc);
    model::BatchSampler ascent_batches(plan.unlearn_set, gc.ascent_tc.batch_size, gc.ascent_tc.seed);
    std::uint32_t round = 0;

    try {
        while (true) {
            if (ascent_total >= gc.max_ascent_steps) {
                trace.outcome = Outcome::MaxSteps;
                trace.message = fmt::format("ascent budget of {} steps exhausted", gc.max_ascent_steps);
                break;
            }
            const std::uint64_t block = std::min<std::uint64_t>(gc.eval_interval, gc.max_ascent_steps - ascent_total);
            double loss_sum = 0.0;
            for (std::uint64_t s = 0; s < block; ++s) {
                loss_sum += model::ascent_step(m, ascent_batches.next(), ascent_opt).loss;
                ++ascent_total;
            }
            TraceEvent u;
            u.step = m.step_counter;
            u.phase = Phase::Unlearn;
            u.ascent_steps = ascent_total;
            u.loss = loss_sum / static_cast<double>(block);
            trace.events.push_back(u);

            double pt = model::perplexity(m, plan.target_eval_set);
            double pd = model::perplexity(m, plan.dev_set);
            if (!std::isfinite(pt) || !std::isfinite(pd)) {
                throw NonFiniteError("non-finite perplexity during unlearning");
            }
            log_eval(pt, pd);
            if (finished(pt, pd)) {
                trace.outcome = Outcome::EndpointReached;
                break;
            }
            if (pd <= trigger) {
                continue;
            }

            ++round;
            const auto retrain_set = resample_retrain_set(plan.retrain_pool, gc.resample_size, round,
                                                          gc.retrain_tc.seed);
            model::BatchSampler retrain_batches(retrain_set, gc.retrain_tc.batch_size,
                                                derive_seed(gc.retrain_tc.seed, SeedStream::GraceRetrain,
                                                            0x80000000ULL + round));
            const std::uint64_t bound = gc.retrain_step_bound();
            std::uint64_t steps = 0;
            bool restored = false;
            while (steps < bound) {
                model::descent_step(m, retrain_batches.next(), retrain_opt);
                ++steps;
                if (steps % gc.retrain_eval_interval == 0 || steps == bound) {
                    pd = model::perplexity(m, plan.dev_set);
                    if (pd <= trace.baselines.ppl_dev_0) {
                        restored = true;
                        break;
                    }
                }
            }
            if (!restored) {
                spdlog::warn("retraining round {} hit the {}-step bound with dev PPL {:.4f} > {:.4f}; resuming",
                             round, bound, pd, trace.baselines.ppl_dev_0);
            }
            TraceEvent r;
            r.step = m.step_counter;
            r.phase = Phase::Retrain;
            r.ascent_steps = ascent_total;
            r.round = round;
            r.retrain_steps = steps;
            r.restored = restored;
            trace.events.push_back(r);

            pt = model::perplexity(m, plan.target_eval_set);
            log_eval(pt, pd);
            if (finished(pt, pd)) {
                trace.outcome = Outcome::EndpointReached;
                break;
            }
        }
    } catch (const NonFiniteError& e) {
        trace.outcome = Outcome::Aborted;
        trace.message = e.what();
        spdlog::error("unlearning aborted: {}", e.what());
    }
    return result;
}

std::vector<std::string> validate_trace(const GraceTrace& trace, const GraceConfig& gc) {
    std::vector<std::string> errors;
    const auto& ev = trace.events;
    const double trigger = trace.baselines.ppl_dev_0 * (1.0 + gc.dev_tolerance);
    if (ev.empty()) {
        errors.emplace_back("trace has no events");
        return errors;
    }
    if (ev.front().phase != Phase::Eval || ev.front().ascent_steps != 0) {
        errors.emplace_back("baseline evaluation is not the first event");
    }
    for (std::size_t i = 0; i < ev.size(); ++i) {
        const auto& e = ev[i];
        if (i > 0 && e.ascent_steps < ev[i - 1].ascent_steps) {
            errors.push_back(fmt::format("event {}: ascent step count decreased", i));
        }
        if (e.phase == Phase::Eval && (!e.ppl_target || !e.ppl_dev)) {
            errors.push_back(fmt::format("event {}: EVAL without perplexities", i));
        }
        if (e.phase == Phase::Unlearn) {
            if (i == 0 || ev[i - 1].phase != Phase::Eval || !ev[i - 1].ppl_dev || *ev[i - 1].ppl_dev > trigger) {
                errors.push_back(fmt::format("event {}: UNLEARN resumed without a passing dev check", i));
            }
        }
        if (e.phase == Phase::Retrain) {
            if (i == 0 || ev[i - 1].phase != Phase::Eval || !ev[i - 1].ppl_dev || !(*ev[i - 1].ppl_dev > trigger)) {
                errors.push_back(fmt::format("event {}: RETRAIN entered without a failed dev check", i));
            }
            if (i + 1 >= ev.size() || ev[i + 1].phase != Phase::Eval || !ev[i + 1].ppl_dev ||
                *ev[i + 1].ppl_dev > trace.baselines.ppl_dev_0) {
                errors.push_back(fmt::format("event {}: RETRAIN did not restore the dev perplexity", i));
            }
        }
    }
    if (trace.outcome == Outcome::EndpointReached) {
        const TraceEvent* last = nullptr;
        for (const auto& e : ev) {
            if (e.phase == Phase::Eval) {
                last = &e;
            }
        }
        if (last == nullptr || !last->ppl_target || *last->ppl_target < gc.endpoint_ratio * trace.baselines.ppl_rand) {
            errors.emplace_back("ENDPOINT_REACHED but the last target perplexity is below the endpoint");
        }
    }
    return errors;
}

double unlearn_monotone_fraction(const GraceTrace& trace) {
    std::vector<double> series;
    for (std::size_t i = 1; i < trace.events.size(); ++i) {
        if (trace.events[i].phase == Phase::Eval && trace.events[i - 1].phase == Phase::Unlearn) {
            series.push_back(*trace.events[i].ppl_target);
        }
    }
    if (series.size() < 2) {
        return 1.0;
    }
    std::size_t ok = 0;
    for (std::size_t i = 1; i < series.size(); ++i) {
        ok += series[i] >= series[i - 1] ? 1 : 0;
    }
    return static_cast<double>(ok) / static_cast<double>(series.size() - 1);
}

namespace {

nlohmann::json event_json(const TraceEvent& e) {
    nlohmann::json j = {{"step", e.step}, {"phase", to_string(e.phase)}, {"ascent_steps", e.ascent_steps}};
    if (e.ppl_target) j["ppl_target"] = *e.ppl_target;
    if (e.ppl_dev) j["ppl_dev"] = *e.ppl_dev;
    if (e.loss) j["loss"] = *e.loss;
    if (e.round) j["round"] = *e.round;
    if (e.retrain_steps) j["retrain_steps"] = *e.retrain_steps;
    if (e.restored) j["restored"] = *e.restored;
    return j;
}

template <class T>
std::optional<T> opt_field(const nlohmann::json& j, const char* key) {
    if (j.contains(key)) {
        return j.at(key).get<T>();
    }
    return std::nullopt;
}

}  // namespace

std::string to_jsonl(const GraceTrace& trace) {
    std::string out;
    for (const auto& e : trace.events) {
        out += event_json(e).dump();
        out += '\n';
    }
    const nlohmann::json footer = {{"footer", true},
                                   {"baselines",
                                    {{"ppl_dev_0", trace.baselines.ppl_dev_0},
                                     {"ppl_rand", trace.baselines.ppl_rand},
                                     {"ppl_target_0", trace.baselines.ppl_target_0}}},
                                   {"outcome", to_string(trace.outcome)},
                                   {"message", trace.message}};
    out += footer.dump();
    out += '\n';
    return out;
}

GraceTrace trace_from_jsonl(std::string_view text) {
    GraceTrace trace;
    bool footer = false;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        if (j.value("footer", false)) {
            const auto& b = j.at("baselines");
            trace.baselines = {b.at("ppl_dev_0").get<double>(), b.at("ppl_rand").get<double>(),
                               b.at("ppl_target_0").get<double>()};
            trace.outcome = outcome_from_string(j.at("outcome").get<std::string>());
            trace.message = j.value("message", "");
            footer = true;
            continue;
        }
        TraceEvent e;
        e.step = j.at("step").get<std::uint64_t>();
        e.phase = phase_from_string(j.at("phase").get<std::string>());
        e.ascent_steps = j.at("ascent_steps").get<std::uint64_t>();
        e.ppl_target = opt_field<double>(j, "ppl_target");
        e.ppl_dev = opt_field<double>(j, "ppl_dev");
        e.loss = opt_field<double>(j, "loss");
        e.round = opt_field<std::uint32_t>(j, "round");
        e.retrain_steps = opt_field<std::uint64_t>(j, "retrain_steps");
        e.restored = opt_field<bool>(j, "restored");
        trace.events.push_back(e);
    }
    if (!footer) {
        throw IoError("trace has no footer record");
    }
    return trace;
}

void write_trace(const GraceTrace& trace, const std::filesystem::path& path) {
    write_file_atomic(path, to_jsonl(trace));
}

GraceTrace read_trace(const std::filesystem::path& path) {
    try {
        return trace_from_jsonl(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void to_json(nlohmann::json& j, const GraceConfig& gc) {
    j = {{"eval_interval", gc.eval_interval},
         {"dev_tolerance", gc.dev_tolerance},
         {"resample_size", gc.resample_size},
         {"endpoint_ratio", gc.endpoint_ratio},
         {"max_ascent_steps", gc.max_ascent_steps},
         {"retrain_bound_factor", gc.retrain_bound_factor},
         {"retrain_eval_interval", gc.retrain_eval_interval},
         {"ascent", gc.ascent_tc},
         {"retrain", gc.retrain_tc},
         {"randomizer", gc.randomizer}};
}

void from_json(const nlohmann::json& j, GraceConfig& gc) {
    const GraceConfig d;
    gc.eval_interval = j.value("eval_interval", d.eval_interval);
    gc.dev_tolerance = j.value("dev_tolerance", d.dev_tolerance);
    gc.resample_size = j.value("resample_size", d.resample_size);
    gc.endpoint_ratio = j.value("endpoint_ratio", d.endpoint_ratio);
    gc.max_ascent_steps = j.value("max_ascent_steps", d.max_ascent_steps);
    gc.retrain_bound_factor = j.value("retrain_bound_factor", d.retrain_bound_factor);
    gc.retrain_eval_interval = j.value("retrain_eval_interval", d.retrain_eval_interval);
    gc.ascent_tc = d.ascent_tc;
    if (j.contains("ascent")) {
        model::from_json(j.at("ascent"), gc.ascent_tc);
    }
    gc.retrain_tc = d.retrain_tc;
    if (j.contains("retrain")) {
        model::from_json(j.at("retrain"), gc.retrain_tc);
    }
    gc.randomizer = d.randomizer;
    if (j.contains("randomizer")) {
        corpus::from_json(j.at("randomizer"), gc.randomizer);
    }
}

}  // namespace gracelab::grace
