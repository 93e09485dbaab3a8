#include <fstream>

#include <gtest/gtest.h>

#include "gracelab/csv.hpp"
#include "gracelab/error.hpp"
#include "gracelab/io.hpp"
#include "gracelab/seeds.hpp"
#include "gracelab/store.hpp"
#include "support.hpp"

using namespace gracelab;
using namespace gracelab::store;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

// Two linked domains and a tiny model; a full run takes a few seconds.
nlohmann::json small_json(const fs::path& out) {
    auto j = nlohmann::json::parse(R"({
      "corpus": {"link_vocab_size": 8, "domains": [
        {"name": "a", "vocab_block": [2, 14], "shared_fraction": 0.3,
         "links": [{"domain": "b", "weight": 1.0}], "doc_count": 90, "doc_length": [12, 20]},
        {"name": "b", "vocab_block": [14, 26], "shared_fraction": 0.3, "doc_count": 90, "doc_length": [12, 20]},
        {"name": "c", "vocab_block": [26, 38], "doc_count": 90, "doc_length": [12, 20]}]},
      "model": {"embed_dim": 16, "num_layers": 1, "num_heads": 2, "context_len": 32},
      "pretrain": {"learning_rate": 0.01, "max_steps": 200},
      "grace": {"eval_interval": 5, "resample_size": 64, "max_ascent_steps": 1500,
                "ascent": {"learning_rate": 0.0003}, "retrain": {"learning_rate": 0.001}},
      "probes": {"ppl_docs": 20, "cloze_items": 30, "max_prefix_len": 15},
      "targets": ["a", "c"],
      "unlearn_count": 40,
      "delta_docs": 4,
      "master_seed": 3
    })");
    j["output_dir"] = out.string();
    return j;
}

std::string slurp(const fs::path& p) {
    return read_file(p);
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        const auto rel = fs::relative(e.path(), dir).string();
        if (e.is_regular_file() && rel != "registry.jsonl" && rel != "config.json") {
            out[rel] = slurp(e.path());
        }
    }
    return out;
}

}  // namespace

TEST(Config, DefaultsAreValid) {
    const auto cfg = config_from_json(nlohmann::json::object());
    EXPECT_EQ(cfg.corpus.domains.size(), 4u);
    EXPECT_EQ(cfg.model.vocab_size, cfg.corpus.vocab_size);
    EXPECT_EQ(cfg.targets, std::vector<std::string>{"target"});
    const auto round = config_from_json(config_to_json(cfg));
    EXPECT_EQ(config_hash(round), config_hash(cfg));
    EXPECT_EQ(config_to_json(config_from_json(default_config_json())), config_to_json(cfg));
}

TEST(Config, HashIgnoresOutputDirOnly) {
    TempDir d("cfg");
    const auto a = config_from_json(small_json(d.path()));
    const auto b = config_from_json(small_json(d.path() / "elsewhere"));
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(run_id(a).size(), 16u);
    EXPECT_EQ(run_id(a).rfind("run-", 0), 0u);
    const auto c = config_from_json(small_json(d.path()), 4);
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(c.master_seed, 4u);
    EXPECT_NE(c.model.seed, a.model.seed);
}

TEST(Config, SeedFanOut) {
    auto cfg = config_from_json({{"master_seed", 11}});
    EXPECT_EQ(cfg.model.seed, derive_seed(11, SeedStream::ModelInit));
    EXPECT_EQ(cfg.pretrain.seed, derive_seed(11, SeedStream::Pretrain));
    EXPECT_EQ(cfg.probes.seed, derive_seed(11, SeedStream::Probes));
    EXPECT_EQ(cfg.grace.ascent_tc.seed, derive_seed(11, SeedStream::GraceAscent, 0));
}

TEST(Config, ValidationErrors) {
    TempDir d("cfg");
    auto bad = [&](auto edit) {
        auto j = small_json(d.path());
        edit(j);
        EXPECT_THROW(config_from_json(j), InvalidArgument) << j.dump();
    };
    bad([](auto& j) { j["bogus"] = 1; });
    bad([](auto& j) { j["targets"] = {"zzz"}; });
    bad([](auto& j) { j["targets"] = {"a", "a"}; });
    bad([](auto& j) { j["unlearn_count"] = 90; });
    bad([](auto& j) { j["model"]["vocab_size"] = 40; });
    bad([](auto& j) { j["model"]["num_heads"] = 3; });
    bad([](auto& j) { j["probes"]["max_prefix_len"] = 32; });
    bad([](auto& j) { j["analysis"] = {{"correlated_min", 0.1}}; });
    bad([](auto& j) { j["analysis"] = {{"high_impact_fraction", 1.0}}; });
    bad([](auto& j) { j["corpus"]["domains"][2]["name"] = "none"; });
    bad([](auto& j) { j["corpus"]["domains"][2]["name"] = "x/y"; });
    bad([](auto& j) { j["corpus"]["domains"][2]["vocab_block"] = {20, 30}; });
    bad([](auto& j) { j["pretrain"]["learning_rate"] = 0.0; });
    bad([](auto& j) { j["grace"]["endpoint_ratio"] = 0.0; });
    bad([](auto& j) { j["master_seed"] = "x"; });
    EXPECT_THROW(load_config(d.path() / "missing.json"), IoError);
}

TEST(Registry, LatestRecordWithArtifactsWins) {
    TempDir d("reg");
    Registry reg(d.path());
    EXPECT_TRUE(reg.records().empty());
    write_file_atomic(d.path() / "x.txt", "x");
    RunRecord r{"run-1", "h", Stage::Generated, std::nullopt, "completed", "t", {"x.txt"}, ""};
    reg.append(r);
    EXPECT_TRUE(reg.completed(Stage::Generated).has_value());
    EXPECT_FALSE(reg.completed(Stage::Pretrained).has_value());
    r.status = "failed";
    reg.append(r);
    EXPECT_FALSE(reg.completed(Stage::Generated).has_value());
    r.status = "completed";
    r.artifacts = {"gone.txt"};
    reg.append(r);
    EXPECT_FALSE(reg.completed(Stage::Generated).has_value());

    // A torn final line is ignored.
    std::ofstream(reg.path(), std::ios::app) << R"({"run_id": "run-1", "sta)";
    EXPECT_EQ(reg.records().size(), 3u);

    const auto back = record_from_json(record_to_json(r));
    EXPECT_EQ(back.artifacts, r.artifacts);
    EXPECT_EQ(back.stage, r.stage);
    EXPECT_THROW(stage_from_string("DONE"), InvalidArgument);
}

TEST(TopBottom, SingleRowPerSide) {
    analysis::PerformanceMatrix m{{"x", "y"}, {"p"}, {{-0.2}, {0.1}}};
    const auto t = csv::parse(top_bottom_csv(m, 1));
    ASSERT_EQ(t.rows.size(), 2u);
    const auto kind = t.column("rank_type");
    const auto corpus = t.column("corpus");
    EXPECT_EQ(t.rows[0][kind], "top");
    EXPECT_EQ(t.rows[0][corpus], "x");
    EXPECT_EQ(t.rows[1][kind], "bottom");
    EXPECT_EQ(t.rows[1][corpus], "y");
    EXPECT_EQ(csv::parse(top_bottom_csv(m, 5)).rows.size(), 4u);
}

TEST(Pipeline, EndToEndResumeAndFailure) {
    TempDir d("pipe");
    const auto cfg = config_from_json(small_json(d.path()));
    Pipeline p(cfg);
    const auto rec = p.run();
    EXPECT_EQ(rec.stage, Stage::Analyzed);
    for (auto s : {Stage::Generated, Stage::Pretrained, Stage::Evaluated, Stage::Analyzed}) {
        EXPECT_TRUE(p.is_complete(s));
    }
    EXPECT_TRUE(p.is_complete(Stage::Unlearned, "a"));
    EXPECT_TRUE(p.is_complete(Stage::Unlearned, "c"));

    // Every report parses.
    const auto reports = p.run_dir() / "reports";
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(reports)) {
        ++files;
        const auto ext = e.path().extension();
        if (ext == ".csv") {
            EXPECT_NO_THROW(csv::parse(slurp(e.path()))) << e.path();
        } else if (ext == ".json") {
            EXPECT_NO_THROW((void)nlohmann::json::parse(slurp(e.path()))) << e.path();
        }
    }
    EXPECT_GE(files, 10u);
    const auto matrix = analysis::matrix_from_csv(slurp(reports / "performance_matrix.csv"));
    EXPECT_EQ(matrix.corpora, (std::vector<std::string>{"a", "c"}));
    EXPECT_EQ(matrix.capabilities.size(), 6u);
    EXPECT_TRUE(fs::exists(reports / "capability_correlation.csv"));
    const auto config_on_disk = nlohmann::json::parse(slurp(p.run_dir() / "config.json"));
    EXPECT_EQ(config_hash(config_from_json(config_on_disk)), config_hash(cfg));

    // A second run in a fresh directory reproduces every artifact byte for byte.
    TempDir d2("pipe2");
    Pipeline q(config_from_json(small_json(d2.path())));
    q.run();
    const auto first = snapshot(p.run_dir());
    EXPECT_EQ(first, snapshot(q.run_dir()));

    // Deleting an analysis output resumes from ANALYZED only.
    const auto pretrain_records = [&] {
        std::size_t n = 0;
        for (const auto& r : p.registry().records()) {
            n += r.stage == Stage::Pretrained ? 1 : 0;
        }
        return n;
    };
    const auto before = pretrain_records();
    fs::remove(p.run_dir() / "results" / "performance_matrix.csv");
    EXPECT_FALSE(p.is_complete(Stage::Analyzed));
    Pipeline resumed(cfg);
    resumed.run();
    EXPECT_EQ(pretrain_records(), before);
    EXPECT_EQ(snapshot(p.run_dir()), first);

    // A missing checkpoint makes the unlearning stage fail with its name.
    fs::remove(p.run_dir() / "checkpoints" / "pretrained.bin");
    Pipeline broken(cfg);
    try {
        broken.unlearn("a");
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "UNLEARNED(a)");
        EXPECT_EQ(std::string(e.what()).rfind("UNLEARNED(a)", 0), 0u);
    }
    const auto last = p.registry().records().back();
    EXPECT_EQ(last.status, "failed");
    EXPECT_EQ(last.stage, Stage::Unlearned);
    EXPECT_FALSE(last.error.empty());
}

TEST(Pipeline, StagesRequireTheirInputs) {
    TempDir d("pipe");
    Pipeline p(config_from_json(small_json(d.path())));
    EXPECT_THROW(p.pretrain(), StageError);
    EXPECT_THROW(p.evaluate(), StageError);
    EXPECT_THROW(p.report(), StageError);
    EXPECT_THROW(p.unlearn("b"), StageError);  // not a configured target
}
