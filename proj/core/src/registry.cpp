#include <chrono>
#include <fstream>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "gracelab/error.hpp"
#include "gracelab/store.hpp"
#include "store_internal.hpp"

namespace gracelab::store {

namespace fs = std::filesystem;

std::string_view to_string(Stage s) noexcept {
    switch (s) {
        case Stage::Generated: return "GENERATED";
        case Stage::Pretrained: return "PRETRAINED";
        case Stage::Unlearned: return "UNLEARNED";
        case Stage::Evaluated: return "EVALUATED";
        case Stage::Analyzed: return "ANALYZED";
    }
    return "?";
}

Stage stage_from_string(std::string_view s) {
    for (auto st : {Stage::Generated, Stage::Pretrained, Stage::Unlearned, Stage::Evaluated, Stage::Analyzed}) {
        if (to_string(st) == s) {
            return st;
        }
    }
    throw InvalidArgument(fmt::format("unknown stage '{}'", s));
}

nlohmann::json record_to_json(const RunRecord& r) {
    nlohmann::json j{{"run_id", r.run_id},
                     {"config_hash", r.config_hash},
                     {"stage", to_string(r.stage)},
                     {"status", r.status},
                     {"timestamp", r.timestamp},
                     {"artifacts", r.artifacts}};
    if (r.target) {
        j["target"] = *r.target;
    }
    if (!r.error.empty()) {
        j["error"] = r.error;
    }
    return j;
}

RunRecord record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.stage = stage_from_string(j.at("stage").get<std::string>());
    r.status = j.at("status").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    if (j.contains("target")) {
        r.target = j.at("target").get<std::string>();
    }
    r.error = j.value("error", std::string());
    return r;
}

Registry::Registry(fs::path run_dir) : dir_(std::move(run_dir)), path_(dir_ / "registry.jsonl") {}

std::vector<RunRecord> Registry::records() const {
    std::vector<RunRecord> out;
    std::ifstream in(path_);
    if (!in) {
        return out;
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception&) {
            // A torn final line from an interrupted append carries no commit.
            continue;
        }
    }
    return out;
}

void Registry::append(const RunRecord& r) const {
    fs::create_directories(dir_);
    std::ofstream out(path_, std::ios::app);
    out << record_to_json(r).dump() << '\n';
    out.flush();
    if (!out) {
        throw IoError(fmt::format("cannot append to {}", path_.string()));
    }
}

std::optional<RunRecord> Registry::completed(Stage s, const std::optional<std::string>& target) const {
    const auto all = records();
    for (auto it = all.rbegin(); it != all.rend(); ++it) {
        if (it->stage != s || it->target != target) {
            continue;
        }
        if (it->status != "completed") {
            return std::nullopt;
        }
        for (const auto& a : it->artifacts) {
            if (!fs::exists(dir_ / a)) {
                return std::nullopt;
            }
        }
        return *it;
    }
    return std::nullopt;
}

StageError::StageError(std::string stage, const std::string& message)
    : std::runtime_error(fmt::format("{}: {}", stage, message)), stage_(std::move(stage)) {}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    return fmt::format("{:%Y-%m-%dT%H:%M:%S}.{:03d}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)), ms);
}

}  // namespace gracelab::store
