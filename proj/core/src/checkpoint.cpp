#include <bit>
#include <cstring>

#include <fmt/format.h>

#include "gracelab/error.hpp"
#include "gracelab/io.hpp"
#include "gracelab/model.hpp"

namespace gracelab::model {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace {

std::string encode_weights(const std::vector<float>& params) {
    std::string bytes(params.size() * sizeof(float), '\0');
    std::memcpy(bytes.data(), params.data(), bytes.size());
    return bytes;
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& stem) {
    auto p = stem;
    p += ".json";
    return p;
}

std::filesystem::path weights_path(const std::filesystem::path& stem) {
    auto p = stem;
    p += ".bin";
    return p;
}

CheckpointManifest save_checkpoint(const ModelState& model,
                                   const std::filesystem::path& stem,
                                   const nlohmann::json& seed_lineage) {
    if (model.parameters.size() != parameter_count(model.config)) {
        throw InvalidArgument("save_checkpoint: parameter count does not match config");
    }
    const std::string bytes = encode_weights(model.parameters);
    CheckpointManifest m{model.config, model.step_counter, model.parameters.size(), sha256_hex(bytes), seed_lineage,
                         parameter_layout(model.config)};

    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : m.segments) {
        segs.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows}, {"cols", s.cols}});
    }
    const nlohmann::json j = {{"format", "gracelab-checkpoint-v1"},
                              {"dtype", "float32-le"},
                              {"config", m.config},
                              {"step_counter", m.step_counter},
                              {"parameter_count", m.parameter_count},
                              {"content_sha256", m.content_sha256},
                              {"seed_lineage", m.seed_lineage},
                              {"segments", segs}};
    // Weights first: a manifest on disk implies its weights are complete.
    write_file_atomic(weights_path(stem), bytes);
    write_file_atomic(manifest_path(stem), j.dump(2) + "\n");
    return m;
}

ModelState load_checkpoint(const std::filesystem::path& stem, CheckpointManifest* manifest) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(manifest_path(stem)));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("{}: {}", manifest_path(stem).string(), e.what()));
    }
    CheckpointManifest m;
    m.config = j.at("config").get<ModelConfig>();
    m.step_counter = j.at("step_counter").get<std::uint64_t>();
    m.parameter_count = j.at("parameter_count").get<std::size_t>();
    m.content_sha256 = j.at("content_sha256").get<std::string>();
    m.seed_lineage = j.value("seed_lineage", nlohmann::json::object());
    m.segments = parameter_layout(m.config);

    if (m.parameter_count != parameter_count(m.config)) {
        throw IoError(fmt::format("{}: parameter_count disagrees with config", manifest_path(stem).string()));
    }
    const std::string bytes = read_file(weights_path(stem));
    if (bytes.size() != m.parameter_count * sizeof(float)) {
        throw IoError(fmt::format("{}: expected {} bytes, found {}", weights_path(stem).string(),
                                  m.parameter_count * sizeof(float), bytes.size()));
    }
    if (sha256_hex(bytes) != m.content_sha256) {
        throw IoError(fmt::format("{}: content hash mismatch", weights_path(stem).string()));
    }
    ModelState model{m.config, std::vector<float>(m.parameter_count), m.step_counter};
    std::memcpy(model.parameters.data(), bytes.data(), bytes.size());
    if (manifest != nullptr) {
        *manifest = std::move(m);
    }
    return model;
}

}  // namespace gracelab::model
