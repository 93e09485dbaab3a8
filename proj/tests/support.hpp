#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "gracelab/corpus.hpp"
#include "gracelab/model.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("gracelab-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline gracelab::corpus::DomainSpec domain(std::string name, gracelab::corpus::TokenId begin, gracelab::corpus::TokenId end,
                                           std::uint32_t docs = 20, std::uint32_t min_len = 8,
                                           std::uint32_t max_len = 16) {
    gracelab::corpus::DomainSpec d;
    d.name = std::move(name);
    d.vocab_block = {begin, end};
    d.doc_count = docs;
    d.min_doc_length = min_len;
    d.max_doc_length = max_len;
    return d;
}

/// 284-parameter model: vocab 8, dim 4, one layer, two heads, context 4.
inline gracelab::model::ModelConfig micro_config(std::uint64_t seed = 7) {
    return {8, 4, 1, 2, 4, seed};
}

}  // namespace testing_support
