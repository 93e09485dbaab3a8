#include <algorithm>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "gracelab/corpus.hpp"
#include "gracelab/error.hpp"

namespace gracelab::corpus {

ByteTokenizer ByteTokenizer::standard() {
    std::array<std::optional<TokenId>, 256> table{};
    for (unsigned b = 0x20; b < 0x7f; ++b) {
        table[b] = b;
    }
    table['\t'] = '\t';
    table['\n'] = '\n';
    table['\r'] = '\r';
    return ByteTokenizer(table);
}

ByteTokenizer::ByteTokenizer(std::array<std::optional<TokenId>, 256> table) : table_(table) {
    for (const auto& id : table_) {
        if (id && (*id >= 256 || *id < kFirstFreeToken)) {
            throw InvalidArgument("byte tokenizer ids must lie in [2, 256)");
        }
    }
}

std::vector<TokenId> ByteTokenizer::encode(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (unsigned char c : text) {
        out.push_back(table_[c].value_or(kUnkToken));
    }
    return out;
}

DocumentSet ingest_text_dir(const std::filesystem::path& dir,
                            const std::string& domain,
                            const ByteTokenizer& tokenizer) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) {
        throw IoError(fmt::format("not a directory: {}", dir.string()));
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    if (files.empty()) {
        throw IoError(fmt::format("no text files in {}", dir.string()));
    }
    std::sort(files.begin(), files.end());

    DocumentSet docs{domain, {}};
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) {
            throw IoError(fmt::format("cannot read {}", f.string()));
        }
        const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        if (text.empty()) {
            throw IoError(fmt::format("empty file: {}", f.string()));
        }
        docs.sequences.push_back({tokenizer.encode(text), domain});
    }
    return docs;
}

}  // namespace gracelab::corpus
