#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gracelab::corpus {

using TokenId = std::uint32_t;

/// Ids 0 and 1 are reserved in every vocabulary.
inline constexpr TokenId kBosToken = 0;
inline constexpr TokenId kUnkToken = 1;
inline constexpr TokenId kFirstFreeToken = 2;

/// Half-open range [begin, end) of token ids.
struct TokenRange {
    TokenId begin = 0;
    TokenId end = 0;

    [[nodiscard]] std::uint32_t size() const noexcept { return end > begin ? end - begin : 0; }
    [[nodiscard]] bool contains(TokenId t) const noexcept { return t >= begin && t < end; }
    [[nodiscard]] bool overlaps(const TokenRange& o) const noexcept {
        return begin < o.end && o.begin < end;
    }
    bool operator==(const TokenRange&) const = default;
};

struct DomainLink {
    std::string other;
    double weight = 0.0;
    /// Vocabulary owned by the link; filled by resolve_corpus().
    TokenRange shared_block{};
    /// Seed of the phrase inventory shared by both endpoints of the link.
    std::uint64_t grammar_seed = 0;
};

struct DomainSpec {
    std::string name;
    TokenRange vocab_block;
    double shared_fraction = 0.0;
    std::vector<DomainLink> links;
    std::uint32_t doc_count = 1;
    std::uint32_t min_doc_length = 1;
    std::uint32_t max_doc_length = 1;
    /// Seed of the private phrase inventory; filled by resolve_corpus().
    std::uint64_t grammar_seed = 0;
};

/// A set of domains plus the link vocabulary layout.
struct CorpusSpec {
    std::vector<DomainSpec> domains;
    /// Tokens allotted to each link's shared phrase inventory.
    std::uint32_t link_vocab_size = 12;
    /// Total vocabulary after resolution (reserved ids + domain + link blocks).
    std::uint32_t vocab_size = 0;

    [[nodiscard]] const DomainSpec& domain(std::string_view name) const;
    [[nodiscard]] bool has_domain(std::string_view name) const noexcept;
};

struct TokenSequence {
    std::vector<TokenId> tokens;
    std::string domain;

    bool operator==(const TokenSequence&) const = default;
};

/// Domain tag of a set pooled from several domains (split retrain/dev sets).
inline constexpr std::string_view kMixedDomain = "*";

struct DocumentSet {
    std::string domain;
    std::vector<TokenSequence> sequences;

    [[nodiscard]] std::size_t size() const noexcept { return sequences.size(); }
    [[nodiscard]] bool empty() const noexcept { return sequences.empty(); }
    [[nodiscard]] std::size_t token_count() const noexcept;
    bool operator==(const DocumentSet&) const = default;
};

struct RandomizerConfig {
    std::uint32_t max_piece_len = 4;
    std::uint64_t seed = 0;
};

struct SplitPlan {
    DocumentSet unlearn_set;
    DocumentSet target_eval_set;
    DocumentSet retrain_pool;
    DocumentSet dev_set;
};

/// Validates domain specs, mirrors one-sided links, checks link symmetry,
/// assigns link vocabulary blocks after the highest domain block (links
/// ordered by sorted endpoint names) and derives each link's grammar seed
/// from `grammar_seed`. Throws InvalidArgument on any violated invariant.
CorpusSpec resolve_corpus(CorpusSpec spec, std::uint64_t grammar_seed);

/// Checks a single (resolved) domain spec.
void validate_domain(const DomainSpec& spec);

/// A phrase is a fixed token string; its first token is unique within the
/// inventory it belongs to, so everything after the first token is
/// determined by it.
using Phrase = std::vector<TokenId>;

/// The production set of one domain: its private phrases plus the phrases
/// of every link it participates in, with the probability of drawing from
/// each inventory.
class DomainGrammar {
public:
    struct Inventory {
        std::vector<Phrase> phrases;
        double probability = 0.0;
        std::string source;  // "private" or the linked domain name
    };

    explicit DomainGrammar(const DomainSpec& spec);

    [[nodiscard]] const std::vector<Inventory>& inventories() const noexcept { return inventories_; }

    /// Token length of a document is drawn uniformly from the spec range;
    /// phrases are appended until the length is reached (the last one is
    /// truncated). `boundaries` receives the start offset of every phrase.
    TokenSequence sample_document(std::mt19937_64& rng,
                                  std::vector<std::size_t>* boundaries = nullptr) const;

    /// Draws one complete phrase.
    const Phrase& sample_phrase(std::mt19937_64& rng) const;

    [[nodiscard]] const DomainSpec& spec() const noexcept { return spec_; }

private:
    DomainSpec spec_;
    std::vector<Inventory> inventories_;
};

/// Generates spec.doc_count documents. Output is a pure function of (spec, seed).
DocumentSet generate_domain(const DomainSpec& spec, std::uint64_t seed);

/// Splits every token sequence into pieces of length uniform in
/// [1, max_piece_len], shuffles the pieces and concatenates them.
TokenSequence randomize_text(const TokenSequence& seq, const RandomizerConfig& cfg);

DocumentSet randomize_set(const DocumentSet& docs, const RandomizerConfig& cfg);

/// Samples `unlearn_count` target sequences without replacement; the rest of
/// the target becomes the evaluation split. Non-target sequences are pooled,
/// shuffled and divided 9:1 with rounding in favour of the retrain pool.
SplitPlan make_splits(const DocumentSet& target,
                      std::span<const DocumentSet> non_target,
                      std::size_t unlearn_count,
                      std::uint64_t seed);

/// Byte-level tokenizer: one id per byte, with unmapped bytes sent to UNK.
class ByteTokenizer {
public:
    /// Printable ASCII, tab, newline and carriage return map to their byte
    /// value; every other byte (including 0 and 1) is unknown.
    static ByteTokenizer standard();

    explicit ByteTokenizer(std::array<std::optional<TokenId>, 256> table);

    [[nodiscard]] std::vector<TokenId> encode(std::string_view text) const;
    [[nodiscard]] std::uint32_t vocab_size() const noexcept { return 256; }

private:
    std::array<std::optional<TokenId>, 256> table_;
};

/// One sequence per regular file in `dir`, files visited in sorted path order.
DocumentSet ingest_text_dir(const std::filesystem::path& dir,
                            const std::string& domain,
                            const ByteTokenizer& tokenizer);

// JSONL: one {"domain": ..., "tokens": [...]} record per line.
void write_jsonl(const DocumentSet& docs, const std::filesystem::path& path);
DocumentSet read_jsonl(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const DomainSpec& spec);
void from_json(const nlohmann::json& j, DomainSpec& spec);
void to_json(nlohmann::json& j, const CorpusSpec& spec);
void from_json(const nlohmann::json& j, CorpusSpec& spec);
void to_json(nlohmann::json& j, const RandomizerConfig& cfg);
void from_json(const nlohmann::json& j, RandomizerConfig& cfg);

}  // namespace gracelab::corpus
