#include "gracelab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "gracelab/error.hpp"
#include "gracelab/io.hpp"
#include "gracelab/seeds.hpp"

namespace gracelab::corpus {

namespace {

constexpr std::size_t kMinPhraseLen = 2;
constexpr std::size_t kMaxPhraseLen = 5;

std::string link_key(const std::string& a, const std::string& b) {
    return a < b ? a + '\x1f' + b : b + '\x1f' + a;
}

// Phrase inventory over `block`: half the block (at least one) serves as
// distinct first tokens, every later token is drawn from the whole block.
std::vector<Phrase> make_inventory(const TokenRange& block, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<TokenId> ids(block.size());
    std::iota(ids.begin(), ids.end(), block.begin);
    std::shuffle(ids.begin(), ids.end(), rng);

    const std::size_t count = std::max<std::size_t>(1, ids.size() / 2);
    std::uniform_int_distribution<std::size_t> length(kMinPhraseLen, kMaxPhraseLen);
    std::uniform_int_distribution<TokenId> token(block.begin, block.end - 1);

    std::vector<Phrase> phrases;
    phrases.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Phrase p{ids[i]};
        const std::size_t len = length(rng);
        while (p.size() < len) {
            p.push_back(token(rng));
        }
        phrases.push_back(std::move(p));
    }
    return phrases;
}

}  // namespace

std::size_t DocumentSet::token_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : sequences) {
        n += s.tokens.size();
    }
    return n;
}

const DomainSpec& CorpusSpec::domain(std::string_view name) const {
    for (const auto& d : domains) {
        if (d.name == name) {
            return d;
        }
    }
    throw InvalidArgument(fmt::format("unknown domain '{}'", name));
}

bool CorpusSpec::has_domain(std::string_view name) const noexcept {
    return std::any_of(domains.begin(), domains.end(), [&](const DomainSpec& d) { return d.name == name; });
}

void validate_domain(const DomainSpec& spec) {
    if (spec.name.empty()) {
        throw InvalidArgument("domain name must not be empty");
    }
    if (spec.vocab_block.size() == 0) {
        throw InvalidArgument(fmt::format("domain '{}': empty vocab block", spec.name));
    }
    if (spec.vocab_block.begin < kFirstFreeToken) {
        throw InvalidArgument(fmt::format("domain '{}': vocab block overlaps reserved ids", spec.name));
    }
    if (spec.doc_count == 0) {
        throw InvalidArgument(fmt::format("domain '{}': doc_count must be positive", spec.name));
    }
    if (spec.min_doc_length == 0 || spec.min_doc_length > spec.max_doc_length) {
        throw InvalidArgument(fmt::format("domain '{}': invalid doc_length range", spec.name));
    }
    if (!(spec.shared_fraction >= 0.0 && spec.shared_fraction <= 1.0)) {
        throw InvalidArgument(fmt::format("domain '{}': shared_fraction outside [0,1]", spec.name));
    }
    double total = 0.0;
    for (const auto& l : spec.links) {
        if (!(l.weight >= 0.0 && l.weight <= 1.0)) {
            throw InvalidArgument(fmt::format("domain '{}': link weight outside [0,1]", spec.name));
        }
        if (l.weight > 0.0 && l.shared_block.size() == 0) {
            throw InvalidArgument(fmt::format("domain '{}': link to '{}' has no shared block (unresolved spec?)",
                                              spec.name, l.other));
        }
        total += l.weight;
    }
    if (spec.shared_fraction > 0.0 && total <= 0.0) {
        throw InvalidArgument(fmt::format("domain '{}': shared_fraction > 0 without a weighted link", spec.name));
    }
}

CorpusSpec resolve_corpus(CorpusSpec spec, std::uint64_t grammar_seed) {
    if (spec.domains.empty()) {
        throw InvalidArgument("corpus has no domains");
    }
    if (spec.link_vocab_size == 0) {
        throw InvalidArgument("link_vocab_size must be positive");
    }

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < spec.domains.size(); ++i) {
        if (!index.emplace(spec.domains[i].name, i).second) {
            throw InvalidArgument(fmt::format("duplicate domain '{}'", spec.domains[i].name));
        }
    }

    // Collect link weights, mirroring one-sided declarations.
    std::map<std::string, double> weights;  // keyed by link_key
    for (const auto& d : spec.domains) {
        for (const auto& l : d.links) {
            if (l.other == d.name) {
                throw InvalidArgument(fmt::format("domain '{}' links to itself", d.name));
            }
            if (!index.contains(l.other)) {
                throw InvalidArgument(fmt::format("domain '{}' links to unknown domain '{}'", d.name, l.other));
            }
            const auto key = link_key(d.name, l.other);
            auto [it, inserted] = weights.emplace(key, l.weight);
            if (!inserted && it->second != l.weight) {
                throw InvalidArgument(
                    fmt::format("asymmetric link weight between '{}' and '{}'", d.name, l.other));
            }
        }
    }

    for (std::size_t i = 0; i < spec.domains.size(); ++i) {
        for (std::size_t k = i + 1; k < spec.domains.size(); ++k) {
            if (spec.domains[i].vocab_block.overlaps(spec.domains[k].vocab_block)) {
                throw InvalidArgument(fmt::format("vocab blocks of '{}' and '{}' overlap", spec.domains[i].name,
                                                  spec.domains[k].name));
            }
        }
    }

    TokenId next = kFirstFreeToken;
    for (const auto& d : spec.domains) {
        next = std::max(next, d.vocab_block.end);
    }

    std::map<std::string, std::pair<TokenRange, std::uint64_t>> link_blocks;
    for (const auto& [key, w] : weights) {  // std::map iterates in sorted key order
        TokenRange block{};
        if (w > 0.0) {
            block = {next, next + spec.link_vocab_size};
            next = block.end;
        }
        link_blocks[key] = {block, mix64(grammar_seed ^ hash_name(key))};
    }

    for (auto& d : spec.domains) {
        std::vector<DomainLink> links;
        for (const auto& [key, w] : weights) {
            const auto sep = key.find('\x1f');
            const std::string a = key.substr(0, sep);
            const std::string b = key.substr(sep + 1);
            if (a != d.name && b != d.name) {
                continue;
            }
            const auto& [block, seed] = link_blocks[key];
            links.push_back({a == d.name ? b : a, w, block, seed});
        }
        std::sort(links.begin(), links.end(),
                  [](const DomainLink& x, const DomainLink& y) { return x.other < y.other; });
        d.links = std::move(links);
        d.grammar_seed = mix64(grammar_seed ^ hash_name(d.name));
        validate_domain(d);
    }
    spec.vocab_size = next;
    return spec;
}

DomainGrammar::DomainGrammar(const DomainSpec& spec) : spec_(spec) {
    validate_domain(spec_);
    double total = 0.0;
    for (const auto& l : spec_.links) {
        total += l.weight;
    }
    inventories_.push_back({make_inventory(spec_.vocab_block, spec_.grammar_seed),
                            1.0 - spec_.shared_fraction, "private"});
    for (const auto& l : spec_.links) {
        if (l.weight <= 0.0) {
            continue;
        }
        inventories_.push_back({make_inventory(l.shared_block, l.grammar_seed),
                                spec_.shared_fraction * l.weight / total, l.other});
    }
}

const Phrase& DomainGrammar::sample_phrase(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng);
    const Inventory* chosen = &inventories_.back();
    for (const auto& inv : inventories_) {
        if (u < inv.probability) {
            chosen = &inv;
            break;
        }
        u -= inv.probability;
    }
    std::uniform_int_distribution<std::size_t> pick(0, chosen->phrases.size() - 1);
    return chosen->phrases[pick(rng)];
}

TokenSequence DomainGrammar::sample_document(std::mt19937_64& rng, std::vector<std::size_t>* boundaries) const {
    std::uniform_int_distribution<std::uint32_t> length(spec_.min_doc_length, spec_.max_doc_length);
    const std::size_t len = length(rng);
    TokenSequence seq{{}, spec_.name};
    seq.tokens.reserve(len + kMaxPhraseLen);
    while (seq.tokens.size() < len) {
        if (boundaries != nullptr) {
            boundaries->push_back(seq.tokens.size());
        }
        const auto& p = sample_phrase(rng);
        seq.tokens.insert(seq.tokens.end(), p.begin(), p.end());
    }
    seq.tokens.resize(len);
    return seq;
}

DocumentSet generate_domain(const DomainSpec& spec, std::uint64_t seed) {
    const DomainGrammar grammar(spec);
    std::mt19937_64 rng(seed);
    DocumentSet out{spec.name, {}};
    out.sequences.reserve(spec.doc_count);
    for (std::uint32_t i = 0; i < spec.doc_count; ++i) {
        out.sequences.push_back(grammar.sample_document(rng));
    }
    return out;
}

TokenSequence randomize_text(const TokenSequence& seq, const RandomizerConfig& cfg) {
    if (seq.tokens.empty()) {
        throw InvalidArgument("randomize_text: empty sequence");
    }
    if (cfg.max_piece_len < 1) {
        throw InvalidArgument("randomize_text: max_piece_len must be >= 1");
    }
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> piece_len(1, cfg.max_piece_len);

    std::vector<std::pair<std::size_t, std::size_t>> pieces;  // [begin, end)
    for (std::size_t pos = 0; pos < seq.tokens.size();) {
        const std::size_t end = std::min(seq.tokens.size(), pos + piece_len(rng));
        pieces.emplace_back(pos, end);
        pos = end;
    }
    std::shuffle(pieces.begin(), pieces.end(), rng);

    TokenSequence out{{}, seq.domain};
    out.tokens.reserve(seq.tokens.size());
    for (const auto& [b, e] : pieces) {
        out.tokens.insert(out.tokens.end(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(b),
                          seq.tokens.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return out;
}

DocumentSet randomize_set(const DocumentSet& docs, const RandomizerConfig& cfg) {
    DocumentSet out{docs.domain, {}};
    out.sequences.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const RandomizerConfig per_doc{cfg.max_piece_len, derive_seed(cfg.seed, SeedStream::Randomizer, i)};
        out.sequences.push_back(randomize_text(docs.sequences[i], per_doc));
    }
    return out;
}

SplitPlan make_splits(const DocumentSet& target,
                      std::span<const DocumentSet> non_target,
                      std::size_t unlearn_count,
                      std::uint64_t seed) {
    if (unlearn_count == 0) {
        throw InvalidArgument("make_splits: unlearn_count must be positive");
    }
    if (target.size() < unlearn_count + 1) {
        throw InvalidArgument(fmt::format("make_splits: target '{}' has {} sequences, need at least {}",
                                          target.domain, target.size(), unlearn_count + 1));
    }
    std::mt19937_64 rng(seed);

    std::vector<std::size_t> order(target.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    SplitPlan plan;
    plan.unlearn_set.domain = target.domain;
    plan.target_eval_set.domain = target.domain;
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dst = i < unlearn_count ? plan.unlearn_set : plan.target_eval_set;
        dst.sequences.push_back(target.sequences[order[i]]);
    }

    std::vector<const TokenSequence*> pooled;
    for (const auto& set : non_target) {
        if (set.domain == target.domain) {
            throw InvalidArgument(fmt::format("make_splits: '{}' passed as both target and non-target", target.domain));
        }
        for (const auto& s : set.sequences) {
            pooled.push_back(&s);
        }
    }
    if (pooled.size() < 2) {
        throw InvalidArgument("make_splits: need at least 2 non-target sequences for a 9:1 split");
    }
    std::shuffle(pooled.begin(), pooled.end(), rng);
    const std::size_t dev_count = std::max<std::size_t>(1, pooled.size() / 10);
    const std::size_t retrain_count = pooled.size() - dev_count;

    plan.retrain_pool.domain = std::string(kMixedDomain);
    plan.dev_set.domain = std::string(kMixedDomain);
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        auto& dst = i < retrain_count ? plan.retrain_pool : plan.dev_set;
        dst.sequences.push_back(*pooled[i]);
    }
    return plan;
}

void write_jsonl(const DocumentSet& docs, const std::filesystem::path& path) {
    std::string text;
    for (const auto& s : docs.sequences) {
        text += nlohmann::json{{"domain", s.domain}, {"tokens", s.tokens}}.dump();
        text += '\n';
    }
    write_file_atomic(path, text);
}

DocumentSet read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot read {}", path.string()));
    }
    DocumentSet docs;
    std::set<std::string> domains;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            TokenSequence s{j.at("tokens").get<std::vector<TokenId>>(), j.at("domain").get<std::string>()};
            if (s.tokens.empty()) {
                throw InvalidArgument("empty token list");
            }
            domains.insert(s.domain);
            docs.sequences.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        } catch (const InvalidArgument& e) {
            throw IoError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    docs.domain = domains.size() == 1 ? *domains.begin() : std::string(kMixedDomain);
    return docs;
}

void to_json(nlohmann::json& j, const DomainSpec& spec) {
    auto links = nlohmann::json::array();
    for (const auto& l : spec.links) {
        links.push_back({{"domain", l.other}, {"weight", l.weight}});
    }
    j = {{"name", spec.name},
         {"vocab_block", {spec.vocab_block.begin, spec.vocab_block.end}},
         {"shared_fraction", spec.shared_fraction},
         {"links", links},
         {"doc_count", spec.doc_count},
         {"doc_length", {spec.min_doc_length, spec.max_doc_length}}};
}

void from_json(const nlohmann::json& j, DomainSpec& spec) {
    spec = {};
    spec.name = j.at("name").get<std::string>();
    const auto block = j.at("vocab_block").get<std::vector<TokenId>>();
    if (block.size() != 2) {
        throw InvalidArgument(fmt::format("domain '{}': vocab_block must be [begin, end)", spec.name));
    }
    spec.vocab_block = {block[0], block[1]};
    spec.shared_fraction = j.value("shared_fraction", 0.0);
    for (const auto& l : j.value("links", nlohmann::json::array())) {
        DomainLink link;
        if (l.is_array()) {
            link.other = l.at(0).get<std::string>();
            link.weight = l.at(1).get<double>();
        } else {
            link.other = l.at("domain").get<std::string>();
            link.weight = l.at("weight").get<double>();
        }
        spec.links.push_back(std::move(link));
    }
    spec.doc_count = j.at("doc_count").get<std::uint32_t>();
    const auto& len = j.at("doc_length");
    if (len.is_array()) {
        spec.min_doc_length = len.at(0).get<std::uint32_t>();
        spec.max_doc_length = len.at(1).get<std::uint32_t>();
    } else {
        spec.min_doc_length = spec.max_doc_length = len.get<std::uint32_t>();
    }
}

void to_json(nlohmann::json& j, const CorpusSpec& spec) {
    j = {{"domains", spec.domains}, {"link_vocab_size", spec.link_vocab_size}};
}

void from_json(const nlohmann::json& j, CorpusSpec& spec) {
    spec = {};
    spec.domains = j.at("domains").get<std::vector<DomainSpec>>();
    spec.link_vocab_size = j.value("link_vocab_size", spec.link_vocab_size);
}

void to_json(nlohmann::json& j, const RandomizerConfig& cfg) {
    j = {{"max_piece_len", cfg.max_piece_len}, {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, RandomizerConfig& cfg) {
    cfg = {};
    cfg.max_piece_len = j.value("max_piece_len", cfg.max_piece_len);
    cfg.seed = j.value("seed", cfg.seed);
}

}  // namespace gracelab::corpus
