#include <algorithm>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "gracelab/corpus.hpp"
#include "gracelab/error.hpp"
#include "gracelab/seeds.hpp"
#include "support.hpp"

using namespace gracelab;
using namespace gracelab::corpus;
using testing_support::domain;
using testing_support::TempDir;

namespace {

std::multiset<TokenId> bag(const TokenSequence& s) {
    return {s.tokens.begin(), s.tokens.end()};
}

std::set<TokenId> ids(const DocumentSet& d) {
    std::set<TokenId> out;
    for (const auto& s : d.sequences) {
        out.insert(s.tokens.begin(), s.tokens.end());
    }
    return out;
}

CorpusSpec linked_pair(double weight) {
    CorpusSpec cs;
    auto a = domain("a", 2, 20, 50);
    auto b = domain("b", 20, 38, 50);
    a.shared_fraction = weight > 0 ? 0.5 : 0.0;
    b.shared_fraction = weight > 0 ? 0.5 : 0.0;
    a.links = {{"b", weight, {}, 0}};
    cs.domains = {a, b};
    return resolve_corpus(cs, 11);
}

}  // namespace

TEST(GenerateDomain, FixedLengthContract) {
    auto cs = CorpusSpec{{domain("d", 2, 12, 4, 8, 8)}, 12, 0};
    cs = resolve_corpus(cs, 3);
    const auto docs = generate_domain(cs.domains[0], 5);
    ASSERT_EQ(docs.size(), 4u);
    for (const auto& s : docs.sequences) {
        EXPECT_EQ(s.tokens.size(), 8u);
        EXPECT_EQ(s.domain, "d");
    }
}

TEST(GenerateDomain, Deterministic) {
    const auto cs = linked_pair(0.5);
    EXPECT_EQ(generate_domain(cs.domains[0], 9), generate_domain(cs.domains[0], 9));
    EXPECT_NE(generate_domain(cs.domains[0], 9), generate_domain(cs.domains[0], 10));
}

TEST(GenerateDomain, UnlinkedDomainsShareNoTokens) {
    const auto cs = linked_pair(0.0);
    const auto a = ids(generate_domain(cs.domains[0], 1));
    const auto b = ids(generate_domain(cs.domains[1], 2));
    std::vector<TokenId> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    EXPECT_TRUE(common.empty());
}

TEST(GenerateDomain, LinkedDomainsShareLinkVocabulary) {
    const auto cs = linked_pair(0.8);
    const auto a = ids(generate_domain(cs.domains[0], 1));
    const auto b = ids(generate_domain(cs.domains[1], 2));
    std::vector<TokenId> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    ASSERT_FALSE(common.empty());
    const auto& block = cs.domains[0].links[0].shared_block;
    for (auto t : common) {
        EXPECT_TRUE(block.contains(t)) << t;
    }
}

TEST(GenerateDomain, SharedFractionMatchesLinkWeight) {
    // With two links the fraction of phrases drawn from a link inventory is
    // shared_fraction * w / sum(w).
    CorpusSpec cs;
    auto t = domain("t", 2, 30, 400, 60, 60);
    t.shared_fraction = 0.6;
    t.links = {{"s", 0.75, {}, 0}, {"w", 0.25, {}, 0}};
    cs.domains = {t, domain("s", 30, 50), domain("w", 50, 70)};
    cs.domains[1].shared_fraction = 0.3;
    cs.domains[2].shared_fraction = 0.3;
    cs = resolve_corpus(cs, 5);
    const DomainGrammar g(cs.domain("t"));
    std::mt19937_64 rng(17);
    std::map<std::string, std::size_t> count;
    std::size_t total = 0;
    for (int i = 0; i < 20000; ++i) {
        const auto& phrase = g.sample_phrase(rng);
        for (const auto& inv : g.inventories()) {
            if (std::any_of(inv.phrases.begin(), inv.phrases.end(), [&](const Phrase& p) { return &p == &phrase; })) {
                ++count[inv.source];
            }
        }
        ++total;
    }
    EXPECT_NEAR(static_cast<double>(count["s"]) / total, 0.45, 0.02);
    EXPECT_NEAR(static_cast<double>(count["w"]) / total, 0.15, 0.02);
    EXPECT_NEAR(static_cast<double>(count["private"]) / total, 0.40, 0.02);
}

TEST(ResolveCorpus, RejectsInvalidSpecs) {
    EXPECT_THROW(resolve_corpus({{domain("a", 2, 2)}, 12, 0}, 1), InvalidArgument);         // empty block
    EXPECT_THROW(resolve_corpus({{domain("a", 2, 10, 0)}, 12, 0}, 1), InvalidArgument);     // doc_count = 0
    EXPECT_THROW(resolve_corpus({{domain("a", 2, 10), domain("b", 8, 14)}, 12, 0}, 1), InvalidArgument);  // overlap
    EXPECT_THROW(resolve_corpus({{domain("a", 0, 10)}, 12, 0}, 1), InvalidArgument);        // reserved ids

    auto a = domain("a", 2, 10);
    auto b = domain("b", 10, 20);
    a.links = {{"b", 0.5, {}, 0}};
    b.links = {{"a", 0.4, {}, 0}};
    EXPECT_THROW(resolve_corpus({{a, b}, 12, 0}, 1), InvalidArgument);  // asymmetric weight
    a.links = {{"zzz", 0.5, {}, 0}};
    EXPECT_THROW(resolve_corpus({{a, b}, 12, 0}, 1), InvalidArgument);  // unknown domain
}

TEST(ResolveCorpus, MirrorsLinksAndAssignsBlocks) {
    const auto cs = linked_pair(0.5);
    ASSERT_EQ(cs.domain("b").links.size(), 1u);
    EXPECT_EQ(cs.domain("b").links[0].other, "a");
    EXPECT_EQ(cs.domain("b").links[0].shared_block, cs.domain("a").links[0].shared_block);
    EXPECT_EQ(cs.domain("a").links[0].shared_block.begin, 38u);
    EXPECT_EQ(cs.vocab_size, 38u + 12u);
}

TEST(RandomizeText, SingleTokenIsIdentity) {
    const TokenSequence s{{5}, "x"};
    for (std::uint32_t n : {1u, 3u, 10u}) {
        EXPECT_EQ(randomize_text(s, {n, 42}), s);
    }
}

TEST(RandomizeText, FourTokensKeepMultiset) {
    const TokenSequence s{{3, 4, 5, 6}, "x"};
    auto out = randomize_text(s, {2, 1234});
    std::sort(out.tokens.begin(), out.tokens.end());
    EXPECT_EQ(out.tokens, (std::vector<TokenId>{3, 4, 5, 6}));
}

TEST(RandomizeText, MultisetPreservedAcrossSeeds) {
    const TokenSequence s{{2, 9, 9, 4, 7, 7, 7, 3, 2, 11, 5}, "x"};
    std::set<std::vector<TokenId>> orders;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto out = randomize_text(s, {3, seed});
        EXPECT_EQ(bag(out), bag(s));
        orders.insert(out.tokens);
    }
    EXPECT_GT(orders.size(), 1u);
}

TEST(RandomizeText, Errors) {
    EXPECT_THROW(randomize_text({{}, "x"}, {4, 1}), InvalidArgument);
    EXPECT_THROW(randomize_text({{2, 3}, "x"}, {0, 1}), InvalidArgument);
}

TEST(RandomizeText, Deterministic) {
    const TokenSequence s{{2, 3, 4, 5, 6, 7, 8, 9}, "x"};
    EXPECT_EQ(randomize_text(s, {4, 77}), randomize_text(s, {4, 77}));
}

TEST(RandomizeSet, PerDocumentSeedsDiffer) {
    DocumentSet d{"x", {{{2, 3, 4, 5, 6, 7, 8, 9}, "x"}, {{2, 3, 4, 5, 6, 7, 8, 9}, "x"}}};
    const auto out = randomize_set(d, {2, 5});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(bag(out.sequences[0]), bag(d.sequences[0]));
    EXPECT_NE(out.sequences[0], out.sequences[1]);
}

TEST(MakeSplits, ArithmeticOfTheContract) {
    DocumentSet target{"t", {}};
    for (TokenId i = 0; i < 100; ++i) {
        target.sequences.push_back({{2, i + 2}, "t"});
    }
    DocumentSet other{"o", {}};
    for (TokenId i = 0; i < 100; ++i) {
        other.sequences.push_back({{3, i + 2, 4}, "o"});
    }
    const std::vector<DocumentSet> nt{other};
    const auto plan = make_splits(target, nt, 80, 9);
    EXPECT_EQ(plan.unlearn_set.size(), 80u);
    EXPECT_EQ(plan.target_eval_set.size(), 20u);
    EXPECT_EQ(plan.retrain_pool.size(), 90u);
    EXPECT_EQ(plan.dev_set.size(), 10u);

    // Pairwise disjoint and jointly a partition of the inputs.
    std::multiset<std::vector<TokenId>> seen;
    for (const auto* set : {&plan.unlearn_set, &plan.target_eval_set, &plan.retrain_pool, &plan.dev_set}) {
        for (const auto& s : set->sequences) {
            seen.insert(s.tokens);
        }
    }
    std::multiset<std::vector<TokenId>> all;
    for (const auto& s : target.sequences) {
        all.insert(s.tokens);
    }
    for (const auto& s : other.sequences) {
        all.insert(s.tokens);
    }
    EXPECT_EQ(seen, all);
}

TEST(MakeSplits, RoundingFavoursRetrainPool) {
    DocumentSet target{"t", {{{2}, "t"}, {{3}, "t"}}};
    DocumentSet other{"o", {}};
    for (TokenId i = 0; i < 19; ++i) {
        other.sequences.push_back({{i + 2, 2}, "o"});
    }
    const std::vector<DocumentSet> nt{other};
    const auto plan = make_splits(target, nt, 1, 1);
    EXPECT_EQ(plan.dev_set.size(), 1u);
    EXPECT_EQ(plan.retrain_pool.size(), 18u);
}

TEST(MakeSplits, Errors) {
    DocumentSet target{"t", {{{2}, "t"}, {{3}, "t"}}};
    DocumentSet other{"o", {{{4}, "o"}, {{5}, "o"}}};
    const std::vector<DocumentSet> nt{other};
    EXPECT_THROW(make_splits(target, nt, 2, 1), InvalidArgument);
    EXPECT_THROW(make_splits(target, nt, 0, 1), InvalidArgument);
}

TEST(Tokenizer, CharacterWalkOracle) {
    const std::string text = "hello, world!\n\tid=42 \x01\xff end";
    const auto tok = ByteTokenizer::standard();
    const auto ids = tok.encode(text);
    ASSERT_EQ(ids.size(), text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        const bool known = (c >= 0x20 && c <= 0x7e) || c == '\t' || c == '\n' || c == '\r';
        EXPECT_EQ(ids[i], known ? TokenId{c} : kUnkToken) << i;
    }
}

TEST(IngestTextDir, OneSequencePerFile) {
    TempDir dir("ingest");
    for (const auto* name : {"a.txt", "b.txt", "c.txt"}) {
        std::ofstream(dir.path() / name) << "some text " << name;
    }
    const auto docs = ingest_text_dir(dir.path(), "books", ByteTokenizer::standard());
    EXPECT_EQ(docs.size(), 3u);
    EXPECT_EQ(docs.domain, "books");
    EXPECT_EQ(docs.sequences[0].tokens.size(), std::string("some text a.txt").size());
}

TEST(IngestTextDir, EmptyFileIsNamed) {
    TempDir dir("ingest-empty");
    std::ofstream(dir.path() / "a.txt") << "x";
    std::ofstream(dir.path() / "blank.txt");
    try {
        ingest_text_dir(dir.path(), "d", ByteTokenizer::standard());
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("blank.txt"), std::string::npos);
    }
}

TEST(IngestTextDir, EmptyDirectory) {
    TempDir dir("ingest-none");
    EXPECT_THROW(ingest_text_dir(dir.path(), "d", ByteTokenizer::standard()), Error);
}

TEST(Jsonl, RoundTrip) {
    TempDir dir("jsonl");
    const auto cs = linked_pair(0.5);
    const auto docs = generate_domain(cs.domains[0], 3);
    write_jsonl(docs, dir.path() / "d.jsonl");
    EXPECT_EQ(read_jsonl(dir.path() / "d.jsonl"), docs);
}

TEST(DomainSpecJson, RoundTrip) {
    const auto cs = linked_pair(0.5);
    const nlohmann::json j = cs.domains[0];
    const auto back = j.get<DomainSpec>();
    EXPECT_EQ(back.name, "a");
    EXPECT_EQ(back.vocab_block, cs.domains[0].vocab_block);
    EXPECT_EQ(back.links.size(), 1u);
    EXPECT_DOUBLE_EQ(back.links[0].weight, 0.5);
    EXPECT_EQ(back.min_doc_length, cs.domains[0].min_doc_length);
}
