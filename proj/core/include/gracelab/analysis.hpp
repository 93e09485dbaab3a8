#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gracelab::analysis {

/// Corpora (rows) x capabilities (columns) grid of degradation ratios.
struct PerformanceMatrix {
    std::vector<std::string> corpora;
    std::vector<std::string> capabilities;
    std::vector<std::vector<double>> gamma;  // gamma[corpus][capability]

    [[nodiscard]] std::vector<double> column(std::size_t j) const;
};

void validate(const PerformanceMatrix& m);

/// Square symmetric matrix of correlation coefficients; nullopt marks an
/// UNDEFINED coefficient (a zero-variance profile).
struct CorrelationMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<std::optional<double>>> r;

    [[nodiscard]] bool fully_defined() const noexcept;
};

/// Merge of two nodes. Leaves are 0..n-1; the merge at index k creates
/// node n+k.
struct Merge {
    std::size_t left = 0;
    std::size_t right = 0;
    double height = 0.0;
    std::size_t size = 0;
};

struct ClusterTree {
    std::vector<std::string> leaves;
    std::vector<Merge> merges;
    /// Leaf indices in dendrogram order (left subtree first).
    std::vector<std::size_t> order;
};

enum class Relation { Correlated, Complementary, Orthogonal, Unclassified };

std::string_view to_string(Relation r) noexcept;
Relation relation_from_string(std::string_view s);

struct RelationThresholds {
    double correlated_min = 0.7;
    double complementary_max = -0.3;
    double orthogonal_band = 0.15;
};

struct RelationPair {
    std::string a;
    std::string b;
    std::optional<double> r;
    Relation relation = Relation::Unclassified;
};

struct RelationClassification {
    std::vector<RelationPair> pairs;
    RelationThresholds thresholds;
};

/// Column label -> (category, subtype) grouping used to aggregate
/// capability profiles before correlating corpora.
struct CapabilityGroup {
    std::string category;
    std::string subtype;
};
using Taxonomy = std::map<std::string, CapabilityGroup>;

/// (after - before) / |before|; negative means the score dropped, also for
/// negative-valued scores such as -PPL. Throws InvalidArgument when
/// before == 0.
double degradation_ratio(double a_after, double a_before);

using Scores = std::vector<std::pair<std::string, double>>;

/// gamma[i][j] = degradation_ratio(after[i][j], before[j]). Column order
/// follows `before`; each corpus row must score exactly the same
/// capabilities.
PerformanceMatrix build_matrix(const Scores& before, const std::vector<std::pair<std::string, Scores>>& after);

/// Corpora whose gamma lies below the column mean in more than
/// fraction * |capabilities| columns.
std::vector<std::string> high_impact(const PerformanceMatrix& m, double fraction = 0.70);

/// Sample Pearson correlation; nullopt when either vector has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// Per-corpus capability vector: mean gamma within each subtype, one entry
/// per subtype, ordered by (category, subtype).
std::vector<double> aggregate_profile(const PerformanceMatrix& m, std::size_t corpus, const Taxonomy& taxonomy);

CorrelationMatrix corpus_correlation_matrix(const PerformanceMatrix& m, const Taxonomy& taxonomy);

/// Correlates capability columns across corpora. Requires >= 2 corpora.
CorrelationMatrix capability_correlation_matrix(const PerformanceMatrix& m);

/// Average-linkage agglomerative clustering on distance 1 - r. Ties are
/// broken by the smallest leaf label contained in each candidate cluster.
ClusterTree hierarchical_cluster(const CorrelationMatrix& c);

void validate(const RelationThresholds& t);

RelationClassification classify_relations(const CorrelationMatrix& c, const RelationThresholds& t = {});

Relation classify(std::optional<double> r, const RelationThresholds& t);

// ---- CSV / JSON representations ----

std::string matrix_to_csv(const PerformanceMatrix& m);
PerformanceMatrix matrix_from_csv(std::string_view text);

/// UNDEFINED entries are written as the literal "UNDEFINED".
std::string correlation_to_csv(const CorrelationMatrix& c);
CorrelationMatrix correlation_from_csv(std::string_view text);

std::string relations_to_csv(const RelationClassification& rc);
RelationClassification relations_from_csv(std::string_view text);

nlohmann::json tree_to_json(const ClusterTree& t);
ClusterTree tree_from_json(const nlohmann::json& j);

}  // namespace gracelab::analysis
