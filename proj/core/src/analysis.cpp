#include "gracelab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "gracelab/csv.hpp"
#include "gracelab/error.hpp"

namespace gracelab::analysis {

namespace {

constexpr std::string_view kUndefined = "UNDEFINED";

std::string format_opt(const std::optional<double>& v) {
    return v ? csv::format_double(*v) : std::string(kUndefined);
}

std::optional<double> parse_opt(std::string_view s) {
    if (s == kUndefined) {
        return std::nullopt;
    }
    return csv::parse_double(s);
}

CorrelationMatrix correlate_rows(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& rows) {
    const std::size_t n = labels.size();
    CorrelationMatrix c{labels, std::vector<std::vector<std::optional<double>>>(n, std::vector<std::optional<double>>(n))};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i; k < n; ++k) {
            auto r = pearson(rows[i], rows[k]);
            if (i == k && r) {
                r = 1.0;
            }
            c.r[i][k] = r;
            c.r[k][i] = r;
        }
    }
    return c;
}

}  // namespace

std::vector<double> PerformanceMatrix::column(std::size_t j) const {
    std::vector<double> col;
    col.reserve(gamma.size());
    for (const auto& row : gamma) {
        col.push_back(row.at(j));
    }
    return col;
}

void validate(const PerformanceMatrix& m) {
    if (m.gamma.size() != m.corpora.size()) {
        throw InvalidArgument("performance matrix: row count differs from corpus labels");
    }
    for (const auto& row : m.gamma) {
        if (row.size() != m.capabilities.size()) {
            throw InvalidArgument("performance matrix: ragged rows");
        }
        for (double g : row) {
            if (!std::isfinite(g)) {
                throw InvalidArgument("performance matrix: non-finite entry");
            }
        }
    }
}

bool CorrelationMatrix::fully_defined() const noexcept {
    for (const auto& row : r) {
        for (const auto& v : row) {
            if (!v) {
                return false;
            }
        }
    }
    return true;
}

std::string_view to_string(Relation r) noexcept {
    switch (r) {
        case Relation::Correlated: return "CORRELATED";
        case Relation::Complementary: return "COMPLEMENTARY";
        case Relation::Orthogonal: return "ORTHOGONAL";
        case Relation::Unclassified: return "UNCLASSIFIED";
    }
    return "?";
}

Relation relation_from_string(std::string_view s) {
    for (auto r : {Relation::Correlated, Relation::Complementary, Relation::Orthogonal, Relation::Unclassified}) {
        if (to_string(r) == s) {
            return r;
        }
    }
    throw InvalidArgument(fmt::format("unknown relation '{}'", s));
}

double degradation_ratio(double a_after, double a_before) {
    if (a_before == 0.0) {
        throw InvalidArgument("degradation_ratio: baseline score is zero");
    }
    if (!std::isfinite(a_after) || !std::isfinite(a_before)) {
        throw InvalidArgument("degradation_ratio: non-finite score");
    }
    // |before| keeps "negative = worse" for scores that are negated losses.
    return (a_after - a_before) / std::abs(a_before);
}

PerformanceMatrix build_matrix(const Scores& before, const std::vector<std::pair<std::string, Scores>>& after) {
    PerformanceMatrix m;
    std::set<std::string> cols;
    for (const auto& [cap, score] : before) {
        if (!cols.insert(cap).second) {
            throw InvalidArgument(fmt::format("build_matrix: duplicate capability '{}'", cap));
        }
        m.capabilities.push_back(cap);
    }
    for (const auto& [corpus, scores] : after) {
        if (scores.size() != before.size()) {
            throw InvalidArgument(fmt::format("build_matrix: corpus '{}' scores {} capabilities, expected {}", corpus,
                                              scores.size(), before.size()));
        }
        std::vector<double> row(before.size());
        std::vector<bool> seen(before.size(), false);
        for (const auto& [cap, score] : scores) {
            const auto it = std::find(m.capabilities.begin(), m.capabilities.end(), cap);
            if (it == m.capabilities.end()) {
                throw InvalidArgument(fmt::format("build_matrix: corpus '{}' has unknown capability '{}'", corpus, cap));
            }
            const auto j = static_cast<std::size_t>(it - m.capabilities.begin());
            if (seen[j]) {
                throw InvalidArgument(fmt::format("build_matrix: corpus '{}' repeats capability '{}'", corpus, cap));
            }
            seen[j] = true;
            row[j] = degradation_ratio(score, before[j].second);
        }
        m.corpora.push_back(corpus);
        m.gamma.push_back(std::move(row));
    }
    return m;
}

std::vector<std::string> high_impact(const PerformanceMatrix& m, double fraction) {
    validate(m);
    if (m.corpora.empty() || m.capabilities.empty()) {
        throw InvalidArgument("high_impact: empty matrix");
    }
    const std::size_t rows = m.corpora.size();
    const std::size_t cols = m.capabilities.size();
    std::vector<double> mean(cols, 0.0);
    for (std::size_t j = 0; j < cols; ++j) {
        for (std::size_t i = 0; i < rows; ++i) {
            mean[j] += m.gamma[i][j];
        }
        mean[j] /= static_cast<double>(rows);
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t below = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            below += m.gamma[i][j] < mean[j] ? 1 : 0;
        }
        if (static_cast<double>(below) > fraction * static_cast<double>(cols)) {
            out.push_back(m.corpora[i]);
        }
    }
    return out;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw InvalidArgument("pearson: vectors differ in length");
    }
    if (x.size() < 2) {
        throw InvalidArgument("pearson: need at least two observations");
    }
    const auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
    };
    if (constant(x) || constant(y)) {
        return std::nullopt;
    }
    const auto n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        return std::nullopt;
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> aggregate_profile(const PerformanceMatrix& m, std::size_t corpus, const Taxonomy& taxonomy) {
    std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> groups;
    for (std::size_t j = 0; j < m.capabilities.size(); ++j) {
        const auto it = taxonomy.find(m.capabilities[j]);
        if (it == taxonomy.end()) {
            throw InvalidArgument(fmt::format("taxonomy does not cover capability '{}'", m.capabilities[j]));
        }
        auto& [sum, count] = groups[{it->second.category, it->second.subtype}];
        sum += m.gamma.at(corpus).at(j);
        ++count;
    }
    std::vector<double> out;
    out.reserve(groups.size());
    for (const auto& [key, acc] : groups) {
        out.push_back(acc.first / static_cast<double>(acc.second));
    }
    return out;
}

CorrelationMatrix corpus_correlation_matrix(const PerformanceMatrix& m, const Taxonomy& taxonomy) {
    validate(m);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < m.corpora.size(); ++i) {
        rows.push_back(aggregate_profile(m, i, taxonomy));
    }
    return correlate_rows(m.corpora, rows);
}

CorrelationMatrix capability_correlation_matrix(const PerformanceMatrix& m) {
    validate(m);
    if (m.corpora.size() < 2) {
        throw InvalidArgument("capability_correlation_matrix: need at least two corpora");
    }
    std::vector<std::vector<double>> cols;
    for (std::size_t j = 0; j < m.capabilities.size(); ++j) {
        cols.push_back(m.column(j));
    }
    return correlate_rows(m.capabilities, cols);
}

ClusterTree hierarchical_cluster(const CorrelationMatrix& c) {
    const std::size_t n = c.labels.size();
    if (n == 0) {
        throw InvalidArgument("hierarchical_cluster: empty matrix");
    }
    if (c.r.size() != n || !c.fully_defined()) {
        throw InvalidArgument("hierarchical_cluster: matrix contains UNDEFINED entries");
    }
    if (std::set<std::string>(c.labels.begin(), c.labels.end()).size() != n) {
        throw InvalidArgument("hierarchical_cluster: duplicate labels");
    }

    struct Cluster {
        std::size_t node;
        std::size_t size;
        std::string min_label;
    };
    std::vector<Cluster> active;
    for (std::size_t i = 0; i < n; ++i) {
        active.push_back({i, 1, c.labels[i]});
    }
    // dist[a][b] between active slots
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            dist[i][k] = 1.0 - *c.r[i][k];
        }
    }

    ClusterTree tree;
    tree.leaves = c.labels;
    std::vector<std::pair<std::size_t, std::size_t>> children;  // per merge, node ids

    while (active.size() > 1) {
        std::size_t best_a = 0;
        std::size_t best_b = 1;
        double best = std::numeric_limits<double>::infinity();
        std::pair<std::string, std::string> best_key;
        for (std::size_t a = 0; a < active.size(); ++a) {
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                const double d = dist[a][b];
                auto key = std::minmax(active[a].min_label, active[b].min_label);
                std::pair<std::string, std::string> k{key.first, key.second};
                if (d < best || (d == best && k < best_key)) {
                    best = d;
                    best_a = a;
                    best_b = b;
                    best_key = std::move(k);
                }
            }
        }
        const Cluster& ca = active[best_a];
        const Cluster& cb = active[best_b];
        const bool a_first = ca.min_label < cb.min_label;
        const Cluster& left = a_first ? ca : cb;
        const Cluster& right = a_first ? cb : ca;
        const std::size_t node = n + tree.merges.size();
        tree.merges.push_back({left.node, right.node, best, ca.size + cb.size});
        children.emplace_back(left.node, right.node);

        // Lance-Williams update for average linkage, written into slot best_a.
        const auto na = static_cast<double>(ca.size);
        const auto nb = static_cast<double>(cb.size);
        for (std::size_t k = 0; k < active.size(); ++k) {
            if (k == best_a || k == best_b) {
                continue;
            }
            const double d = (na * dist[best_a][k] + nb * dist[best_b][k]) / (na + nb);
            dist[best_a][k] = d;
            dist[k][best_a] = d;
        }
        active[best_a] = {node, ca.size + cb.size, std::min(ca.min_label, cb.min_label)};
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_b));
        dist.erase(dist.begin() + static_cast<std::ptrdiff_t>(best_b));
        for (auto& row : dist) {
            row.erase(row.begin() + static_cast<std::ptrdiff_t>(best_b));
        }
    }

    const std::function<void(std::size_t)> walk = [&](std::size_t node) {
        if (node < n) {
            tree.order.push_back(node);
            return;
        }
        walk(children[node - n].first);
        walk(children[node - n].second);
    };
    walk(tree.merges.empty() ? 0 : n + tree.merges.size() - 1);
    return tree;
}

void validate(const RelationThresholds& t) {
    if (!(t.orthogonal_band > 0.0 && t.complementary_max < -t.orthogonal_band &&
          t.orthogonal_band < t.correlated_min)) {
        throw InvalidArgument(
            "relation thresholds must satisfy complementary_max < -orthogonal_band < orthogonal_band < correlated_min");
    }
}

Relation classify(std::optional<double> r, const RelationThresholds& t) {
    if (!r) {
        return Relation::Unclassified;
    }
    if (*r >= t.correlated_min) {
        return Relation::Correlated;
    }
    if (*r <= t.complementary_max) {
        return Relation::Complementary;
    }
    if (std::abs(*r) < t.orthogonal_band) {
        return Relation::Orthogonal;
    }
    return Relation::Unclassified;
}

RelationClassification classify_relations(const CorrelationMatrix& c, const RelationThresholds& t) {
    validate(t);
    RelationClassification out;
    out.thresholds = t;
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        for (std::size_t k = i + 1; k < c.labels.size(); ++k) {
            out.pairs.push_back({c.labels[i], c.labels[k], c.r[i][k], classify(c.r[i][k], t)});
        }
    }
    return out;
}

std::string matrix_to_csv(const PerformanceMatrix& m) {
    validate(m);
    csv::Table t;
    t.header.push_back("corpus");
    t.header.insert(t.header.end(), m.capabilities.begin(), m.capabilities.end());
    for (std::size_t i = 0; i < m.corpora.size(); ++i) {
        std::vector<std::string> row{m.corpora[i]};
        for (double g : m.gamma[i]) {
            row.push_back(csv::format_double(g));
        }
        t.rows.push_back(std::move(row));
    }
    return csv::to_string(t);
}

PerformanceMatrix matrix_from_csv(std::string_view text) {
    const auto t = csv::parse(text);
    if (t.header.empty() || t.header.front() != "corpus") {
        throw InvalidArgument("performance matrix csv: first column must be 'corpus'");
    }
    PerformanceMatrix m;
    m.capabilities.assign(t.header.begin() + 1, t.header.end());
    for (const auto& row : t.rows) {
        m.corpora.push_back(row.front());
        std::vector<double> g;
        for (std::size_t j = 1; j < row.size(); ++j) {
            g.push_back(csv::parse_double(row[j]));
        }
        m.gamma.push_back(std::move(g));
    }
    validate(m);
    return m;
}

std::string correlation_to_csv(const CorrelationMatrix& c) {
    csv::Table t;
    t.header.push_back("label");
    t.header.insert(t.header.end(), c.labels.begin(), c.labels.end());
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        std::vector<std::string> row{c.labels[i]};
        for (const auto& v : c.r[i]) {
            row.push_back(format_opt(v));
        }
        t.rows.push_back(std::move(row));
    }
    return csv::to_string(t);
}

CorrelationMatrix correlation_from_csv(std::string_view text) {
    const auto t = csv::parse(text);
    if (t.header.empty() || t.header.front() != "label") {
        throw InvalidArgument("correlation csv: first column must be 'label'");
    }
    CorrelationMatrix c;
    c.labels.assign(t.header.begin() + 1, t.header.end());
    if (t.rows.size() != c.labels.size()) {
        throw InvalidArgument("correlation csv: matrix is not square");
    }
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        if (t.rows[i].front() != c.labels[i]) {
            throw InvalidArgument("correlation csv: row labels differ from column labels");
        }
        std::vector<std::optional<double>> row;
        for (std::size_t j = 1; j < t.rows[i].size(); ++j) {
            row.push_back(parse_opt(t.rows[i][j]));
        }
        c.r.push_back(std::move(row));
    }
    return c;
}

std::string relations_to_csv(const RelationClassification& rc) {
    csv::Table t{{"a", "b", "r", "class"}, {}};
    for (const auto& p : rc.pairs) {
        t.rows.push_back({p.a, p.b, format_opt(p.r), std::string(to_string(p.relation))});
    }
    return csv::to_string(t);
}

RelationClassification relations_from_csv(std::string_view text) {
    const auto t = csv::parse(text);
    const auto ia = t.column("a");
    const auto ib = t.column("b");
    const auto ir = t.column("r");
    const auto ic = t.column("class");
    RelationClassification rc;
    for (const auto& row : t.rows) {
        rc.pairs.push_back({row[ia], row[ib], parse_opt(row[ir]), relation_from_string(row[ic])});
    }
    return rc;
}

nlohmann::json tree_to_json(const ClusterTree& t) {
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& m : t.merges) {
        merges.push_back({{"left", m.left}, {"right", m.right}, {"height", m.height}, {"size", m.size}});
    }
    return {{"linkage", "average"},
            {"distance", "1 - r"},
            {"leaves", t.leaves},
            {"merges", merges},
            {"order", t.order}};
}

ClusterTree tree_from_json(const nlohmann::json& j) {
    ClusterTree t;
    t.leaves = j.at("leaves").get<std::vector<std::string>>();
    for (const auto& m : j.at("merges")) {
        t.merges.push_back({m.at("left").get<std::size_t>(), m.at("right").get<std::size_t>(),
                            m.at("height").get<double>(), m.at("size").get<std::size_t>()});
    }
    t.order = j.at("order").get<std::vector<std::size_t>>();
    return t;
}

}  // namespace gracelab::analysis
