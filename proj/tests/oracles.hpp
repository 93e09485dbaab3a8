#pragma once

// Slow reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace oracle {

/// Covariance over the product of standard deviations, in long double.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = static_cast<long double>(x.size());
    long double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    long double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    const long double cov = sxy / (n - 1);
    const long double sx = std::sqrt(sxx / (n - 1));
    const long double sy = std::sqrt(syy / (n - 1));
    return static_cast<double>(cov / (sx * sy));
}

struct Merge {
    std::size_t left;
    std::size_t right;
    double height;
    std::size_t size;
};

/// Average linkage by recomputing the mean pairwise distance between leaf
/// sets at every step: O(n^3) per merge. Leaves are 0..n-1, merge k makes
/// node n+k, the cluster holding the smallest label goes left and ties go
/// to the pair with the smallest (min label, max label).
inline std::vector<Merge> average_linkage(const std::vector<std::string>& labels,
                                          const std::vector<std::vector<double>>& r) {
    struct C {
        std::size_t node;
        std::vector<std::size_t> leaves;
        std::string min_label;
    };
    const std::size_t n = labels.size();
    std::vector<C> cs;
    for (std::size_t i = 0; i < n; ++i) {
        cs.push_back({i, {i}, labels[i]});
    }
    std::vector<Merge> out;
    while (cs.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 0;
        std::pair<std::string, std::string> bkey;
        for (std::size_t a = 0; a < cs.size(); ++a) {
            for (std::size_t b = a + 1; b < cs.size(); ++b) {
                long double sum = 0;
                for (auto i : cs[a].leaves) {
                    for (auto k : cs[b].leaves) {
                        sum += 1.0L - r[i][k];
                    }
                }
                const double d = static_cast<double>(
                    sum / static_cast<long double>(cs[a].leaves.size() * cs[b].leaves.size()));
                std::pair<std::string, std::string> key = std::minmax(cs[a].min_label, cs[b].min_label);
                if (d < best || (d == best && key < bkey)) {
                    best = d;
                    ba = a;
                    bb = b;
                    bkey = key;
                }
            }
        }
        C& l = cs[ba].min_label < cs[bb].min_label ? cs[ba] : cs[bb];
        C& rr = &l == &cs[ba] ? cs[bb] : cs[ba];
        C merged{n + out.size(), l.leaves, std::min(l.min_label, rr.min_label)};
        merged.leaves.insert(merged.leaves.end(), rr.leaves.begin(), rr.leaves.end());
        out.push_back({l.node, rr.node, best, merged.leaves.size()});
        cs.erase(cs.begin() + static_cast<std::ptrdiff_t>(std::max(ba, bb)));
        cs.erase(cs.begin() + static_cast<std::ptrdiff_t>(std::min(ba, bb)));
        cs.push_back(std::move(merged));
    }
    return out;
}

}  // namespace oracle
