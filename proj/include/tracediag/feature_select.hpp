#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "tracediag/errors.hpp"
#include "tracediag/svm.hpp"

namespace tracediag {

// Welch two-sample t statistic. With both variances zero the statistic is
// undefined: equal means score 0, separated means get a finite rank-top
// sentinel (DBL_MAX keeps serialization clean, unlike an actual infinity).
inline double welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw TooFewSamples("welch t-test needs at least 2 samples per side");
    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    };
    auto var = [&](const std::vector<double>& v, double mu) {
        double ss = 0;
        for (double x : v) ss += (x - mu) * (x - mu);
        return ss / double(v.size() - 1);
    };
    const double ma = mean(a), mb = mean(b);
    const double se2 = var(a, ma) / double(a.size()) + var(b, mb) / double(b.size());
    if (se2 == 0) {
        if (ma == mb) return 0.0;
        return ma > mb ? std::numeric_limits<double>::max()
                       : -std::numeric_limits<double>::max();
    }
    return (ma - mb) / std::sqrt(se2);
}

struct FeatureRanking {
    // (feature index, |t|) in nonincreasing score order; ties by lower index
    std::vector<std::pair<std::size_t, double>> ranked;

    std::vector<std::size_t> top(std::size_t q) const {
        std::vector<std::size_t> idx;
        idx.reserve(q);
        for (std::size_t i = 0; i < q && i < ranked.size(); ++i) idx.push_back(ranked[i].first);
        return idx;
    }
};

// Scores every feature by |t| between the +1 and -1 class columns.
inline FeatureRanking rank_features(const std::vector<std::vector<double>>& x,
                                    const std::vector<int>& y) {
    if (x.size() != y.size()) throw DimensionMismatch("label count does not match rows");
    std::size_t pos = 0, neg = 0;
    for (int label : y) (label > 0 ? pos : neg) += 1;
    if (pos < 2 || neg < 2)
        throw TooFewSamples("ranking needs at least 2 samples in each class");

    const std::size_t m = x.empty() ? 0 : x.front().size();
    FeatureRanking r;
    r.ranked.reserve(m);
    std::vector<double> col_pos(pos), col_neg(neg);
    for (std::size_t k = 0; k < m; ++k) {
        std::size_t ip = 0, in = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (y[i] > 0) col_pos[ip++] = x[i][k];
            else col_neg[in++] = x[i][k];
        }
        r.ranked.emplace_back(k, std::fabs(welch_t(col_pos, col_neg)));
    }
    std::stable_sort(r.ranked.begin(), r.ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return r;
}

struct CvRow {
    std::size_t q = 0;
    double mean_accuracy = 0;
    std::vector<double> fold_accuracies;
};

struct SelectionResult {
    std::size_t q = 0;                 // chosen subset size
    std::vector<std::size_t> features; // first q ranked indices
    std::vector<CvRow> cv_table;       // one row per candidate q
};

struct SelectConfig {
    std::size_t q_max = 30;
    std::size_t folds = 5;
    uint64_t seed = 0;           // fold-assignment shuffle
    double C = 10.0;
    KernelKind kernel = KernelKind::rbf;
    double gamma_override = 0.0; // <= 0 means gamma = 1/q per candidate
    double tau = 1e-3;
    std::size_t max_iter = 100000;
};

namespace detail {

inline std::vector<std::vector<double>> project(const std::vector<std::vector<double>>& x,
                                                const std::vector<std::size_t>& features) {
    std::vector<std::vector<double>> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i].reserve(features.size());
        for (std::size_t k : features) out[i].push_back(x[i][k]);
    }
    return out;
}

// Deterministic stratified fold assignment: per-class shuffle, round-robin deal.
inline std::vector<std::size_t> fold_assignment(const std::vector<int>& y, std::size_t folds,
                                                uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] > 0 ? pos : neg).push_back(i);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    std::vector<std::size_t> fold(y.size(), 0);
    for (std::size_t i = 0; i < pos.size(); ++i) fold[pos[i]] = i % folds;
    for (std::size_t i = 0; i < neg.size(); ++i) fold[neg[i]] = i % folds;
    return fold;
}

} // namespace detail

inline KernelSpec kernel_for_q(const SelectConfig& cfg, std::size_t q) {
    if (cfg.kernel == KernelKind::linear) return KernelSpec::linear();
    const double gamma = cfg.gamma_override > 0 ? cfg.gamma_override : 1.0 / double(q);
    return KernelSpec::rbf(gamma);
}

// Wrapper stage of the hybrid selection: sweeps q = 1..q_max over the ranked
// feature prefix, scoring each candidate by stratified k-fold CV accuracy of
// the same SVM configuration used for final training. Smallest q wins ties.
inline SelectionResult select_feature_count(const std::vector<std::vector<double>>& x,
                                            const std::vector<int>& y,
                                            const FeatureRanking& ranking,
                                            const SelectConfig& cfg) {
    if (cfg.folds < 2) throw ConfigInvalid("cross-validation needs at least 2 folds");
    std::size_t pos = 0, neg = 0;
    for (int label : y) (label > 0 ? pos : neg) += 1;
    if (pos < cfg.folds || neg < cfg.folds)
        throw TooFewSamples("each class needs at least one sample per fold");

    const std::size_t m = x.front().size();
    const std::size_t q_max = std::min(cfg.q_max, m);
    const auto fold = detail::fold_assignment(y, cfg.folds, cfg.seed);

    SelectionResult result;
    for (std::size_t q = 1; q <= q_max; ++q) {
        const auto feats = ranking.top(q);
        const auto projected = detail::project(x, feats);

        CvRow row;
        row.q = q;
        for (std::size_t f = 0; f < cfg.folds; ++f) {
            std::vector<std::vector<double>> train_x, test_x;
            std::vector<int> train_y, test_y;
            for (std::size_t i = 0; i < projected.size(); ++i) {
                if (fold[i] == f) {
                    test_x.push_back(projected[i]);
                    test_y.push_back(y[i]);
                } else {
                    train_x.push_back(projected[i]);
                    train_y.push_back(y[i]);
                }
            }
            SvmTrainConfig svm_cfg;
            svm_cfg.C = cfg.C;
            svm_cfg.kernel = kernel_for_q(cfg, q);
            svm_cfg.tau = cfg.tau;
            svm_cfg.max_iter = cfg.max_iter;
            const auto model = train_l2_svm(train_x, train_y, svm_cfg);
            std::size_t correct = 0;
            for (std::size_t i = 0; i < test_x.size(); ++i)
                if (classify(model, test_x[i]) == test_y[i]) ++correct;
            row.fold_accuracies.push_back(test_x.empty() ? 0.0
                                                         : double(correct) / double(test_x.size()));
        }
        row.mean_accuracy =
            std::accumulate(row.fold_accuracies.begin(), row.fold_accuracies.end(), 0.0) /
            double(row.fold_accuracies.size());
        result.cv_table.push_back(std::move(row));
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < result.cv_table.size(); ++i)
        if (result.cv_table[i].mean_accuracy > result.cv_table[best].mean_accuracy) best = i;
    result.q = result.cv_table[best].q;
    result.features = ranking.top(result.q);
    return result;
}

} // namespace tracediag
