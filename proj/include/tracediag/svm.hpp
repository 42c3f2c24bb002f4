#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "tracediag/errors.hpp"

namespace tracediag {

enum class KernelKind { linear, rbf };

struct KernelSpec {
    KernelKind kind = KernelKind::rbf;
    double gamma = 1.0; // rbf only

    static KernelSpec linear() { return {KernelKind::linear, 0.0}; }
    static KernelSpec rbf(double gamma) { return {KernelKind::rbf, gamma}; }
};

inline double kernel_eval(const KernelSpec& k, const std::vector<double>& x,
                          const std::vector<double>& z) {
    if (x.size() != z.size())
        throw DimensionMismatch("kernel arguments have different dimensions");
    if (k.kind == KernelKind::linear) {
        double dot = 0;
        for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * z[i];
        return dot;
    }
    if (k.gamma <= 0) throw ConfigInvalid("rbf gamma must be positive");
    double sq = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - z[i];
        sq += d * d;
    }
    return std::exp(-k.gamma * sq);
}

// L2 soft-margin SVM: primal 0.5*||w||^2 + C*sum(xi^2), realized as a
// hard-margin dual on the shifted kernel K~ = K + I/(2C). Inference uses the
// original kernel; the shift never appears in decision values.
struct SvmModel {
    KernelSpec kernel;
    double C = 10.0;
    std::vector<std::vector<double>> support_vectors;
    std::vector<double> alphas;  // > 0, one per support vector
    std::vector<int> sv_labels;  // +-1
    double bias = 0.0;
    double dual_objective = 0.0;
    bool converged = true;

    std::size_t dim() const {
        return support_vectors.empty() ? 0 : support_vectors.front().size();
    }
};

struct SvmTrainConfig {
    double C = 10.0;
    KernelSpec kernel = KernelSpec::rbf(1.0);
    double tau = 1e-3;             // KKT violation tolerance
    std::size_t max_iter = 100000;
    std::vector<double>* objective_trace = nullptr; // optional diagnostics sink
};

// Two-variable ascent on the shifted dual (maximal-violating-pair selection).
// Deterministic: alphas start at zero, ties resolve to the lowest index.
inline SvmModel train_l2_svm(const std::vector<std::vector<double>>& x,
                             const std::vector<int>& y, const SvmTrainConfig& cfg) {
    const std::size_t n = x.size();
    if (n != y.size()) throw DimensionMismatch("label count does not match vector count");
    if (n == 0) throw EmptyDataset("no training vectors");
    bool has_pos = false, has_neg = false;
    for (int label : y) {
        if (label == +1) has_pos = true;
        else if (label == -1) has_neg = true;
        else throw DegenerateLabels("labels must be +1 or -1");
    }
    if (!has_pos || !has_neg)
        throw DegenerateLabels("training set must contain both classes");
    if (cfg.C <= 0) throw ConfigInvalid("C must be positive");

    const double shift = 1.0 / (2.0 * cfg.C);
    std::vector<double> kt(n * n); // K~ in row-major
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double v = kernel_eval(cfg.kernel, x[i], x[j]);
            kt[i * n + j] = kt[j * n + i] = v;
        }
        kt[i * n + i] += shift;
    }

    std::vector<double> alpha(n, 0.0);
    std::vector<double> f(n, 0.0); // f~_i = sum_j alpha_j y_j K~_ij (no bias)
    bool converged = false;

    auto objective = [&] {
        double w = 0;
        for (std::size_t i = 0; i < n; ++i) w += alpha[i] - 0.5 * alpha[i] * y[i] * f[i];
        return w;
    };

    for (std::size_t iter = 0; iter < cfg.max_iter; ++iter) {
        // violating pair: max over I_up and min over I_low of v_i = y_i - f~_i
        std::size_t up = n, low = n;
        double up_v = -std::numeric_limits<double>::infinity();
        double low_v = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            const double v = double(y[i]) - f[i];
            const bool in_up = y[i] == +1 || alpha[i] > 0;
            const bool in_low = y[i] == -1 || alpha[i] > 0;
            if (in_up && v > up_v) { up_v = v; up = i; }
            if (in_low && v < low_v) { low_v = v; low = i; }
        }
        if (up == n || low == n || up_v - low_v <= cfg.tau) {
            converged = true;
            break;
        }

        const double eta = kt[up * n + up] + kt[low * n + low] - 2.0 * kt[up * n + low];
        double delta = (up_v - low_v) / std::max(eta, 1e-15);
        if (y[up] == -1) delta = std::min(delta, alpha[up]);
        if (y[low] == +1) delta = std::min(delta, alpha[low]);

        // update pair: alpha_up += y_up*delta, alpha_low -= y_low*delta
        alpha[up] += double(y[up]) * delta;
        alpha[low] -= double(y[low]) * delta;
        if (alpha[up] < 0) alpha[up] = 0;   // guard numerical dust at the clip
        if (alpha[low] < 0) alpha[low] = 0;
        for (std::size_t k = 0; k < n; ++k)
            f[k] += delta * (kt[up * n + k] - kt[low * n + k]);

        if (cfg.objective_trace) cfg.objective_trace->push_back(objective());
    }

    SvmModel model;
    model.kernel = cfg.kernel;
    model.C = cfg.C;
    model.converged = converged;
    model.dual_objective = objective();

    double bias_sum = 0;
    std::size_t sv_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] > 0) {
            bias_sum += double(y[i]) - f[i];
            ++sv_count;
            model.support_vectors.push_back(x[i]);
            model.alphas.push_back(alpha[i]);
            model.sv_labels.push_back(y[i]);
        }
    }
    model.bias = sv_count > 0 ? bias_sum / double(sv_count) : 0.0;
    return model;
}

inline double decision_value(const SvmModel& model, const std::vector<double>& x) {
    if (!model.support_vectors.empty() && x.size() != model.dim())
        throw DimensionMismatch("input dimension does not match the support vectors");
    double f = model.bias;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
        f += model.alphas[i] * double(model.sv_labels[i]) *
             kernel_eval(model.kernel, model.support_vectors[i], x);
    return f;
}

// Zero maps to -1 (healthy) by convention.
inline int classify(const SvmModel& model, const std::vector<double>& x) {
    return decision_value(model, x) > 0 ? +1 : -1;
}

} // namespace tracediag
