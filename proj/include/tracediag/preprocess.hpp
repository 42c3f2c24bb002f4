#pragma once

#include <algorithm>
#include <vector>

#include "tracediag/errors.hpp"
#include "tracediag/signature_db.hpp"

namespace tracediag {

// Per-feature min/max fitted on a training subset; reused verbatim at
// diagnosis time so unseen traces are filtered identically.
struct ScaleParams {
    std::vector<double> min_v;
    std::vector<double> max_v;

    std::size_t dim() const { return min_v.size(); }
};

// {cf_0} -> -1, {cf_j} -> +1. Only exact training-subset label sets qualify.
inline int encode_label(const LabelSet& labels, ClassLabel fault) {
    if (labels == LabelSet{ClassLabel::healthy()}) return -1;
    if (labels == LabelSet{fault}) return +1;
    std::string got;
    for (const auto& l : labels) got += (got.empty() ? "" : ",") + l.str();
    throw NotInSubset("labels {" + got + "} are not part of the " + fault.str() +
                      " training subset");
}

inline ScaleParams fit_scaler(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw EmptyDataset("cannot fit a scaler on zero vectors");
    const std::size_t m = rows.front().size();
    ScaleParams sp;
    sp.min_v = rows.front();
    sp.max_v = rows.front();
    for (const auto& r : rows) {
        if (r.size() != m) throw DimensionMismatch("ragged training matrix");
        for (std::size_t k = 0; k < m; ++k) {
            sp.min_v[k] = std::min(sp.min_v[k], r[k]);
            sp.max_v[k] = std::max(sp.max_v[k], r[k]);
        }
    }
    return sp;
}

// Linear rescale into [0,1]. Constant features map to 0; values outside the
// fitted range (possible at diagnosis time) are clamped.
inline std::vector<double> apply_scaler(const ScaleParams& sp, const std::vector<double>& x) {
    if (x.size() != sp.dim())
        throw DimensionMismatch("vector has " + std::to_string(x.size()) +
                                " features, scaler expects " + std::to_string(sp.dim()));
    std::vector<double> out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double range = sp.max_v[k] - sp.min_v[k];
        if (range > 0) {
            out[k] = std::clamp((x[k] - sp.min_v[k]) / range, 0.0, 1.0);
        } else {
            out[k] = 0.0;
        }
    }
    return out;
}

inline std::vector<std::vector<double>> apply_scaler(const ScaleParams& sp,
                                                     const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(apply_scaler(sp, r));
    return out;
}

} // namespace tracediag
