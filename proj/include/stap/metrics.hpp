#pragma once

#include <cstddef>
#include <vector>

namespace stap {

struct MetricReport {
    double nmse = 0.0;
    double mae = 0.0;
    double src = 0.0;
    std::size_t n = 0;
    bool degenerate_labels = false;  // constant labels: nMSE undefined
};

/// Ranks with ties averaged, 1-based.
std::vector<double> average_tie_ranks(const std::vector<double>& x);

/// Pearson correlation; 0 when either side has zero variance.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// MAE = mean |pred - label|; nMSE = MSE / Var(labels); SRC = Pearson of
/// average-tie ranks. Constant labels leave nMSE unset and flag the report.
MetricReport compute_metrics(const std::vector<double>& preds,
                             const std::vector<double>& labels);

}  // namespace stap
