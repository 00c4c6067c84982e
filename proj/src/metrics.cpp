#include "stap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stap {

std::vector<double> average_tie_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("pearson: aligned nonempty vectors required");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

MetricReport compute_metrics(const std::vector<double>& preds,
                             const std::vector<double>& labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw std::invalid_argument("compute_metrics: aligned nonempty vectors required");
    MetricReport rep;
    rep.n = preds.size();
    const double n = static_cast<double>(rep.n);

    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = preds[i] - labels[i];
        abs_sum += std::fabs(r);
        sq_sum += r * r;
    }
    rep.mae = abs_sum / n;

    const double mean_label = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
    double var = 0.0;
    for (double y : labels) var += (y - mean_label) * (y - mean_label);
    var /= n;
    if (var <= 0.0) {
        rep.degenerate_labels = true;
    } else {
        rep.nmse = (sq_sum / n) / var;
    }

    rep.src = pearson(average_tie_ranks(preds), average_tie_ranks(labels));
    return rep;
}

}  // namespace stap
