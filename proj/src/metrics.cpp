#include "aum/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace aum {

namespace {

std::size_t argmax_row(const Array<float>& a, std::size_t row) {
    std::size_t d = a.cols(), best = 0;
    for (std::size_t j = 1; j < d; ++j)
        if (a.at2(row, j) > a.at2(row, best)) best = j;
    return best;
}

}  // namespace

double accuracy(const Array<float>& logits, const Array<float>& targets) {
    if (!logits.same_shape(targets))
        throw ShapeError("accuracy: " + logits.shape_str() + " vs " + targets.shape_str());
    std::size_t hits = 0, rows = logits.rows();
    for (std::size_t r = 0; r < rows; ++r)
        if (argmax_row(logits, r) == argmax_row(targets, r)) ++hits;
    return rows ? static_cast<double>(hits) / rows : 0.0;
}

MapResult mean_average_precision(const Array<float>& scores, const Array<float>& targets) {
    if (!scores.same_shape(targets))
        throw ShapeError("mAP: " + scores.shape_str() + " vs " + targets.shape_str());
    std::size_t rows = scores.rows(), classes = scores.cols();
    MapResult res;
    double sum_ap = 0.0;
    std::vector<std::size_t> order(rows);
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t positives = 0;
        for (std::size_t r = 0; r < rows; ++r)
            if (targets.at2(r, c) > 0.5f) ++positives;
        if (positives == 0) {
            ++res.classes_skipped;
            continue;
        }
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores.at2(a, c) > scores.at2(b, c);
        });
        double ap = 0.0;
        std::size_t seen_pos = 0;
        for (std::size_t k = 0; k < rows; ++k) {
            if (targets.at2(order[k], c) > 0.5f) {
                ++seen_pos;
                ap += static_cast<double>(seen_pos) / static_cast<double>(k + 1);
            }
        }
        sum_ap += ap / positives;
        ++res.classes_used;
    }
    res.map = res.classes_used ? sum_ap / res.classes_used : 0.0;
    return res;
}

}  // namespace aum
