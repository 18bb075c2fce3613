#pragma once

#include "aum/array.hpp"

namespace aum {

// Fraction of rows whose argmax logit hits the argmax target.
// Ties break to the lowest index.
double accuracy(const Array<float>& logits, const Array<float>& targets);

struct MapResult {
    double map = 0.0;
    std::size_t classes_used = 0;
    std::size_t classes_skipped = 0;
};

// Unweighted mean over classes of average precision; AP averages precision
// at each positive in the score-sorted list. Classes without positives are
// excluded from the mean and counted.
MapResult mean_average_precision(const Array<float>& scores, const Array<float>& targets);

}  // namespace aum
