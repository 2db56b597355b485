#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "segdt/image.hpp"

namespace segdt {

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
};

// Overlap metrics with totalized degenerate cases:
//  - both masks empty: Dice = IoU = SE = 1 (perfect agreement)
//  - empty gt, nonempty pred: SE reported 0 and flagged
//  - gt covers everything: SP reported 1 (no negatives to miss) and flagged
struct MetricValues {
    double dice = 0;
    double iou = 0;
    double acc = 0;
    double se = 0;
    double sp = 0;
    bool se_undefined = false;
    bool sp_undefined = false;
};

struct MetricsRow {
    std::string id;
    ConfusionCounts counts;
    MetricValues values;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;   // sorted by id
    MetricValues mean;              // unweighted mean over rows
    ConfusionCounts total_counts;   // summed, for reference only
};

ConfusionCounts confusion(const Mask& pred, const Mask& gt);
MetricValues compute_metrics(const ConfusionCounts& c);

// Pred and gt lists are matched by id; a mismatch in either direction
// raises an error naming every missing id.
MetricsReport evaluate_dataset(const std::vector<std::pair<std::string, Mask>>& pred,
                               const std::vector<std::pair<std::string, Mask>>& gt);

// Per-image rows plus a final "mean" aggregate row.
std::string report_csv(const MetricsReport& r);
std::string report_text(const MetricsReport& r);

} // namespace segdt
