#pragma once

#include "afn/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace afn {

// Integer class map over a D x H x W grid.
struct LabelVolume {
    int depth = 0, height = 0, width = 0;
    int num_classes = 0;
    std::vector<std::uint8_t> labels; // row-major, values in [0, num_classes)

    std::int64_t size() const {
        return static_cast<std::int64_t>(depth) * height * width;
    }
    void validate() const;
};

// One-hot encoding, shape [num_classes, D, H, W].
Tensor one_hot(const LabelVolume& v);

// 2|A∩B| / (|A|+|B|); 1 when both masks are empty, 0 when exactly one is.
double dice_score(const LabelVolume& pred, const LabelVolume& target, int cls);

// Non-differentiable soft dice value on raw prob/target tensors (the
// differentiable version is Graph::dice_loss). Averaged over classes
// present in the target.
double soft_dice_value(const Tensor& probs, const Tensor& target_onehot,
                       double eps = 1e-5);

// CSV metrics report mirroring the per-organ tables: one row per
// (volume, class), then a mean row per class and an overall mean.
struct MetricsReport {
    struct Row {
        std::string volume_id;
        int cls;
        double dice;
    };
    std::vector<Row> rows;
    std::vector<std::string> class_names; // optional, defaults to class<i>

    std::string to_csv() const;
    double mean_dice() const;
    double class_mean(int cls) const;
};

} // namespace afn
