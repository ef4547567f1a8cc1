#include "afn/loss_metrics.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace afn {

void LabelVolume::validate() const {
    if (depth < 1 || height < 1 || width < 1 || num_classes < 1)
        throw ShapeError("LabelVolume: invalid dimensions");
    if (static_cast<std::int64_t>(labels.size()) != size())
        throw ShapeError("LabelVolume: label buffer size mismatch");
    for (std::uint8_t v : labels)
        if (v >= num_classes)
            throw ShapeError("LabelVolume: label value out of range");
}

Tensor one_hot(const LabelVolume& v) {
    v.validate();
    Tensor out = Tensor::zeros({v.num_classes, v.depth, v.height, v.width});
    std::int64_t n = v.size();
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::int64_t>(v.labels[static_cast<size_t>(i)]) * n + i] =
            1.0;
    return out;
}

double dice_score(const LabelVolume& pred, const LabelVolume& target, int cls) {
    if (pred.depth != target.depth || pred.height != target.height ||
        pred.width != target.width)
        throw ShapeError("dice_score: volume shapes differ");
    if (cls < 0 || cls >= target.num_classes)
        throw ShapeError("dice_score: class " + std::to_string(cls) +
                         " out of range");
    std::int64_t a = 0, b = 0, inter = 0;
    for (size_t i = 0; i < target.labels.size(); ++i) {
        bool in_a = pred.labels[i] == cls;
        bool in_b = target.labels[i] == cls;
        a += in_a;
        b += in_b;
        inter += in_a && in_b;
    }
    if (a + b == 0)
        return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double soft_dice_value(const Tensor& probs, const Tensor& target_onehot,
                       double eps) {
    if (probs.shape() != target_onehot.shape())
        throw ShapeError("soft_dice_value: shape mismatch");
    if (probs.rank() < 4)
        throw ShapeError("soft_dice_value: expected rank >= 4");
    int ca = probs.rank() - 4;
    std::int64_t outer = 1;
    for (int ax = 0; ax < ca; ++ax)
        outer *= probs.extent(ax);
    int C = probs.extent(ca);
    std::int64_t inner = probs.size() / (outer * C);
    double dice_sum = 0;
    int present = 0;
    for (int c = 0; c < C; ++c) {
        double pg = 0, pp = 0, gg = 0;
        for (std::int64_t o = 0; o < outer; ++o) {
            std::int64_t base = (o * C + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
                double p = probs[base + i], g = target_onehot[base + i];
                pg += p * g;
                pp += p * p;
                gg += g * g;
            }
        }
        if (gg > 0) {
            ++present;
            dice_sum += 2.0 * pg / (pp + gg + eps);
        }
    }
    if (present == 0)
        throw std::runtime_error("soft_dice_value: empty target");
    return 1.0 - dice_sum / present;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "volume_id,class_name,dice\n";
    auto cname = [&](int c) {
        if (c < static_cast<int>(class_names.size()))
            return class_names[static_cast<size_t>(c)];
        return "class" + std::to_string(c);
    };
    std::set<int> classes;
    for (const auto& r : rows) {
        os << r.volume_id << "," << cname(r.cls) << "," << r.dice << "\n";
        classes.insert(r.cls);
    }
    for (int c : classes)
        os << "mean," << cname(c) << "," << class_mean(c) << "\n";
    os << "mean,all," << mean_dice() << "\n";
    return os.str();
}

double MetricsReport::mean_dice() const {
    if (rows.empty())
        return 0;
    double s = 0;
    for (const auto& r : rows)
        s += r.dice;
    return s / static_cast<double>(rows.size());
}

double MetricsReport::class_mean(int cls) const {
    double s = 0;
    int n = 0;
    for (const auto& r : rows)
        if (r.cls == cls) {
            s += r.dice;
            ++n;
        }
    return n ? s / n : 0;
}

} // namespace afn
