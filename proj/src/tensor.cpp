#include "afn/tensor.hpp"

#include "afn/kernels.hpp"

#include <cmath>
#include <sstream>

namespace afn {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i)
        os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s)
        n *= e;
    return n;
}

namespace {

void check_shape(const Shape& s) {
    for (int e : s)
        if (e < 1)
            throw ShapeError("invalid extent in shape " + shape_str(s));
}

} // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    check_shape(shape);
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)), value);
    return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeError("from_values: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    return Tensor(std::move(shape), std::move(values));
}

std::vector<std::int64_t> Tensor::strides() const {
    std::vector<std::int64_t> st(shape_.size(), 1);
    for (int i = rank() - 2; i >= 0; --i)
        st[static_cast<size_t>(i)] =
            st[static_cast<size_t>(i + 1)] * shape_[static_cast<size_t>(i + 1)];
    return st;
}

namespace {

enum class EwOp { Add, Sub, Mul };

double apply(EwOp op, double x, double y) {
    switch (op) {
    case EwOp::Add: return x + y;
    case EwOp::Sub: return x - y;
    case EwOp::Mul: return x * y;
    }
    return 0;
}

Tensor ewise_same(EwOp op, const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& k = kernels::active();
    auto n = static_cast<std::size_t>(a.size());
    switch (op) {
    case EwOp::Add: k.add(n, a.data(), b.data(), out.data()); break;
    case EwOp::Sub: k.sub(n, a.data(), b.data(), out.data()); break;
    case EwOp::Mul: k.mul(n, a.data(), b.data(), out.data()); break;
    }
    return out;
}

// b broadcasts against a on axes where b has extent 1 (a's shape wins).
Tensor ewise(EwOp op, const Tensor& a, const Tensor& b) {
    if (a.same_shape(b))
        return ewise_same(op, a, b);
    if (b.size() == 1) {
        Tensor out = Tensor::zeros(a.shape());
        double bv = b[0];
        for (std::int64_t i = 0; i < a.size(); ++i)
            out[i] = apply(op, a[i], bv);
        return out;
    }
    if (a.rank() != b.rank())
        throw ShapeError("ewise: incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    for (int ax = 0; ax < a.rank(); ++ax) {
        if (b.extent(ax) == a.extent(ax) || b.extent(ax) == 1)
            continue;
        throw ShapeError("ewise: incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    auto ast = a.strides();
    auto bst = b.strides();
    std::vector<std::int64_t> bstride(static_cast<size_t>(a.rank()));
    for (int ax = 0; ax < a.rank(); ++ax)
        bstride[static_cast<size_t>(ax)] =
            b.extent(ax) == a.extent(ax) ? bst[static_cast<size_t>(ax)] : 0;
    std::vector<int> idx(static_cast<size_t>(a.rank()), 0);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        std::int64_t bi = 0;
        for (int ax = 0; ax < a.rank(); ++ax)
            bi += idx[static_cast<size_t>(ax)] * bstride[static_cast<size_t>(ax)];
        out[i] = apply(op, a[i], b[bi]);
        for (int ax = a.rank() - 1; ax >= 0; --ax) {
            if (++idx[static_cast<size_t>(ax)] < a.extent(ax))
                break;
            idx[static_cast<size_t>(ax)] = 0;
        }
    }
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return ewise(EwOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return ewise(EwOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return ewise(EwOp::Mul, a, b); }

Tensor add(const Tensor& a, double b) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i)
        out[i] = a[i] + b;
    return out;
}

Tensor mul(const Tensor& a, double b) {
    Tensor out = Tensor::zeros(a.shape());
    kernels::active().scale(static_cast<std::size_t>(a.size()), b, a.data(),
                            out.data());
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    kernels::active().relu(static_cast<std::size_t>(a.size()), a.data(),
                           out.data());
    return out;
}

Tensor reduce(Reduce op, const Tensor& a, int axis, bool keepdim) {
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("reduce: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(a.shape()));
    Shape out_shape;
    for (int ax = 0; ax < a.rank(); ++ax) {
        if (ax == axis) {
            if (keepdim)
                out_shape.push_back(1);
        } else {
            out_shape.push_back(a.extent(ax));
        }
    }
    if (out_shape.empty())
        out_shape.push_back(1);
    Tensor out = Tensor::zeros(out_shape);

    auto st = a.strides();
    std::int64_t axis_stride = st[static_cast<size_t>(axis)];
    int axis_extent = a.extent(axis);
    std::int64_t outer = 1;
    for (int ax = 0; ax < axis; ++ax)
        outer *= a.extent(ax);
    std::int64_t inner = axis_stride;

    std::int64_t o = 0;
    for (std::int64_t ou = 0; ou < outer; ++ou) {
        std::int64_t base = ou * axis_extent * inner;
        for (std::int64_t in = 0; in < inner; ++in, ++o) {
            switch (op) {
            case Reduce::Sum:
            case Reduce::Mean: {
                double s = 0;
                for (int j = 0; j < axis_extent; ++j)
                    s += a[base + in + j * inner];
                out[o] = op == Reduce::Mean ? s / axis_extent : s;
                break;
            }
            case Reduce::Argmax: {
                int best = 0;
                double bv = a[base + in];
                for (int j = 1; j < axis_extent; ++j) {
                    double v = a[base + in + j * inner];
                    if (v > bv) {
                        bv = v;
                        best = j;
                    }
                }
                out[o] = best;
                break;
            }
            }
        }
    }
    return out;
}

double sum_all(const Tensor& a) {
    return kernels::active().sum(static_cast<std::size_t>(a.size()), a.data());
}

double mean_all(const Tensor& a) { return sum_all(a) / static_cast<double>(a.size()); }

namespace {

void check_amount_rank(const Tensor& a, const std::vector<int>& lo,
                       const std::vector<int>& hi, const char* what) {
    if (static_cast<int>(lo.size()) != a.rank() ||
        static_cast<int>(hi.size()) != a.rank())
        throw ShapeError(std::string(what) + ": amounts rank mismatch for shape " +
                         shape_str(a.shape()));
}

// Shared copy between a source tensor and a destination offset by lo.
void copy_region(const Tensor& src, Tensor& dst, const std::vector<int>& dst_off) {
    auto sst = src.strides();
    auto dst_st = dst.strides();
    int r = src.rank();
    std::vector<int> idx(static_cast<size_t>(r), 0);
    std::int64_t row = src.extent(r - 1);
    std::int64_t n_rows = src.size() / row;
    for (std::int64_t ri = 0; ri < n_rows; ++ri) {
        std::int64_t s = 0, d = 0;
        for (int ax = 0; ax < r - 1; ++ax) {
            s += idx[static_cast<size_t>(ax)] * sst[static_cast<size_t>(ax)];
            d += (idx[static_cast<size_t>(ax)] + dst_off[static_cast<size_t>(ax)]) *
                 dst_st[static_cast<size_t>(ax)];
        }
        d += dst_off[static_cast<size_t>(r - 1)];
        for (std::int64_t x = 0; x < row; ++x)
            dst[d + x] = src[s + x];
        for (int ax = r - 2; ax >= 0; --ax) {
            if (++idx[static_cast<size_t>(ax)] < src.extent(ax))
                break;
            idx[static_cast<size_t>(ax)] = 0;
        }
    }
}

} // namespace

Tensor pad(const Tensor& a, const std::vector<int>& lo, const std::vector<int>& hi) {
    check_amount_rank(a, lo, hi, "pad");
    Shape out_shape(a.shape());
    for (int ax = 0; ax < a.rank(); ++ax) {
        if (lo[static_cast<size_t>(ax)] < 0 || hi[static_cast<size_t>(ax)] < 0)
            throw ShapeError("pad: negative amount");
        out_shape[static_cast<size_t>(ax)] +=
            lo[static_cast<size_t>(ax)] + hi[static_cast<size_t>(ax)];
    }
    Tensor out = Tensor::zeros(out_shape);
    copy_region(a, out, lo);
    return out;
}

Tensor crop(const Tensor& a, const std::vector<int>& lo, const std::vector<int>& hi) {
    check_amount_rank(a, lo, hi, "crop");
    Shape out_shape(a.shape());
    for (int ax = 0; ax < a.rank(); ++ax) {
        int l = lo[static_cast<size_t>(ax)], h = hi[static_cast<size_t>(ax)];
        if (l < 0 || h < 0 || l + h >= a.extent(ax))
            throw ShapeError("crop: amounts exceed extent on axis " +
                             std::to_string(ax) + " of shape " +
                             shape_str(a.shape()));
        out_shape[static_cast<size_t>(ax)] -= l + h;
    }
    Tensor out = Tensor::zeros(out_shape);
    // copy_region in reverse: iterate over the output region of the input
    auto ast = a.strides();
    auto ost = out.strides();
    int r = a.rank();
    std::vector<int> idx(static_cast<size_t>(r), 0);
    std::int64_t row = out.extent(r - 1);
    std::int64_t n_rows = out.size() / row;
    for (std::int64_t ri = 0; ri < n_rows; ++ri) {
        std::int64_t s = lo[static_cast<size_t>(r - 1)], d = 0;
        for (int ax = 0; ax < r - 1; ++ax) {
            s += (idx[static_cast<size_t>(ax)] + lo[static_cast<size_t>(ax)]) *
                 ast[static_cast<size_t>(ax)];
            d += idx[static_cast<size_t>(ax)] * ost[static_cast<size_t>(ax)];
        }
        for (std::int64_t x = 0; x < row; ++x)
            out[d + x] = a[s + x];
        for (int ax = r - 2; ax >= 0; --ax) {
            if (++idx[static_cast<size_t>(ax)] < out.extent(ax))
                break;
            idx[static_cast<size_t>(ax)] = 0;
        }
    }
    return out;
}

} // namespace afn
