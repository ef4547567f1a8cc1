#include "afn/autodiff.hpp"

#include "afn/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace afn {

Tensor& ParamStore::create(const std::string& name, Tensor init, bool trainable) {
    if (map_.count(name))
        throw std::runtime_error("parameter already exists: " + name);
    order_.push_back(name);
    auto [it, ok] = map_.emplace(name, Entry{std::move(init), trainable});
    return it->second.tensor;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end())
        throw std::runtime_error("unknown parameter: " + name);
    return it->second.tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end())
        throw std::runtime_error("unknown parameter: " + name);
    return it->second.tensor;
}

bool ParamStore::contains(const std::string& name) const { return map_.count(name) > 0; }

bool ParamStore::trainable(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end())
        throw std::runtime_error("unknown parameter: " + name);
    return it->second.trainable;
}

std::vector<std::string> ParamStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& n : order_)
        if (map_.at(n).trainable)
            out.push_back(n);
    return out;
}

namespace {

void accumulate(Tensor& g, const Tensor& t) {
    kernels::active().axpy(static_cast<std::size_t>(g.size()), 1.0, t.data(),
                           g.data());
}

// Sum t down to `target` shape: axes where target has extent 1 and t does
// not are reduced. Used by broadcast backward rules.
Tensor reduce_to_shape(const Tensor& t, const Shape& target) {
    if (t.shape() == target)
        return t;
    Tensor cur = t;
    for (int ax = 0; ax < static_cast<int>(target.size()); ++ax)
        if (target[static_cast<size_t>(ax)] == 1 && cur.extent(ax) != 1)
            cur = reduce(Reduce::Sum, cur, ax, /*keepdim=*/true);
    if (cur.shape() != target)
        throw ShapeError("reduce_to_shape: cannot reduce " + shape_str(t.shape()) +
                         " to " + shape_str(target));
    return cur;
}

int channel_axis_of(const Tensor& t) {
    if (t.rank() < 4)
        throw ShapeError("expected rank >= 4 activation, got " +
                         shape_str(t.shape()));
    return t.rank() - 4;
}

// Iterates (outer, channel, inner) decomposition around one axis.
struct AxisView {
    std::int64_t outer, extent, inner;
    explicit AxisView(const Tensor& t, int axis) {
        outer = 1;
        for (int ax = 0; ax < axis; ++ax)
            outer *= t.extent(ax);
        extent = t.extent(axis);
        inner = 1;
        for (int ax = axis + 1; ax < t.rank(); ++ax)
            inner *= t.extent(ax);
    }
};

} // namespace

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_ref(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_alloc = true;
    }
    return n.grad;
}

const Tensor& Graph::grad(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_alloc)
        throw std::runtime_error("node " + std::to_string(id) +
                                 " has no gradient (run backward first)");
    return n.grad;
}

int Graph::input(Tensor v) {
    Node n;
    n.op = OpKind::Input;
    n.value = std::move(v);
    return push(std::move(n));
}

int Graph::param(const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end())
        return it->second;
    if (!params_)
        throw std::runtime_error("graph has no parameter store");
    Node n;
    n.op = OpKind::Param;
    n.param_name = name;
    n.value = params_->get(name);
    n.needs_grad = params_->trainable(name);
    int id = push(std::move(n));
    param_nodes_[name] = id;
    return id;
}

int Graph::conv3d(int x, int w, int b, const ConvSpec& spec) {
    Node n;
    n.op = OpKind::Conv3d;
    n.conv = spec;
    n.inputs = {x, w};
    if (b >= 0)
        n.inputs.push_back(b);
    const Tensor* bias = b >= 0 ? &value(b) : nullptr;
    n.value = conv3d_forward(value(x), value(w), bias, spec);
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad ||
                   nodes_[static_cast<size_t>(w)].needs_grad ||
                   (b >= 0 && nodes_[static_cast<size_t>(b)].needs_grad);
    return push(std::move(n));
}

int Graph::relu(int x) {
    Node n;
    n.op = OpKind::Relu;
    n.inputs = {x};
    n.value = afn::relu(value(x));
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
    return push(std::move(n));
}

int Graph::softmax(int x, int axis) {
    const Tensor& v = value(x);
    if (axis < 0 || axis >= v.rank())
        throw ShapeError("softmax: axis out of range");
    Tensor out = Tensor::zeros(v.shape());
    AxisView av(v, axis);
    for (std::int64_t o = 0; o < av.outer; ++o)
        for (std::int64_t i = 0; i < av.inner; ++i) {
            std::int64_t base = o * av.extent * av.inner + i;
            double m = v[base];
            for (std::int64_t j = 1; j < av.extent; ++j)
                m = std::max(m, v[base + j * av.inner]);
            double s = 0;
            for (std::int64_t j = 0; j < av.extent; ++j) {
                double e = std::exp(v[base + j * av.inner] - m);
                out[base + j * av.inner] = e;
                s += e;
            }
            for (std::int64_t j = 0; j < av.extent; ++j)
                out[base + j * av.inner] /= s;
        }
    Node n;
    n.op = OpKind::Softmax;
    n.axis = axis;
    n.inputs = {x};
    n.value = std::move(out);
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    Node n;
    n.op = OpKind::Add;
    n.inputs = {a, b};
    n.value = afn::add(value(a), value(b));
    n.needs_grad = nodes_[static_cast<size_t>(a)].needs_grad ||
                   nodes_[static_cast<size_t>(b)].needs_grad;
    return push(std::move(n));
}

int Graph::sub(int a, int b) {
    Node n;
    n.op = OpKind::Sub;
    n.inputs = {a, b};
    n.value = afn::sub(value(a), value(b));
    n.needs_grad = nodes_[static_cast<size_t>(a)].needs_grad ||
                   nodes_[static_cast<size_t>(b)].needs_grad;
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    Node n;
    n.op = OpKind::Mul;
    n.inputs = {a, b};
    n.value = afn::mul(value(a), value(b));
    n.needs_grad = nodes_[static_cast<size_t>(a)].needs_grad ||
                   nodes_[static_cast<size_t>(b)].needs_grad;
    return push(std::move(n));
}

int Graph::scale(int x, double s) {
    Node n;
    n.op = OpKind::Scale;
    n.scalar = s;
    n.inputs = {x};
    n.value = afn::mul(value(x), s);
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
    return push(std::move(n));
}

int Graph::concat(const std::vector<int>& xs, int axis) {
    if (xs.empty())
        throw ShapeError("concat: no inputs");
    const Tensor& first = value(xs[0]);
    Shape out_shape = first.shape();
    for (size_t i = 1; i < xs.size(); ++i) {
        const Tensor& t = value(xs[i]);
        if (t.rank() != first.rank())
            throw ShapeError("concat: rank mismatch");
        for (int ax = 0; ax < t.rank(); ++ax)
            if (ax != axis && t.extent(ax) != first.extent(ax))
                throw ShapeError("concat: extent mismatch on axis " +
                                 std::to_string(ax));
        out_shape[static_cast<size_t>(axis)] += t.extent(axis);
    }
    Tensor out = Tensor::zeros(out_shape);
    AxisView av(out, axis);
    std::int64_t off = 0;
    for (int id : xs) {
        const Tensor& t = value(id);
        std::int64_t ext = t.extent(axis);
        for (std::int64_t o = 0; o < av.outer; ++o)
            for (std::int64_t j = 0; j < ext; ++j)
                for (std::int64_t i = 0; i < av.inner; ++i)
                    out[(o * av.extent + off + j) * av.inner + i] =
                        t[(o * ext + j) * av.inner + i];
        off += ext;
    }
    Node n;
    n.op = OpKind::Concat;
    n.axis = axis;
    n.inputs = xs;
    n.value = std::move(out);
    for (int id : xs)
        n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(id)].needs_grad;
    return push(std::move(n));
}

int Graph::slice(int x, int axis, int start, int len) {
    const Tensor& v = value(x);
    if (axis < 0 || axis >= v.rank() || start < 0 || len < 1 ||
        start + len > v.extent(axis))
        throw ShapeError("slice: bad range on shape " + shape_str(v.shape()));
    std::vector<int> lo(static_cast<size_t>(v.rank()), 0);
    std::vector<int> hi(static_cast<size_t>(v.rank()), 0);
    lo[static_cast<size_t>(axis)] = start;
    hi[static_cast<size_t>(axis)] = v.extent(axis) - start - len;
    Node n;
    n.op = OpKind::Slice;
    n.axis = axis;
    n.start = start;
    n.len = len;
    n.lo = lo;
    n.hi = hi;
    n.inputs = {x};
    n.value = afn::crop(v, lo, hi);
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
    return push(std::move(n));
}

int Graph::pad(int x, std::vector<int> lo, std::vector<int> hi) {
    Node n;
    n.op = OpKind::Pad;
    n.inputs = {x};
    n.value = afn::pad(value(x), lo, hi);
    n.lo = std::move(lo);
    n.hi = std::move(hi);
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
    return push(std::move(n));
}

int Graph::crop(int x, std::vector<int> lo, std::vector<int> hi) {
    Node n;
    n.op = OpKind::Crop;
    n.inputs = {x};
    n.value = afn::crop(value(x), lo, hi);
    n.lo = std::move(lo);
    n.hi = std::move(hi);
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
    return push(std::move(n));
}

int Graph::sum_all(int x) {
    Node n;
    n.op = OpKind::SumAll;
    n.inputs = {x};
    n.value = Tensor::from_values({1}, {afn::sum_all(value(x))});
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
    return push(std::move(n));
}

int Graph::mean_all(int x) {
    Node n;
    n.op = OpKind::MeanAll;
    n.inputs = {x};
    n.value = Tensor::from_values({1}, {afn::mean_all(value(x))});
    n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
    return push(std::move(n));
}

int Graph::batchnorm(int x, const std::string& prefix, bool training) {
    if (!params_)
        throw std::runtime_error("batchnorm: graph has no parameter store");
    // create the parameter nodes first: pushing them may reallocate the node
    // vector and would invalidate a value(x) reference taken earlier
    int gamma = param(prefix + ".scale");
    int beta = param(prefix + ".shift");
    const Tensor& v = value(x);
    int ca = channel_axis_of(v);
    int C = v.extent(ca);
    if (value(gamma).shape() != Shape{C} || value(beta).shape() != Shape{C})
        throw ShapeError("batchnorm: scale/shift must have shape [" +
                         std::to_string(C) + "]");
    Tensor& rmean = params_->get(prefix + ".running_mean");
    Tensor& rvar = params_->get(prefix + ".running_var");
    Tensor& count = params_->get(prefix + ".count");

    const double eps = 1e-5;
    const double momentum = 0.9;
    AxisView av(v, ca);
    std::int64_t n_per_c = av.outer * av.inner;

    Tensor mean = Tensor::zeros({C});
    Tensor invstd = Tensor::zeros({C});
    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0;
            for (std::int64_t o = 0; o < av.outer; ++o) {
                std::int64_t base = (o * av.extent + c) * av.inner;
                s += kernels::active().sum(static_cast<std::size_t>(av.inner),
                                           v.data() + base);
            }
            mean[c] = s / static_cast<double>(n_per_c);
        }
        for (int c = 0; c < C; ++c) {
            double s2 = 0;
            for (std::int64_t o = 0; o < av.outer; ++o) {
                std::int64_t base = (o * av.extent + c) * av.inner;
                for (std::int64_t i = 0; i < av.inner; ++i) {
                    double d = v[base + i] - mean[c];
                    s2 += d * d;
                }
            }
            double var = s2 / static_cast<double>(n_per_c);
            invstd[c] = 1.0 / std::sqrt(var + eps);
            rmean[c] = momentum * rmean[c] + (1 - momentum) * mean[c];
            rvar[c] = momentum * rvar[c] + (1 - momentum) * var;
        }
        count[0] += 1;
    } else {
        if (count[0] < 1)
            throw std::runtime_error("batchnorm " + prefix +
                                     ": eval mode before any training step");
        for (int c = 0; c < C; ++c) {
            mean[c] = rmean[c];
            invstd[c] = 1.0 / std::sqrt(rvar[c] + eps);
        }
    }

    Tensor xhat = Tensor::zeros(v.shape());
    Tensor out = Tensor::zeros(v.shape());
    const Tensor& g = value(gamma);
    const Tensor& b = value(beta);
    for (int c = 0; c < C; ++c)
        for (std::int64_t o = 0; o < av.outer; ++o) {
            std::int64_t base = (o * av.extent + c) * av.inner;
            for (std::int64_t i = 0; i < av.inner; ++i) {
                double xh = (v[base + i] - mean[c]) * invstd[c];
                xhat[base + i] = xh;
                out[base + i] = g[c] * xh + b[c];
            }
        }

    Node n;
    n.op = OpKind::BatchNorm;
    n.inputs = {x, gamma, beta};
    n.axis = ca;
    n.training = training;
    n.value = std::move(out);
    n.aux = std::move(xhat);
    n.aux2 = std::move(invstd);
    n.needs_grad = true;
    return push(std::move(n));
}

int Graph::dice_loss(int probs, const Tensor& target_onehot, double eps) {
    const Tensor& p = value(probs);
    if (p.shape() != target_onehot.shape())
        throw ShapeError("dice_loss: probs " + shape_str(p.shape()) +
                         " vs target " + shape_str(target_onehot.shape()));
    int ca = channel_axis_of(p);
    int C = p.extent(ca);
    AxisView av(p, ca);
    // per-voxel normalization check
    for (std::int64_t o = 0; o < av.outer; ++o)
        for (std::int64_t i = 0; i < av.inner; ++i) {
            double s = 0;
            for (int c = 0; c < C; ++c)
                s += p[(o * av.extent + c) * av.inner + i];
            if (std::abs(s - 1.0) > 1e-4)
                throw std::runtime_error(
                    "dice_loss: probs not normalized (voxel sum " +
                    std::to_string(s) + ")");
        }

    Tensor stats = Tensor::zeros({3, C}); // numerator, denominator, present
    for (int c = 0; c < C; ++c) {
        double pg = 0, pp = 0, gg = 0;
        for (std::int64_t o = 0; o < av.outer; ++o) {
            std::int64_t base = (o * av.extent + c) * av.inner;
            for (std::int64_t i = 0; i < av.inner; ++i) {
                double pv = p[base + i];
                double gv = target_onehot[base + i];
                pg += pv * gv;
                pp += pv * pv;
                gg += gv * gv;
            }
        }
        stats[c] = 2.0 * pg;
        stats[C + c] = pp + gg + eps;
        stats[2 * C + c] = gg > 0 ? 1.0 : 0.0;
    }
    int present = 0;
    double dice_sum = 0;
    for (int c = 0; c < C; ++c)
        if (stats[2 * C + c] > 0) {
            ++present;
            dice_sum += stats[c] / stats[C + c];
        }
    if (present == 0)
        throw std::runtime_error("dice_loss: target has no voxels of any class");
    double loss = 1.0 - dice_sum / present;

    Node n;
    n.op = OpKind::DiceLoss;
    n.inputs = {probs};
    n.axis = ca;
    n.eps = eps;
    n.aux = target_onehot;
    n.aux2 = std::move(stats);
    n.value = Tensor::from_values({1}, {loss});
    n.needs_grad = nodes_[static_cast<size_t>(probs)].needs_grad;
    return push(std::move(n));
}

void Graph::backward(int loss) {
    Node& ln = nodes_[static_cast<size_t>(loss)];
    if (ln.value.size() != 1)
        throw std::runtime_error("backward: loss node " + std::to_string(loss) +
                                 " is not scalar, shape " +
                                 shape_str(ln.value.shape()));
    grad_ref(loss)[0] = 1.0;
    for (int id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || !n.grad_alloc)
            continue;
        backward_node(id);
    }
}

void Graph::backward_node(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& dy = n.grad;
    auto wants = [&](int in) {
        return nodes_[static_cast<size_t>(in)].needs_grad;
    };
    switch (n.op) {
    case OpKind::Input:
    case OpKind::Param:
        break;
    case OpKind::Conv3d: {
        int x = n.inputs[0], w = n.inputs[1];
        int b = n.inputs.size() > 2 ? n.inputs[2] : -1;
        Tensor* din = wants(x) ? &grad_ref(x) : nullptr;
        Tensor* dw = wants(w) ? &grad_ref(w) : nullptr;
        Tensor* db = b >= 0 && wants(b) ? &grad_ref(b) : nullptr;
        if (din || dw || db)
            conv3d_backward(value(x), value(w), n.conv, dy, din, dw, db);
        break;
    }
    case OpKind::Relu: {
        int x = n.inputs[0];
        if (!wants(x))
            break;
        Tensor& dx = grad_ref(x);
        const Tensor& xv = value(x);
        for (std::int64_t i = 0; i < xv.size(); ++i)
            if (xv[i] > 0)
                dx[i] += dy[i];
        break;
    }
    case OpKind::Softmax: {
        int x = n.inputs[0];
        if (!wants(x))
            break;
        Tensor& dx = grad_ref(x);
        const Tensor& y = n.value;
        AxisView av(y, n.axis);
        for (std::int64_t o = 0; o < av.outer; ++o)
            for (std::int64_t i = 0; i < av.inner; ++i) {
                std::int64_t base = o * av.extent * av.inner + i;
                double s = 0;
                for (std::int64_t j = 0; j < av.extent; ++j)
                    s += y[base + j * av.inner] * dy[base + j * av.inner];
                for (std::int64_t j = 0; j < av.extent; ++j)
                    dx[base + j * av.inner] +=
                        y[base + j * av.inner] * (dy[base + j * av.inner] - s);
            }
        break;
    }
    case OpKind::Add: {
        int a = n.inputs[0], b = n.inputs[1];
        if (wants(a))
            accumulate(grad_ref(a), dy);
        if (wants(b))
            accumulate(grad_ref(b), reduce_to_shape(dy, value(b).shape()));
        break;
    }
    case OpKind::Sub: {
        int a = n.inputs[0], b = n.inputs[1];
        if (wants(a))
            accumulate(grad_ref(a), dy);
        if (wants(b))
            accumulate(grad_ref(b),
                       afn::mul(reduce_to_shape(dy, value(b).shape()), -1.0));
        break;
    }
    case OpKind::Mul: {
        int a = n.inputs[0], b = n.inputs[1];
        if (wants(a))
            accumulate(grad_ref(a), afn::mul(dy, value(b)));
        if (wants(b))
            accumulate(grad_ref(b),
                       reduce_to_shape(afn::mul(dy, value(a)), value(b).shape()));
        break;
    }
    case OpKind::Scale: {
        int x = n.inputs[0];
        if (wants(x))
            accumulate(grad_ref(x), afn::mul(dy, n.scalar));
        break;
    }
    case OpKind::Concat: {
        AxisView av(n.value, n.axis);
        std::int64_t off = 0;
        for (int xid : n.inputs) {
            const Tensor& xv = value(xid);
            std::int64_t ext = xv.extent(n.axis);
            if (wants(xid)) {
                Tensor& dx = grad_ref(xid);
                for (std::int64_t o = 0; o < av.outer; ++o)
                    for (std::int64_t j = 0; j < ext; ++j)
                        for (std::int64_t i = 0; i < av.inner; ++i)
                            dx[(o * ext + j) * av.inner + i] +=
                                dy[(o * av.extent + off + j) * av.inner + i];
            }
            off += ext;
        }
        break;
    }
    case OpKind::Slice:
    case OpKind::Crop: {
        int x = n.inputs[0];
        if (wants(x))
            accumulate(grad_ref(x), afn::pad(dy, n.lo, n.hi));
        break;
    }
    case OpKind::Pad: {
        int x = n.inputs[0];
        if (wants(x))
            accumulate(grad_ref(x), afn::crop(dy, n.lo, n.hi));
        break;
    }
    case OpKind::SumAll: {
        int x = n.inputs[0];
        if (wants(x)) {
            Tensor& dx = grad_ref(x);
            double g = dy[0];
            for (std::int64_t i = 0; i < dx.size(); ++i)
                dx[i] += g;
        }
        break;
    }
    case OpKind::MeanAll: {
        int x = n.inputs[0];
        if (wants(x)) {
            Tensor& dx = grad_ref(x);
            double g = dy[0] / static_cast<double>(dx.size());
            for (std::int64_t i = 0; i < dx.size(); ++i)
                dx[i] += g;
        }
        break;
    }
    case OpKind::BatchNorm: {
        int x = n.inputs[0], gamma = n.inputs[1], beta = n.inputs[2];
        const Tensor& xhat = n.aux;
        const Tensor& invstd = n.aux2;
        const Tensor& g = value(gamma);
        AxisView av(n.value, n.axis);
        int C = static_cast<int>(av.extent);
        double N = static_cast<double>(av.outer * av.inner);
        for (int c = 0; c < C; ++c) {
            double s1 = 0, s2 = 0;
            for (std::int64_t o = 0; o < av.outer; ++o) {
                std::int64_t base = (o * av.extent + c) * av.inner;
                for (std::int64_t i = 0; i < av.inner; ++i) {
                    s1 += dy[base + i];
                    s2 += dy[base + i] * xhat[base + i];
                }
            }
            if (wants(gamma))
                grad_ref(gamma)[c] += s2;
            if (wants(beta))
                grad_ref(beta)[c] += s1;
            if (wants(x)) {
                Tensor& dx = grad_ref(x);
                double gi = g[c] * invstd[c];
                for (std::int64_t o = 0; o < av.outer; ++o) {
                    std::int64_t base = (o * av.extent + c) * av.inner;
                    for (std::int64_t i = 0; i < av.inner; ++i) {
                        if (n.training)
                            dx[base + i] += gi * (dy[base + i] - s1 / N -
                                                  xhat[base + i] * s2 / N);
                        else
                            dx[base + i] += gi * dy[base + i];
                    }
                }
            }
        }
        break;
    }
    case OpKind::DiceLoss: {
        int pid = n.inputs[0];
        if (!wants(pid))
            break;
        const Tensor& p = value(pid);
        const Tensor& g = n.aux;
        const Tensor& stats = n.aux2;
        AxisView av(p, n.axis);
        int C = static_cast<int>(av.extent);
        int present = 0;
        for (int c = 0; c < C; ++c)
            if (stats[2 * C + c] > 0)
                ++present;
        Tensor& dp = grad_ref(pid);
        double gscale = dy[0] / present;
        for (int c = 0; c < C; ++c) {
            if (stats[2 * C + c] <= 0)
                continue;
            double num = stats[c], den = stats[C + c];
            for (std::int64_t o = 0; o < av.outer; ++o) {
                std::int64_t base = (o * av.extent + c) * av.inner;
                for (std::int64_t i = 0; i < av.inner; ++i) {
                    double ddice = (2.0 * g[base + i] * den -
                                    num * 2.0 * p[base + i]) /
                                   (den * den);
                    dp[base + i] += -gscale * ddice;
                }
            }
        }
        break;
    }
    }
}

std::map<std::string, Tensor> Graph::param_grads() const {
    std::map<std::string, Tensor> out;
    if (!params_)
        return out;
    for (const auto& name : params_->trainable_names()) {
        auto it = param_nodes_.find(name);
        if (it != param_nodes_.end() &&
            nodes_[static_cast<size_t>(it->second)].grad_alloc)
            out[name] = nodes_[static_cast<size_t>(it->second)].grad;
        else
            out[name] = Tensor::zeros(params_->get(name).shape());
    }
    return out;
}

std::vector<std::string> Graph::unused_params() const {
    std::vector<std::string> out;
    if (!params_)
        return out;
    for (const auto& name : params_->trainable_names()) {
        auto it = param_nodes_.find(name);
        if (it == param_nodes_.end() ||
            !nodes_[static_cast<size_t>(it->second)].grad_alloc)
            out.push_back(name);
    }
    return out;
}

GradCheckReport grad_check(ParamStore& params,
                           const std::function<int(Graph&)>& build_loss,
                           double tol, double step) {
    Graph g(&params);
    int loss = build_loss(g);
    g.backward(loss);
    auto grads = g.param_grads();

    auto eval = [&]() {
        Graph h(&params);
        return h.value(build_loss(h))[0];
    };

    GradCheckReport report;
    for (const auto& name : params.trainable_names()) {
        Tensor& theta = params.get(name);
        const Tensor& analytic = grads.at(name);
        double worst = 0;
        for (std::int64_t i = 0; i < theta.size(); ++i) {
            double saved = theta[i];
            theta[i] = saved + step;
            double fp = eval();
            theta[i] = saved - step;
            double fm = eval();
            theta[i] = saved;
            double numeric = (fp - fm) / (2 * step);
            double a = analytic[i];
            double rel =
                std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
        report.entries.push_back({name, worst});
        report.worst = std::max(report.worst, worst);
        if (worst >= tol)
            report.pass = false;
    }
    return report;
}

} // namespace afn
