#pragma once

#include "afn/conv3d.hpp"
#include "afn/tensor.hpp"

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace afn {

// Named parameter storage. Names are unique; shared parameters (e.g. the
// autofocus branch kernel) live under exactly one name and gradient
// contributions from every use accumulate into that one entry.
class ParamStore {
public:
    Tensor& create(const std::string& name, Tensor init, bool trainable = true);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    bool trainable(const std::string& name) const;
    // Insertion order.
    const std::vector<std::string>& names() const { return order_; }
    std::vector<std::string> trainable_names() const;

private:
    struct Entry {
        Tensor tensor;
        bool trainable;
    };
    std::vector<std::string> order_;
    std::unordered_map<std::string, Entry> map_;
};

enum class OpKind {
    Input,
    Param,
    Conv3d,
    Relu,
    Softmax,
    Add,
    Sub,
    Mul,
    Scale,
    Concat,
    Slice,
    Pad,
    Crop,
    SumAll,
    MeanAll,
    BatchNorm,
    DiceLoss,
};

// Eagerly-evaluated reverse-mode tape. Values are computed when nodes are
// created; backward() walks the tape in reverse creation order (which is a
// topological order by construction). Gradient accumulation over shared
// parameter uses follows creation order of the consuming nodes.
class Graph {
public:
    explicit Graph(ParamStore* params = nullptr) : params_(params) {}

    int input(Tensor v);
    int param(const std::string& name); // one node per name per graph
    int conv3d(int x, int w, int b, const ConvSpec& spec); // b = -1 for none
    int relu(int x);
    int softmax(int x, int axis);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int x, double s);
    int concat(const std::vector<int>& xs, int axis);
    int slice(int x, int axis, int start, int len);
    int pad(int x, std::vector<int> lo, std::vector<int> hi);
    int crop(int x, std::vector<int> lo, std::vector<int> hi);
    int sum_all(int x);
    int mean_all(int x);
    // Pulls `prefix + ".scale"` / `".shift"` as trainable params and keeps
    // running statistics under `prefix + ".running_*"` / `".count"` in the
    // store. Training mode normalizes by batch statistics and updates the
    // running ones; eval mode requires at least one prior training step.
    int batchnorm(int x, const std::string& prefix, bool training);
    // Soft dice loss against a one-hot target of the same shape as probs.
    // Dice is averaged over the classes present in the target. Throws if
    // per-voxel channel sums deviate from 1 by more than 1e-4.
    int dice_loss(int probs, const Tensor& target_onehot, double eps = 1e-5);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(int id) const;
    int num_nodes() const { return static_cast<int>(nodes_.size()); }

    void backward(int loss);

    // Gradients per trainable parameter after backward(); parameters the
    // loss never touched are returned as zeros and listed by
    // unused_params().
    std::map<std::string, Tensor> param_grads() const;
    std::vector<std::string> unused_params() const;

    ParamStore* params() const { return params_; }

private:
    struct Node {
        OpKind op;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        // op attributes
        ConvSpec conv;
        int axis = 0;
        int start = 0, len = 0;
        std::vector<int> lo, hi;
        double scalar = 0;
        std::string param_name;
        Tensor aux;  // dice target / batchnorm xhat
        Tensor aux2; // batchnorm inverse stddev per channel
        double eps = 0;
        bool training = false;
    };

    int push(Node n);
    Tensor& grad_ref(int id);
    void backward_node(int id);

    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> param_nodes_;
    ParamStore* params_;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0;
    bool pass = true;
};

// Central finite-difference check of d(loss)/d(param) for every trainable
// parameter in `params`. `build_loss` must construct the loss graph from the
// current parameter values and return the loss node. Relative error metric:
// |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(ParamStore& params,
                           const std::function<int(Graph&)>& build_loss,
                           double tol = 1e-4, double step = 1e-5);

} // namespace afn
