#include "afn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace afn {

void AutofocusConfig::validate() const {
    if (rates.empty())
        throw ShapeError("autofocus: rate list is empty");
    for (size_t i = 0; i < rates.size(); ++i) {
        if (rates[i] < 1)
            throw ShapeError("autofocus: rates must be >= 1");
        if (i > 0 && rates[i] <= rates[i - 1])
            throw ShapeError("autofocus: rates must be strictly increasing");
    }
    if (in_channels < 2)
        throw ShapeError("autofocus: in_channels must be >= 2 "
                         "(attention mid channels would be 0)");
    if (out_channels < 1)
        throw ShapeError("autofocus: out_channels must be >= 1");
}

namespace {

Tensor he_uniform_kernel(const ConvSpec& spec, Rng& rng, bool zero) {
    Shape shape{spec.out_channels, spec.in_channels, spec.kernel[0],
                spec.kernel[1], spec.kernel[2]};
    Tensor w = Tensor::zeros(shape);
    if (!zero) {
        double fan_in = static_cast<double>(spec.in_channels) * spec.kernel[0] *
                        spec.kernel[1] * spec.kernel[2];
        double limit = std::sqrt(6.0 / fan_in);
        for (std::int64_t i = 0; i < w.size(); ++i)
            w[i] = rng.uniform(-limit, limit);
    }
    return w;
}

ConvSpec attn_conv1_spec(const AutofocusConfig& cfg) {
    ConvSpec s;
    s.in_channels = cfg.in_channels;
    s.out_channels = cfg.attention_mid_channels();
    s.kernel = {3, 3, 3};
    s.dilation = 1;
    s.padding = Padding::Same;
    return s;
}

ConvSpec attn_conv2_spec(const AutofocusConfig& cfg) {
    ConvSpec s;
    s.in_channels = cfg.attention_mid_channels();
    s.out_channels = cfg.num_scales();
    s.kernel = {1, 1, 1};
    s.dilation = 1;
    s.padding = Padding::Same;
    return s;
}

ConvSpec branch_spec(const AutofocusConfig& cfg, int rate) {
    ConvSpec s;
    s.in_channels = cfg.in_channels;
    s.out_channels = cfg.out_channels;
    s.kernel = {3, 3, 3};
    s.dilation = rate;
    s.padding = Padding::Same; // keeps all K branches spatially aligned
    return s;
}

} // namespace

void init_conv_params(ParamStore& ps, const std::string& prefix,
                      const ConvSpec& spec, Rng& rng, bool zero_weights) {
    ps.create(prefix + ".kernel", he_uniform_kernel(spec, rng, zero_weights));
    if (spec.bias)
        ps.create(prefix + ".bias", Tensor::zeros({spec.out_channels}));
}

void init_attention_params(ParamStore& ps, const std::string& prefix,
                           const AutofocusConfig& cfg, Rng& rng) {
    cfg.validate();
    init_conv_params(ps, prefix + ".conv1", attn_conv1_spec(cfg), rng);
    // zero-init: fresh attention is uniform 1/K
    init_conv_params(ps, prefix + ".conv2", attn_conv2_spec(cfg), rng,
                     /*zero_weights=*/true);
}

void init_autofocus_params(ParamStore& ps, const std::string& prefix,
                           const AutofocusConfig& cfg, Rng& rng) {
    cfg.validate();
    // one shared kernel + bias reused by all K branches
    init_conv_params(ps, prefix + ".conv_shared", branch_spec(cfg, cfg.rates[0]),
                     rng);
    init_attention_params(ps, prefix + ".attn", cfg, rng);
}

void init_aspp_params(ParamStore& ps, const std::string& prefix,
                      const AutofocusConfig& cfg, AsppFusion fusion, Rng& rng) {
    cfg.validate();
    for (int k = 0; k < cfg.num_scales(); ++k)
        init_conv_params(ps, prefix + ".branch" + std::to_string(k),
                         branch_spec(cfg, cfg.rates[static_cast<size_t>(k)]), rng);
    if (fusion == AsppFusion::Concat) {
        ConvSpec proj;
        proj.in_channels = cfg.num_scales() * cfg.out_channels;
        proj.out_channels = cfg.out_channels;
        proj.kernel = {1, 1, 1};
        init_conv_params(ps, prefix + ".proj", proj, rng);
    }
}

void init_batchnorm_params(ParamStore& ps, const std::string& prefix,
                           int channels) {
    ps.create(prefix + ".scale", Tensor::full({channels}, 1.0));
    ps.create(prefix + ".shift", Tensor::zeros({channels}));
    ps.create(prefix + ".running_mean", Tensor::zeros({channels}), false);
    ps.create(prefix + ".running_var", Tensor::full({channels}, 1.0), false);
    ps.create(prefix + ".count", Tensor::zeros({1}), false);
}

int conv_layer(Graph& g, int x, const std::string& prefix, const ConvSpec& spec) {
    int w = g.param(prefix + ".kernel");
    int b = spec.bias ? g.param(prefix + ".bias") : -1;
    return g.conv3d(x, w, b, spec);
}

int attention_net(Graph& g, int x, const std::string& prefix,
                  const AutofocusConfig& cfg) {
    cfg.validate();
    int h = conv_layer(g, x, prefix + ".conv1", attn_conv1_spec(cfg));
    h = g.relu(h);
    int logits = conv_layer(g, h, prefix + ".conv2", attn_conv2_spec(cfg));
    int k_axis = g.value(logits).rank() - 4;
    return g.softmax(logits, k_axis);
}

AutofocusOut autofocus_forward(Graph& g, int x, const std::string& prefix,
                               const AutofocusConfig& cfg,
                               const std::optional<Tensor>& lambda_override) {
    cfg.validate();
    int lambda = lambda_override ? g.input(*lambda_override)
                                 : attention_net(g, x, prefix + ".attn", cfg);
    int k_axis = g.value(lambda).rank() - 4;

    int fused = -1;
    for (int k = 0; k < cfg.num_scales(); ++k) {
        ConvSpec spec = branch_spec(cfg, cfg.rates[static_cast<size_t>(k)]);
        int branch = g.conv3d(x, g.param(prefix + ".conv_shared.kernel"),
                              g.param(prefix + ".conv_shared.bias"), spec);
        // Lambda_k broadcasts across the C channels of the branch output
        int lam_k = g.slice(lambda, k_axis, k, 1);
        int weighted = g.mul(branch, lam_k);
        fused = k == 0 ? weighted : g.add(fused, weighted);
    }
    return {fused, lambda};
}

int aspp_forward(Graph& g, int x, const std::string& prefix,
                 const AutofocusConfig& cfg, AsppFusion fusion) {
    cfg.validate();
    std::vector<int> branches;
    for (int k = 0; k < cfg.num_scales(); ++k)
        branches.push_back(
            conv_layer(g, x, prefix + ".branch" + std::to_string(k),
                       branch_spec(cfg, cfg.rates[static_cast<size_t>(k)])));
    if (fusion == AsppFusion::Sum) {
        int out = branches[0];
        for (size_t k = 1; k < branches.size(); ++k)
            out = g.add(out, branches[static_cast<size_t>(k)]);
        return out;
    }
    int cat = g.concat(branches, g.value(branches[0]).rank() - 4);
    ConvSpec proj;
    proj.in_channels = cfg.num_scales() * cfg.out_channels;
    proj.out_channels = cfg.out_channels;
    proj.kernel = {1, 1, 1};
    return conv_layer(g, cat, prefix + ".proj", proj);
}

namespace {

// crop/pad amounts aligning `in_shape` to `out_shape`: spatial center-crop,
// channel zero-pad.
void align_amounts(const Shape& out_shape, const Shape& in_shape,
                   std::vector<int>& crop_lo, std::vector<int>& crop_hi,
                   std::vector<int>& pad_lo, std::vector<int>& pad_hi) {
    int r = static_cast<int>(out_shape.size());
    if (static_cast<int>(in_shape.size()) != r)
        throw ShapeError("residual_add: rank mismatch");
    int ca = r - 4;
    crop_lo.assign(static_cast<size_t>(r), 0);
    crop_hi.assign(static_cast<size_t>(r), 0);
    pad_lo.assign(static_cast<size_t>(r), 0);
    pad_hi.assign(static_cast<size_t>(r), 0);
    for (int ax = 0; ax < r; ++ax) {
        int out_e = out_shape[static_cast<size_t>(ax)];
        int in_e = in_shape[static_cast<size_t>(ax)];
        if (ax == ca) {
            if (in_e > out_e)
                throw ShapeError("residual_add: shortcut has more channels (" +
                                 std::to_string(in_e) + ") than block output (" +
                                 std::to_string(out_e) + ")");
            pad_hi[static_cast<size_t>(ax)] = out_e - in_e;
        } else if (ax > ca) {
            if (in_e < out_e)
                throw ShapeError("residual_add: shortcut spatially smaller than "
                                 "block output");
            int margin = in_e - out_e;
            crop_lo[static_cast<size_t>(ax)] = margin / 2;
            crop_hi[static_cast<size_t>(ax)] = margin - margin / 2;
        } else if (in_e != out_e) {
            throw ShapeError("residual_add: batch extent mismatch");
        }
    }
}

bool any_nonzero(const std::vector<int>& v) {
    for (int x : v)
        if (x)
            return true;
    return false;
}

} // namespace

int residual_add(Graph& g, int block_out, int block_in) {
    std::vector<int> clo, chi, plo, phi;
    align_amounts(g.value(block_out).shape(), g.value(block_in).shape(), clo, chi,
                  plo, phi);
    int shortcut = block_in;
    if (any_nonzero(clo) || any_nonzero(chi))
        shortcut = g.crop(shortcut, clo, chi);
    if (any_nonzero(plo) || any_nonzero(phi))
        shortcut = g.pad(shortcut, plo, phi);
    return g.add(block_out, shortcut);
}

Tensor residual_add(const Tensor& block_out, const Tensor& block_in) {
    std::vector<int> clo, chi, plo, phi;
    align_amounts(block_out.shape(), block_in.shape(), clo, chi, plo, phi);
    Tensor shortcut = block_in;
    if (any_nonzero(clo) || any_nonzero(chi))
        shortcut = crop(shortcut, clo, chi);
    if (any_nonzero(plo) || any_nonzero(phi))
        shortcut = pad(shortcut, plo, phi);
    return add(block_out, shortcut);
}

} // namespace afn
