#include "afn/gradcheck_suite.hpp"

#include "afn/layers.hpp"

#include <algorithm>
#include <functional>
#include <ostream>

namespace afn {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (std::int64_t i = 0; i < t.size(); ++i)
        t[i] = scale * rng.normal();
    return t;
}

// Scalarizes an arbitrary output: loss = sum(out * fixed random weights).
int weighted_sum(Graph& g, int out, Rng& rng) {
    Tensor w = random_tensor(g.value(out).shape(), rng);
    return g.sum_all(g.mul(out, g.input(w)));
}

using CaseFn = std::function<GradCheckReport(std::uint64_t seed)>;

ConvSpec conv_spec(int in_c, int out_c, int r, Padding pad,
                   std::array<int, 3> kernel = {3, 3, 3}) {
    ConvSpec s;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel = kernel;
    s.dilation = r;
    s.padding = pad;
    return s;
}

GradCheckReport check_conv(std::uint64_t seed, int r, Padding pad, int size) {
    Rng rng(seed);
    ConvSpec spec = conv_spec(2, 3, r, pad);
    ParamStore ps;
    init_conv_params(ps, "c", spec, rng);
    Tensor x = random_tensor({2, size, size, size}, rng);
    Rng wrng(seed + 1);
    return grad_check(ps, [&](Graph& g) {
        Rng local = wrng;
        return weighted_sum(g, conv_layer(g, g.input(x), "c", spec), local);
    });
}

GradCheckReport check_pointwise(std::uint64_t seed) {
    Rng rng(seed);
    ParamStore ps;
    ps.create("w", random_tensor({2, 3, 3, 3}, rng));
    ps.create("b", random_tensor({2, 1, 1, 1}, rng)); // channel broadcast
    Tensor x = random_tensor({2, 3, 3, 3}, rng);
    return grad_check(ps, [&](Graph& g) {
        int w = g.param("w");
        int h = g.relu(g.mul(g.input(x), w));
        h = g.add(h, g.param("b"));
        h = g.sub(h, g.scale(w, 0.5));
        return g.mean_all(h);
    });
}

GradCheckReport check_softmax(std::uint64_t seed) {
    Rng rng(seed);
    ParamStore ps;
    ps.create("logits", random_tensor({4, 3, 3, 3}, rng));
    Rng wrng(seed + 1);
    return grad_check(ps, [&](Graph& g) {
        Rng local = wrng;
        return weighted_sum(g, g.softmax(g.param("logits"), 0), local);
    });
}

GradCheckReport check_pad_crop(std::uint64_t seed) {
    Rng rng(seed);
    ParamStore ps;
    ps.create("x", random_tensor({2, 4, 4, 4}, rng));
    Rng wrng(seed + 1);
    return grad_check(ps, [&](Graph& g) {
        Rng local = wrng;
        int p = g.pad(g.param("x"), {0, 1, 1, 1}, {1, 1, 0, 1});
        int c = g.crop(p, {0, 2, 1, 0}, {1, 0, 1, 2});
        return weighted_sum(g, c, local);
    });
}

GradCheckReport check_residual(std::uint64_t seed) {
    Rng rng(seed);
    ConvSpec spec = conv_spec(2, 4, 1, Padding::Valid);
    ParamStore ps;
    init_conv_params(ps, "c", spec, rng);
    Tensor x = random_tensor({2, 5, 5, 5}, rng);
    Rng wrng(seed + 1);
    return grad_check(ps, [&](Graph& g) {
        Rng local = wrng;
        int xin = g.input(x);
        int h = conv_layer(g, xin, "c", spec); // 4ch, 3^3
        return weighted_sum(g, residual_add(g, h, xin), local);
    });
}

GradCheckReport check_batchnorm(std::uint64_t seed) {
    Rng rng(seed);
    ParamStore ps;
    init_batchnorm_params(ps, "bn", 3);
    ps.create("x", random_tensor({2, 3, 3, 3, 3}, rng));
    Rng wrng(seed + 1);
    return grad_check(ps, [&](Graph& g) {
        Rng local = wrng;
        return weighted_sum(g, g.batchnorm(g.param("x"), "bn", true), local);
    });
}

GradCheckReport check_attention(std::uint64_t seed) {
    Rng rng(seed);
    AutofocusConfig cfg;
    cfg.rates = {1, 2, 3};
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    ParamStore ps;
    init_attention_params(ps, "attn", cfg, rng);
    // non-zero second conv so the softmax is exercised off-center
    for (std::int64_t i = 0; i < ps.get("attn.conv2.kernel").size(); ++i)
        ps.get("attn.conv2.kernel")[i] = rng.normal();
    Tensor x = random_tensor({4, 4, 4, 4}, rng);
    Rng wrng(seed + 1);
    return grad_check(ps, [&](Graph& g) {
        Rng local = wrng;
        return weighted_sum(g, attention_net(g, g.input(x), "attn", cfg), local);
    });
}

GradCheckReport check_autofocus(std::uint64_t seed, int K) {
    Rng rng(seed);
    AutofocusConfig cfg;
    cfg.rates.clear();
    for (int k = 0; k < K; ++k)
        cfg.rates.push_back(1 + 2 * k);
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    ParamStore ps;
    init_autofocus_params(ps, "af", cfg, rng);
    for (std::int64_t i = 0; i < ps.get("af.attn.conv2.kernel").size(); ++i)
        ps.get("af.attn.conv2.kernel")[i] = rng.normal();
    Tensor x = random_tensor({4, 4, 4, 4}, rng);
    Rng wrng(seed + 1);
    return grad_check(ps, [&](Graph& g) {
        Rng local = wrng;
        auto out = autofocus_forward(g, g.input(x), "af", cfg);
        return weighted_sum(g, out.output, local);
    });
}

GradCheckReport check_aspp(std::uint64_t seed, AsppFusion fusion) {
    Rng rng(seed);
    AutofocusConfig cfg;
    cfg.rates = {1, 3};
    cfg.in_channels = 3;
    cfg.out_channels = 2;
    ParamStore ps;
    init_aspp_params(ps, "aspp", cfg, fusion, rng);
    Tensor x = random_tensor({3, 4, 4, 4}, rng);
    Rng wrng(seed + 1);
    return grad_check(ps, [&](Graph& g) {
        Rng local = wrng;
        return weighted_sum(g, aspp_forward(g, g.input(x), "aspp", cfg, fusion),
                            local);
    });
}

GradCheckReport check_dice(std::uint64_t seed) {
    Rng rng(seed);
    ParamStore ps;
    ps.create("logits", random_tensor({3, 4, 4, 4}, rng));
    Tensor target = Tensor::zeros({3, 4, 4, 4});
    std::int64_t plane = 64;
    for (std::int64_t i = 0; i < plane; ++i) {
        int cls = rng.uniform_int(0, 2);
        target[cls * plane + i] = 1.0;
    }
    return grad_check(ps, [&](Graph& g) {
        int probs = g.softmax(g.param("logits"), 0);
        return g.dice_loss(probs, target);
    });
}

} // namespace

std::vector<GradCheckCaseResult> run_gradcheck_suite(int seeds, double tol,
                                                     std::ostream* out) {
    struct Case {
        std::string name;
        CaseFn fn;
    };
    std::vector<Case> cases = {
        {"conv3d_r1_same", [](std::uint64_t s) { return check_conv(s, 1, Padding::Same, 5); }},
        {"conv3d_r2_same", [](std::uint64_t s) { return check_conv(s, 2, Padding::Same, 5); }},
        {"conv3d_r6_same", [](std::uint64_t s) { return check_conv(s, 6, Padding::Same, 7); }},
        {"conv3d_r1_valid", [](std::uint64_t s) { return check_conv(s, 1, Padding::Valid, 5); }},
        {"pointwise_arith", check_pointwise},
        {"softmax", check_softmax},
        {"pad_crop", check_pad_crop},
        {"residual_add", check_residual},
        {"batchnorm_train", check_batchnorm},
        {"attention_net", check_attention},
        {"autofocus_k1", [](std::uint64_t s) { return check_autofocus(s, 1); }},
        {"autofocus_k2", [](std::uint64_t s) { return check_autofocus(s, 2); }},
        {"autofocus_k4", [](std::uint64_t s) { return check_autofocus(s, 4); }},
        {"aspp_sum", [](std::uint64_t s) { return check_aspp(s, AsppFusion::Sum); }},
        {"aspp_concat", [](std::uint64_t s) { return check_aspp(s, AsppFusion::Concat); }},
        {"soft_dice", check_dice},
    };

    std::vector<GradCheckCaseResult> results;
    for (const auto& c : cases) {
        GradCheckCaseResult r;
        r.name = c.name;
        r.pass = true;
        for (int s = 0; s < seeds; ++s) {
            GradCheckReport rep = c.fn(static_cast<std::uint64_t>(1000 + 7 * s));
            r.worst_rel_err = std::max(r.worst_rel_err, rep.worst);
        }
        r.pass = r.worst_rel_err < tol;
        if (out)
            *out << (r.pass ? "PASS " : "FAIL ") << c.name
                 << " max_rel_err=" << r.worst_rel_err << "\n";
        results.push_back(std::move(r));
    }
    return results;
}

} // namespace afn
