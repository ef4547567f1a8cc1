// Acceptance suite: one pass/fail line per criterion, pinned tolerances.
// Exit status is nonzero if any hard criterion fails; the scale-probe
// demonstration is warning-grade and prints a warning instead of failing.

#include "afn/data_io.hpp"
#include "afn/gradcheck_suite.hpp"
#include "afn/layers.hpp"
#include "afn/loss_metrics.hpp"
#include "afn/models.hpp"
#include "afn/train.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

using namespace afn;

namespace {

struct Criterion {
    std::string name;
    bool pass = false;
    bool warn_only = false;
    std::string detail;
    double seconds = 0;
};

std::string fresh_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

// ---------------------------------------------------------------- 1
Criterion gradient_correctness() {
    Criterion c{"gradient-correctness (central differences, rel err < 1e-4, 20 seeds/case)"};
    auto results = run_gradcheck_suite(20, 1e-4, nullptr);
    double worst = 0;
    int failed = 0;
    for (const auto& r : results) {
        worst = std::max(worst, r.worst_rel_err);
        if (!r.pass)
            ++failed;
    }
    std::ostringstream os;
    os << results.size() << " cases, worst rel err " << worst;
    if (failed)
        os << ", " << failed << " failed";
    c.detail = os.str();
    c.pass = failed == 0 && !results.empty();
    return c;
}

// ---------------------------------------------------------------- 2
Criterion equivalence_suite() {
    Criterion c{"equivalence (plain conv / K=1 / one-hot / single-branch fusion)"};
    Rng rng(401);
    double worst_exact = 0, worst_onehot = 0;

    { // (a) dilation-1 convolution against the loop oracle
        ConvSpec spec;
        spec.in_channels = 2;
        spec.out_channels = 3;
        ParamStore ps;
        init_conv_params(ps, "c", spec, rng);
        Tensor x = oracle::random_tensor({2, 7, 7, 7}, rng);
        Tensor got = conv3d_forward(x, ps.get("c.kernel"), &ps.get("c.bias"), spec);
        Tensor want = oracle::conv3d(x, ps.get("c.kernel"), &ps.get("c.bias"), 1, true);
        worst_exact = std::max(worst_exact, oracle::max_abs_diff(got, want));
    }
    { // (b) single-scale fused layer collapses to one dilated conv
        AutofocusConfig cfg;
        cfg.rates = {2};
        cfg.in_channels = 3;
        cfg.out_channels = 3;
        ParamStore ps;
        init_autofocus_params(ps, "af", cfg, rng);
        Tensor x = oracle::random_tensor({3, 7, 7, 7}, rng);
        Graph g(&ps);
        Tensor got = g.value(autofocus_forward(g, g.input(x), "af", cfg).output);
        ConvSpec spec;
        spec.in_channels = 3;
        spec.out_channels = 3;
        spec.dilation = 2;
        Tensor want = conv3d_forward(x, ps.get("af.conv_shared.kernel"),
                                     &ps.get("af.conv_shared.bias"), spec);
        worst_exact = std::max(worst_exact, oracle::max_abs_diff(got, want));
    }
    { // (c) one-hot attention at scale k selects the rate-k branch
        AutofocusConfig cfg;
        cfg.rates = {1, 3};
        cfg.in_channels = 2;
        cfg.out_channels = 2;
        ParamStore ps;
        init_autofocus_params(ps, "af", cfg, rng);
        Tensor x = oracle::random_tensor({2, 7, 7, 7}, rng);
        Tensor lam = Tensor::zeros({2, 7, 7, 7});
        std::int64_t plane = 343;
        for (std::int64_t i = 0; i < plane; ++i)
            lam[plane + i] = 1.0; // select the rate-3 branch everywhere
        Graph g(&ps);
        Tensor got =
            g.value(autofocus_forward(g, g.input(x), "af", cfg, lam).output);
        ConvSpec spec;
        spec.in_channels = 2;
        spec.out_channels = 2;
        spec.dilation = 3;
        Tensor want = conv3d_forward(x, ps.get("af.conv_shared.kernel"),
                                     &ps.get("af.conv_shared.bias"), spec);
        worst_onehot = std::max(worst_onehot, oracle::max_abs_diff(got, want));
    }
    { // (d) single-branch sum fusion collapses to one dilated conv
        AutofocusConfig cfg;
        cfg.rates = {2};
        cfg.in_channels = 2;
        cfg.out_channels = 2;
        ParamStore ps;
        init_aspp_params(ps, "a", cfg, AsppFusion::Sum, rng);
        Tensor x = oracle::random_tensor({2, 7, 7, 7}, rng);
        Graph g(&ps);
        Tensor got = g.value(aspp_forward(g, g.input(x), "a", cfg, AsppFusion::Sum));
        ConvSpec spec;
        spec.in_channels = 2;
        spec.out_channels = 2;
        spec.dilation = 2;
        Tensor want = conv3d_forward(x, ps.get("a.branch0.kernel"),
                                     &ps.get("a.branch0.bias"), spec);
        worst_exact = std::max(worst_exact, oracle::max_abs_diff(got, want));
    }
    std::ostringstream os;
    os << "exact cases max diff " << worst_exact << ", one-hot max diff "
       << worst_onehot << " (tol 1e-6)";
    c.detail = os.str();
    c.pass = worst_exact == 0.0 && worst_onehot < 1e-6;
    return c;
}

// ---------------------------------------------------------------- 3
Criterion attention_normalization() {
    Criterion c{"attention normalization (per-voxel sum = 1 within 1e-6, >= 1e5 voxels)"};
    double worst = 0;
    std::int64_t voxels = 0;
    for (int trial = 0; trial < 8; ++trial) {
        Rng rng(500 + static_cast<std::uint64_t>(trial));
        AutofocusConfig cfg;
        cfg.rates = {2, 6, 10, 14};
        cfg.in_channels = 6;
        cfg.out_channels = 6;
        ParamStore ps;
        init_attention_params(ps, "attn", cfg, rng);
        Tensor& c2 = ps.get("attn.conv2.kernel");
        for (std::int64_t i = 0; i < c2.size(); ++i)
            c2[i] = rng.normal();
        Tensor x = oracle::random_tensor({6, 24, 24, 24}, rng, 1.5);
        Graph g(&ps);
        Tensor lam = g.value(attention_net(g, g.input(x), "attn", cfg));
        std::int64_t plane = lam.size() / 4;
        for (std::int64_t i = 0; i < plane; ++i) {
            double s = 0;
            for (int k = 0; k < 4; ++k)
                s += lam[k * plane + i];
            worst = std::max(worst, std::abs(s - 1.0));
        }
        voxels += plane;
    }
    std::ostringstream os;
    os << voxels << " voxels, worst |sum-1| = " << worst;
    c.detail = os.str();
    c.pass = voxels >= 100000 && worst < 1e-6;
    return c;
}

// Three valid-padding conv layers at dilations 1, 2, 1: analytic footprint
// 1 + 2*(1 + 2 + 1) = 9 per axis.
ArchSpec probe_arch() {
    ArchSpec arch;
    arch.name = "probe";
    arch.num_input_channels = 1;
    arch.num_classes = 2;
    arch.batchnorm = false;
    int prev = 1;
    for (int r : {1, 2, 1}) {
        LayerSpec ls;
        ls.kind = LayerKind::Conv;
        ls.conv.in_channels = prev;
        ls.conv.out_channels = 4;
        ls.conv.dilation = r;
        ls.conv.padding = Padding::Valid;
        ls.norm = false;
        arch.layers.push_back(ls);
        prev = 4;
    }
    LayerSpec cls;
    cls.kind = LayerKind::Classifier;
    cls.conv.in_channels = prev;
    cls.conv.out_channels = 2;
    cls.conv.kernel = {1, 1, 1};
    cls.norm = false;
    arch.layers.push_back(cls);
    return arch;
}

// ---------------------------------------------------------------- 4
Criterion receptive_field_criterion() {
    Criterion c{"receptive field (analytic = 29 for the 8-layer net; probe matches analytic)"};
    ArchSpec basic = ArchSpec::make("basic", "full", 4, 5, true);
    auto rf = receptive_field(basic);
    int phi_basic = rf[7].phi.at(0);

    ArchSpec probe = probe_arch();
    auto rf_probe = receptive_field(probe);
    int phi_probe = rf_probe[2].phi.at(0);

    Model m = build(probe, 11);
    Tensor base;
    {
        Rng rng(601);
        base = oracle::random_tensor({1, 19, 19, 19}, rng);
    }
    auto logits = [&](const Tensor& x) {
        Graph g(&m.params);
        return g.value(m.forward(g, g.input(x), false));
    };
    Tensor y0 = logits(base);
    int lo[3] = {1000, 1000, 1000}, hi[3] = {-1, -1, -1};
    for (double delta : {5.0, -5.0}) {
        Tensor poked = base;
        std::int64_t center = (9LL * 19 + 9) * 19 + 9;
        poked[center] += delta;
        Tensor y1 = logits(poked);
        int S = y0.extent(1);
        std::int64_t plane = static_cast<std::int64_t>(S) * S * S;
        for (int z = 0; z < S; ++z)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    std::int64_t i = (static_cast<std::int64_t>(z) * S + y) * S + x;
                    double d = 0;
                    for (int ch = 0; ch < 2; ++ch)
                        d = std::max(d, std::abs(y1[ch * plane + i] -
                                                 y0[ch * plane + i]));
                    if (d > 0) {
                        int pos[3] = {z, y, x};
                        for (int ax = 0; ax < 3; ++ax) {
                            lo[ax] = std::min(lo[ax], pos[ax]);
                            hi[ax] = std::max(hi[ax], pos[ax]);
                        }
                    }
                }
    }
    bool probe_ok = true;
    for (int ax = 0; ax < 3; ++ax)
        probe_ok = probe_ok && (hi[ax] - lo[ax] + 1 == phi_probe);
    std::ostringstream os;
    os << "analytic phi: 8-layer=" << phi_basic << " probe=" << phi_probe
       << ", empirical probe extents " << hi[0] - lo[0] + 1 << "/"
       << hi[1] - lo[1] + 1 << "/" << hi[2] - lo[2] + 1;
    c.detail = os.str();
    c.pass = phi_basic == 29 && phi_probe == 9 && probe_ok;
    return c;
}

// ---------------------------------------------------------------- 5
Criterion parameter_accounting() {
    Criterion c{"parameter accounting (structural identities; reference totals printed)"};
    auto attn_kernels = [](std::size_t ch, std::size_t K) {
        return 27 * ch * (ch / 2) + (ch / 2) * K;
    };
    const std::size_t in_c[8] = {4, 30, 30, 40, 40, 40, 40, 50};

    Model basic = build(ArchSpec::make("basic", "full", 4, 5, true), 1);
    std::size_t base_k = param_total(basic, CountMode::KernelsOnly);
    bool ok = attn_kernels(50, 4) == 33850;

    std::map<std::string, std::size_t> totals{{"basic", base_k}};
    for (int n = 1; n <= 6; ++n) {
        std::string name = "afn" + std::to_string(n);
        Model m = build(ArchSpec::make(name, "full", 4, 5, true), 1);
        std::size_t k = param_total(m, CountMode::KernelsOnly);
        totals[name] = k;
        std::size_t expect = 0;
        for (int i = 8 - n + 1; i <= 8; ++i)
            expect += attn_kernels(in_c[i - 1], 4);
        ok = ok && (k - base_k == expect);
    }

    // scale-count invariance: doubling K only adds mixing weights (+ biases)
    {
        ArchSpec a4 = ArchSpec::make("afn1", "full", 4, 5, true);
        ArchSpec a2 = a4;
        a2.layers[7].af.rates = {2, 6};
        Model m4 = build(a4, 1), m2 = build(a2, 1);
        std::size_t mid = 25; // floor(50 / 2)
        ok = ok && (param_total(m4, CountMode::KernelsOnly) -
                        param_total(m2, CountMode::KernelsOnly) ==
                    mid * 2);
        ok = ok && (param_total(m4, CountMode::All) -
                        param_total(m2, CountMode::All) ==
                    mid * 2 + 2);
    }

    // Published totals for the original-scale channel plan; ours differ
    // because that plan's bias/normalization accounting is unstated, so the
    // residual is reported, never asserted.
    const std::map<std::string, std::size_t> reference{
        {"basic", 315725}, {"afn1", 349904}, {"afn6", 450209}};
    std::ostringstream os;
    os << "deltas exact for n=1..6, head(C'=50,K=4)=33850;";
    for (const auto& [name, ref] : reference) {
        double resid = 100.0 *
                       (static_cast<double>(totals[name]) -
                        static_cast<double>(ref)) /
                       static_cast<double>(ref);
        char buf[128];
        std::snprintf(buf, sizeof(buf), " %s ours=%zu ref=%zu (%+.2f%%)",
                      name.c_str(), totals[name], ref, resid);
        os << buf;
    }
    c.detail = os.str();
    c.pass = ok;
    return c;
}

struct DeskRun {
    TrainResult result;
    std::vector<VolumeRecord> volumes; // normalized, as seen in training
    bool trained_ok = false;
};

DeskRun desk_overfit() {
    DeskRun run;
    std::string dir = fresh_dir("afn_acceptance_desk");
    TrainConfig cfg;
    cfg.arch = "afn2";
    cfg.profile = "desk";
    cfg.epochs = 400;
    cfg.batch_segments = 2;
    cfg.segment_size = 32;
    cfg.seed = 7;
    cfg.checkpoint_every = 0;
    cfg.out_dir = dir;
    cfg.num_input_channels = 1;
    // stop below the 0.05 criterion: the dice threshold needs the extra margin
    cfg.target_loss = 0.03;
    cfg.max_steps = 2000;
    for (int i = 0; i < 5; ++i) {
        VolumeRecord v =
            generate_phantom(PhantomSpec::default_spec(64, 1000 + static_cast<std::uint64_t>(i)));
        std::string p = dir + "/phantom" + std::to_string(i) + ".afnv";
        write_volume(v, p);
        cfg.manifest.push_back(p);
        normalize(v);
        run.volumes.push_back(std::move(v));
    }
    run.result = train(cfg);
    run.trained_ok = run.result.final_epoch_loss < 0.05 &&
                     run.result.steps <= 2000;
    // class-balanced patch statistics differ from full-volume statistics;
    // re-estimate the normalization stats on the evaluation distribution
    if (run.trained_ok)
        refresh_batchnorm_stats(run.result.model, run.volumes, 8);
    return run;
}

// ---------------------------------------------------------------- 6
Criterion desk_training(const DeskRun& run) {
    Criterion c{"desk-scale training (loss < 0.05 within 2000 steps, mean dice > 0.95)"};
    double dice = 0;
    if (run.trained_ok) {
        MetricsReport rep = evaluate(run.result.model, run.volumes, 32, 8);
        dice = rep.mean_dice();
    }
    std::ostringstream os;
    os << "steps=" << run.result.steps
       << " final epoch loss=" << run.result.final_epoch_loss
       << " mean dice=" << dice;
    c.detail = os.str();
    c.pass = run.trained_ok && dice > 0.95;
    return c;
}

// 6-connected components of one label class; returns voxel indices per blob.
std::vector<std::vector<std::int64_t>> components(const LabelVolume& lv,
                                                  std::uint8_t cls) {
    int G = lv.depth;
    std::vector<char> seen(lv.labels.size(), 0);
    std::vector<std::vector<std::int64_t>> blobs;
    for (std::int64_t s = 0; s < lv.size(); ++s) {
        if (seen[static_cast<size_t>(s)] || lv.labels[static_cast<size_t>(s)] != cls)
            continue;
        blobs.emplace_back();
        std::queue<std::int64_t> q;
        q.push(s);
        seen[static_cast<size_t>(s)] = 1;
        while (!q.empty()) {
            std::int64_t i = q.front();
            q.pop();
            blobs.back().push_back(i);
            int z = static_cast<int>(i / (G * G));
            int y = static_cast<int>(i / G % G);
            int x = static_cast<int>(i % G);
            const int d[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                 {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
            for (const auto& dd : d) {
                int nz = z + dd[0], ny = y + dd[1], nx = x + dd[2];
                if (nz < 0 || ny < 0 || nx < 0 || nz >= G || ny >= G || nx >= G)
                    continue;
                std::int64_t ni = (static_cast<std::int64_t>(nz) * G + ny) * G + nx;
                if (!seen[static_cast<size_t>(ni)] &&
                    lv.labels[static_cast<size_t>(ni)] == cls) {
                    seen[static_cast<size_t>(ni)] = 1;
                    q.push(ni);
                }
            }
        }
    }
    return blobs;
}

// ---------------------------------------------------------------- 7
Criterion scale_probe(const DeskRun& run) {
    Criterion c{"scale-probe demonstration (largest-rate attention: large vs small structures)"};
    c.warn_only = true;
    VolumeRecord held = generate_phantom(PhantomSpec::default_spec(64, 2000));
    normalize(held);

    const Model& m = run.result.model;
    Graph g(const_cast<ParamStore*>(&m.params));
    std::map<int, int> attn;
    int x = g.input(held.image);
    m.forward(g, x, /*training=*/false, &attn);
    // last hidden layer of the 4-layer profile; channel 1 = largest rate (6)
    Tensor lam = g.value(attn.at(4));
    std::int64_t plane = lam.size() / lam.extent(0);

    auto blobs = components(held.labels, 1);
    double mean_large = 0, mean_small = 0;
    std::int64_t n_large = 0, n_small = 0;
    for (const auto& blob : blobs) {
        bool large = blob.size() > 2000;
        for (std::int64_t i : blob) {
            double v = lam[plane + i];
            if (large) {
                mean_large += v;
                ++n_large;
            } else {
                mean_small += v;
                ++n_small;
            }
        }
    }
    if (n_large == 0 || n_small == 0) {
        c.detail = "held-out phantom lacks a large/small structure pair";
        c.pass = false;
        return c;
    }
    mean_large /= static_cast<double>(n_large);
    mean_small /= static_cast<double>(n_small);
    std::ostringstream os;
    os << "mean rate-6 attention: large=" << mean_large
       << " (n=" << n_large << ") small=" << mean_small << " (n=" << n_small
       << "), effect=" << mean_large - mean_small;
    c.detail = os.str();
    c.pass = mean_large > mean_small;
    return c;
}

// ---------------------------------------------------------------- 8
Criterion determinism_serialization() {
    Criterion c{"determinism & serialization (bitwise loss curves and round trips)"};
    std::string dir = fresh_dir("afn_acceptance_det");
    PhantomSpec spec;
    spec.grid = 16;
    spec.seed = 300;
    spec.background_sigma = 0.05;
    spec.classes.push_back({2.0, 3.0, 1.0, 0.05, 0.5, 0.2, 1});
    spec.classes.push_back({2.0, 3.0, -1.0, 0.05, 0.0, 0.0, 1});
    VolumeRecord v = generate_phantom(spec);
    std::string vol_path = dir + "/vol.afnv";
    write_volume(v, vol_path);

    // volume round trip: the image payload is float32 on disk, so compare
    // a re-write of the read-back record, which must be bit-exact
    VolumeRecord v2 = read_volume(vol_path);
    std::string vol_path2 = dir + "/vol_rt.afnv";
    write_volume(v2, vol_path2);
    VolumeRecord v3 = read_volume(vol_path2);
    bool vol_ok = oracle::bitwise_equal(v2.image, v3.image) &&
                  v2.labels.labels == v3.labels.labels &&
                  v.labels.labels == v2.labels.labels;

    TrainConfig cfg;
    cfg.arch = "afn1";
    cfg.profile = "desk";
    cfg.epochs = 2;
    cfg.batch_segments = 2;
    cfg.segment_size = 12;
    cfg.seed = 9;
    cfg.checkpoint_every = 0;
    cfg.num_input_channels = 1;
    cfg.manifest = {vol_path};

    cfg.out_dir = dir + "/run_a";
    TrainResult a = train(cfg);
    cfg.out_dir = dir + "/run_b";
    TrainResult b = train(cfg);

    bool curves_ok = a.step_losses == b.step_losses;
    bool params_ok = true;
    for (const auto& name : a.model.params.names())
        params_ok = params_ok &&
                    oracle::bitwise_equal(a.model.params.get(name),
                                          b.model.params.get(name));

    // weight round trip
    std::string w_path = dir + "/weights.afnw";
    save_weights(a.model, w_path);
    Model loaded = load_weights(a.model.arch, w_path);
    bool weights_ok = true;
    for (const auto& name : a.model.params.names())
        weights_ok = weights_ok &&
                     oracle::bitwise_equal(a.model.params.get(name),
                                           loaded.params.get(name));

    // checkpoint round trip (weights + optimizer moments)
    Model resumed = build(a.model.arch, 123);
    AdamState st;
    int next_epoch = -1;
    load_checkpoint(resumed, st, next_epoch, dir + "/run_a/ckpt_final");
    bool ckpt_ok = next_epoch == 2;
    for (const auto& name : a.model.params.names())
        ckpt_ok = ckpt_ok && oracle::bitwise_equal(a.model.params.get(name),
                                                   resumed.params.get(name));

    std::ostringstream os;
    os << "loss curves " << (curves_ok ? "bitwise-equal" : "DIFFER")
       << ", params " << (params_ok ? "bitwise-equal" : "DIFFER")
       << ", round trips: weights " << (weights_ok ? "exact" : "BROKEN")
       << ", checkpoint " << (ckpt_ok ? "exact" : "BROKEN") << ", volume "
       << (vol_ok ? "exact" : "BROKEN");
    c.detail = os.str();
    c.pass = vol_ok && curves_ok && params_ok && weights_ok && ckpt_ok;
    return c;
}

void report(Criterion c, int index, bool& all_pass) {
    const char* tag = c.pass ? "[PASS]" : (c.warn_only ? "[WARN]" : "[FAIL]");
    if (!c.pass && !c.warn_only)
        all_pass = false;
    std::printf("%s %d. %s — %s (%.1fs)\n", tag, index, c.name.c_str(),
                c.detail.c_str(), c.seconds);
    std::fflush(stdout);
}

template <typename F> Criterion timed(F&& f) {
    auto t0 = std::chrono::steady_clock::now();
    Criterion c;
    try {
        c = f();
    } catch (const std::exception& e) {
        c.name = "criterion threw";
        c.pass = false;
        c.detail = std::string("exception: ") + e.what();
    }
    c.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return c;
}

} // namespace

int main() {
    bool all_pass = true;
    report(timed(gradient_correctness), 1, all_pass);
    report(timed(equivalence_suite), 2, all_pass);
    report(timed(attention_normalization), 3, all_pass);
    report(timed(receptive_field_criterion), 4, all_pass);
    report(timed(parameter_accounting), 5, all_pass);

    auto t0 = std::chrono::steady_clock::now();
    DeskRun run;
    try {
        run = desk_overfit();
    } catch (const std::exception& e) {
        Criterion c{"desk-scale training"};
        c.detail = std::string("exception: ") + e.what();
        c.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
        report(c, 6, all_pass);
        Criterion c7{"scale-probe demonstration"};
        c7.warn_only = true;
        c7.detail = "skipped: training failed";
        report(c7, 7, all_pass);
        report(timed(determinism_serialization), 8, all_pass);
        std::printf("%s\n", all_pass ? "ACCEPTANCE: PASS" : "ACCEPTANCE: FAIL");
        return all_pass ? 0 : 1;
    }
    {
        Criterion c = desk_training(run);
        c.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
        report(c, 6, all_pass);
    }
    report(timed([&] { return scale_probe(run); }), 7, all_pass);
    report(timed(determinism_serialization), 8, all_pass);

    std::printf("%s\n", all_pass ? "ACCEPTANCE: PASS" : "ACCEPTANCE: FAIL");
    return all_pass ? 0 : 1;
}
