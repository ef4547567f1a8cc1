#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "afn/models.hpp"
#include "oracles.hpp"

#include <cstdio>
#include <filesystem>
#include <string>

using namespace afn;

namespace {

bool params_bitwise_equal(const ParamStore& a, const ParamStore& b) {
    if (a.names() != b.names())
        return false;
    for (const auto& n : a.names())
        if (!oracle::bitwise_equal(a.get(n), b.get(n)))
            return false;
    return true;
}

// attention-head kernel count for an autofocus layer with C' inputs, K rates
std::size_t attention_kernels(int in_c, int K) {
    int mid = in_c / 2;
    return static_cast<std::size_t>(27 * in_c * mid + mid * K);
}

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("architecture construction and validation") {
    ArchSpec basic = ArchSpec::make("basic");
    CHECK(basic.layers.size() == 9); // 8 hidden + classifier
    for (int i = 0; i < 2; ++i)
        CHECK(basic.layers[static_cast<size_t>(i)].conv.dilation == 1);
    for (int i = 2; i < 8; ++i)
        CHECK(basic.layers[static_cast<size_t>(i)].conv.dilation == 2);
    CHECK(basic.layers[8].kind == LayerKind::Classifier);
    CHECK(basic.layers[8].conv.kernel == std::array<int, 3>{1, 1, 1});

    ArchSpec afn3 = ArchSpec::make("afn3");
    for (int i = 0; i < 5; ++i)
        CHECK(afn3.layers[static_cast<size_t>(i)].kind == LayerKind::Conv);
    for (int i = 5; i < 8; ++i) {
        CHECK(afn3.layers[static_cast<size_t>(i)].kind == LayerKind::Autofocus);
        CHECK(afn3.layers[static_cast<size_t>(i)].af.rates ==
              std::vector<int>{2, 6, 10, 14});
    }

    ArchSpec aspp = ArchSpec::make("aspp-c");
    CHECK(aspp.layers.size() == 10);
    CHECK(aspp.layers[8].kind == LayerKind::Aspp);
    CHECK(aspp.layers[8].fusion == AsppFusion::Concat);

    CHECK(ArchSpec::make("afn2", "desk").layers.size() == 5);
    CHECK_THROWS(ArchSpec::make("afn9"));
    CHECK_THROWS(ArchSpec::make("afn3", "desk")); // only 2 convertible layers
    CHECK_THROWS(ArchSpec::make("resnet"));
}

TEST_CASE("build determinism under a fixed seed") {
    ArchSpec arch = ArchSpec::make("afn2", "desk", 1, 3);
    Model a = build(arch, 7);
    Model b = build(arch, 7);
    CHECK(params_bitwise_equal(a.params, b.params));
    Model c = build(arch, 8);
    CHECK_FALSE(params_bitwise_equal(a.params, c.params));
}

TEST_CASE("parameter accounting") {
    SUBCASE("a 40->40 3^3 conv kernel holds 43,200 weights") {
        Model m = build(ArchSpec::make("basic"), 0);
        auto counts = param_count(m, CountMode::KernelsOnly);
        CHECK(counts.at("layer4.conv.kernel") == 43200);
    }

    SUBCASE("kernels-only totals under the default plan") {
        Model basic = build(ArchSpec::make("basic"), 0);
        CHECK(param_total(basic, CountMode::KernelsOnly) == 311290);
        // biases and norm parameters only appear in `all` mode
        CHECK(param_total(basic, CountMode::All) >
              param_total(basic, CountMode::KernelsOnly));
    }

    SUBCASE("afn-n minus basic equals the converted attention heads, n=1..6") {
        std::size_t basic = param_total(build(ArchSpec::make("basic"), 0),
                                        CountMode::KernelsOnly);
        // input channels of hidden layers 3..8 under the default plan
        int in_c[8] = {4, 30, 30, 40, 40, 40, 40, 50};
        for (int n = 1; n <= 6; ++n) {
            std::size_t afn = param_total(
                build(ArchSpec::make("afn" + std::to_string(n)), 0),
                CountMode::KernelsOnly);
            std::size_t expect = 0;
            for (int layer = 8 - n; layer < 8; ++layer)
                expect += attention_kernels(in_c[layer], 4);
            CHECK(afn - basic == expect);
        }
        // the AFN-1 delta: C'=50, K=4 head
        CHECK(attention_kernels(50, 4) == 33850);
    }

    SUBCASE("autofocus conv-kernel count is invariant to K") {
        Rng rng(41);
        AutofocusConfig cfg;
        cfg.in_channels = 50;
        cfg.out_channels = 50;

        auto counts_for = [&](std::vector<int> rates, bool kernels_only) {
            cfg.rates = std::move(rates);
            ParamStore ps;
            Rng r2(41);
            init_autofocus_params(ps, "af", cfg, r2);
            std::size_t total = 0;
            for (const auto& n : ps.names()) {
                if (kernels_only && n.compare(n.size() - 7, 7, ".kernel") != 0)
                    continue;
                total += static_cast<std::size_t>(ps.get(n).size());
            }
            return total;
        };
        std::size_t k2 = counts_for({2, 6}, true);
        std::size_t k4 = counts_for({2, 6, 10, 14}, true);
        // only the attention conv2 term grows: 2 extra * mid channels
        CHECK(k4 - k2 == 2 * 25);
        std::size_t a2 = counts_for({2, 6}, false);
        std::size_t a4 = counts_for({2, 6, 10, 14}, false);
        CHECK(a4 - a2 == 2 * 25 + 2); // + 2 biases
    }
}

TEST_CASE("receptive field recursion") {
    SUBCASE("single 3^3 conv has phi = 3") {
        ArchSpec tiny;
        tiny.num_input_channels = 1;
        tiny.num_classes = 3;
        LayerSpec conv;
        conv.conv.in_channels = 1;
        conv.conv.out_channels = 2;
        LayerSpec cls;
        cls.kind = LayerKind::Classifier;
        cls.conv.in_channels = 2;
        cls.conv.out_channels = 3;
        cls.conv.kernel = {1, 1, 1};
        tiny.layers = {conv, cls};
        auto rf = receptive_field(tiny);
        CHECK(rf[0].phi == std::vector<int>{3});
        CHECK(rf[1].phi == std::vector<int>{3}); // 1^3 classifier adds nothing
    }

    SUBCASE("basic: 5 after layers 1-2, 29 after the last hidden layer") {
        auto rf = receptive_field(ArchSpec::make("basic"));
        CHECK(rf[1].phi == std::vector<int>{5});
        CHECK(rf[7].phi == std::vector<int>{29});
        CHECK(rf[8].phi == std::vector<int>{29});
    }

    SUBCASE("autofocus layer reports one phi per rate; r=14 adds 28") {
        auto rf = receptive_field(ArchSpec::make("afn1"));
        // phi after layer 7 is 25; rates {2,6,10,14} add {4,12,20,28}
        CHECK(rf[7].phi == std::vector<int>{29, 37, 45, 53});
        CHECK(rf[7].phi.back() - 25 == 28);
    }
}

TEST_CASE("empirical single-voxel probe matches the analytic receptive field") {
    // 3-layer valid-padding net: r=1, r=2, r=1 -> phi = 1+2+4+2 = 9
    Rng rng(42);
    ConvSpec s1, s2, s3;
    s1.in_channels = 1;
    s1.out_channels = 2;
    s1.padding = Padding::Valid;
    s2 = s1;
    s2.in_channels = 2;
    s2.dilation = 2;
    s3 = s2;
    s3.dilation = 1;
    ParamStore ps;
    init_conv_params(ps, "c1", s1, rng);
    init_conv_params(ps, "c2", s2, rng);
    init_conv_params(ps, "c3", s3, rng);

    auto forward = [&](const Tensor& x) {
        Tensor h = conv3d_forward(x, ps.get("c1.kernel"), &ps.get("c1.bias"), s1);
        h = conv3d_forward(h, ps.get("c2.kernel"), &ps.get("c2.bias"), s2);
        return conv3d_forward(h, ps.get("c3.kernel"), &ps.get("c3.bias"), s3);
    };

    int G = 19; // output extent 19-2-4-2 = 11 > phi
    Tensor base = oracle::random_tensor({1, G, G, G}, rng);
    Tensor out0 = forward(base);
    Tensor poked = base;
    int c = G / 2;
    poked[(static_cast<std::int64_t>(c) * G + c) * G + c] += 1.0;
    Tensor out1 = forward(poked);

    int E = out0.extent(1);
    int lo[3] = {E, E, E}, hi[3] = {-1, -1, -1};
    for (int z = 0; z < E; ++z)
        for (int y = 0; y < E; ++y)
            for (int x = 0; x < E; ++x) {
                std::int64_t i = (static_cast<std::int64_t>(z) * E + y) * E + x;
                bool changed = false;
                for (int ch = 0; ch < 2; ++ch)
                    if (out0[ch * E * E * E + i] != out1[ch * E * E * E + i])
                        changed = true;
                if (!changed)
                    continue;
                int idx[3] = {z, y, x};
                for (int ax = 0; ax < 3; ++ax) {
                    lo[ax] = std::min(lo[ax], idx[ax]);
                    hi[ax] = std::max(hi[ax], idx[ax]);
                }
            }
    for (int ax = 0; ax < 3; ++ax)
        CHECK(hi[ax] - lo[ax] + 1 == 9);
}

TEST_CASE("weight serialization") {
    ArchSpec arch = ArchSpec::make("afn2", "desk", 1, 3);
    Model m = build(arch, 5);
    std::string path = tmp_path("afn_test_weights.afnw");

    SUBCASE("round-trip is bitwise exact, forward included") {
        save_weights(m, path);
        Model loaded = load_weights(arch, path);
        CHECK(params_bitwise_equal(m.params, loaded.params));

        Rng rng(43);
        Tensor x = oracle::random_tensor({1, 16, 16, 16}, rng);
        Graph g1(&m.params), g2(&loaded.params);
        Tensor y1 = g1.value(m.forward(g1, g1.input(x), true));
        Tensor y2 = g2.value(loaded.forward(g2, g2.input(x), true));
        CHECK(oracle::bitwise_equal(y1, y2));
        std::remove(path.c_str());
    }

    SUBCASE("architecture hash guards loading") {
        save_weights(m, path);
        CHECK_THROWS(load_weights(ArchSpec::make("afn1", "desk", 1, 3), path));
        CHECK_THROWS(load_weights(ArchSpec::make("afn2", "desk", 1, 4), path));
        std::remove(path.c_str());
    }

    SUBCASE("file size tracks the parameter payload") {
        save_weights(m, path);
        std::size_t bytes = static_cast<std::size_t>(
            std::filesystem::file_size(path));
        std::size_t payload = 0;
        for (const auto& n : m.params.names())
            payload += static_cast<std::size_t>(m.params.get(n).size()) * 8;
        CHECK(bytes > payload);
        CHECK(bytes < payload + 48 + 64 * m.params.names().size());
        std::remove(path.c_str());
    }

    SUBCASE("truncation and corruption are detected") {
        save_weights(m, path);
        auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size / 2);
        CHECK_THROWS(load_weights(arch, path));

        // corrupt the magic
        save_weights(m, path);
        {
            std::FILE* f = std::fopen(path.c_str(), "r+b");
            REQUIRE(f);
            std::fputc('X', f);
            std::fclose(f);
        }
        CHECK_THROWS(load_weights(arch, path));
        std::remove(path.c_str());
    }
}

TEST_CASE("fresh model attention maps are uniform 1/K") {
    ArchSpec arch = ArchSpec::make("afn2", "desk", 1, 3);
    Model m = build(arch, 1);
    Rng rng(44);
    Graph g(&m.params);
    std::map<int, int> attn;
    m.forward(g, g.input(oracle::random_tensor({1, 12, 12, 12}, rng)), true,
              &attn);
    REQUIRE(attn.size() == 2); // layers 3 and 4
    for (const auto& [layer, node] : attn) {
        const Tensor& lam = g.value(node);
        CHECK(lam.extent(0) == 2);
        for (std::int64_t i = 0; i < lam.size(); ++i)
            CHECK(lam[i] == doctest::Approx(0.5).epsilon(1e-12));
    }
}
