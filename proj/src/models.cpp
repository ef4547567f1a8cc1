#include "afn/models.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace afn {

namespace {

struct Plan {
    std::vector<int> channels;
    std::vector<int> dilations;
    std::vector<int> residual_groups;
    std::vector<int> rates;
};

Plan profile_plan(const std::string& profile) {
    if (profile == "full") {
        // DeepMedic-lineage channel plan; layers 1-2 standard, 3-8 rate 2,
        // residual blocks around (3,4), (5,6), (7,8).
        return {{30, 30, 40, 40, 40, 40, 50, 50},
                {1, 1, 2, 2, 2, 2, 2, 2},
                {-1, -1, 0, 0, 1, 1, 2, 2},
                {2, 6, 10, 14}};
    }
    if (profile == "desk") {
        return {{8, 8, 12, 12}, {1, 1, 2, 2}, {-1, -1, 0, 0}, {2, 6}};
    }
    throw std::runtime_error("unknown profile: " + profile);
}

} // namespace

ArchSpec ArchSpec::make(const std::string& arch_name, const std::string& profile,
                        int num_input_channels, int num_classes, bool batchnorm) {
    Plan plan = profile_plan(profile);
    int hidden = static_cast<int>(plan.channels.size());

    int n_autofocus = 0;
    bool aspp = false;
    AsppFusion fusion = AsppFusion::Sum;
    if (arch_name == "basic") {
        // baseline, all plain convolutions
    } else if (arch_name.rfind("afn", 0) == 0 && arch_name.size() == 4 &&
               arch_name[3] >= '1' && arch_name[3] <= '6') {
        n_autofocus = arch_name[3] - '0';
        if (n_autofocus > hidden - 2)
            throw std::runtime_error(arch_name + " needs more hidden layers than profile '" +
                                     profile + "' provides");
    } else if (arch_name == "aspp-s" || arch_name == "aspp-c") {
        aspp = true;
        fusion = arch_name == "aspp-s" ? AsppFusion::Sum : AsppFusion::Concat;
    } else {
        throw std::runtime_error("unknown architecture: " + arch_name);
    }

    ArchSpec arch;
    arch.name = arch_name;
    arch.num_input_channels = num_input_channels;
    arch.num_classes = num_classes;
    arch.batchnorm = batchnorm;

    int prev_c = num_input_channels;
    for (int i = 0; i < hidden; ++i) {
        LayerSpec ls;
        ls.residual_group = plan.residual_groups[static_cast<size_t>(i)];
        ls.norm = batchnorm;
        int out_c = plan.channels[static_cast<size_t>(i)];
        bool convert = i >= hidden - n_autofocus;
        if (convert) {
            ls.kind = LayerKind::Autofocus;
            ls.af.rates = plan.rates;
            ls.af.in_channels = prev_c;
            ls.af.out_channels = out_c;
        } else {
            ls.kind = LayerKind::Conv;
            ls.conv.in_channels = prev_c;
            ls.conv.out_channels = out_c;
            ls.conv.dilation = plan.dilations[static_cast<size_t>(i)];
            ls.conv.padding = Padding::Same;
        }
        arch.layers.push_back(ls);
        prev_c = out_c;
    }

    if (aspp) {
        LayerSpec ls;
        ls.kind = LayerKind::Aspp;
        ls.af.rates = plan.rates;
        ls.af.in_channels = prev_c;
        ls.af.out_channels = prev_c;
        ls.fusion = fusion;
        ls.norm = batchnorm;
        arch.layers.push_back(ls);
    }

    LayerSpec cls;
    cls.kind = LayerKind::Classifier;
    cls.conv.in_channels = prev_c;
    cls.conv.out_channels = num_classes;
    cls.conv.kernel = {1, 1, 1};
    cls.norm = false;
    arch.layers.push_back(cls);

    arch.validate();
    return arch;
}

void ArchSpec::validate() const {
    if (layers.empty())
        throw std::runtime_error("ArchSpec: no layers");
    for (size_t i = 0; i < layers.size(); ++i) {
        bool is_cls = layers[i].kind == LayerKind::Classifier;
        if (is_cls != (i == layers.size() - 1))
            throw std::runtime_error(
                "ArchSpec: exactly one classifier layer, last");
    }
    int prev_c = num_input_channels;
    for (const auto& ls : layers) {
        int in_c = ls.kind == LayerKind::Conv || ls.kind == LayerKind::Classifier
                       ? ls.conv.in_channels
                       : ls.af.in_channels;
        int out_c = ls.kind == LayerKind::Conv || ls.kind == LayerKind::Classifier
                        ? ls.conv.out_channels
                        : ls.af.out_channels;
        if (in_c != prev_c)
            throw std::runtime_error(
                "ArchSpec: channel-plan mismatch between consecutive layers (" +
                std::to_string(prev_c) + " -> " + std::to_string(in_c) + ")");
        prev_c = out_c;
    }
    if (prev_c != num_classes)
        throw std::runtime_error("ArchSpec: classifier does not produce num_classes");
}

std::string ArchSpec::serialize() const {
    std::ostringstream os;
    os << "afnw-arch v1\n";
    os << "name " << name << "\nin " << num_input_channels << "\nclasses "
       << num_classes << "\nbn " << (batchnorm ? 1 : 0) << "\n";
    for (const auto& ls : layers) {
        switch (ls.kind) {
        case LayerKind::Conv:
        case LayerKind::Classifier:
            os << (ls.kind == LayerKind::Conv ? "conv " : "classifier ")
               << ls.conv.in_channels << " " << ls.conv.out_channels << " k"
               << ls.conv.kernel[0] << ls.conv.kernel[1] << ls.conv.kernel[2]
               << " r" << ls.conv.dilation << " s" << ls.conv.stride[0]
               << ls.conv.stride[1] << ls.conv.stride[2] << " p"
               << (ls.conv.padding == Padding::Same ? "same" : "valid") << " b"
               << (ls.conv.bias ? 1 : 0);
            break;
        case LayerKind::Autofocus:
        case LayerKind::Aspp:
            os << (ls.kind == LayerKind::Autofocus ? "autofocus " : "aspp ")
               << ls.af.in_channels << " " << ls.af.out_channels << " rates";
            for (int r : ls.af.rates)
                os << " " << r;
            if (ls.kind == LayerKind::Aspp)
                os << (ls.fusion == AsppFusion::Sum ? " sum" : " concat");
            break;
        }
        os << " g" << ls.residual_group << " n" << (ls.norm ? 1 : 0) << "\n";
    }
    return os.str();
}

std::array<std::uint8_t, 32> ArchSpec::hash() const {
    // four FNV-1a streams with distinct offset bases; a structural guard,
    // not a cryptographic digest
    std::string s = serialize();
    std::array<std::uint64_t, 4> h{0xcbf29ce484222325ull, 0x84222325cbf29ce4ull,
                                   0x9ae16a3b2f90404full, 0xc949d7c7509e6557ull};
    for (unsigned char c : s)
        for (auto& hv : h) {
            hv ^= c;
            hv *= 0x100000001b3ull;
        }
    std::array<std::uint8_t, 32> out{};
    for (int i = 0; i < 4; ++i)
        std::memcpy(out.data() + i * 8, &h[static_cast<size_t>(i)], 8);
    return out;
}

namespace {

std::string layer_prefix(int i) { return "layer" + std::to_string(i + 1); }

} // namespace

Model build(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    Model m;
    m.arch = arch;
    Rng rng(seed);
    for (size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& ls = arch.layers[i];
        std::string prefix = layer_prefix(static_cast<int>(i));
        int out_c = 0;
        switch (ls.kind) {
        case LayerKind::Conv:
        case LayerKind::Classifier:
            init_conv_params(m.params, prefix + ".conv", ls.conv, rng);
            out_c = ls.conv.out_channels;
            break;
        case LayerKind::Autofocus:
            init_autofocus_params(m.params, prefix + ".af", ls.af, rng);
            out_c = ls.af.out_channels;
            break;
        case LayerKind::Aspp:
            init_aspp_params(m.params, prefix + ".aspp", ls.af, ls.fusion, rng);
            out_c = ls.af.out_channels;
            break;
        }
        if (ls.norm)
            init_batchnorm_params(m.params, prefix + ".bn", out_c);
    }
    return m;
}

int Model::forward(Graph& g, int x, bool training,
                   std::map<int, int>* attention_nodes) const {
    int cur = x;
    int group = -1;
    int group_input = -1;
    for (size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& ls = arch.layers[i];
        std::string prefix = layer_prefix(static_cast<int>(i));

        if (ls.residual_group != group) {
            group = ls.residual_group;
            group_input = group >= 0 ? cur : -1;
        }

        int h = -1;
        switch (ls.kind) {
        case LayerKind::Conv:
        case LayerKind::Classifier:
            h = conv_layer(g, cur, prefix + ".conv", ls.conv);
            break;
        case LayerKind::Autofocus: {
            auto out = autofocus_forward(g, cur, prefix + ".af", ls.af);
            h = out.output;
            if (attention_nodes)
                (*attention_nodes)[static_cast<int>(i) + 1] = out.attention;
            break;
        }
        case LayerKind::Aspp:
            h = aspp_forward(g, cur, prefix + ".aspp", ls.af, ls.fusion);
            break;
        }

        if (ls.kind == LayerKind::Classifier) {
            cur = h; // logits, no norm/activation
            break;
        }
        if (ls.norm)
            h = g.batchnorm(h, prefix + ".bn", training);
        h = g.relu(h);

        bool group_ends = group >= 0 &&
                          (i + 1 >= arch.layers.size() ||
                           arch.layers[i + 1].residual_group != group);
        if (group_ends)
            h = residual_add(g, h, group_input);
        cur = h;
    }
    return cur;
}

std::vector<ReceptiveFieldState> receptive_field(const ArchSpec& arch) {
    std::vector<ReceptiveFieldState> out;
    int phi_min = 1, phi_max = 1, eta = 1;
    for (size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& ls = arch.layers[i];
        ReceptiveFieldState st;
        st.layer = layer_prefix(static_cast<int>(i)) + " (" +
                   (ls.kind == LayerKind::Conv         ? "conv"
                    : ls.kind == LayerKind::Autofocus  ? "autofocus"
                    : ls.kind == LayerKind::Aspp       ? "aspp"
                                                       : "classifier") +
                   ")";
        if (ls.kind == LayerKind::Conv || ls.kind == LayerKind::Classifier) {
            int theta = ls.conv.kernel[0];
            phi_min += ls.conv.dilation * (theta - 1) * eta;
            phi_max += ls.conv.dilation * (theta - 1) * eta;
            st.phi = {phi_min};
            eta *= ls.conv.stride[0];
        } else {
            // one phi per rate; the min/max track the smallest and largest
            // scale through subsequent layers
            for (int r : ls.af.rates)
                st.phi.push_back(phi_min + r * 2 * eta);
            phi_max += ls.af.rates.back() * 2 * eta;
            phi_min += ls.af.rates.front() * 2 * eta;
        }
        st.effective_stride = eta;
        out.push_back(std::move(st));
    }
    return out;
}

std::map<std::string, std::size_t> param_count(const Model& m, CountMode mode) {
    std::map<std::string, std::size_t> out;
    for (const auto& name : m.params.names()) {
        if (!m.params.trainable(name))
            continue;
        if (mode == CountMode::KernelsOnly &&
            name.size() < 7) // ".kernel"
            continue;
        if (mode == CountMode::KernelsOnly &&
            name.compare(name.size() - 7, 7, ".kernel") != 0)
            continue;
        out[name] = static_cast<std::size_t>(m.params.get(name).size());
    }
    return out;
}

std::size_t param_total(const Model& m, CountMode mode) {
    std::size_t n = 0;
    for (const auto& [name, c] : param_count(m, mode))
        n += c;
    return n;
}

namespace {

constexpr std::uint32_t kWeightVersion = 1;

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T> void write_pod(std::ofstream& f, T v) {
    write_bytes(f, &v, sizeof(T));
}

void read_bytes(std::ifstream& f, void* p, std::size_t n, const char* what) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n)
        throw std::runtime_error(std::string("weight file truncated reading ") +
                                 what);
}

template <typename T> T read_pod(std::ifstream& f, const char* what) {
    T v;
    read_bytes(f, &v, sizeof(T), what);
    return v;
}

} // namespace

void save_tensor_records(const std::string& path,
                         const std::array<std::uint8_t, 32>& hash,
                         const std::vector<std::pair<std::string, Tensor>>& recs) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot open for write: " + path);
    f.write("AFNW", 4);
    write_pod(f, kWeightVersion);
    write_bytes(f, hash.data(), 32);
    write_pod(f, static_cast<std::uint64_t>(recs.size()));
    for (const auto& [name, t] : recs) {
        write_pod(f, static_cast<std::uint16_t>(name.size()));
        write_bytes(f, name.data(), name.size());
        write_pod(f, static_cast<std::uint8_t>(t.rank()));
        for (int e : t.shape())
            write_pod(f, static_cast<std::uint32_t>(e));
        write_bytes(f, t.data(), static_cast<std::size_t>(t.size()) * 8);
    }
    if (!f)
        throw std::runtime_error("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>>
load_tensor_records(const std::string& path,
                    const std::array<std::uint8_t, 32>& expect_hash) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot open: " + path);
    char magic[4];
    read_bytes(f, magic, 4, "magic");
    if (std::memcmp(magic, "AFNW", 4) != 0)
        throw std::runtime_error("bad magic in weight file: " + path);
    auto version = read_pod<std::uint32_t>(f, "version");
    if (version != kWeightVersion)
        throw std::runtime_error("unsupported weight file version " +
                                 std::to_string(version));
    std::array<std::uint8_t, 32> hash;
    read_bytes(f, hash.data(), 32, "arch hash");
    if (hash != expect_hash)
        throw std::runtime_error("arch hash mismatch: weight file " + path +
                                 " was saved for a different architecture");
    auto count = read_pod<std::uint64_t>(f, "record count");
    std::vector<std::pair<std::string, Tensor>> recs;
    for (std::uint64_t i = 0; i < count; ++i) {
        auto name_len = read_pod<std::uint16_t>(f, "name length");
        std::string name(name_len, '\0');
        read_bytes(f, name.data(), name_len, "name");
        auto rank = read_pod<std::uint8_t>(f, "rank");
        Shape shape;
        for (int ax = 0; ax < rank; ++ax) {
            auto e = read_pod<std::uint32_t>(f, "extent");
            if (e == 0 || e > (1u << 30))
                throw std::runtime_error("weight file extent overflow");
            shape.push_back(static_cast<int>(e));
        }
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        read_bytes(f, data.data(), data.size() * 8, "tensor data");
        recs.emplace_back(std::move(name),
                          Tensor::from_values(std::move(shape), std::move(data)));
    }
    return recs;
}

void save_weights(const Model& m, const std::string& path) {
    std::vector<std::pair<std::string, Tensor>> recs;
    for (const auto& name : m.params.names())
        recs.emplace_back(name, m.params.get(name));
    save_tensor_records(path, m.arch.hash(), recs);
}

Model load_weights(const ArchSpec& arch, const std::string& path) {
    Model m = build(arch, /*seed=*/0);
    auto recs = load_tensor_records(path, arch.hash());
    for (auto& [name, t] : recs) {
        Tensor& dst = m.params.get(name);
        if (dst.shape() != t.shape())
            throw std::runtime_error("weight record shape mismatch for " + name);
        dst = std::move(t);
    }
    return m;
}

} // namespace afn
