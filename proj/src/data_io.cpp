#include "afn/data_io.hpp"

#include "afn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace afn {

void VolumeRecord::validate() const {
    if (image.rank() != 4)
        throw ShapeError("VolumeRecord: image must be [C,D,H,W], got " +
                         shape_str(image.shape()));
    labels.validate();
    if (image.extent(1) != labels.depth || image.extent(2) != labels.height ||
        image.extent(3) != labels.width)
        throw ShapeError("VolumeRecord: image and labels spatial shape differ");
    for (double s : spacing)
        if (!(s > 0))
            throw ShapeError("VolumeRecord: spacing must be > 0");
}

namespace {

constexpr std::uint32_t kVolumeVersion = 1;

template <typename T> void wr(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void rd(std::ifstream& f, void* p, std::size_t n, const char* what) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n)
        throw IoError(std::string("volume file truncated reading ") + what);
}

template <typename T> T rd_pod(std::ifstream& f, const char* what) {
    T v;
    rd(f, &v, sizeof(T), what);
    return v;
}

} // namespace

void write_volume(const VolumeRecord& v, const std::string& path) {
    v.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open for write: " + path);
    f.write("AFNV", 4);
    wr(f, kVolumeVersion);
    wr(f, static_cast<std::uint32_t>(v.image.extent(0)));
    wr(f, static_cast<std::uint32_t>(v.labels.depth));
    wr(f, static_cast<std::uint32_t>(v.labels.height));
    wr(f, static_cast<std::uint32_t>(v.labels.width));
    for (double s : v.spacing)
        wr(f, s);
    wr(f, std::uint32_t{0}); // dtype tag: float32 image payload
    std::vector<float> img(static_cast<size_t>(v.image.size()));
    for (std::int64_t i = 0; i < v.image.size(); ++i)
        img[static_cast<size_t>(i)] = static_cast<float>(v.image[i]);
    f.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.size() * 4));
    f.write(reinterpret_cast<const char*>(v.labels.labels.data()),
            static_cast<std::streamsize>(v.labels.labels.size()));
    if (!f)
        throw IoError("write failed: " + path);
}

VolumeRecord read_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open: " + path);
    char magic[4];
    rd(f, magic, 4, "magic");
    if (std::memcmp(magic, "AFNV", 4) != 0)
        throw IoError("bad magic in volume file: " + path);
    auto version = rd_pod<std::uint32_t>(f, "version");
    if (version != kVolumeVersion)
        throw IoError("unsupported volume version " + std::to_string(version));
    auto C = rd_pod<std::uint32_t>(f, "C");
    auto D = rd_pod<std::uint32_t>(f, "D");
    auto H = rd_pod<std::uint32_t>(f, "H");
    auto W = rd_pod<std::uint32_t>(f, "W");
    if (C == 0 || D == 0 || H == 0 || W == 0 || C > (1u << 16) ||
        D > (1u << 16) || H > (1u << 16) || W > (1u << 16))
        throw IoError("volume dimension overflow in " + path);
    VolumeRecord v;
    for (double& s : v.spacing)
        s = rd_pod<double>(f, "spacing");
    auto dtype = rd_pod<std::uint32_t>(f, "dtype");
    if (dtype != 0)
        throw IoError("unsupported dtype tag " + std::to_string(dtype));
    std::int64_t n = static_cast<std::int64_t>(C) * D * H * W;
    std::vector<float> img(static_cast<size_t>(n));
    rd(f, img.data(), img.size() * 4, "image payload");
    std::vector<double> data(img.begin(), img.end());
    v.image = Tensor::from_values({static_cast<int>(C), static_cast<int>(D),
                                   static_cast<int>(H), static_cast<int>(W)},
                                  std::move(data));
    v.labels.depth = static_cast<int>(D);
    v.labels.height = static_cast<int>(H);
    v.labels.width = static_cast<int>(W);
    v.labels.labels.resize(static_cast<size_t>(D) * H * W);
    rd(f, v.labels.labels.data(), v.labels.labels.size(), "label payload");
    if (f.peek() != EOF)
        throw IoError("volume file has trailing bytes: " + path);
    int max_label = 0;
    for (std::uint8_t l : v.labels.labels)
        max_label = std::max(max_label, static_cast<int>(l));
    v.labels.num_classes = max_label + 1;
    v.id = path;
    v.validate();
    return v;
}

void normalize(VolumeRecord& v, bool masked) {
    int C = v.image.extent(0);
    std::int64_t n = v.labels.size();
    for (int c = 0; c < C; ++c) {
        double* ch = v.image.data() + c * n;
        double s = 0;
        std::int64_t m = 0;
        for (std::int64_t i = 0; i < n; ++i)
            if (!masked || ch[i] != 0.0) {
                s += ch[i];
                ++m;
            }
        if (m == 0)
            throw std::runtime_error("normalize: empty foreground mask");
        double mean = s / static_cast<double>(m);
        double s2 = 0;
        for (std::int64_t i = 0; i < n; ++i)
            if (!masked || ch[i] != 0.0)
                s2 += (ch[i] - mean) * (ch[i] - mean);
        double var = s2 / static_cast<double>(m);
        if (var < 1e-24)
            throw std::runtime_error("normalize: channel " + std::to_string(c) +
                                     " is constant");
        double inv = 1.0 / std::sqrt(var);
        for (std::int64_t i = 0; i < n; ++i)
            if (!masked || ch[i] != 0.0)
                ch[i] = (ch[i] - mean) * inv;
    }
}

PhantomSpec PhantomSpec::default_spec(int grid, std::uint64_t seed) {
    PhantomSpec s;
    s.grid = grid;
    s.seed = seed;
    s.background_sigma = 0.05;
    // class 1: scale probe, same texture at small and large size
    s.classes.push_back({4, 12, 1.0, 0.05, 0.9, 0.25, 2});
    // class 2: mid-size, low-frequency texture
    s.classes.push_back({5, 9, -1.0, 0.05, 0.3, 0.25, 1});
    // class 3: small, smooth
    s.classes.push_back({3, 6, 2.0, 0.05, 0.0, 0.0, 1});
    s.scale_probe_class = 1;
    return s;
}

namespace {

struct Ellipsoid {
    double cx, cy, cz;
    double rx, ry, rz;
    int cls;
    double bound() const { return std::max({rx, ry, rz}); }
};

bool overlaps(const Ellipsoid& a, const std::vector<Ellipsoid>& placed) {
    for (const auto& b : placed) {
        double dx = a.cx - b.cx, dy = a.cy - b.cy, dz = a.cz - b.cz;
        double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (d < a.bound() + b.bound() + 1.0)
            return true;
    }
    return false;
}

} // namespace

VolumeRecord generate_phantom(const PhantomSpec& spec) {
    if (spec.grid < 8 || spec.classes.empty())
        throw std::runtime_error("generate_phantom: invalid spec");
    Rng rng(spec.seed);
    int G = spec.grid;

    std::vector<Ellipsoid> placed;
    auto place = [&](int cls, double rmin, double rmax) {
        const int budget = 200;
        for (int attempt = 0; attempt < budget; ++attempt) {
            Ellipsoid e;
            e.cls = cls;
            e.rx = rng.uniform(rmin, rmax);
            e.ry = rng.uniform(rmin, rmax);
            e.rz = rng.uniform(rmin, rmax);
            double b = e.bound() + 1.0;
            if (2 * b >= G)
                continue;
            e.cx = rng.uniform(b, G - b);
            e.cy = rng.uniform(b, G - b);
            e.cz = rng.uniform(b, G - b);
            if (!overlaps(e, placed)) {
                placed.push_back(e);
                return;
            }
        }
        throw std::runtime_error(
            "generate_phantom: cannot place shape for class " +
            std::to_string(cls) + " within retry budget");
    };

    for (size_t ci = 0; ci < spec.classes.size(); ++ci) {
        const auto& cs = spec.classes[ci];
        int cls = static_cast<int>(ci) + 1;
        bool probe = cls == spec.scale_probe_class && G >= 64;
        if (probe) {
            place(cls, 2.5, 4.0);   // small instance, radius <= 4
            place(cls, 12.0, std::max(12.5, cs.radius_max)); // large, >= 12
            for (int k = 2; k < cs.instances; ++k)
                place(cls, cs.radius_min, cs.radius_max);
        } else {
            for (int k = 0; k < cs.instances; ++k)
                place(cls, cs.radius_min, cs.radius_max);
        }
    }

    VolumeRecord v;
    std::int64_t n = static_cast<std::int64_t>(G) * G * G;
    v.labels.depth = v.labels.height = v.labels.width = G;
    v.labels.num_classes = spec.num_classes();
    v.labels.labels.assign(static_cast<size_t>(n), 0);
    v.image = Tensor::zeros({1, G, G, G});
    v.id = "phantom-" + std::to_string(spec.seed);

    // background noise first, then shapes in placement order (later shapes
    // overwrite earlier ones)
    for (std::int64_t i = 0; i < n; ++i)
        v.image[i] = rng.normal(0.0, spec.background_sigma);

    for (const auto& e : placed) {
        const auto& cs = spec.classes[static_cast<size_t>(e.cls - 1)];
        int z0 = std::max(0, static_cast<int>(std::floor(e.cz - e.rz)));
        int z1 = std::min(G - 1, static_cast<int>(std::ceil(e.cz + e.rz)));
        int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
        int y1 = std::min(G - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
        int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
        int x1 = std::min(G - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    double dz = (z - e.cz) / e.rz;
                    double dy = (y - e.cy) / e.ry;
                    double dx = (x - e.cx) / e.rx;
                    if (dz * dz + dy * dy + dx * dx > 1.0)
                        continue;
                    std::int64_t i =
                        (static_cast<std::int64_t>(z) * G + y) * G + x;
                    v.labels.labels[static_cast<size_t>(i)] =
                        static_cast<std::uint8_t>(e.cls);
                    double texture =
                        cs.texture_amp *
                        std::sin(cs.texture_freq * static_cast<double>(x + y + z));
                    v.image[i] = cs.intensity_mean + texture +
                                 rng.normal(0.0, cs.intensity_sigma);
                }
    }

    // every class must be present
    std::vector<bool> seen(static_cast<size_t>(spec.num_classes()), false);
    for (std::uint8_t l : v.labels.labels)
        seen[l] = true;
    for (int c = 1; c < spec.num_classes(); ++c)
        if (!seen[static_cast<size_t>(c)])
            throw std::runtime_error("generate_phantom: class " +
                                     std::to_string(c) + " rendered no voxels");
    return v;
}

std::vector<Segment> sample_segments(const VolumeRecord& v, int segment_size,
                                     int count, bool class_balance,
                                     std::uint64_t seed) {
    v.validate();
    int D = v.labels.depth, H = v.labels.height, W = v.labels.width;
    if (segment_size > D || segment_size > H || segment_size > W)
        throw ShapeError("sample_segments: segment " +
                         std::to_string(segment_size) +
                         " exceeds volume extents");
    Rng rng(seed);

    // voxel indices per present class, for balanced center sampling
    std::vector<std::vector<std::int64_t>> by_class(
        static_cast<size_t>(v.labels.num_classes));
    if (class_balance)
        for (std::int64_t i = 0; i < v.labels.size(); ++i)
            by_class[v.labels.labels[static_cast<size_t>(i)]].push_back(i);
    std::vector<int> present;
    for (int c = 0; c < v.labels.num_classes; ++c)
        if (!by_class[static_cast<size_t>(c)].empty())
            present.push_back(c);

    int C = v.image.extent(0);
    std::int64_t plane = static_cast<std::int64_t>(D) * H * W;
    std::vector<Segment> out;
    for (int s = 0; s < count; ++s) {
        int oz, oy, ox;
        if (class_balance) {
            int cls = present[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(present.size()) - 1))];
            const auto& pool = by_class[static_cast<size_t>(cls)];
            std::int64_t vi = pool[static_cast<size_t>(rng.uniform_int(
                0, static_cast<int>(pool.size()) - 1))];
            int cz = static_cast<int>(vi / (H * W));
            int cy = static_cast<int>((vi / W) % H);
            int cx = static_cast<int>(vi % W);
            oz = std::clamp(cz - segment_size / 2, 0, D - segment_size);
            oy = std::clamp(cy - segment_size / 2, 0, H - segment_size);
            ox = std::clamp(cx - segment_size / 2, 0, W - segment_size);
        } else {
            oz = rng.uniform_int(0, D - segment_size);
            oy = rng.uniform_int(0, H - segment_size);
            ox = rng.uniform_int(0, W - segment_size);
        }
        Segment seg;
        seg.origin = {oz, oy, ox};
        seg.image = Tensor::zeros({C, segment_size, segment_size, segment_size});
        seg.labels.depth = seg.labels.height = seg.labels.width = segment_size;
        seg.labels.num_classes = v.labels.num_classes;
        seg.labels.labels.resize(static_cast<size_t>(segment_size) *
                                 segment_size * segment_size);
        std::int64_t o = 0;
        for (int z = 0; z < segment_size; ++z)
            for (int y = 0; y < segment_size; ++y)
                for (int x = 0; x < segment_size; ++x, ++o) {
                    std::int64_t src =
                        (static_cast<std::int64_t>(oz + z) * H + (oy + y)) * W +
                        (ox + x);
                    seg.labels.labels[static_cast<size_t>(o)] =
                        v.labels.labels[static_cast<size_t>(src)];
                    std::int64_t seg_plane = static_cast<std::int64_t>(
                                                 segment_size) *
                                             segment_size * segment_size;
                    for (int c = 0; c < C; ++c)
                        seg.image[c * seg_plane + o] = v.image[c * plane + src];
                }
        out.push_back(std::move(seg));
    }
    return out;
}

std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw IoError("cannot open manifest: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        auto h = line.find('#');
        if (h != std::string::npos)
            line = line.substr(0, h);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r' ||
                                 line.back() == '\t'))
            line.pop_back();
        size_t b = line.find_first_not_of(" \t");
        if (b == std::string::npos)
            continue;
        out.push_back(line.substr(b));
    }
    return out;
}

} // namespace afn
