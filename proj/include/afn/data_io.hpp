#pragma once

#include "afn/loss_metrics.hpp"
#include "afn/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace afn {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Image + label grid with voxel spacing metadata. Stored on disk as AFNV:
// magic "AFNV", version u32, C,D,H,W u32, spacing 3 x float64, dtype tag
// u32 (0 = float32 image payload), image float32 LE, labels u8.
struct VolumeRecord {
    Tensor image; // [C, D, H, W]
    LabelVolume labels;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string id;

    void validate() const;
};

void write_volume(const VolumeRecord& v, const std::string& path);
VolumeRecord read_volume(const std::string& path);

// Per-channel zero-mean / unit-variance normalization. With masked = true
// statistics are computed over nonzero voxels only (brain-style); otherwise
// over the whole channel. Throws on (near-)constant input.
void normalize(VolumeRecord& v, bool masked = false);

// Synthetic ellipsoid phantom. Class 0 is background; each foreground class
// renders `instances` ellipsoids with class-specific intensity and a
// sinusoidal texture whose frequency differs per class, so appearance is
// scale-dependent. Placement avoids overlap via bounded retries; rendering
// order still overwrites deterministically where discretization touches.
struct PhantomClassSpec {
    double radius_min = 4;
    double radius_max = 10;
    double intensity_mean = 1.0;
    double intensity_sigma = 0.05;
    double texture_freq = 0.0; // radians per voxel along x+y+z
    double texture_amp = 0.0;
    int instances = 1;
};

struct PhantomSpec {
    int grid = 64;
    double background_sigma = 0.05;
    std::vector<PhantomClassSpec> classes; // index 0 = class 1, etc.
    int scale_probe_class = -1; // gets one small (r<=4) and one large (r>=12)
                                // instance when grid >= 64
    std::uint64_t seed = 0;

    int num_classes() const { return static_cast<int>(classes.size()) + 1; }
    static PhantomSpec default_spec(int grid, std::uint64_t seed);
};

VolumeRecord generate_phantom(const PhantomSpec& spec);

struct Segment {
    Tensor image; // [C, s, s, s]
    LabelVolume labels;
    std::array<int, 3> origin{0, 0, 0};
};

// Class-balanced patch sampling: each segment's center-voxel class is drawn
// uniformly over the classes present in the volume, then a uniform voxel of
// that class; the segment box is clamped inside the volume. Deterministic
// under seed.
std::vector<Segment> sample_segments(const VolumeRecord& v, int segment_size,
                                     int count, bool class_balance,
                                     std::uint64_t seed);

// Newline-separated volume paths; blank lines and '#' comments skipped.
std::vector<std::string> read_manifest(const std::string& path);

} // namespace afn
