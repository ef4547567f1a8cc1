#pragma once

#include "afn/layers.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace afn {

enum class LayerKind { Conv, Autofocus, Aspp, Classifier };

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    ConvSpec conv;       // Conv / Classifier
    AutofocusConfig af;  // Autofocus / Aspp
    AsppFusion fusion = AsppFusion::Sum;
    int residual_group = -1; // consecutive layers sharing an id form a block
    bool norm = true;        // batchnorm after the conv, before ReLU
};

// Declarative architecture. The named constructors cover the model family:
// basic, afn1..afn6, aspp-c, aspp-s; profile "full" uses the full channel
// plan 30,30,40,40,40,40,50,50 and rates {2,6,10,14}, profile "desk" a
// 4-layer 8,8,12,12 variant with rates {2,6} sized for CPU runs.
struct ArchSpec {
    std::string name;
    std::vector<LayerSpec> layers; // hidden layers then one classifier (last)
    int num_input_channels = 4;
    int num_classes = 5;
    bool batchnorm = true;

    static ArchSpec make(const std::string& arch_name,
                         const std::string& profile = "full",
                         int num_input_channels = 4, int num_classes = 5,
                         bool batchnorm = true);

    void validate() const;
    std::string serialize() const;
    std::array<std::uint8_t, 32> hash() const;
};

struct Model {
    ArchSpec arch;
    ParamStore params;

    // Builds the full forward graph; returns the logits node. Collects the
    // attention-map node of every autofocus layer into `attention_nodes`
    // (keyed by hidden-layer index, 1-based) when non-null.
    int forward(Graph& g, int x, bool training,
                std::map<int, int>* attention_nodes = nullptr) const;
};

Model build(const ArchSpec& arch, std::uint64_t seed);

// Receptive-field recursion phi_l = phi_{l-1} + r_l*(theta_l - 1)*eta_l,
// applied per axis. Autofocus layers report one phi per rate.
struct ReceptiveFieldState {
    std::string layer;
    // phi per rate (single entry for plain convs), isotropic kernels assumed
    std::vector<int> phi;
    int effective_stride = 1;
};

std::vector<ReceptiveFieldState> receptive_field(const ArchSpec& arch);

enum class CountMode { KernelsOnly, All };

// name -> element count; shared autofocus kernels are counted once.
std::map<std::string, std::size_t> param_count(const Model& m, CountMode mode);
std::size_t param_total(const Model& m, CountMode mode);

// Weight file: magic "AFNW", version u32, arch hash (32 bytes), count u64,
// then per-parameter records (name len u16, name bytes, rank u8, extents
// u32 each, float64 data). Little-endian throughout.
void save_weights(const Model& m, const std::string& path);
Model load_weights(const ArchSpec& arch, const std::string& path);

// Same record scheme for arbitrary named tensors (used by the optimizer
// checkpoint, names suffixed .m/.v plus a step counter record).
void save_tensor_records(const std::string& path,
                         const std::array<std::uint8_t, 32>& hash,
                         const std::vector<std::pair<std::string, Tensor>>& recs);
std::vector<std::pair<std::string, Tensor>>
load_tensor_records(const std::string& path,
                    const std::array<std::uint8_t, 32>& expect_hash);

} // namespace afn
