#pragma once

#include "afn/autodiff.hpp"
#include "afn/rng.hpp"

#include <optional>
#include <vector>

namespace afn {

// Autofocus layer: K parallel dilated convolutions sharing ONE kernel,
// fused per voxel by a softmax attention over scales. The attention head is
// a 3^3 conv to floor(C'/2) channels (ReLU) followed by a 1^3 conv to K
// channels (softmax over the K axis).
struct AutofocusConfig {
    std::vector<int> rates{2, 6, 10, 14};
    int in_channels = 0;
    int out_channels = 0;

    int num_scales() const { return static_cast<int>(rates.size()); }
    int attention_mid_channels() const { return in_channels / 2; }
    void validate() const;
};

enum class AsppFusion { Sum, Concat };

// Parameter initialization. Conv kernels are He-uniform over fan-in, biases
// zero; the attention 1x1x1 conv is zero-initialized so a fresh layer puts
// uniform 1/K attention on every scale.
void init_conv_params(ParamStore& ps, const std::string& prefix,
                      const ConvSpec& spec, Rng& rng, bool zero_weights = false);
void init_attention_params(ParamStore& ps, const std::string& prefix,
                           const AutofocusConfig& cfg, Rng& rng);
void init_autofocus_params(ParamStore& ps, const std::string& prefix,
                           const AutofocusConfig& cfg, Rng& rng);
void init_aspp_params(ParamStore& ps, const std::string& prefix,
                      const AutofocusConfig& cfg, AsppFusion fusion, Rng& rng);
void init_batchnorm_params(ParamStore& ps, const std::string& prefix,
                           int channels);

// Graph builders. Parameters must already exist under the given prefix.
int conv_layer(Graph& g, int x, const std::string& prefix, const ConvSpec& spec);

// Returns the attention maps node: (N,)K x D x H x W, softmax-normalized
// per voxel across the K channel.
int attention_net(Graph& g, int x, const std::string& prefix,
                  const AutofocusConfig& cfg);

struct AutofocusOut {
    int output;
    int attention; // Lambda node
};

// `lambda_override`, when set, is substituted for the attention maps (used
// by the one-hot equivalence tests).
AutofocusOut autofocus_forward(Graph& g, int x, const std::string& prefix,
                               const AutofocusConfig& cfg,
                               const std::optional<Tensor>& lambda_override = {});

// Parallel dilated convolutions with independent weights, fused by
// elementwise sum or channel concatenation + 1^3 projection back to C.
int aspp_forward(Graph& g, int x, const std::string& prefix,
                 const AutofocusConfig& cfg, AsppFusion fusion);

// out = block_out + align(block_in): center-crop the shortcut to the block
// output's spatial extents, then zero-pad missing channels.
int residual_add(Graph& g, int block_out, int block_in);
Tensor residual_add(const Tensor& block_out, const Tensor& block_in);

} // namespace afn
