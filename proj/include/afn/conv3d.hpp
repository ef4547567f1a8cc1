#pragma once

#include "afn/tensor.hpp"

#include <array>

namespace afn {

enum class Padding { Same, Valid };

// Description of one 3D (optionally dilated) convolution. Same padding with
// a 3^3 kernel pads exactly `dilation` voxels per side and preserves spatial
// extents; valid padding shrinks each axis by dilation*(kernel-1).
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    std::array<int, 3> kernel{3, 3, 3};
    int dilation = 1;
    std::array<int, 3> stride{1, 1, 1};
    Padding padding = Padding::Same;
    bool bias = true;

    void validate() const;
    std::array<int, 3> pad_amounts() const; // per-side pad in same mode
};

// Output shape for an input of rank 4 (C,D,H,W) or 5 (N,C,D,H,W).
Shape conv3d_out_shape(const Shape& in_shape, const ConvSpec& spec);

// out[c,p] = bias[c] + sum_{c',k} kernel[c,c',k] * in[c', p*stride + r*(k - center)]
// kernel shape (C, C', kd, kh, kw); bias shape (C) or null.
Tensor conv3d_forward(const Tensor& in, const Tensor& kernel, const Tensor* bias,
                      const ConvSpec& spec);

// Gradients of the convolution; any of the outputs may be null to skip it.
void conv3d_backward(const Tensor& in, const Tensor& kernel, const ConvSpec& spec,
                     const Tensor& dout, Tensor* din, Tensor* dkernel,
                     Tensor* dbias);

} // namespace afn
