#pragma once

#include <cstddef>

#include "iadccn/tensor.hpp"

/// Differentiable operations over N x C x H x W tensors.
namespace iadccn::ops {

enum class ConvAlgorithm {
    direct,  ///< nested-loop cross-correlation
    im2col,  ///< column unfolding + GEMM; the default
};

ConvAlgorithm conv_algorithm() noexcept;
void set_conv_algorithm(ConvAlgorithm algorithm) noexcept;

/// Caps op-internal parallelism. 1 gives bitwise-deterministic results.
void set_num_threads(int threads);
int num_threads() noexcept;

/// Cross-correlation with per-channel bias.
/// input [N,Cin,H,W], weight [Cout,Cin,k,k] with k odd, bias [Cout].
/// Output extent is (H + 2*pad - k) / stride + 1 and must divide exactly.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t pad = 0);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// 2x2 window, stride 2. Ties route the gradient to the first element in
/// row-major window order.
Tensor maxpool2d(const Tensor& x);

/// Bilinear resize by an integer factor, half-pixel centers, edge clamped.
Tensor upsample_bilinear(const Tensor& x, std::size_t factor);

enum class Binary { add, sub, mul };

/// a (op) b with equal shapes, or b of shape [N,1,H,W] broadcast across the
/// channels of a [N,C,H,W].
Tensor elementwise(const Tensor& a, const Tensor& b, Binary kind);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Binary::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Binary::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Binary::mul); }

Tensor scale(const Tensor& x, double factor);

/// Scalar results have shape [1].
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);

/// Zero padding on the bottom and right edges of a 4-d tensor.
Tensor pad_bottom_right(const Tensor& x, std::size_t pad_h, std::size_t pad_w);

/// Keeps the top-left height x width window of a 4-d tensor.
Tensor crop_top_left(const Tensor& x, std::size_t height, std::size_t width);

}  // namespace iadccn::ops
