#pragma once

#include <span>

#include "lsda/tensor.hpp"

// Dense numeric kernels used by the autograd ops. The `kernels` namespace
// holds the OpenMP-parallel implementations; `reference` holds direct serial
// loops kept as test oracles and as the baseline in the benchmark target.
// Parallel kernels partition work so that every output element is reduced in
// a fixed order: results are bitwise independent of the thread count.

namespace lsda {

struct ConvGeometry {
    int batch = 0;
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0;
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    int out_h() const noexcept { return (in_h + 2 * pad - kernel) / stride + 1; }
    int out_w() const noexcept { return (in_w + 2 * pad - kernel) / stride + 1; }

    // Validates x [N,Cin,H,W], w [Cout,Cin,k,k], b [Cout] and returns the geometry.
    static ConvGeometry from(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
};

namespace kernels {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Accumulates into whichever of dx/dw/db is non-null.
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad,
                     Tensor* dx, Tensor* dw, Tensor* db);

Tensor silu_forward(const Tensor& x);
void silu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

// [N, ...] -> [N, out] with weight [out, in] where in = product of trailing dims.
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor* dw,
                     Tensor* db);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

}  // namespace kernels

namespace reference {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad,
                     Tensor* dx, Tensor* dw, Tensor* db);

}  // namespace reference

}  // namespace lsda
