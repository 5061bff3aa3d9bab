#include "lsda/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "lsda/error.hpp"

namespace lsda {

ConvGeometry ConvGeometry::from(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                                int pad) {
    check_rank(x, 4, "conv2d input");
    check_rank(w, 4, "conv2d weight");
    require(w.dim(2) == w.dim(3), ErrorKind::Argument, "conv2d: kernel must be square");
    require(x.dim(1) == w.dim(1), ErrorKind::Argument,
            "conv2d: input channels " + std::to_string(x.dim(1)) + " do not match weight " +
                shape_str(w.shape()));
    require(b.numel() == static_cast<std::size_t>(w.dim(0)), ErrorKind::Argument,
            "conv2d: bias length does not match output channels");
    require(stride >= 1 && pad >= 0, ErrorKind::Argument, "conv2d: invalid stride/pad");
    ConvGeometry g;
    g.batch = x.dim(0);
    g.in_c = x.dim(1);
    g.in_h = x.dim(2);
    g.in_w = x.dim(3);
    g.out_c = w.dim(0);
    g.kernel = w.dim(2);
    g.stride = stride;
    g.pad = pad;
    require(g.out_h() > 0 && g.out_w() > 0, ErrorKind::Argument, "conv2d: input too small");
    return g;
}

namespace kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// cols has shape [Cin*k*k, Ho*Wo] for one sample.
void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const int ho = g.out_h(), wo = g.out_w(), k = g.kernel;
    const int p_count = ho * wo;
    for (int c = 0; c < g.in_c; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + ((c * k + ky) * k + kx) * p_count;
                const double* plane = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        const bool inside = iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w;
                        row[oy * wo + ox] = inside ? plane[iy * g.in_w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
    const int ho = g.out_h(), wo = g.out_w(), k = g.kernel;
    const int p_count = ho * wo;
    for (int c = 0; c < g.in_c; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + ((c * k + ky) * k + kx) * p_count;
                double* plane = dx + static_cast<std::size_t>(c) * g.in_h * g.in_w;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.in_w) continue;
                        plane[iy * g.in_w + ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const ConvGeometry g = ConvGeometry::from(x, w, b, stride, pad);
    const int ho = g.out_h(), wo = g.out_w();
    const int p_count = ho * wo;
    const int k_count = g.in_c * g.kernel * g.kernel;
    Tensor y({g.batch, g.out_c, ho, wo});
    const std::size_t in_stride = x.slice_size();
    const std::size_t out_stride = static_cast<std::size_t>(g.out_c) * p_count;

#pragma omp parallel
    {
        std::vector<double> cols(static_cast<std::size_t>(k_count) * p_count);
#pragma omp for schedule(static)
        for (int n = 0; n < g.batch; ++n) {
            im2col(x.data() + n * in_stride, g, cols.data());
            MapMat out(y.data() + n * out_stride, g.out_c, p_count);
            out.noalias() = ConstMapMat(w.data(), g.out_c, k_count) * ConstMapMat(cols.data(), k_count, p_count);
            for (int o = 0; o < g.out_c; ++o) out.row(o).array() += b[o];
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad,
                     Tensor* dx, Tensor* dw, Tensor* db) {
    const ConvGeometry g = ConvGeometry::from(x, w, Tensor({w.dim(0)}), stride, pad);
    const int ho = g.out_h(), wo = g.out_w();
    const int p_count = ho * wo;
    const int k_count = g.in_c * g.kernel * g.kernel;
    require(dy.shape() == Shape{g.batch, g.out_c, ho, wo}, ErrorKind::Argument,
            "conv2d backward: gradient shape mismatch");
    const std::size_t in_stride = x.slice_size();
    const std::size_t out_stride = static_cast<std::size_t>(g.out_c) * p_count;
    const std::size_t col_size = static_cast<std::size_t>(k_count) * p_count;

    if (db != nullptr) {
#pragma omp parallel for schedule(static)
        for (int o = 0; o < g.out_c; ++o) {
            double sum = 0.0;
            for (int n = 0; n < g.batch; ++n) {
                const double* row = dy.data() + n * out_stride + static_cast<std::size_t>(o) * p_count;
                for (int p = 0; p < p_count; ++p) sum += row[p];
            }
            (*db)[o] += sum;
        }
    }

    if (dw != nullptr) {
        // One GEMM over the whole batch: dW += dY[o, n*p] * cols[kk, n*p]^T.
        const std::size_t wide = static_cast<std::size_t>(g.batch) * p_count;
        RowMat all_cols(k_count, wide);
        RowMat dy_wide(g.out_c, wide);
#pragma omp parallel for schedule(static)
        for (int n = 0; n < g.batch; ++n) {
            std::vector<double> cols(col_size);
            im2col(x.data() + n * in_stride, g, cols.data());
            all_cols.middleCols(static_cast<Eigen::Index>(n) * p_count, p_count) =
                ConstMapMat(cols.data(), k_count, p_count);
            dy_wide.middleCols(static_cast<Eigen::Index>(n) * p_count, p_count) =
                ConstMapMat(dy.data() + n * out_stride, g.out_c, p_count);
        }
        MapMat(dw->data(), g.out_c, k_count).noalias() += dy_wide * all_cols.transpose();
    }

    if (dx != nullptr) {
#pragma omp parallel
        {
            std::vector<double> dcols(col_size);
#pragma omp for schedule(static)
            for (int n = 0; n < g.batch; ++n) {
                MapMat(dcols.data(), k_count, p_count).noalias() =
                    ConstMapMat(w.data(), g.out_c, k_count).transpose() *
                    ConstMapMat(dy.data() + n * out_stride, g.out_c, p_count);
                col2im_add(dcols.data(), g, dx->data() + n * in_stride);
            }
        }
    }
}

Tensor silu_forward(const Tensor& x) {
    Tensor y = Tensor::zeros_like(x);
    const std::size_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        y[i] = v / (1.0 + std::exp(-v));
    }
    return y;
}

void silu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    const std::size_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        dx[i] += dy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_rank(w, 2, "linear weight");
    const int batch = x.dim(0);
    const int in = static_cast<int>(x.slice_size());
    const int out = w.dim(0);
    require(w.dim(1) == in, ErrorKind::Argument,
            "linear: input features " + std::to_string(in) + " do not match weight " + shape_str(w.shape()));
    require(b.numel() == static_cast<std::size_t>(out), ErrorKind::Argument, "linear: bias length mismatch");
    Tensor y({batch, out});
    for (int n = 0; n < batch; ++n) {
        const double* xr = x.data() + static_cast<std::size_t>(n) * in;
        for (int o = 0; o < out; ++o) {
            const double* wr = w.data() + static_cast<std::size_t>(o) * in;
            double sum = b[o];
            for (int i = 0; i < in; ++i) sum += wr[i] * xr[i];
            y[static_cast<std::size_t>(n) * out + o] = sum;
        }
    }
    return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor* dw,
                     Tensor* db) {
    const int batch = x.dim(0);
    const int in = static_cast<int>(x.slice_size());
    const int out = w.dim(0);
    for (int n = 0; n < batch; ++n) {
        const double* xr = x.data() + static_cast<std::size_t>(n) * in;
        for (int o = 0; o < out; ++o) {
            const double g = dy[static_cast<std::size_t>(n) * out + o];
            if (db != nullptr) (*db)[o] += g;
            const double* wr = w.data() + static_cast<std::size_t>(o) * in;
            if (dw != nullptr) {
                double* dwr = dw->data() + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) dwr[i] += g * xr[i];
            }
            if (dx != nullptr) {
                double* dxr = dx->data() + static_cast<std::size_t>(n) * in;
                for (int i = 0; i < in; ++i) dxr[i] += g * wr[i];
            }
        }
    }
}

Tensor global_avg_pool(const Tensor& x) {
    check_rank(x, 4, "global_avg_pool");
    const int n = x.dim(0), c = x.dim(1);
    const int cells = x.dim(2) * x.dim(3);
    Tensor y({n, c});
    for (int i = 0; i < n * c; ++i) {
        const double* plane = x.data() + static_cast<std::size_t>(i) * cells;
        double sum = 0.0;
        for (int p = 0; p < cells; ++p) sum += plane[p];
        y[i] = sum / cells;
    }
    return y;
}

}  // namespace kernels

namespace reference {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const ConvGeometry g = ConvGeometry::from(x, w, b, stride, pad);
    Tensor y({g.batch, g.out_c, g.out_h(), g.out_w()});
    for (int n = 0; n < g.batch; ++n)
        for (int o = 0; o < g.out_c; ++o)
            for (int oy = 0; oy < g.out_h(); ++oy)
                for (int ox = 0; ox < g.out_w(); ++ox) {
                    double sum = b[o];
                    for (int c = 0; c < g.in_c; ++c)
                        for (int ky = 0; ky < g.kernel; ++ky)
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                sum += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
                            }
                    y.at(n, o, oy, ox) = sum;
                }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad,
                     Tensor* dx, Tensor* dw, Tensor* db) {
    const ConvGeometry g = ConvGeometry::from(x, w, Tensor({w.dim(0)}), stride, pad);
    for (int n = 0; n < g.batch; ++n)
        for (int o = 0; o < g.out_c; ++o)
            for (int oy = 0; oy < g.out_h(); ++oy)
                for (int ox = 0; ox < g.out_w(); ++ox) {
                    const double gy = dy.at(n, o, oy, ox);
                    if (db != nullptr) (*db)[o] += gy;
                    for (int c = 0; c < g.in_c; ++c)
                        for (int ky = 0; ky < g.kernel; ++ky)
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                if (dw != nullptr) dw->at(o, c, ky, kx) += gy * x.at(n, c, iy, ix);
                                if (dx != nullptr) dx->at(n, c, iy, ix) += gy * w.at(o, c, ky, kx);
                            }
                }
}

}  // namespace reference

}  // namespace lsda
