#include "iadccn/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "iadccn/error.hpp"

namespace iadccn::ops {

namespace {

std::atomic<ConvAlgorithm> g_conv_algorithm{ConvAlgorithm::im2col};
std::atomic<int> g_num_threads{1};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_4d(const Tensor& t, const char* op, const char* name) {
    if (t.ndim() != 4) {
        throw DimensionError(std::string(op) + ": " + name + " must be 4-d (N,C,H,W), got " +
                             shape_string(t.shape()));
    }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw DimensionError(std::string(op) + ": mixed dtypes " + to_string(a.dtype()) + " and " +
                             to_string(b.dtype()));
    }
}

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;

    std::size_t patch() const { return cin * k * k; }
    std::size_t out_plane() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias,
                           std::size_t stride, std::size_t pad) {
    require_4d(input, "conv2d", "input");
    require_4d(weight, "conv2d", "weight");
    if (bias.ndim() != 1) {
        throw DimensionError("conv2d: bias must be 1-d, got " + shape_string(bias.shape()));
    }
    require_same_dtype(input, weight, "conv2d");
    require_same_dtype(input, bias, "conv2d");
    ConvGeometry g{};
    g.n = input.dim(0);
    g.cin = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.cout = weight.dim(0);
    g.k = weight.dim(2);
    g.stride = stride;
    g.pad = pad;
    if (weight.dim(1) != g.cin) {
        throw DimensionError("conv2d: channel axis (1) mismatch, input has " + std::to_string(g.cin) +
                             " channels but weight expects " + std::to_string(weight.dim(1)));
    }
    if (weight.dim(3) != g.k) {
        throw DimensionError("conv2d: kernel axes (2,3) must be square, got " +
                             shape_string(weight.shape()));
    }
    if (bias.dim(0) != g.cout) {
        throw DimensionError("conv2d: bias axis (0) has " + std::to_string(bias.dim(0)) +
                             " entries for " + std::to_string(g.cout) + " output channels");
    }
    if (g.k % 2 == 0) {
        throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(g.k));
    }
    if (stride == 0) {
        throw ConfigError("conv2d: stride must be positive");
    }
    auto extent = [&](std::size_t in, const char* axis) {
        const std::size_t padded = in + 2 * pad;
        if (padded < g.k || (padded - g.k) % stride != 0) {
            throw ConfigError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) +
                              " with pad " + std::to_string(pad) + ", kernel " +
                              std::to_string(g.k) + ", stride " + std::to_string(stride) +
                              " gives a non-integer output extent");
        }
        return (padded - g.k) / stride + 1;
    };
    g.ho = extent(g.h, "height");
    g.wo = extent(g.w, "width");
    return g;
}

// col is [cin*k*k, ho*wo], row-major.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.cin; ++c) {
        const T* plane = x + c * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                T* row = col + ((c * g.k + ki) * g.k + kj) * g.out_plane();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
                    T* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wo, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                                      ? T(0)
                                      : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const T* col, const ConvGeometry& g, T* dx) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.cin; ++c) {
        T* plane = dx + c * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const T* row = col + ((c * g.k + ki) * g.k + kj) * g.out_plane();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        continue;
                    }
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    const T* src = row + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
                            dst[static_cast<std::size_t>(ix)] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

template <typename T>
void conv_forward_gemm(const T* x, const T* w, const T* b, const ConvGeometry& g, T* y) {
    using Map = Eigen::Map<RowMatrix<T>>;
    using ConstMap = Eigen::Map<const RowMatrix<T>>;
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto plane = static_cast<Eigen::Index>(g.out_plane());
    const auto cout = static_cast<Eigen::Index>(g.cout);
    ConstMap weight(w, cout, patch);
    std::vector<T> col(is_pointwise(g) ? 0 : g.patch() * g.out_plane());
    for (std::size_t n = 0; n < g.n; ++n) {
        const T* xn = x + n * g.cin * g.h * g.w;
        const T* cols = xn;
        if (!is_pointwise(g)) {
            im2col(xn, g, col.data());
            cols = col.data();
        }
        Map out(y + n * g.cout * g.out_plane(), cout, plane);
        out.noalias() = weight * ConstMap(cols, patch, plane);
        for (Eigen::Index c = 0; c < cout; ++c) {
            out.row(c).array() += b[c];
        }
    }
}

template <typename T>
void conv_backward_gemm(const T* x, const T* w, const T* gy, const ConvGeometry& g, T* gx, T* gw,
                        T* gb) {
    using Map = Eigen::Map<RowMatrix<T>>;
    using ConstMap = Eigen::Map<const RowMatrix<T>>;
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto plane = static_cast<Eigen::Index>(g.out_plane());
    const auto cout = static_cast<Eigen::Index>(g.cout);
    ConstMap weight(w, cout, patch);
    std::vector<T> col(is_pointwise(g) ? 0 : g.patch() * g.out_plane());
    std::vector<T> dcol(g.patch() * g.out_plane());
    for (std::size_t n = 0; n < g.n; ++n) {
        ConstMap dy(gy + n * g.cout * g.out_plane(), cout, plane);
        if (gb) {
            for (Eigen::Index c = 0; c < cout; ++c) {
                gb[c] += dy.row(c).sum();
            }
        }
        const T* xn = x + n * g.cin * g.h * g.w;
        if (gw) {
            const T* cols = xn;
            if (!is_pointwise(g)) {
                im2col(xn, g, col.data());
                cols = col.data();
            }
            Map(gw, cout, patch).noalias() += dy * ConstMap(cols, patch, plane).transpose();
        }
        if (gx) {
            T* gxn = gx + n * g.cin * g.h * g.w;
            if (is_pointwise(g)) {
                Map(gxn, patch, plane).noalias() += weight.transpose() * dy;
            } else {
                Map(dcol.data(), patch, plane).noalias() = weight.transpose() * dy;
                col2im_accumulate(dcol.data(), g, gxn);
            }
        }
    }
}

template <typename T>
void conv_forward_direct(const T* x, const T* w, const T* b, const ConvGeometry& g, T* y) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.cout; ++co) {
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
                for (std::size_t ox = 0; ox < g.wo; ++ox) {
                    T acc = b[co];
                    for (std::size_t ci = 0; ci < g.cin; ++ci) {
                        for (std::size_t ki = 0; ki < g.k; ++ki) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                                continue;
                            }
                            for (std::size_t kj = 0; kj < g.k; ++kj) {
                                const auto ix =
                                    static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) {
                                    continue;
                                }
                                acc += x[((n * g.cin + ci) * g.h + static_cast<std::size_t>(iy)) *
                                             g.w +
                                         static_cast<std::size_t>(ix)] *
                                       w[((co * g.cin + ci) * g.k + ki) * g.k + kj];
                            }
                        }
                    }
                    y[((n * g.cout + co) * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv_backward_direct(const T* x, const T* w, const T* gy, const ConvGeometry& g, T* gx, T* gw,
                          T* gb) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.cout; ++co) {
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
                for (std::size_t ox = 0; ox < g.wo; ++ox) {
                    const T d = gy[((n * g.cout + co) * g.ho + oy) * g.wo + ox];
                    if (gb) {
                        gb[co] += d;
                    }
                    for (std::size_t ci = 0; ci < g.cin; ++ci) {
                        for (std::size_t ki = 0; ki < g.k; ++ki) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                                continue;
                            }
                            for (std::size_t kj = 0; kj < g.k; ++kj) {
                                const auto ix =
                                    static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) {
                                    continue;
                                }
                                const std::size_t xi =
                                    ((n * g.cin + ci) * g.h + static_cast<std::size_t>(iy)) * g.w +
                                    static_cast<std::size_t>(ix);
                                const std::size_t wi = ((co * g.cin + ci) * g.k + ki) * g.k + kj;
                                if (gw) {
                                    gw[wi] += d * x[xi];
                                }
                                if (gx) {
                                    gx[xi] += d * w[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
T* raw(Storage* s) {
    return s ? s->view<T>().data() : nullptr;
}

}  // namespace

ConvAlgorithm conv_algorithm() noexcept { return g_conv_algorithm.load(); }
void set_conv_algorithm(ConvAlgorithm algorithm) noexcept { g_conv_algorithm.store(algorithm); }

void set_num_threads(int threads) {
    if (threads < 1) {
        throw ConfigError("thread count must be at least 1");
    }
    g_num_threads.store(threads);
    Eigen::setNbThreads(threads);
}

int num_threads() noexcept { return g_num_threads.load(); }

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
    const ConvGeometry g = conv_geometry(input, weight, bias, stride, pad);
    const ConvAlgorithm algorithm = conv_algorithm();
    const Shape out_shape{g.n, g.cout, g.ho, g.wo};
    Storage out(input.dtype(), shape_numel(out_shape));
    dispatch(input.dtype(), [&]<typename T>(std::type_identity<T>) {
        const T* x = input.data<T>().data();
        const T* w = weight.data<T>().data();
        const T* b = bias.data<T>().data();
        T* y = out.view<T>().data();
        if (algorithm == ConvAlgorithm::direct) {
            conv_forward_direct(x, w, b, g, y);
        } else {
            conv_forward_gemm(x, w, b, g, y);
        }
    });
    return make_result(out_shape, std::move(out), {input, weight, bias},
                       [input, weight, g, algorithm](const Storage& grad_out,
                                                     std::span<Storage* const> grads) {
                           dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                               const T* x = input.data<T>().data();
                               const T* w = weight.data<T>().data();
                               const T* gy = grad_out.view<T>().data();
                               if (algorithm == ConvAlgorithm::direct) {
                                   conv_backward_direct(x, w, gy, g, raw<T>(grads[0]),
                                                        raw<T>(grads[1]), raw<T>(grads[2]));
                               } else {
                                   conv_backward_gemm(x, w, gy, g, raw<T>(grads[0]),
                                                      raw<T>(grads[1]), raw<T>(grads[2]));
                               }
                           });
                       });
}

Tensor relu(const Tensor& x) {
    Storage out(x.dtype(), x.numel());
    dispatch(x.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto in = x.data<T>();
        auto o = out.view<T>();
        for (std::size_t i = 0; i < in.size(); ++i) {
            o[i] = in[i] > T(0) ? in[i] : T(0);
        }
    });
    return make_result(x.shape(), std::move(out), {x},
                       [x](const Storage& grad_out, std::span<Storage* const> grads) {
                           if (!grads[0]) {
                               return;
                           }
                           dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                               auto in = x.data<T>();
                               auto gy = grad_out.view<T>();
                               auto gx = grads[0]->view<T>();
                               for (std::size_t i = 0; i < in.size(); ++i) {
                                   if (in[i] > T(0)) {
                                       gx[i] += gy[i];
                                   }
                               }
                           });
                       });
}

namespace {

template <typename T>
T stable_sigmoid(T v) {
    if (v >= T(0)) {
        return T(1) / (T(1) + std::exp(-v));
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
    Storage out(x.dtype(), x.numel());
    dispatch(x.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto in = x.data<T>();
        auto o = out.view<T>();
        for (std::size_t i = 0; i < in.size(); ++i) {
            o[i] = stable_sigmoid(in[i]);
        }
    });
    return make_result(x.shape(), std::move(out), {x},
                       [x](const Storage& grad_out, std::span<Storage* const> grads) {
                           if (!grads[0]) {
                               return;
                           }
                           dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                               auto in = x.data<T>();
                               auto gy = grad_out.view<T>();
                               auto gx = grads[0]->view<T>();
                               for (std::size_t i = 0; i < in.size(); ++i) {
                                   const T s = stable_sigmoid(in[i]);
                                   gx[i] += gy[i] * s * (T(1) - s);
                               }
                           });
                       });
}

Tensor maxpool2d(const Tensor& x) {
    require_4d(x, "maxpool2d", "input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("maxpool2d: extents must be even, got " + shape_string(x.shape()) +
                          " (pad the input first)");
    }
    const std::size_t ho = h / 2, wo = w / 2;
    const Shape out_shape{n, c, ho, wo};
    Storage out(x.dtype(), shape_numel(out_shape));
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    dispatch(x.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto in = x.data<T>();
        auto o = out.view<T>();
        for (std::size_t p = 0; p < n * c; ++p) {
            const std::size_t base = p * h * w;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const std::size_t top = base + (2 * oy) * w + 2 * ox;
                    const std::size_t candidates[4] = {top, top + 1, top + w, top + w + 1};
                    std::size_t best = candidates[0];
                    for (int k = 1; k < 4; ++k) {
                        if (in[candidates[k]] > in[best]) {
                            best = candidates[k];
                        }
                    }
                    const std::size_t oi = (p * ho + oy) * wo + ox;
                    o[oi] = in[best];
                    (*argmax)[oi] = best;
                }
            }
        }
    });
    return make_result(out_shape, std::move(out), {x},
                       [argmax](const Storage& grad_out, std::span<Storage* const> grads) {
                           if (!grads[0]) {
                               return;
                           }
                           dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                               auto gy = grad_out.view<T>();
                               auto gx = grads[0]->view<T>();
                               for (std::size_t i = 0; i < gy.size(); ++i) {
                                   gx[(*argmax)[i]] += gy[i];
                               }
                           });
                       });
}

namespace {

struct LerpAxis {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

LerpAxis lerp_axis(std::size_t in, std::size_t factor) {
    LerpAxis a;
    const std::size_t out = in * factor;
    a.lo.resize(out);
    a.hi.resize(out);
    a.frac.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        src = std::max(src, 0.0);
        auto lo = static_cast<std::size_t>(src);
        if (lo >= in - 1) {
            lo = in - 1;
            src = static_cast<double>(lo);
        }
        a.lo[o] = lo;
        a.hi[o] = std::min(lo + 1, in - 1);
        a.frac[o] = src - static_cast<double>(lo);
    }
    return a;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t factor) {
    if (factor < 1) {
        throw ConfigError("upsample_bilinear: factor must be >= 1");
    }
    require_4d(x, "upsample_bilinear", "input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = h * factor, wo = w * factor;
    const Shape out_shape{n, c, ho, wo};
    auto rows = std::make_shared<LerpAxis>(lerp_axis(h, factor));
    auto cols = std::make_shared<LerpAxis>(lerp_axis(w, factor));
    Storage out(x.dtype(), shape_numel(out_shape));
    dispatch(x.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto in = x.data<T>();
        auto o = out.view<T>();
        for (std::size_t p = 0; p < n * c; ++p) {
            const T* src = in.data() + p * h * w;
            T* dst = o.data() + p * ho * wo;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                const T* r0 = src + rows->lo[oy] * w;
                const T* r1 = src + rows->hi[oy] * w;
                const auto ly = static_cast<T>(rows->frac[oy]);
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const std::size_t c0 = cols->lo[ox], c1 = cols->hi[ox];
                    const auto lx = static_cast<T>(cols->frac[ox]);
                    // Difference form keeps constant maps exactly constant.
                    const T top = r0[c0] + lx * (r0[c1] - r0[c0]);
                    const T bottom = r1[c0] + lx * (r1[c1] - r1[c0]);
                    dst[oy * wo + ox] = top + ly * (bottom - top);
                }
            }
        }
    });
    return make_result(
        out_shape, std::move(out), {x},
        [rows, cols, n, c, h, w, ho, wo](const Storage& grad_out, std::span<Storage* const> grads) {
            if (!grads[0]) {
                return;
            }
            dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                auto gy = grad_out.view<T>();
                auto gx = grads[0]->view<T>();
                for (std::size_t p = 0; p < n * c; ++p) {
                    const T* g = gy.data() + p * ho * wo;
                    T* d = gx.data() + p * h * w;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const std::size_t y0 = rows->lo[oy], y1 = rows->hi[oy];
                        const auto ly = static_cast<T>(rows->frac[oy]);
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const std::size_t x0 = cols->lo[ox], x1 = cols->hi[ox];
                            const auto lx = static_cast<T>(cols->frac[ox]);
                            const T v = g[oy * wo + ox];
                            d[y0 * w + x0] += v * (T(1) - lx) * (T(1) - ly);
                            d[y0 * w + x1] += v * lx * (T(1) - ly);
                            d[y1 * w + x0] += v * (T(1) - lx) * ly;
                            d[y1 * w + x1] += v * lx * ly;
                        }
                    }
                }
            });
        });
}

Tensor elementwise(const Tensor& a, const Tensor& b, Binary kind) {
    require_same_dtype(a, b, "elementwise");
    const bool same = a.shape() == b.shape();
    bool broadcast = false;
    if (!same) {
        broadcast = a.ndim() == 4 && b.ndim() == 4 && b.dim(1) == 1 && a.dim(0) == b.dim(0) &&
                    a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3);
        if (!broadcast) {
            throw DimensionError("elementwise: incompatible shapes " + shape_string(a.shape()) +
                                 " and " + shape_string(b.shape()));
        }
    }
    // Index of b for flat index i of a.
    const std::size_t channels = broadcast ? a.dim(1) : 1;
    const std::size_t plane = broadcast ? a.dim(2) * a.dim(3) : a.numel();
    auto b_index = [=](std::size_t i) {
        if (!broadcast) {
            return i;
        }
        return (i / (channels * plane)) * plane + i % plane;
    };
    Storage out(a.dtype(), a.numel());
    dispatch(a.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto x = a.data<T>();
        auto y = b.data<T>();
        auto o = out.view<T>();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T rhs = y[b_index(i)];
            switch (kind) {
                case Binary::add: o[i] = x[i] + rhs; break;
                case Binary::sub: o[i] = x[i] - rhs; break;
                case Binary::mul: o[i] = x[i] * rhs; break;
            }
        }
    });
    return make_result(
        a.shape(), std::move(out), {a, b},
        [a, b, kind, b_index](const Storage& grad_out, std::span<Storage* const> grads) {
            dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                auto g = grad_out.view<T>();
                auto x = a.data<T>();
                auto y = b.data<T>();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const std::size_t j = b_index(i);
                    if (grads[0]) {
                        grads[0]->view<T>()[i] += kind == Binary::mul ? g[i] * y[j] : g[i];
                    }
                    if (grads[1]) {
                        T contribution = g[i];
                        if (kind == Binary::sub) {
                            contribution = -g[i];
                        } else if (kind == Binary::mul) {
                            contribution = g[i] * x[i];
                        }
                        grads[1]->view<T>()[j] += contribution;
                    }
                }
            });
        });
}

Tensor scale(const Tensor& x, double factor) {
    Storage out(x.dtype(), x.numel());
    dispatch(x.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto in = x.data<T>();
        auto o = out.view<T>();
        const auto f = static_cast<T>(factor);
        for (std::size_t i = 0; i < in.size(); ++i) {
            o[i] = in[i] * f;
        }
    });
    return make_result(x.shape(), std::move(out), {x},
                       [factor](const Storage& grad_out, std::span<Storage* const> grads) {
                           if (!grads[0]) {
                               return;
                           }
                           dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                               auto gy = grad_out.view<T>();
                               auto gx = grads[0]->view<T>();
                               const auto f = static_cast<T>(factor);
                               for (std::size_t i = 0; i < gy.size(); ++i) {
                                   gx[i] += gy[i] * f;
                               }
                           });
                       });
}

namespace {

Tensor reduce(const Tensor& x, bool mean) {
    const double count = static_cast<double>(x.numel());
    Storage out(x.dtype(), 1);
    dispatch(x.dtype(), [&]<typename T>(std::type_identity<T>) {
        T acc = 0;
        for (const T v : x.data<T>()) {
            acc += v;
        }
        out.view<T>()[0] = mean ? acc / static_cast<T>(count) : acc;
    });
    return make_result({1}, std::move(out), {x},
                       [mean, count](const Storage& grad_out, std::span<Storage* const> grads) {
                           if (!grads[0]) {
                               return;
                           }
                           dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                               T g = grad_out.view<T>()[0];
                               if (mean) {
                                   g /= static_cast<T>(count);
                               }
                               for (T& v : grads[0]->view<T>()) {
                                   v += g;
                               }
                           });
                       });
}

}  // namespace

Tensor reduce_sum(const Tensor& x) { return reduce(x, false); }
Tensor reduce_mean(const Tensor& x) { return reduce(x, true); }

namespace {

// Copies the overlapping top-left region of src [N,C,h1,w1] into dst [N,C,h2,w2]
// (or accumulates when add is set).
template <typename T>
void copy_window(const T* src, std::size_t h1, std::size_t w1, T* dst, std::size_t h2,
                 std::size_t w2, std::size_t planes, bool add) {
    const std::size_t rows = std::min(h1, h2), cols = std::min(w1, w2);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < rows; ++y) {
            const T* s = src + (p * h1 + y) * w1;
            T* d = dst + (p * h2 + y) * w2;
            for (std::size_t x = 0; x < cols; ++x) {
                d[x] = add ? d[x] + s[x] : s[x];
            }
        }
    }
}

Tensor resize_window(const Tensor& x, std::size_t height, std::size_t width) {
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const Shape out_shape{x.dim(0), x.dim(1), height, width};
    Storage out(x.dtype(), shape_numel(out_shape));
    dispatch(x.dtype(), [&]<typename T>(std::type_identity<T>) {
        copy_window(x.data<T>().data(), h, w, out.view<T>().data(), height, width, planes, false);
    });
    return make_result(out_shape, std::move(out), {x},
                       [planes, h, w, height, width](const Storage& grad_out,
                                                     std::span<Storage* const> grads) {
                           if (!grads[0]) {
                               return;
                           }
                           dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                               copy_window(grad_out.view<T>().data(), height, width,
                                           grads[0]->view<T>().data(), h, w, planes, true);
                           });
                       });
}

}  // namespace

Tensor pad_bottom_right(const Tensor& x, std::size_t pad_h, std::size_t pad_w) {
    require_4d(x, "pad_bottom_right", "input");
    if (pad_h == 0 && pad_w == 0) {
        return x;
    }
    return resize_window(x, x.dim(2) + pad_h, x.dim(3) + pad_w);
}

Tensor crop_top_left(const Tensor& x, std::size_t height, std::size_t width) {
    require_4d(x, "crop_top_left", "input");
    if (height == 0 || width == 0 || height > x.dim(2) || width > x.dim(3)) {
        throw DimensionError("crop_top_left: window " + std::to_string(height) + "x" +
                             std::to_string(width) + " does not fit " + shape_string(x.shape()));
    }
    if (height == x.dim(2) && width == x.dim(3)) {
        return x;
    }
    return resize_window(x, height, width);
}

}  // namespace iadccn::ops
