#pragma once

#include <cstddef>
#include <vector>

#include "deblur/tensor.hpp"

// 2D convolution kernels (cross-correlation orientation, zero padding).
// Two interchangeable paths: a naive quintuple loop kept as a reference,
// and an im2col lowering used by default. Both accumulate in the same
// (c, kh, kw) order. All loops either run serially or give every output
// element a single owning thread, so results do not depend on thread count.

namespace deblur {

enum class ConvAlgo { naive, im2col };

inline ConvAlgo& conv_default_algo() {
    static ConvAlgo algo = ConvAlgo::im2col;
    return algo;
}

struct Conv2dDims {
    int n, c, h, w;      // input
    int f, kh, kw;       // filter
    int stride, pad;
    int oh, ow;          // output
};

template <typename T>
inline Conv2dDims conv2d_dims(const TensorT<T>& x, const TensorT<T>& w, int stride, int pad) {
    if (x.ndim() != 4) throw ShapeError("conv2d: input must be 4-D, got " + x.shape_str());
    if (w.ndim() != 4) throw ShapeError("conv2d: weight must be 4-D, got " + w.shape_str());
    Conv2dDims d{};
    d.n = x.dim(0); d.c = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
    d.f = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
    d.stride = stride; d.pad = pad;
    if (w.dim(1) != d.c)
        throw ShapeError("conv2d: input channels " + std::to_string(d.c) +
                         " != weight channels " + std::to_string(w.dim(1)));
    if (d.kh % 2 == 0 || d.kw % 2 == 0)
        throw ConfigError("conv2d: kernel extents must be odd, got " +
                          std::to_string(d.kh) + "x" + std::to_string(d.kw));
    if (stride < 1) throw ConfigError("conv2d: stride must be positive");
    if (pad < 0) throw ConfigError("conv2d: padding must be non-negative");
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
        throw ShapeError("conv2d: kernel larger than padded input");
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

namespace detail {

// col is (C*Kh*Kw) x (OH*OW) for one image.
template <typename T>
void im2col(const T* im, const Conv2dDims& d, T* col) {
    const int X = d.oh * d.ow;
    for (int c = 0; c < d.c; ++c) {
        const T* plane = im + std::size_t(c) * d.h * d.w;
        for (int kh = 0; kh < d.kh; ++kh) {
            for (int kw = 0; kw < d.kw; ++kw) {
                T* row = col + (std::size_t(c) * d.kh * d.kw + kh * d.kw + kw) * X;
                for (int oh = 0; oh < d.oh; ++oh) {
                    const int ih = oh * d.stride - d.pad + kh;
                    T* out = row + std::size_t(oh) * d.ow;
                    if (ih < 0 || ih >= d.h) {
                        for (int ow = 0; ow < d.ow; ++ow) out[ow] = T(0);
                        continue;
                    }
                    const T* in_row = plane + std::size_t(ih) * d.w;
                    int iw = -d.pad + kw;
                    for (int ow = 0; ow < d.ow; ++ow, iw += d.stride)
                        out[ow] = (iw >= 0 && iw < d.w) ? in_row[iw] : T(0);
                }
            }
        }
    }
}

// scatter-add of a col buffer back onto an image; parallel over channels
// (each channel owns its K rows, so no write races).
template <typename T>
void col2im_add(const T* col, const Conv2dDims& d, T* im) {
    const int X = d.oh * d.ow;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < d.c; ++c) {
        T* plane = im + std::size_t(c) * d.h * d.w;
        for (int kh = 0; kh < d.kh; ++kh) {
            for (int kw = 0; kw < d.kw; ++kw) {
                const T* row = col + (std::size_t(c) * d.kh * d.kw + kh * d.kw + kw) * X;
                for (int oh = 0; oh < d.oh; ++oh) {
                    const int ih = oh * d.stride - d.pad + kh;
                    if (ih < 0 || ih >= d.h) continue;
                    T* in_row = plane + std::size_t(ih) * d.w;
                    int iw = -d.pad + kw;
                    const T* src = row + std::size_t(oh) * d.ow;
                    for (int ow = 0; ow < d.ow; ++ow, iw += d.stride)
                        if (iw >= 0 && iw < d.w) in_row[iw] += src[ow];
                }
            }
        }
    }
}

} // namespace detail

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                          int stride, int pad, ConvAlgo algo) {
    const Conv2dDims d = conv2d_dims(x, w, stride, pad);
    if (b.numel() != std::size_t(d.f))
        throw ShapeError("conv2d: bias length " + std::to_string(b.numel()) +
                         " != filter count " + std::to_string(d.f));
    TensorT<T> y({d.n, d.f, d.oh, d.ow});

    if (algo == ConvAlgo::naive) {
        for (int n = 0; n < d.n; ++n)
            for (int f = 0; f < d.f; ++f)
                for (int oh = 0; oh < d.oh; ++oh)
                    for (int ow = 0; ow < d.ow; ++ow) {
                        T acc = b.data[f];
                        for (int c = 0; c < d.c; ++c)
                            for (int kh = 0; kh < d.kh; ++kh) {
                                const int ih = oh * d.stride - d.pad + kh;
                                if (ih < 0 || ih >= d.h) continue;
                                for (int kw = 0; kw < d.kw; ++kw) {
                                    const int iw = ow * d.stride - d.pad + kw;
                                    if (iw < 0 || iw >= d.w) continue;
                                    acc += x.at4(n, c, ih, iw) * w.at4(f, c, kh, kw);
                                }
                            }
                        y.at4(n, f, oh, ow) = acc;
                    }
        return y;
    }

    const int K = d.c * d.kh * d.kw;
    const int X = d.oh * d.ow;
    std::vector<T> col(std::size_t(K) * X);
    for (int n = 0; n < d.n; ++n) {
        detail::im2col(x.ptr() + std::size_t(n) * d.c * d.h * d.w, d, col.data());
        T* yn = y.ptr() + std::size_t(n) * d.f * X;
#pragma omp parallel for schedule(static)
        for (int f = 0; f < d.f; ++f) {
            T* yrow = yn + std::size_t(f) * X;
            for (int xi = 0; xi < X; ++xi) yrow[xi] = b.data[f];
            const T* wrow = w.ptr() + std::size_t(f) * K;
            for (int k = 0; k < K; ++k) {
                const T wv = wrow[k];
                const T* crow = col.data() + std::size_t(k) * X;
                for (int xi = 0; xi < X; ++xi) yrow[xi] += wv * crow[xi];
            }
        }
    }
    return y;
}

// Accumulates into whichever of gx / gw / gb is non-null.
template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gy,
                     int stride, int pad, ConvAlgo algo,
                     TensorT<T>* gx, TensorT<T>* gw, TensorT<T>* gb) {
    const Conv2dDims d = conv2d_dims(x, w, stride, pad);
    const int X = d.oh * d.ow;

    if (gb) {
        for (int n = 0; n < d.n; ++n)
            for (int f = 0; f < d.f; ++f) {
                const T* g = gy.ptr() + (std::size_t(n) * d.f + f) * X;
                T acc = T(0);
                for (int xi = 0; xi < X; ++xi) acc += g[xi];
                gb->data[f] += acc;
            }
    }
    if (!gx && !gw) return;

    if (algo == ConvAlgo::naive) {
        for (int n = 0; n < d.n; ++n)
            for (int f = 0; f < d.f; ++f)
                for (int oh = 0; oh < d.oh; ++oh)
                    for (int ow = 0; ow < d.ow; ++ow) {
                        const T g = gy.at4(n, f, oh, ow);
                        for (int c = 0; c < d.c; ++c)
                            for (int kh = 0; kh < d.kh; ++kh) {
                                const int ih = oh * d.stride - d.pad + kh;
                                if (ih < 0 || ih >= d.h) continue;
                                for (int kw = 0; kw < d.kw; ++kw) {
                                    const int iw = ow * d.stride - d.pad + kw;
                                    if (iw < 0 || iw >= d.w) continue;
                                    if (gx) gx->at4(n, c, ih, iw) += g * w.at4(f, c, kh, kw);
                                    if (gw) gw->at4(f, c, kh, kw) += g * x.at4(n, c, ih, iw);
                                }
                            }
                    }
        return;
    }

    const int K = d.c * d.kh * d.kw;
    std::vector<T> col(std::size_t(K) * X);
    std::vector<T> gcol(gx ? std::size_t(K) * X : 0);
    for (int n = 0; n < d.n; ++n) {
        if (gw) detail::im2col(x.ptr() + std::size_t(n) * d.c * d.h * d.w, d, col.data());
        const T* gyn = gy.ptr() + std::size_t(n) * d.f * X;
        if (gw) {
#pragma omp parallel for schedule(static)
            for (int f = 0; f < d.f; ++f) {
                const T* grow = gyn + std::size_t(f) * X;
                T* gwrow = gw->ptr() + std::size_t(f) * K;
                for (int k = 0; k < K; ++k) {
                    const T* crow = col.data() + std::size_t(k) * X;
                    T acc = T(0);
                    for (int xi = 0; xi < X; ++xi) acc += grow[xi] * crow[xi];
                    gwrow[k] += acc;
                }
            }
        }
        if (gx) {
#pragma omp parallel for schedule(static)
            for (int k = 0; k < K; ++k) {
                T* crow = gcol.data() + std::size_t(k) * X;
                for (int xi = 0; xi < X; ++xi) crow[xi] = T(0);
                for (int f = 0; f < d.f; ++f) {
                    const T wv = w.ptr()[std::size_t(f) * K + k];
                    const T* grow = gyn + std::size_t(f) * X;
                    for (int xi = 0; xi < X; ++xi) crow[xi] += wv * grow[xi];
                }
            }
            detail::col2im_add(gcol.data(), d, gx->ptr() + std::size_t(n) * d.c * d.h * d.w);
        }
    }
}

} // namespace deblur
