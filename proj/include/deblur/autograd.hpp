#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "deblur/conv_impl.hpp"
#include "deblur/tensor.hpp"

// Reverse-mode tape. Ops append nodes holding the forward value and a
// closure that routes the node's gradient to its parents. One backward
// sweep walks the tape once in reverse creation order, then flushes leaf
// gradients into their bound parameters. A tape is built, consumed and
// dropped per forward/backward pass; it is not shared across threads.

namespace deblur {

enum class GuidanceMode { none, additive, multiplicative, both };

inline const char* to_string(GuidanceMode m) {
    switch (m) {
        case GuidanceMode::none: return "none";
        case GuidanceMode::additive: return "additive";
        case GuidanceMode::multiplicative: return "multiplicative";
        case GuidanceMode::both: return "both";
    }
    return "?";
}

template <typename T>
class TapeT {
public:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;                         // allocated on first touch in backward
        bool requires_grad = false;
        ParamT<T>* bound = nullptr;
        std::function<void(TapeT&)> backprop;    // empty for leaves
    };

    int leaf(TensorT<T> v, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(v), {}, requires_grad, nullptr, {}});
        return int(nodes_.size()) - 1;
    }

    int param(ParamT<T>& p) {
        nodes_.push_back(Node{p.value, {}, true, &p, {}});
        return int(nodes_.size()) - 1;
    }

    int alloc(TensorT<T> v, bool requires_grad) {
        nodes_.push_back(Node{std::move(v), {}, requires_grad, nullptr, {}});
        return int(nodes_.size()) - 1;
    }

    void set_backward(int id, std::function<void(TapeT&)> fn) {
        nodes_[std::size_t(id)].backprop = std::move(fn);
    }

    const TensorT<T>& val(int id) const { return nodes_[std::size_t(id)].value; }
    bool needs(int id) const { return nodes_[std::size_t(id)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // gradient of a node after backward(); empty tensor if unreached
    const TensorT<T>& grad(int id) const { return nodes_[std::size_t(id)].grad; }

    TensorT<T>& grad_buffer(int id) {
        Node& n = nodes_[std::size_t(id)];
        if (n.grad.empty() && n.value.numel() > 0) n.grad = TensorT<T>::zeros(n.value.shape);
        return n.grad;
    }

    void backward(int loss) {
        if (val(loss).numel() != 1)
            throw UsageError("backward: loss must be scalar, got " + val(loss).shape_str());
        grad_buffer(loss).data[0] = T(1);
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[std::size_t(i)];
            if (!n.grad.empty() && n.backprop) n.backprop(*this);
        }
        for (Node& n : nodes_) {
            if (n.bound && !n.grad.empty())
                for (std::size_t i = 0; i < n.grad.numel(); ++i)
                    n.bound->grad.data[i] += n.grad.data[i];
        }
    }

private:
    std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using DTape = TapeT<double>;

// ---------------------------------------------------------------- elementwise

template <typename T>
int add(TapeT<T>& t, int a, int b) {
    if (!t.val(a).same_shape(t.val(b)))
        throw ShapeError("add: " + t.val(a).shape_str() + " vs " + t.val(b).shape_str());
    TensorT<T> y = t.val(a);
    const TensorT<T>& vb = t.val(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += vb.data[i];
    int out = t.alloc(std::move(y), t.needs(a) || t.needs(b));
    t.set_backward(out, [a, b, out](TapeT<T>& t) {
        const TensorT<T>& g = t.grad(out);
        if (t.needs(a)) {
            TensorT<T>& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        }
        if (t.needs(b)) {
            TensorT<T>& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i];
        }
    });
    return out;
}

template <typename T>
int sub(TapeT<T>& t, int a, int b) {
    if (!t.val(a).same_shape(t.val(b)))
        throw ShapeError("sub: " + t.val(a).shape_str() + " vs " + t.val(b).shape_str());
    TensorT<T> y = t.val(a);
    const TensorT<T>& vb = t.val(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] -= vb.data[i];
    int out = t.alloc(std::move(y), t.needs(a) || t.needs(b));
    t.set_backward(out, [a, b, out](TapeT<T>& t) {
        const TensorT<T>& g = t.grad(out);
        if (t.needs(a)) {
            TensorT<T>& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        }
        if (t.needs(b)) {
            TensorT<T>& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
        }
    });
    return out;
}

template <typename T>
int mul(TapeT<T>& t, int a, int b) {
    if (!t.val(a).same_shape(t.val(b)))
        throw ShapeError("mul: " + t.val(a).shape_str() + " vs " + t.val(b).shape_str());
    TensorT<T> y = t.val(a);
    const TensorT<T>& vb = t.val(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] *= vb.data[i];
    int out = t.alloc(std::move(y), t.needs(a) || t.needs(b));
    t.set_backward(out, [a, b, out](TapeT<T>& t) {
        const TensorT<T>& g = t.grad(out);
        if (t.needs(a)) {
            TensorT<T>& ga = t.grad_buffer(a);
            const TensorT<T>& vb = t.val(b);
            for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * vb.data[i];
        }
        if (t.needs(b)) {
            TensorT<T>& gb = t.grad_buffer(b);
            const TensorT<T>& va = t.val(a);
            for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * va.data[i];
        }
    });
    return out;
}

template <typename T>
int scale(TapeT<T>& t, int a, T s) {
    TensorT<T> y = t.val(a);
    for (auto& v : y.data) v *= s;
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, s, out](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        TensorT<T>& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += s * g.data[i];
    });
    return out;
}

template <typename T>
int relu(TapeT<T>& t, int a) {
    TensorT<T> y = t.val(a);
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, out](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        const TensorT<T>& x = t.val(a);
        TensorT<T>& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (x.data[i] > T(0)) ga.data[i] += g.data[i];
    });
    return out;
}

// ----------------------------------------------------------------- structural

template <typename T>
int reshape(TapeT<T>& t, int a, std::vector<int> shape) {
    if (TensorT<T>::checked_numel(shape) != t.val(a).numel())
        throw ShapeError("reshape: element count mismatch");
    TensorT<T> y(shape, t.val(a).data);
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, out](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        TensorT<T>& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
    return out;
}

template <typename T>
int concat_channels(TapeT<T>& t, int a, int b) {
    const TensorT<T>& va = t.val(a);
    const TensorT<T>& vb = t.val(b);
    if (va.ndim() != 4 || vb.ndim() != 4)
        throw ShapeError("concat_channels: inputs must be 4-D");
    if (va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) || va.dim(3) != vb.dim(3))
        throw ShapeError("concat_channels: " + va.shape_str() + " vs " + vb.shape_str());
    const int N = va.dim(0), C1 = va.dim(1), C2 = vb.dim(1), H = va.dim(2), W = va.dim(3);
    const std::size_t plane = std::size_t(H) * W;
    TensorT<T> y({N, C1 + C2, H, W});
    for (int n = 0; n < N; ++n) {
        std::copy_n(va.ptr() + std::size_t(n) * C1 * plane, std::size_t(C1) * plane,
                    y.ptr() + std::size_t(n) * (C1 + C2) * plane);
        std::copy_n(vb.ptr() + std::size_t(n) * C2 * plane, std::size_t(C2) * plane,
                    y.ptr() + (std::size_t(n) * (C1 + C2) + C1) * plane);
    }
    int out = t.alloc(std::move(y), t.needs(a) || t.needs(b));
    t.set_backward(out, [a, b, out, N, C1, C2, plane](TapeT<T>& t) {
        const TensorT<T>& g = t.grad(out);
        if (t.needs(a)) {
            TensorT<T>& ga = t.grad_buffer(a);
            for (int n = 0; n < N; ++n) {
                const T* src = g.ptr() + std::size_t(n) * (C1 + C2) * plane;
                T* dst = ga.ptr() + std::size_t(n) * C1 * plane;
                for (std::size_t i = 0; i < std::size_t(C1) * plane; ++i) dst[i] += src[i];
            }
        }
        if (t.needs(b)) {
            TensorT<T>& gb = t.grad_buffer(b);
            for (int n = 0; n < N; ++n) {
                const T* src = g.ptr() + (std::size_t(n) * (C1 + C2) + C1) * plane;
                T* dst = gb.ptr() + std::size_t(n) * C2 * plane;
                for (std::size_t i = 0; i < std::size_t(C2) * plane; ++i) dst[i] += src[i];
            }
        }
    });
    return out;
}

template <typename T>
int center_crop_hw(TapeT<T>& t, int a, int th, int tw) {
    const TensorT<T>& x = t.val(a);
    if (x.ndim() != 4) throw ShapeError("center_crop_hw: input must be 4-D");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (th > H || tw > W) throw ShapeError("center_crop_hw: target larger than input");
    const int h0 = (H - th) / 2, w0 = (W - tw) / 2;
    TensorT<T> y({N, C, th, tw});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < th; ++h)
                for (int w = 0; w < tw; ++w) y.at4(n, c, h, w) = x.at4(n, c, h0 + h, w0 + w);
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, out, N, C, th, tw, h0, w0](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        TensorT<T>& ga = t.grad_buffer(a);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < th; ++h)
                    for (int w = 0; w < tw; ++w)
                        ga.at4(n, c, h0 + h, w0 + w) += g.at4(n, c, h, w);
    });
    return out;
}

// Center crop or zero-pad (per axis) to the target spatial extents.
// Offsets round down on both sides, matching the conv zero-padding model.
template <typename T>
int resize_center_hw(TapeT<T>& t, int a, int th, int tw) {
    const TensorT<T>& x = t.val(a);
    if (x.ndim() != 4) throw ShapeError("resize_center_hw: input must be 4-D");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (th == H && tw == W) return a;
    TensorT<T> y({N, C, th, tw});
    const int sh = std::max(0, (H - th) / 2), dh = std::max(0, (th - H) / 2);
    const int sw = std::max(0, (W - tw) / 2), dw = std::max(0, (tw - W) / 2);
    const int ch = std::min(H, th), cw = std::min(W, tw);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < ch; ++h)
                for (int w = 0; w < cw; ++w)
                    y.at4(n, c, dh + h, dw + w) = x.at4(n, c, sh + h, sw + w);
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, out, N, C, sh, dh, sw, dw, ch, cw](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        TensorT<T>& ga = t.grad_buffer(a);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < ch; ++h)
                    for (int w = 0; w < cw; ++w)
                        ga.at4(n, c, sh + h, sw + w) += g.at4(n, c, dh + h, dw + w);
    });
    return out;
}

// ------------------------------------------------------------------- pooling

template <typename T>
int maxpool2(TapeT<T>& t, int a) {
    const TensorT<T>& x = t.val(a);
    if (x.ndim() != 4) throw ShapeError("maxpool2: input must be 4-D");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("maxpool2: spatial extents must be even, got " + x.shape_str());
    const int OH = H / 2, OW = W / 2;
    TensorT<T> y({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(y.numel());
    std::size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* plane = x.ptr() + (std::size_t(n) * C + c) * H * W;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow, ++oi) {
                    int best = (2 * oh) * W + 2 * ow;
                    T bv = plane[best];
                    const int cand[3] = {(2 * oh) * W + 2 * ow + 1, (2 * oh + 1) * W + 2 * ow,
                                         (2 * oh + 1) * W + 2 * ow + 1};
                    for (int idx : cand)
                        if (plane[idx] > bv) { bv = plane[idx]; best = idx; }
                    y.data[oi] = bv;
                    (*argmax)[oi] = best;
                }
        }
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, out, N, C, H, W, argmax](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        TensorT<T>& ga = t.grad_buffer(a);
        const int OH = H / 2, OW = W / 2;
        std::size_t oi = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* plane = ga.ptr() + (std::size_t(n) * C + c) * H * W;
                for (int k = 0; k < OH * OW; ++k, ++oi) plane[(*argmax)[oi]] += g.data[oi];
            }
    });
    return out;
}

template <typename T>
int upsample2(TapeT<T>& t, int a) {
    const TensorT<T>& x = t.val(a);
    if (x.ndim() != 4) throw ShapeError("upsample2: input must be 4-D");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> y({N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const T v = x.at4(n, c, h, w);
                    y.at4(n, c, 2 * h, 2 * w) = v;
                    y.at4(n, c, 2 * h, 2 * w + 1) = v;
                    y.at4(n, c, 2 * h + 1, 2 * w) = v;
                    y.at4(n, c, 2 * h + 1, 2 * w + 1) = v;
                }
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, out, N, C, H, W](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        TensorT<T>& ga = t.grad_buffer(a);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        ga.at4(n, c, h, w) += g.at4(n, c, 2 * h, 2 * w) +
                                              g.at4(n, c, 2 * h, 2 * w + 1) +
                                              g.at4(n, c, 2 * h + 1, 2 * w) +
                                              g.at4(n, c, 2 * h + 1, 2 * w + 1);
    });
    return out;
}

// ------------------------------------------------------------- linear algebra

template <typename T>
int linear(TapeT<T>& t, int x, int w, int b) {
    const TensorT<T>& vx = t.val(x);
    const TensorT<T>& vw = t.val(w);
    const TensorT<T>& vb = t.val(b);
    if (vx.ndim() != 2 || vw.ndim() != 2)
        throw ShapeError("linear: input/weight must be 2-D");
    const int N = vx.dim(0), Din = vx.dim(1), Dout = vw.dim(0);
    if (vw.dim(1) != Din)
        throw ShapeError("linear: input dim " + std::to_string(Din) + " != weight dim " +
                         std::to_string(vw.dim(1)));
    if (int(vb.numel()) != Dout) throw ShapeError("linear: bias length != output dim");
    TensorT<T> y({N, Dout});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Dout; ++o) {
            T acc = vb.data[o];
            const T* xr = vx.ptr() + std::size_t(n) * Din;
            const T* wr = vw.ptr() + std::size_t(o) * Din;
            for (int i = 0; i < Din; ++i) acc += xr[i] * wr[i];
            y.at2(n, o) = acc;
        }
    int out = t.alloc(std::move(y), t.needs(x) || t.needs(w) || t.needs(b));
    t.set_backward(out, [x, w, b, out, N, Din, Dout](TapeT<T>& t) {
        const TensorT<T>& g = t.grad(out);
        const TensorT<T>& vx = t.val(x);
        const TensorT<T>& vw = t.val(w);
        if (t.needs(x)) {
            TensorT<T>& gx = t.grad_buffer(x);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < Dout; ++o) {
                    const T gv = g.at2(n, o);
                    T* gr = gx.ptr() + std::size_t(n) * Din;
                    const T* wr = vw.ptr() + std::size_t(o) * Din;
                    for (int i = 0; i < Din; ++i) gr[i] += gv * wr[i];
                }
        }
        if (t.needs(w)) {
            TensorT<T>& gw = t.grad_buffer(w);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < Dout; ++o) {
                    const T gv = g.at2(n, o);
                    T* wr = gw.ptr() + std::size_t(o) * Din;
                    const T* xr = vx.ptr() + std::size_t(n) * Din;
                    for (int i = 0; i < Din; ++i) wr[i] += gv * xr[i];
                }
        }
        if (t.needs(b)) {
            TensorT<T>& gb = t.grad_buffer(b);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < Dout; ++o) gb.data[o] += g.at2(n, o);
        }
    });
    return out;
}

template <typename T>
int slice_cols(TapeT<T>& t, int a, int c0, int c1) {
    const TensorT<T>& x = t.val(a);
    if (x.ndim() != 2) throw ShapeError("slice_cols: input must be 2-D");
    const int N = x.dim(0), D = x.dim(1);
    if (c0 < 0 || c1 > D || c0 >= c1) throw UsageError("slice_cols: bad column range");
    TensorT<T> y({N, c1 - c0});
    for (int n = 0; n < N; ++n)
        for (int c = c0; c < c1; ++c) y.at2(n, c - c0) = x.at2(n, c);
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, out, N, c0, c1](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        TensorT<T>& ga = t.grad_buffer(a);
        for (int n = 0; n < N; ++n)
            for (int c = c0; c < c1; ++c) ga.at2(n, c) += g.at2(n, c - c0);
    });
    return out;
}

// --------------------------------------------------------------- convolution

template <typename T>
int conv2d(TapeT<T>& t, int x, int w, int b, int stride, int pad,
           ConvAlgo algo = conv_default_algo()) {
    TensorT<T> y = conv2d_forward(t.val(x), t.val(w), t.val(b), stride, pad, algo);
    int out = t.alloc(std::move(y), t.needs(x) || t.needs(w) || t.needs(b));
    t.set_backward(out, [x, w, b, out, stride, pad, algo](TapeT<T>& t) {
        TensorT<T>* gx = t.needs(x) ? &t.grad_buffer(x) : nullptr;
        TensorT<T>* gw = t.needs(w) ? &t.grad_buffer(w) : nullptr;
        TensorT<T>* gb = t.needs(b) ? &t.grad_buffer(b) : nullptr;
        conv2d_backward(t.val(x), t.val(w), t.grad(out), stride, pad, algo, gx, gw, gb);
    });
    return out;
}

// --------------------------------------------------------------- modulation

// Per-channel affine r*(1+m)+b with per-sample vectors, broadcast over H,W.
// Mode selects which terms participate; none is a pass-through.
template <typename T>
int scale_bias_channels(TapeT<T>& t, int r, int m, int b, GuidanceMode mode) {
    if (mode == GuidanceMode::none) return r;
    const TensorT<T>& vr = t.val(r);
    if (vr.ndim() != 4) throw ShapeError("scale_bias_channels: input must be 4-D");
    const int N = vr.dim(0), C = vr.dim(1), H = vr.dim(2), W = vr.dim(3);
    const std::size_t plane = std::size_t(H) * W;
    const bool use_m = mode != GuidanceMode::additive;
    const bool use_b = mode != GuidanceMode::multiplicative;
    auto check_vec = [&](int id, const char* what) {
        const TensorT<T>& v = t.val(id);
        if (v.ndim() != 2 || v.dim(0) != N || v.dim(1) != C)
            throw ShapeError(std::string("scale_bias_channels: ") + what + " must be " +
                             std::to_string(N) + "x" + std::to_string(C) + ", got " + v.shape_str());
    };
    if (use_m) check_vec(m, "multipliers");
    if (use_b) check_vec(b, "biases");

    TensorT<T> y = vr;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T mv = use_m ? t.val(m).at2(n, c) : T(0);
            const T bv = use_b ? t.val(b).at2(n, c) : T(0);
            T* row = y.ptr() + (std::size_t(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) row[i] = row[i] * (T(1) + mv) + bv;
        }
    bool req = t.needs(r) || (use_m && t.needs(m)) || (use_b && t.needs(b));
    int out = t.alloc(std::move(y), req);
    t.set_backward(out, [r, m, b, out, N, C, plane, use_m, use_b](TapeT<T>& t) {
        const TensorT<T>& g = t.grad(out);
        const TensorT<T>& vr = t.val(r);
        if (t.needs(r)) {
            TensorT<T>& gr = t.grad_buffer(r);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T mv = use_m ? t.val(m).at2(n, c) : T(0);
                    const T* gs = g.ptr() + (std::size_t(n) * C + c) * plane;
                    T* gd = gr.ptr() + (std::size_t(n) * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) gd[i] += gs[i] * (T(1) + mv);
                }
        }
        if (use_m && t.needs(m)) {
            TensorT<T>& gm = t.grad_buffer(m);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* gs = g.ptr() + (std::size_t(n) * C + c) * plane;
                    const T* rs = vr.ptr() + (std::size_t(n) * C + c) * plane;
                    T acc = T(0);
                    for (std::size_t i = 0; i < plane; ++i) acc += gs[i] * rs[i];
                    gm.at2(n, c) += acc;
                }
        }
        if (use_b && t.needs(b)) {
            TensorT<T>& gb = t.grad_buffer(b);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* gs = g.ptr() + (std::size_t(n) * C + c) * plane;
                    T acc = T(0);
                    for (std::size_t i = 0; i < plane; ++i) acc += gs[i];
                    gb.at2(n, c) += acc;
                }
        }
    });
    return out;
}

// --------------------------------------------------------------- reductions

template <typename T>
int sum_all(TapeT<T>& t, int a) {
    const TensorT<T>& x = t.val(a);
    T acc = T(0);
    for (T v : x.data) acc += v;
    int out = t.alloc(TensorT<T>::scalar(acc), t.needs(a));
    t.set_backward(out, [a, out](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const T g = t.grad(out).data[0];
        TensorT<T>& ga = t.grad_buffer(a);
        for (auto& v : ga.data) v += g;
    });
    return out;
}

template <typename T>
int mean_all(TapeT<T>& t, int a) {
    return scale(t, sum_all(t, a), T(1) / T(t.val(a).numel()));
}

template <typename T>
int global_avg_pool(TapeT<T>& t, int a) {
    const TensorT<T>& x = t.val(a);
    if (x.ndim() != 4) throw ShapeError("global_avg_pool: input must be 4-D");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t plane = std::size_t(x.dim(2)) * x.dim(3);
    TensorT<T> y({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* row = x.ptr() + (std::size_t(n) * C + c) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += row[i];
            y.at2(n, c) = acc / T(plane);
        }
    int out = t.alloc(std::move(y), t.needs(a));
    t.set_backward(out, [a, out, N, C, plane](TapeT<T>& t) {
        if (!t.needs(a)) return;
        const TensorT<T>& g = t.grad(out);
        TensorT<T>& ga = t.grad_buffer(a);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T gv = g.at2(n, c) / T(plane);
                T* row = ga.ptr() + (std::size_t(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) row[i] += gv;
            }
    });
    return out;
}

// ------------------------------------------------------------------- losses

// mean absolute difference; subgradient 0 where a == b
template <typename T>
int l1_loss(TapeT<T>& t, int a, int b) {
    const TensorT<T>& va = t.val(a);
    const TensorT<T>& vb = t.val(b);
    if (!va.same_shape(vb))
        throw ShapeError("l1_loss: " + va.shape_str() + " vs " + vb.shape_str());
    const std::size_t n = va.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(double(va.data[i]) - double(vb.data[i]));
    int out = t.alloc(TensorT<T>::scalar(T(acc / double(n))), t.needs(a) || t.needs(b));
    t.set_backward(out, [a, b, out, n](TapeT<T>& t) {
        const T g = t.grad(out).data[0] / T(n);
        const TensorT<T>& va = t.val(a);
        const TensorT<T>& vb = t.val(b);
        TensorT<T>* ga = t.needs(a) ? &t.grad_buffer(a) : nullptr;
        TensorT<T>* gb = t.needs(b) ? &t.grad_buffer(b) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const T d = va.data[i] - vb.data[i];
            const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
            if (ga) ga->data[i] += s;
            if (gb) gb->data[i] -= s;
        }
    });
    return out;
}

// mean squared difference
template <typename T>
int mse_loss(TapeT<T>& t, int a, int b) {
    const TensorT<T>& va = t.val(a);
    const TensorT<T>& vb = t.val(b);
    if (!va.same_shape(vb))
        throw ShapeError("mse_loss: " + va.shape_str() + " vs " + vb.shape_str());
    const std::size_t n = va.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = double(va.data[i]) - double(vb.data[i]);
        acc += d * d;
    }
    int out = t.alloc(TensorT<T>::scalar(T(acc / double(n))), t.needs(a) || t.needs(b));
    t.set_backward(out, [a, b, out, n](TapeT<T>& t) {
        const T g = t.grad(out).data[0] * T(2) / T(n);
        const TensorT<T>& va = t.val(a);
        const TensorT<T>& vb = t.val(b);
        TensorT<T>* ga = t.needs(a) ? &t.grad_buffer(a) : nullptr;
        TensorT<T>* gb = t.needs(b) ? &t.grad_buffer(b) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const T d = va.data[i] - vb.data[i];
            if (ga) ga->data[i] += g * d;
            if (gb) gb->data[i] -= g * d;
        }
    });
    return out;
}

// softmax + NLL over 3 classes, mean over the batch, max-stabilized
template <typename T>
int cross_entropy3(TapeT<T>& t, int logits, const std::vector<int>& labels) {
    const TensorT<T>& z = t.val(logits);
    if (z.ndim() != 2 || z.dim(1) != 3)
        throw ShapeError("cross_entropy3: logits must be Nx3, got " + z.shape_str());
    const int N = z.dim(0);
    if (int(labels.size()) != N) throw ShapeError("cross_entropy3: label count mismatch");
    for (int l : labels)
        if (l < 0 || l > 2) throw UsageError("cross_entropy3: label out of range");
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
        const double z0 = z.at2(n, 0), z1 = z.at2(n, 1), z2 = z.at2(n, 2);
        const double m = std::max({z0, z1, z2});
        const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m) + std::exp(z2 - m));
        acc += lse - double(z.at2(n, labels[std::size_t(n)]));
    }
    int out = t.alloc(TensorT<T>::scalar(T(acc / double(N))), t.needs(logits));
    t.set_backward(out, [logits, out, N, labels](TapeT<T>& t) {
        if (!t.needs(logits)) return;
        const T g = t.grad(out).data[0] / T(N);
        const TensorT<T>& z = t.val(logits);
        TensorT<T>& gz = t.grad_buffer(logits);
        for (int n = 0; n < N; ++n) {
            const double z0 = z.at2(n, 0), z1 = z.at2(n, 1), z2 = z.at2(n, 2);
            const double m = std::max({z0, z1, z2});
            const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m), e2 = std::exp(z2 - m);
            const double s = e0 + e1 + e2;
            const double p[3] = {e0 / s, e1 / s, e2 / s};
            for (int c = 0; c < 3; ++c)
                gz.at2(n, c) += g * T(p[c] - (labels[std::size_t(n)] == c ? 1.0 : 0.0));
        }
    });
    return out;
}

// ------------------------------------------------- kernel-head normalization

// Per sample: clamp negatives, divide by (positive mass + eps). Samples whose
// positive mass falls below mass_floor come out as a centered delta with a
// degeneracy flag and zero gradient. The floor sits well above eps so that
// |sum - 1| <= eps/mass_floor = 1e-5 holds for every non-degenerate output.
template <typename T>
int normalize_kernel_sum1(TapeT<T>& t, int raw, std::vector<std::uint8_t>* degenerate = nullptr,
                          T eps = T(1e-8), T mass_floor = T(1e-3)) {
    const TensorT<T>& x = t.val(raw);
    if (x.ndim() != 4 || x.dim(1) != 1)
        throw ShapeError("normalize_kernel_sum1: input must be Nx1xMxM, got " + x.shape_str());
    const int N = x.dim(0), mh = x.dim(2), mw = x.dim(3);
    const std::size_t plane = std::size_t(mh) * mw;
    TensorT<T> y({N, 1, mh, mw});
    auto sums = std::make_shared<std::vector<T>>(std::size_t(N));
    auto degen = std::make_shared<std::vector<std::uint8_t>>(std::size_t(N), 0);
    for (int n = 0; n < N; ++n) {
        const T* src = x.ptr() + std::size_t(n) * plane;
        T* dst = y.ptr() + std::size_t(n) * plane;
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += src[i] > T(0) ? double(src[i]) : 0.0;
        (*sums)[std::size_t(n)] = T(s);
        if (s < double(mass_floor)) {
            (*degen)[std::size_t(n)] = 1;
            std::fill(dst, dst + plane, T(0));
            dst[std::size_t(mh / 2) * mw + mw / 2] = T(1);
        } else {
            const T inv = T(1) / (T(s) + eps);
            for (std::size_t i = 0; i < plane; ++i)
                dst[i] = src[i] > T(0) ? src[i] * inv : T(0);
        }
    }
    if (degenerate) *degenerate = *degen;
    int out = t.alloc(std::move(y), t.needs(raw));
    t.set_backward(out, [raw, out, N, plane, eps, sums, degen](TapeT<T>& t) {
        if (!t.needs(raw)) return;
        const TensorT<T>& g = t.grad(out);
        const TensorT<T>& x = t.val(raw);
        const TensorT<T>& y = t.val(out);
        TensorT<T>& gr = t.grad_buffer(raw);
        for (int n = 0; n < N; ++n) {
            if ((*degen)[std::size_t(n)]) continue;
            const T* gs = g.ptr() + std::size_t(n) * plane;
            const T* xs = x.ptr() + std::size_t(n) * plane;
            const T* ys = y.ptr() + std::size_t(n) * plane;
            T* gd = gr.ptr() + std::size_t(n) * plane;
            const T inv = T(1) / ((*sums)[std::size_t(n)] + eps);
            double dot = 0.0;
            for (std::size_t i = 0; i < plane; ++i) dot += double(gs[i]) * double(ys[i]);
            for (std::size_t i = 0; i < plane; ++i)
                if (xs[i] > T(0)) gd[i] += (gs[i] - T(dot)) * inv;
        }
    });
    return out;
}

} // namespace deblur
