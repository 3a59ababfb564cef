#pragma once

#include <memory>
#include <utility>

#include "deblur/autograd.hpp"
#include "deblur/tensor.hpp"

// Cross-correlation layer: for feature maps f_i within one image,
//   C_ij(s,t) = sum_{x,y} f_i(x-s, y-t) f_j(x,y) / (H*W)
// over shifts |s|,|t| <= radius, with zero extension outside the map.
// Output channel p enumerates map pairs under the selected PairMode.
// Since C_ij(s,t) = C_ji(-s,-t), each symmetric coefficient is computed
// once and its partner is mirrored (bit-exactly).

namespace deblur {

// unordered_diag: pairs (i,j) with i <= j, P = C*(C+1)/2. Default; keeps the
//   diagonal auto-correlation maps.
// ordered_offdiag: pairs (i,j) with i != j, P = C*(C-1). Matches the paper's
//   32x31 channel accounting; exposes both (i,j) and (j,i) maps.
enum class PairMode { unordered_diag, ordered_offdiag };

inline const char* to_string(PairMode m) {
    return m == PairMode::unordered_diag ? "unordered_diag" : "ordered_offdiag";
}

inline int pair_count(int channels, PairMode mode) {
    return mode == PairMode::unordered_diag ? channels * (channels + 1) / 2
                                            : channels * (channels - 1);
}

// Stable bijection from admissible (i,j) to [0, P). Row-major in i, then j.
// unordered_diag canonicalizes (i,j) and (j,i) to the same index.
inline int pair_index(int i, int j, int channels, PairMode mode = PairMode::unordered_diag) {
    if (i < 0 || j < 0 || i >= channels || j >= channels)
        throw UsageError("pair_index: channel out of range");
    if (mode == PairMode::unordered_diag) {
        if (i > j) std::swap(i, j);
        return i * channels - i * (i - 1) / 2 + (j - i);
    }
    if (i == j) throw UsageError("pair_index: diagonal pair not present in ordered_offdiag mode");
    return i * (channels - 1) + (j > i ? j - 1 : j);
}

inline std::pair<int, int> pair_of(int p, int channels, PairMode mode = PairMode::unordered_diag) {
    if (p < 0 || p >= pair_count(channels, mode)) throw UsageError("pair_of: index out of range");
    if (mode == PairMode::unordered_diag) {
        for (int i = 0; i < channels; ++i) {
            const int row = channels - i;
            if (p < row) return {i, i + p};
            p -= row;
        }
    } else {
        const int i = p / (channels - 1);
        int j = p % (channels - 1);
        if (j >= i) ++j;
        return {i, j};
    }
    throw UsageError("pair_of: unreachable");
}

struct CorrelationSpec {
    int radius = 0;
    int channels = 0;
    PairMode pair_mode = PairMode::unordered_diag;

    int extent() const { return 2 * radius + 1; }
    int pairs() const { return pair_count(channels, pair_mode); }
};

// shift bound at pyramid level l for an m-by-m kernel grid:
// floor(2^-l * m / 2)
inline int xcorr_radius_for_level(int m, int level) { return m >> (level + 1); }

namespace detail {

// sum over the valid overlap of f_i shifted by (s,t) against f_j
template <typename T>
inline T xcorr_coeff(const T* fi, const T* fj, int H, int W, int s, int t) {
    const int x0 = std::max(0, s), x1 = std::min(H, H + s);
    const int y0 = std::max(0, t), y1 = std::min(W, W + t);
    T acc = T(0);
    for (int x = x0; x < x1; ++x) {
        const T* a = fi + std::size_t(x - s) * W + (y0 - t);
        const T* b = fj + std::size_t(x) * W + y0;
        for (int y = 0; y < y1 - y0; ++y) acc += a[y] * b[y];
    }
    return acc;
}

} // namespace detail

template <typename T>
int cross_correlate(TapeT<T>& t, int features, const CorrelationSpec& spec) {
    const TensorT<T>& f = t.val(features);
    if (f.ndim() != 4) throw ShapeError("cross_correlate: input must be 4-D");
    const int N = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
    if (C != spec.channels)
        throw ShapeError("cross_correlate: input has " + std::to_string(C) +
                         " channels, spec expects " + std::to_string(spec.channels));
    if (spec.radius < 0 || spec.radius >= std::min(H, W))
        throw ConfigError("cross_correlate: radius " + std::to_string(spec.radius) +
                          " not below min(H,W)=" + std::to_string(std::min(H, W)));
    const int r = spec.radius, E = spec.extent(), P = spec.pairs();
    const PairMode mode = spec.pair_mode;
    const T norm = T(1) / T(std::size_t(H) * W);
    const std::size_t plane = std::size_t(H) * W;
    const std::size_t oplane = std::size_t(E) * E;

    TensorT<T> y({N, P, E, E});
    for (int n = 0; n < N; ++n) {
        const T* fn = f.ptr() + std::size_t(n) * C * plane;
        T* yn = y.ptr() + std::size_t(n) * P * oplane;
#pragma omp parallel for schedule(static)
        for (int p = 0; p < P; ++p) {
            const auto [i, j] = pair_of(p, C, mode);
            if (mode == PairMode::ordered_offdiag && i > j) continue; // mirrored below
            const T* fi = fn + std::size_t(i) * plane;
            const T* fj = fn + std::size_t(j) * plane;
            T* out = yn + std::size_t(p) * oplane;
            const bool half = (i == j); // C_ii(s,t) = C_ii(-s,-t)
            for (int s = -r; s <= r; ++s)
                for (int tt = -r; tt <= r; ++tt) {
                    if (half && (s > 0 || (s == 0 && tt > 0))) continue;
                    out[std::size_t(s + r) * E + (tt + r)] =
                        detail::xcorr_coeff(fi, fj, H, W, s, tt) * norm;
                }
            if (half)
                for (int s = -r; s <= r; ++s)
                    for (int tt = -r; tt <= r; ++tt) {
                        if (!(s > 0 || (s == 0 && tt > 0))) continue;
                        out[std::size_t(s + r) * E + (tt + r)] =
                            out[std::size_t(-s + r) * E + (-tt + r)];
                    }
        }
        if (mode == PairMode::ordered_offdiag) {
            for (int p = 0; p < P; ++p) {
                const auto [i, j] = pair_of(p, C, mode);
                if (i < j) continue;
                const T* src = yn + std::size_t(pair_index(j, i, C, mode)) * oplane;
                T* dst = yn + std::size_t(p) * oplane;
                for (int si = 0; si < E; ++si)
                    for (int ti = 0; ti < E; ++ti)
                        dst[std::size_t(si) * E + ti] =
                            src[std::size_t(E - 1 - si) * E + (E - 1 - ti)];
            }
        }
    }

    int out = t.alloc(std::move(y), t.needs(features));
    t.set_backward(out, [features, out, N, C, H, W, r, E, P, mode, norm](TapeT<T>& t) {
        if (!t.needs(features)) return;
        const TensorT<T>& g = t.grad(out);
        const TensorT<T>& f = t.val(features);
        TensorT<T>& gf = t.grad_buffer(features);
        const std::size_t plane = std::size_t(H) * W;
        const std::size_t oplane = std::size_t(E) * E;
        // every output channel, mirrored ones included, routes gradient
        // through the generic bilinear rule
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n) {
            const T* fn = f.ptr() + std::size_t(n) * C * plane;
            T* gn = gf.ptr() + std::size_t(n) * C * plane;
            for (int p = 0; p < P; ++p) {
                const auto [i, j] = pair_of(p, C, mode);
                const T* fi = fn + std::size_t(i) * plane;
                const T* fj = fn + std::size_t(j) * plane;
                T* gi = gn + std::size_t(i) * plane;
                T* gj = gn + std::size_t(j) * plane;
                const T* gp = g.ptr() + (std::size_t(n) * P + p) * oplane;
                for (int s = -r; s <= r; ++s) {
                    const int x0 = std::max(0, s), x1 = std::min(H, H + s);
                    for (int tt = -r; tt <= r; ++tt) {
                        const T gv = gp[std::size_t(s + r) * E + (tt + r)] * norm;
                        if (gv == T(0)) continue;
                        const int y0 = std::max(0, tt), y1 = std::min(W, W + tt);
                        for (int x = x0; x < x1; ++x) {
                            T* gia = gi + std::size_t(x - s) * W + (y0 - tt);
                            T* gja = gj + std::size_t(x) * W + y0;
                            const T* fia = fi + std::size_t(x - s) * W + (y0 - tt);
                            const T* fja = fj + std::size_t(x) * W + y0;
                            for (int y = 0; y < y1 - y0; ++y) {
                                gia[y] += gv * fja[y];
                                gja[y] += gv * fia[y];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

} // namespace deblur
