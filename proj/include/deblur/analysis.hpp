#pragma once

#include <string>
#include <vector>

#include "deblur/net_common.hpp"
#include "deblur/xcorr.hpp"

// Kernel-estimation network. Multi-scale feature extraction, per-scale
// cross-correlation, coarse-to-fine integration, and a head that emits an
// m-by-m grid normalized into an admissible blur kernel.

namespace deblur {

struct AnalysisConfig {
    int levels = 3;
    int feat_channels = 64;
    int reduced_channels = 32;
    int feat_kernel = 7;
    int convs_per_level = 3;
    int integrate_kernel = 5;
    std::vector<int> head_channels = {24, 16, 8, 1};
    int head_kernel = 3;
    int m = 85;
    PairMode pair_mode = PairMode::unordered_diag;

    void validate() const {
        if (m < 1 || m % 2 == 0) throw ConfigError("analysis: m must be odd and positive");
        if (levels < 1) throw ConfigError("analysis: levels must be >= 1");
        if (feat_channels < 1 || reduced_channels < 1)
            throw ConfigError("analysis: channel counts must be >= 1");
        if (feat_kernel % 2 == 0 || integrate_kernel % 2 == 0 || head_kernel % 2 == 0)
            throw ConfigError("analysis: kernel extents must be odd");
        if (convs_per_level < 1) throw ConfigError("analysis: convs_per_level must be >= 1");
        if (head_channels.empty() || head_channels.back() != 1)
            throw ConfigError("analysis: head must end in a single channel");
        for (int c : head_channels)
            if (c < 1) throw ConfigError("analysis: head channels must be >= 1");
    }

    // correlation-map extent at a level; equals m at level 0 for odd m
    int corr_extent(int level) const { return 2 * xcorr_radius_for_level(m, level) + 1; }
};

template <typename T>
struct AnalysisNetT {
    AnalysisConfig cfg;
    ParamSet<T> params;
};

using AnalysisNet = AnalysisNetT<float>;

// Validates that an H x W input can flow through the net; returns per-level
// feature-map extents. Same checks estimate_kernel applies before running.
inline std::vector<std::pair<int, int>> analysis_input_check(const AnalysisConfig& cfg, int h,
                                                             int w) {
    const int div = 1 << (cfg.levels - 1);
    if (h % div != 0 || w % div != 0)
        throw ShapeError("analysis: input " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by " + std::to_string(div));
    std::vector<std::pair<int, int>> sizes;
    for (int l = 0; l < cfg.levels; ++l) {
        const int hl = h >> l, wl = w >> l;
        const int r = xcorr_radius_for_level(cfg.m, l);
        if (r >= std::min(hl, wl))
            throw ConfigError("analysis: correlation radius " + std::to_string(r) +
                              " at level " + std::to_string(l) + " needs input above " +
                              std::to_string(r) + "x" + std::to_string(r));
        sizes.emplace_back(hl, wl);
    }
    return sizes;
}

template <typename T>
AnalysisNetT<T> build_analysis(const AnalysisConfig& cfg, Rng& rng) {
    cfg.validate();
    AnalysisNetT<T> net;
    net.cfg = cfg;
    auto& ps = net.params;
    const int F = cfg.feat_channels, R = cfg.reduced_channels;
    const int P = pair_count(R, cfg.pair_mode);
    for (int l = 0; l < cfg.levels; ++l) {
        for (int i = 0; i < cfg.convs_per_level; ++i) {
            const int cin = (l == 0 && i == 0) ? 1 : F;
            add_conv(ps, rng, "feat" + std::to_string(l) + ".conv" + std::to_string(i), F, cin,
                     cfg.feat_kernel);
        }
        add_conv(ps, rng, "feat" + std::to_string(l) + ".reduce", R, F, 1);
        add_conv(ps, rng, "corr" + std::to_string(l) + ".reduce", R, P, 1);
    }
    for (int l = cfg.levels - 2; l >= 0; --l) {
        add_conv(ps, rng, "up" + std::to_string(l) + ".conv", R, R, cfg.integrate_kernel);
        add_conv(ps, rng, "up" + std::to_string(l) + ".fuse", R, 2 * R, 1);
    }
    int prev = R;
    for (std::size_t i = 0; i < cfg.head_channels.size(); ++i) {
        add_conv(ps, rng, "head.conv" + std::to_string(i), cfg.head_channels[i], prev,
                 cfg.head_kernel);
        prev = cfg.head_channels[i];
    }
    return net;
}

namespace detail {

// Trunk pieces shared with the kernel-size classifier.

template <typename T>
int analysis_features(ParamSet<T>& ps, const AnalysisConfig& cfg, TapeT<T>& t, int x, int level) {
    const int pad = (cfg.feat_kernel - 1) / 2;
    int h = x;
    for (int i = 0; i < cfg.convs_per_level; ++i)
        h = relu(t, conv_named(ps, t, h, "feat" + std::to_string(level) + ".conv" +
                                             std::to_string(i), pad));
    return h;
}

// 1x1 reduce -> cross-correlate -> 1x1 reduce
template <typename T>
int analysis_corr_path(ParamSet<T>& ps, const AnalysisConfig& cfg, TapeT<T>& t, int feats,
                       int level) {
    const std::string ls = std::to_string(level);
    int red = relu(t, conv_named(ps, t, feats, "feat" + ls + ".reduce", 0));
    CorrelationSpec spec{xcorr_radius_for_level(cfg.m, level), cfg.reduced_channels,
                         cfg.pair_mode};
    int corr = cross_correlate(t, red, spec);
    return relu(t, conv_named(ps, t, corr, "corr" + ls + ".reduce", 0));
}

} // namespace detail

// raw head map -> admissible kernel (non-negative, sum 1, delta fallback)
template <typename T>
int normalize_kernel_head(TapeT<T>& t, int raw, std::vector<std::uint8_t>* degenerate = nullptr) {
    return normalize_kernel_sum1(t, raw, degenerate);
}

// y: N x 1 x H x W, the per-image normalized luminance of the blurry input.
// Returns N x 1 x m x m admissible kernels on the tape.
template <typename T>
int estimate_kernel(AnalysisNetT<T>& net, TapeT<T>& t, int y,
                    std::vector<std::uint8_t>* degenerate = nullptr) {
    const AnalysisConfig& cfg = net.cfg;
    const TensorT<T>& vy = t.val(y);
    if (vy.ndim() != 4 || vy.dim(1) != 1)
        throw ShapeError("estimate_kernel: input must be Nx1xHxW, got " + vy.shape_str());
    analysis_input_check(cfg, vy.dim(2), vy.dim(3));

    std::vector<int> cmap(std::size_t(cfg.levels));
    int feats = y;
    for (int l = 0; l < cfg.levels; ++l) {
        if (l > 0) feats = maxpool2(t, feats);
        feats = detail::analysis_features(net.params, cfg, t, feats, l);
        cmap[std::size_t(l)] = detail::analysis_corr_path(net.params, cfg, t, feats, l);
    }

    int z = cmap[std::size_t(cfg.levels - 1)];
    for (int l = cfg.levels - 2; l >= 0; --l) {
        const std::string ls = std::to_string(l);
        const int e = cfg.corr_extent(l);
        z = upsample2(t, z);
        z = resize_center_hw(t, z, e, e);
        z = relu(t, conv_named(net.params, t, z, "up" + ls + ".conv",
                               (cfg.integrate_kernel - 1) / 2));
        z = concat_channels(t, z, cmap[std::size_t(l)]);
        z = relu(t, conv_named(net.params, t, z, "up" + ls + ".fuse", 0));
    }
    // level-0 extent equals m for odd m; resize is the documented fallback
    z = resize_center_hw(t, z, cfg.m, cfg.m);

    const int pad = (cfg.head_kernel - 1) / 2;
    for (std::size_t i = 0; i < cfg.head_channels.size(); ++i) {
        z = conv_named(net.params, t, z, "head.conv" + std::to_string(i), pad);
        if (i + 1 < cfg.head_channels.size()) z = relu(t, z);
    }
    return normalize_kernel_head(t, z, degenerate);
}

// Convenience non-tape inference.
template <typename T>
TensorT<T> estimate_kernel_value(AnalysisNetT<T>& net, const TensorT<T>& y,
                                 std::vector<std::uint8_t>* degenerate = nullptr) {
    TapeT<T> tape;
    int id = estimate_kernel(net, tape, tape.leaf(y), degenerate);
    return tape.val(id);
}

} // namespace deblur
