#pragma once

#include <string>
#include <utility>
#include <vector>

#include "deblur/net_common.hpp"

// Deblurring U-Net whose blocks are modulated by kernel-derived multipliers
// and biases: r <- r (1 + m(k)) + b(k), with (m, b) produced per block by a
// guiding unit (three fully-connected layers on the flattened kernel).

namespace deblur {

struct SynthesisConfig {
    int depth = 4;
    int channels = 128;
    int guide_hidden = 128;
    int convs_per_block = 3;
    int m = 85;
    GuidanceMode guidance = GuidanceMode::both;

    void validate() const {
        if (depth < 1) throw ConfigError("synthesis: depth must be >= 1");
        if (channels < 1 || guide_hidden < 1)
            throw ConfigError("synthesis: channel counts must be >= 1");
        if (convs_per_block < 1) throw ConfigError("synthesis: convs_per_block must be >= 1");
        if (m < 1 || m % 2 == 0) throw ConfigError("synthesis: m must be odd and positive");
    }

    // one modulated site per encoder block, bottleneck, and decoder block
    int guide_sites() const { return 2 * depth + 1; }
};

template <typename T>
struct SynthesisNetT {
    SynthesisConfig cfg;
    ParamSet<T> params;
};

using SynthesisNet = SynthesisNetT<float>;

template <typename T>
SynthesisNetT<T> build_synthesis(const SynthesisConfig& cfg, Rng& rng) {
    cfg.validate();
    SynthesisNetT<T> net;
    net.cfg = cfg;
    auto& ps = net.params;
    const int C = cfg.channels;
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string b = "enc" + std::to_string(l);
        add_conv(ps, rng, b + ".entry", C, l == 0 ? 3 : C, 3);
        for (int i = 0; i < cfg.convs_per_block; ++i)
            add_conv(ps, rng, b + ".conv" + std::to_string(i), C, C, 3);
    }
    add_conv(ps, rng, "bottleneck.entry", C, C, 3);
    for (int i = 0; i < cfg.convs_per_block; ++i)
        add_conv(ps, rng, "bottleneck.conv" + std::to_string(i), C, C, 3);
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const std::string b = "dec" + std::to_string(l);
        add_conv(ps, rng, b + ".up", C, C, 5);
        add_conv(ps, rng, b + ".skip", C, C, 3);
        add_conv(ps, rng, b + ".fuse", C, 2 * C, 1);
        for (int i = 0; i < cfg.convs_per_block; ++i)
            add_conv(ps, rng, b + ".conv" + std::to_string(i), C, C, 3);
    }
    // zero-initialized head plus the global residual makes the fresh net an
    // identity map
    add_conv(ps, rng, "out", 3, C, 3, /*zero_init=*/true);
    for (int s = 0; s < cfg.guide_sites(); ++s) {
        const std::string g = "guide" + std::to_string(s);
        add_linear(ps, rng, g + ".fc0", cfg.guide_hidden, cfg.m * cfg.m);
        add_linear(ps, rng, g + ".fc1", cfg.guide_hidden, cfg.guide_hidden);
        // zero last layer: every site starts as the Eq-identity (1+0, +0)
        add_linear(ps, rng, g + ".fc2", 2 * C, cfg.guide_hidden, /*zero_init=*/true);
    }
    return net;
}

// kflat: N x m*m admissible kernels. Returns (multipliers, biases), each N x channels.
template <typename T>
std::pair<int, int> guiding_unit_forward(SynthesisNetT<T>& net, TapeT<T>& t, int site, int kflat) {
    const SynthesisConfig& cfg = net.cfg;
    const TensorT<T>& vk = t.val(kflat);
    if (vk.ndim() != 2 || vk.dim(1) != cfg.m * cfg.m)
        throw ShapeError("guiding_unit_forward: kernel must be Nx" +
                         std::to_string(cfg.m * cfg.m) + ", got " + vk.shape_str());
    const std::string g = "guide" + std::to_string(site);
    int h = relu(t, linear_named(net.params, t, kflat, g + ".fc0"));
    h = relu(t, linear_named(net.params, t, h, g + ".fc1"));
    int o = linear_named(net.params, t, h, g + ".fc2");
    return {slice_cols(t, o, 0, cfg.channels), slice_cols(t, o, cfg.channels, 2 * cfg.channels)};
}

// Eq-style per-channel affine on a conv output; alias for the generic op.
template <typename T>
int guided_modulation(TapeT<T>& t, int r, int mvec, int bvec, GuidanceMode mode) {
    return scale_bias_channels(t, r, mvec, bvec, mode);
}

namespace detail {

template <typename T>
int synth_block_tail(SynthesisNetT<T>& net, TapeT<T>& t, int r, int site, int kflat,
                     const std::string& block) {
    const SynthesisConfig& cfg = net.cfg;
    if (cfg.guidance != GuidanceMode::none) {
        auto [mv, bv] = guiding_unit_forward(net, t, site, kflat);
        r = guided_modulation(t, r, mv, bv, cfg.guidance);
    }
    int x = relu(t, r);
    for (int i = 0; i < cfg.convs_per_block; ++i)
        x = relu(t, conv_named(net.params, t, x, block + ".conv" + std::to_string(i), 1));
    return x;
}

} // namespace detail

// blurry: N x 3 x H x W in [0,1]; kflat: N x m*m. Returns N x 3 x H x W.
template <typename T>
int synthesize(SynthesisNetT<T>& net, TapeT<T>& t, int blurry, int kflat) {
    const SynthesisConfig& cfg = net.cfg;
    const TensorT<T>& vb = t.val(blurry);
    if (vb.ndim() != 4 || vb.dim(1) != 3)
        throw ShapeError("synthesize: input must be Nx3xHxW, got " + vb.shape_str());
    const int div = 1 << cfg.depth;
    if (vb.dim(2) % div != 0 || vb.dim(3) % div != 0)
        throw ShapeError("synthesize: spatial extents must be divisible by " +
                         std::to_string(div) + ", got " + vb.shape_str());
    if (cfg.guidance != GuidanceMode::none) {
        const TensorT<T>& vk = t.val(kflat);
        if (vk.ndim() != 2 || vk.dim(0) != vb.dim(0) || vk.dim(1) != cfg.m * cfg.m)
            throw ShapeError("synthesize: kernel batch must be " + std::to_string(vb.dim(0)) +
                             "x" + std::to_string(cfg.m * cfg.m) + ", got " + vk.shape_str());
    }

    std::vector<int> skips;
    int x = blurry;
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string b = "enc" + std::to_string(l);
        int r = conv_named(net.params, t, x, b + ".entry", 1);
        x = detail::synth_block_tail(net, t, r, l, kflat, b);
        skips.push_back(x);
        x = maxpool2(t, x);
    }
    {
        int r = conv_named(net.params, t, x, "bottleneck.entry", 1);
        x = detail::synth_block_tail(net, t, r, cfg.depth, kflat, "bottleneck");
    }
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const std::string b = "dec" + std::to_string(l);
        const int site = cfg.depth + 1 + (cfg.depth - 1 - l);
        int u = relu(t, conv_named(net.params, t, upsample2(t, x), b + ".up", 2));
        int s = relu(t, conv_named(net.params, t, skips[std::size_t(l)], b + ".skip", 1));
        int r = conv_named(net.params, t, concat_channels(t, u, s), b + ".fuse", 0);
        x = detail::synth_block_tail(net, t, r, site, kflat, b);
    }
    int head = conv_named(net.params, t, x, "out", 1);
    return add(t, head, blurry);
}

// Convenience non-tape inference.
template <typename T>
TensorT<T> synthesize_value(SynthesisNetT<T>& net, const TensorT<T>& blurry,
                            const TensorT<T>& kflat) {
    TapeT<T> tape;
    int id = synthesize(net, tape, tape.leaf(blurry), tape.leaf(kflat));
    return tape.val(id);
}

} // namespace deblur
