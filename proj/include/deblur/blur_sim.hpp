#pragma once

#include <array>
#include <string>
#include <vector>

#include "deblur/rng.hpp"
#include "deblur/tensor.hpp"

// Synthetic camera-shake blur: a second-order random walk defines spline
// control points, the spline is densely sampled into a trajectory, splatted
// onto an m x m grid, smeared by an isotropic Gaussian sensor PSF, and
// normalized into an admissible kernel. Blur application is a true
// convolution B = I * k plus Gaussian noise, zero-padded borders, unclipped.

namespace deblur {

struct BlurKernel {
    int m = 0;
    std::vector<float> grid; // m*m, row-major

    float at(int r, int c) const { return grid[std::size_t(r) * m + c]; }
    float& at(int r, int c) { return grid[std::size_t(r) * m + c]; }

    static BlurKernel delta(int m);
    static BlurKernel uniform(int m);

    // m odd, entries >= 0, sum within 1e-6 of 1
    void validate() const;
};

struct TrajectoryConfig {
    int num_control_points = 8;
    double max_speed = 2.4;  // pixels per control step
    double max_accel = 1.0;  // pixels per control step^2
    int samples_per_segment = 16;
    double psf_sigma_min = 0.3;
    double psf_sigma_max = 1.0;
    double exposure_jitter = 0.15; // fraction of the path truncated at random
    int m = 17;

    void validate() const;
};

using TrajectoryPoint = std::array<double, 2>; // (col, row) offsets, sub-pixel

// Dense centered polyline. Exposure jitter truncates the tail by a random
// fraction in [0, exposure_jitter] before recentering.
std::vector<TrajectoryPoint> sample_trajectory(Rng& rng, const TrajectoryConfig& config);

// Equal-weight bilinear splat of the path (scaled to fit if needed), Gaussian
// PSF truncated at 3*sigma, clamp, normalize to sum 1.
BlurKernel rasterize_kernel(const std::vector<TrajectoryPoint>& path, int m, double psf_sigma);

// trajectory + PSF sigma draw + rasterization, all from one stream
BlurKernel make_kernel(Rng& rng, const TrajectoryConfig& config);

// image: 3 x H x W in [0,1]; output unclipped
Tensor apply_blur(const Tensor& image, const BlurKernel& k, double noise_sigma, Rng& rng);

// smallest centered odd window holding >= mass of the kernel's total mass
int kernel_support_size(const BlurKernel& k, double mass = 0.99);

// "BKRN" file: 4-byte magic, u32 little-endian m, m*m little-endian f32.
void write_bkrn(const std::string& path, const BlurKernel& k);
BlurKernel read_bkrn(const std::string& path);

} // namespace deblur
