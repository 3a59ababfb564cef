#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "deblur/blur_sim.hpp"
#include "deblur/tensor.hpp"

// On-the-fly training samples: crop, blur, luminance normalization, size
// class. Every sample is a pure function of (rng state, inputs).

namespace deblur {

struct TrainingSample {
    Tensor sharp;    // 3 x S x S in [0,1]
    BlurKernel kernel;
    Tensor blurred;  // 3 x S x S, unclipped
    Tensor y_norm;   // 1 x S x S, zero mean / unit variance
    float y_mean = 0.0f;
    float y_std = 1.0f; // floored value actually used
    int size_class = 0; // 0,1,2 against the configured support bounds
};

// BT.601 luminance: Y = 0.299 R + 0.587 G + 0.114 B
Tensor rgb_to_y(const Tensor& image);

// (y - mean) / max(std, 1e-6); returns the stats used
std::tuple<Tensor, float, float> normalize_y(const Tensor& y);

Tensor random_crop(const Tensor& image, int size, Rng& rng);

// support <= c1 -> 0, <= c2 -> 1, else 2
int size_class_of(int support, int c1, int c2);

TrainingSample make_sample(Rng& rng, const Tensor& sharp_image, const TrajectoryConfig& traj,
                           double noise_sigma, int crop, int class_bound1, int class_bound2);

// newline-separated relative paths
std::vector<std::string> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<std::string>& lines);

// sorted *.png paths directly under dir
std::vector<std::string> list_pngs(const std::string& dir);

} // namespace deblur
