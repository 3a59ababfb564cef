#include "deblur/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "deblur/errors.hpp"

namespace deblur {

Tensor rgb_to_y(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ShapeError("rgb_to_y: image must be 3xHxW, got " + image.shape_str());
    const int h = image.dim(1), w = image.dim(2);
    const std::size_t plane = std::size_t(h) * w;
    Tensor y({1, h, w});
    const float* r = image.ptr();
    const float* g = image.ptr() + plane;
    const float* b = image.ptr() + 2 * plane;
    for (std::size_t i = 0; i < plane; ++i)
        y.data[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
    return y;
}

std::tuple<Tensor, float, float> normalize_y(const Tensor& y) {
    if (y.numel() < 2) throw ShapeError("normalize_y: need at least two pixels");
    double mean = 0.0;
    for (float v : y.data) mean += v;
    mean /= double(y.numel());
    double var = 0.0;
    for (float v : y.data) {
        const double d = v - mean;
        var += d * d;
    }
    var /= double(y.numel());
    const float std_used = std::max(float(std::sqrt(var)), 1e-6f);
    Tensor out = y;
    const float mu = float(mean);
    for (auto& v : out.data) v = (v - mu) / std_used;
    return {std::move(out), mu, std_used};
}

Tensor random_crop(const Tensor& image, int size, Rng& rng) {
    if (image.ndim() != 3) throw ShapeError("random_crop: image must be CxHxW");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h < size || w < size)
        throw ShapeError("random_crop: image " + image.shape_str() + " smaller than crop " +
                         std::to_string(size));
    const int r0 = int(rng.uniform_index(std::uint64_t(h - size + 1)));
    const int c0 = int(rng.uniform_index(std::uint64_t(w - size + 1)));
    Tensor out({c, size, size});
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < size; ++r)
            std::copy_n(image.ptr() + (std::size_t(ch) * h + r0 + r) * w + c0, size,
                        out.ptr() + (std::size_t(ch) * size + r) * size);
    return out;
}

int size_class_of(int support, int c1, int c2) {
    if (support <= c1) return 0;
    if (support <= c2) return 1;
    return 2;
}

TrainingSample make_sample(Rng& rng, const Tensor& sharp_image, const TrajectoryConfig& traj,
                           double noise_sigma, int crop, int class_bound1, int class_bound2) {
    TrainingSample s;
    s.sharp = random_crop(sharp_image, crop, rng);
    s.kernel = make_kernel(rng, traj);
    s.blurred = apply_blur(s.sharp, s.kernel, noise_sigma, rng);
    auto [yn, mu, sd] = normalize_y(rgb_to_y(s.blurred));
    s.y_norm = std::move(yn);
    s.y_mean = mu;
    s.y_std = sd;
    s.size_class = size_class_of(kernel_support_size(s.kernel), class_bound1, class_bound2);
    return s;
}

std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

void write_manifest(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (const auto& l : lines) f << l << '\n';
    if (!f) throw IoError("write failed: " + path);
}

std::vector<std::string> list_pngs(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace deblur
