#include "deblur/blur_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "deblur/errors.hpp"

namespace deblur {

BlurKernel BlurKernel::delta(int m) {
    if (m < 1 || m % 2 == 0) throw ConfigError("kernel size must be odd");
    BlurKernel k;
    k.m = m;
    k.grid.assign(std::size_t(m) * m, 0.0f);
    k.at(m / 2, m / 2) = 1.0f;
    return k;
}

BlurKernel BlurKernel::uniform(int m) {
    if (m < 1 || m % 2 == 0) throw ConfigError("kernel size must be odd");
    BlurKernel k;
    k.m = m;
    k.grid.assign(std::size_t(m) * m, 1.0f / float(m * m));
    return k;
}

void BlurKernel::validate() const {
    if (m < 1 || m % 2 == 0) throw ConfigError("kernel size must be odd");
    if (grid.size() != std::size_t(m) * m) throw ShapeError("kernel grid size mismatch");
    double sum = 0.0;
    for (float v : grid) {
        if (v < 0.0f) throw ConfigError("kernel has negative entries");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ConfigError("kernel sum " + std::to_string(sum) + " not within 1e-6 of 1");
}

void TrajectoryConfig::validate() const {
    if (num_control_points < 2) throw ConfigError("trajectory: need >= 2 control points");
    if (max_speed < 0.0 || max_accel < 0.0) throw ConfigError("trajectory: negative motion bound");
    if (samples_per_segment < 1) throw ConfigError("trajectory: samples_per_segment must be >= 1");
    if (psf_sigma_min < 0.0 || psf_sigma_max < psf_sigma_min)
        throw ConfigError("trajectory: psf sigma range must be ordered and non-negative");
    if (exposure_jitter < 0.0 || exposure_jitter >= 1.0)
        throw ConfigError("trajectory: exposure_jitter must be in [0,1)");
    if (m < 1 || m % 2 == 0) throw ConfigError("trajectory: m must be odd");
}

namespace {

// natural cubic spline second derivatives, unit knot spacing
std::vector<double> spline_m(const std::vector<double>& y) {
    const int n = int(y.size());
    std::vector<double> m(std::size_t(n), 0.0);
    if (n < 3) return m;
    std::vector<double> diag(std::size_t(n), 0.0), rhs(std::size_t(n), 0.0);
    // Thomas solve of the tridiagonal system [1 4 1] m = 6 * d2y
    diag[1] = 4.0;
    rhs[1] = 6.0 * (y[2] - 2.0 * y[1] + y[0]);
    for (int i = 2; i < n - 1; ++i) {
        const double w = 1.0 / diag[std::size_t(i) - 1];
        diag[std::size_t(i)] = 4.0 - w;
        rhs[std::size_t(i)] =
            6.0 * (y[std::size_t(i) + 1] - 2.0 * y[std::size_t(i)] + y[std::size_t(i) - 1]) -
            w * rhs[std::size_t(i) - 1];
    }
    for (int i = n - 2; i >= 1; --i)
        m[std::size_t(i)] = (rhs[std::size_t(i)] -
                             (i < n - 2 ? m[std::size_t(i) + 1] : 0.0)) /
                            diag[std::size_t(i)];
    return m;
}

double spline_eval(const std::vector<double>& y, const std::vector<double>& m, int seg, double s) {
    const double a = y[std::size_t(seg)], b = y[std::size_t(seg) + 1];
    const double ma = m[std::size_t(seg)], mb = m[std::size_t(seg) + 1];
    const double u = 1.0 - s;
    return a * u + b * s + (u * u * u - u) * ma / 6.0 + (s * s * s - s) * mb / 6.0;
}

} // namespace

std::vector<TrajectoryPoint> sample_trajectory(Rng& rng, const TrajectoryConfig& config) {
    config.validate();
    const int n = config.num_control_points;

    // per-kernel magnitude scale; spreads samples across blur sizes
    const double u = rng.uniform(0.15, 1.0);
    const double cap_v = u * config.max_speed;
    const double cap_a = u * config.max_accel;

    std::vector<double> cx(std::size_t(n), 0.0), cy(std::size_t(n), 0.0);
    double vx = rng.normal() * 0.5 * cap_v;
    double vy = rng.normal() * 0.5 * cap_v;
    for (int i = 1; i < n; ++i) {
        vx += rng.normal() * cap_a;
        vy += rng.normal() * cap_a;
        const double speed = std::sqrt(vx * vx + vy * vy);
        if (speed > cap_v && speed > 0.0) {
            vx *= cap_v / speed;
            vy *= cap_v / speed;
        }
        cx[std::size_t(i)] = cx[std::size_t(i) - 1] + vx;
        cy[std::size_t(i)] = cy[std::size_t(i) - 1] + vy;
    }

    const std::vector<double> mx = spline_m(cx), my = spline_m(cy);
    std::vector<TrajectoryPoint> pts;
    pts.reserve(std::size_t(n - 1) * config.samples_per_segment + 1);
    for (int seg = 0; seg < n - 1; ++seg)
        for (int s = 0; s < config.samples_per_segment; ++s) {
            const double f = double(s) / config.samples_per_segment;
            pts.push_back({spline_eval(cx, mx, seg, f), spline_eval(cy, my, seg, f)});
        }
    pts.push_back({cx.back(), cy.back()});

    const double cut = config.exposure_jitter * rng.uniform();
    const std::size_t keep =
        std::max<std::size_t>(1, std::size_t(std::llround(double(pts.size()) * (1.0 - cut))));
    pts.resize(std::min(keep, pts.size()));

    double mx0 = 0.0, my0 = 0.0;
    for (const auto& p : pts) {
        mx0 += p[0];
        my0 += p[1];
    }
    mx0 /= double(pts.size());
    my0 /= double(pts.size());
    for (auto& p : pts) {
        p[0] -= mx0;
        p[1] -= my0;
    }
    return pts;
}

BlurKernel rasterize_kernel(const std::vector<TrajectoryPoint>& path, int m, double psf_sigma) {
    if (m < 1 || m % 2 == 0) throw ConfigError("rasterize_kernel: m must be odd");
    if (path.empty()) throw UsageError("rasterize_kernel: empty path");
    const int c = (m - 1) / 2;

    double ext = 0.0;
    for (const auto& p : path) ext = std::max({ext, std::abs(p[0]), std::abs(p[1])});
    const double s = (ext > double(c) && ext > 0.0) ? double(c) / ext : 1.0;

    std::vector<double> grid(std::size_t(m) * m, 0.0);
    for (const auto& p : path) {
        const double gx = c + p[0] * s; // column
        const double gy = c + p[1] * s; // row
        const int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
        const double fx = gx - x0, fy = gy - y0;
        const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int i = 0; i < 4; ++i)
            if (xs[i] >= 0 && xs[i] < m && ys[i] >= 0 && ys[i] < m)
                grid[std::size_t(ys[i]) * m + xs[i]] += w[i];
    }

    if (psf_sigma > 1e-4) {
        const int rad = std::max(1, int(std::ceil(3.0 * psf_sigma)));
        std::vector<double> g(std::size_t(2 * rad + 1));
        for (int d = -rad; d <= rad; ++d)
            g[std::size_t(d + rad)] = std::exp(-double(d) * d / (2.0 * psf_sigma * psf_sigma));
        std::vector<double> tmp(grid.size(), 0.0);
        for (int r = 0; r < m; ++r) // rows: blur along columns
            for (int col = 0; col < m; ++col) {
                double acc = 0.0;
                for (int d = -rad; d <= rad; ++d) {
                    const int cc = col + d;
                    if (cc >= 0 && cc < m) acc += grid[std::size_t(r) * m + cc] * g[std::size_t(d + rad)];
                }
                tmp[std::size_t(r) * m + col] = acc;
            }
        for (int r = 0; r < m; ++r)
            for (int col = 0; col < m; ++col) {
                double acc = 0.0;
                for (int d = -rad; d <= rad; ++d) {
                    const int rr = r + d;
                    if (rr >= 0 && rr < m) acc += tmp[std::size_t(rr) * m + col] * g[std::size_t(d + rad)];
                }
                grid[std::size_t(r) * m + col] = acc;
            }
    }

    double sum = 0.0;
    for (auto& v : grid) {
        if (v < 0.0) v = 0.0;
        sum += v;
    }
    BlurKernel k;
    k.m = m;
    k.grid.resize(grid.size());
    if (sum <= 0.0) return BlurKernel::delta(m);
    for (std::size_t i = 0; i < grid.size(); ++i) k.grid[i] = float(grid[i] / sum);
    return k;
}

BlurKernel make_kernel(Rng& rng, const TrajectoryConfig& config) {
    const auto path = sample_trajectory(rng, config);
    const double sigma = rng.uniform(config.psf_sigma_min, config.psf_sigma_max);
    return rasterize_kernel(path, config.m, sigma);
}

Tensor apply_blur(const Tensor& image, const BlurKernel& k, double noise_sigma, Rng& rng) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ShapeError("apply_blur: image must be 3xHxW, got " + image.shape_str());
    k.validate();
    const int H = image.dim(1), W = image.dim(2), m = k.m, c = (m - 1) / 2;
    Tensor out({3, H, W});
// true convolution: B(i,j) = sum_{a,b} I(i-a+c, j-b+c) k(a,b)
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < 3; ++ch) {
        const float* src = image.ptr() + std::size_t(ch) * H * W;
        float* dst = out.ptr() + std::size_t(ch) * H * W;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int a = 0; a < m; ++a) {
                    const int si = i - a + c;
                    if (si < 0 || si >= H) continue;
                    for (int b = 0; b < m; ++b) {
                        const int sj = j - b + c;
                        if (sj < 0 || sj >= W) continue;
                        acc += double(src[std::size_t(si) * W + sj]) * double(k.at(a, b));
                    }
                }
                dst[std::size_t(i) * W + j] = float(acc);
            }
    }
    if (noise_sigma > 0.0)
        for (auto& v : out.data) v += float(noise_sigma * rng.normal());
    return out;
}

int kernel_support_size(const BlurKernel& k, double mass) {
    k.validate();
    const int m = k.m, c = (m - 1) / 2;
    double total = 0.0;
    for (float v : k.grid) total += v;
    for (int h = 0; h <= c; ++h) {
        double s = 0.0;
        for (int r = c - h; r <= c + h; ++r)
            for (int col = c - h; col <= c + h; ++col) s += k.at(r, col);
        if (s >= mass * total) return 2 * h + 1;
    }
    return m;
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
    s.push_back(char(v & 0xff));
    s.push_back(char((v >> 8) & 0xff));
    s.push_back(char((v >> 16) & 0xff));
    s.push_back(char((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

} // namespace

void write_bkrn(const std::string& path, const BlurKernel& k) {
    k.validate();
    std::string buf = "BKRN";
    put_u32(buf, std::uint32_t(k.m));
    for (float v : k.grid) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(buf, bits);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

BlurKernel read_bkrn(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || buf.compare(0, 4, "BKRN") != 0)
        throw IoError("not a BKRN file: " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint32_t m = get_u32(p + 4);
    if (m == 0 || m % 2 == 0 || m > 9999) throw IoError("bad kernel size in " + path);
    const std::size_t need = 8 + std::size_t(m) * m * 4;
    if (buf.size() != need) throw IoError("truncated BKRN file: " + path);
    BlurKernel k;
    k.m = int(m);
    k.grid.resize(std::size_t(m) * m);
    for (std::size_t i = 0; i < k.grid.size(); ++i) {
        const std::uint32_t bits = get_u32(p + 8 + i * 4);
        std::memcpy(&k.grid[i], &bits, 4);
    }
    return k;
}

} // namespace deblur
