#pragma once

#include <string>
#include <vector>

#include "deblur/analysis.hpp"
#include "deblur/config.hpp"
#include "deblur/synthesis.hpp"
#include "deblur/training.hpp"

// PSNR / mean-SSIM scoring, CSV evaluation reports, and the guidance-mode
// ablation harness.

namespace deblur {

// 10*log10(peak^2 / MSE); returns +infinity when the images are identical
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean SSIM over 11x11 Gaussian windows (sigma 1.5, K1=0.01, K2=0.03) on the
// BT.601 luminance channel, valid windows only. Inputs in [0,1].
double mssim(const Tensor& a, const Tensor& b);

struct EvalRow {
    std::string path;
    double psnr_db = 0.0;
    double mssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_mssim = 0.0;
    std::string config_fingerprint;
    double runtime_seconds = 0.0;

    void finalize();
    // UTF-8 CSV: "path,psnr_db,mssim" rows plus a trailing MEAN row;
    // infinities serialize as "inf". Runtime stays out of the bytes so
    // identical inputs give identical files.
    std::string to_csv() const;
};

Tensor clip01(const Tensor& image);

// Full blind pipeline on one blurred image: normalize Y, estimate the
// kernel, synthesize. Input must satisfy both networks' divisibility.
Tensor deblur_image(AnalysisNet& analysis, SynthesisNet& synthesis, const Tensor& blurred);

// Scores a sample list; use_gt_kernels bypasses the analysis network
// (the Table-3 style "synthesis + ground-truth kernels" setting).
EvalReport evaluate_samples(AnalysisNet* analysis, SynthesisNet& synthesis,
                            const std::vector<TrainingSample>& samples, bool use_gt_kernels);

// Dataset-directory evaluation: reads manifest.txt (blurred image paths,
// sharp siblings derived by name), writes the CSV report.
EvalReport evaluate_set(AnalysisNet& analysis, SynthesisNet& synthesis,
                        const std::string& data_dir, const std::string& report_path);

struct AblationRow {
    GuidanceMode mode;
    double mean_psnr = 0.0;
};

// Trains the synthesis network with ground-truth kernels under each mode on
// self-generated toy data and reports held-out mean PSNR.
std::vector<AblationRow> ablation_run(const std::vector<GuidanceMode>& modes,
                                      const RunConfig& config, std::uint64_t seed,
                                      long long iterations = 0);

std::string ablation_csv(const std::vector<AblationRow>& rows);

// Procedural sharp test images (gradients, shapes, lines, light texture);
// backs the self-contained ablation and acceptance runs.
Tensor synthetic_sharp_image(Rng& rng, int size);

// Fixed held-out sample set drawn from synthetic images.
std::vector<TrainingSample> synthetic_eval_set(const RunConfig& config, std::uint64_t seed,
                                               int count);

} // namespace deblur
