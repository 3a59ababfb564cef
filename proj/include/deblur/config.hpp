#pragma once

#include <string>
#include <vector>

#include "deblur/analysis.hpp"
#include "deblur/blur_sim.hpp"
#include "deblur/synthesis.hpp"

// Key-value run configuration. Two bundled presets: "paper" (512 crops,
// m=85, full channel counts) and "toy" (64 crops, m=17, channels / 8) for
// desk-scale runs. A config file may name a preset and override any key;
// unknown or duplicate keys are rejected. serialize() emits the canonical
// form: every key, sorted, one "key = value" per line.

namespace deblur {

struct RunConfig {
    std::string preset = "toy";

    int image_crop = 64;
    int kernel_m = 17;
    double noise_sigma = 0.02;

    int analysis_levels = 3;
    int analysis_feat_channels = 8;
    int analysis_reduced_channels = 4;
    int analysis_feat_kernel = 7;
    int analysis_convs_per_level = 3;
    int analysis_integrate_kernel = 5;
    std::vector<int> analysis_head_channels = {24, 16, 8, 1};
    int analysis_head_kernel = 3;
    PairMode pair_mode = PairMode::unordered_diag;

    int synthesis_depth = 4;
    int synthesis_channels = 16;
    int synthesis_guide_hidden = 16;
    int synthesis_convs_per_block = 3;
    GuidanceMode guidance = GuidanceMode::both;

    int traj_control_points = 8;
    double traj_max_speed = 2.4;
    double traj_max_accel = 1.0;
    int traj_samples_per_segment = 16;
    double traj_psf_sigma_min = 0.3;
    double traj_psf_sigma_max = 1.0;
    double traj_exposure_jitter = 0.15;

    int class_bound1 = 5;
    int class_bound2 = 11;

    double train_lr = 1e-3;
    int train_batch = 4;
    long long train_iterations = 2000;
    int train_epoch_iters = 250;
    int train_plateau_epochs = 5;
    double train_lr_decay = 0.8;
    long long train_checkpoint_every = 0;

    static RunConfig preset_toy();
    static RunConfig preset_paper();
    static RunConfig from_preset(const std::string& name);

    AnalysisConfig analysis() const;
    SynthesisConfig synthesis() const;
    TrajectoryConfig trajectory() const;

    void validate() const;

    std::string serialize() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);
};

} // namespace deblur
