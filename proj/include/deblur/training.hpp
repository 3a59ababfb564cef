#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deblur/analysis.hpp"
#include "deblur/data.hpp"
#include "deblur/synthesis.hpp"

// Losses, Adam, plateau schedule, the staged training strategy, and the
// kernel-size classifier.

namespace deblur {

// ------------------------------------------------------------------ losses

template <typename T>
int l1_kernel_loss(TapeT<T>& t, int k_hat, int k_true) {
    return l1_loss(t, k_hat, k_true);
}

template <typename T>
int l2_image_loss(TapeT<T>& t, int i_hat, int i_true) {
    return mse_loss(t, i_hat, i_true);
}

// ------------------------------------------------------------------- Adam

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(std::vector<Param*> params, AdamConfig cfg = {});

    // bias-corrected moment update; throws TrainError on non-finite gradients
    void step(double lr);
    void zero_grad();
    long long steps() const { return t_; }

private:
    std::vector<Param*> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    long long t_ = 0;
};

// --------------------------------------------------------------- schedule

// Cuts the rate by `decay` once the loss has not improved by rel_improve
// over `patience` epochs, then holds for `cooldown` epochs (during which
// stagnation keeps accruing but no cut is applied).
class PlateauSchedule {
public:
    PlateauSchedule(double lr0, int patience = 5, double decay = 0.8,
                    double rel_improve = 1e-3, int cooldown = 5)
        : lr_(lr0), patience_(patience), decay_(decay), rel_improve_(rel_improve),
          cooldown_len_(cooldown) {}

    double on_epoch_end(double loss) {
        if (!have_best_) {
            best_ = loss;
            have_best_ = true;
            ++since_;
        } else if (loss < best_ * (1.0 - rel_improve_)) {
            best_ = loss;
            since_ = 0;
        } else {
            ++since_;
        }
        if (cooldown_ > 0) --cooldown_;
        if (cooldown_ == 0 && since_ >= patience_) {
            lr_ *= decay_;
            since_ = 0;
            cooldown_ = cooldown_len_;
        }
        return lr_;
    }

    double lr() const { return lr_; }

private:
    double lr_;
    int patience_;
    double decay_;
    double rel_improve_;
    int cooldown_len_;
    double best_ = 0.0;
    bool have_best_ = false;
    int since_ = 0;
    int cooldown_ = 0;
};

// replays a per-epoch loss history through the schedule
inline double lr_schedule_update(const std::vector<double>& history, double initial_lr,
                                 int patience = 5, double decay = 0.8) {
    if (history.empty()) throw UsageError("lr_schedule_update: empty history");
    PlateauSchedule s(initial_lr, patience, decay);
    double lr = initial_lr;
    for (double l : history) lr = s.on_epoch_end(l);
    return lr;
}

// -------------------------------------------------------------- classifier

// Single-scale analysis trunk, head convs, global average pooling, and a
// three-way fully-connected output.
struct ClassifierConfig {
    int feat_channels = 8;
    int reduced_channels = 4;
    int feat_kernel = 7;
    int convs_per_level = 3;
    std::vector<int> head_channels = {24, 16, 8};
    int head_kernel = 3;
    int m = 17;
    PairMode pair_mode = PairMode::unordered_diag;

    AnalysisConfig trunk() const {
        AnalysisConfig a;
        a.levels = 1;
        a.feat_channels = feat_channels;
        a.reduced_channels = reduced_channels;
        a.feat_kernel = feat_kernel;
        a.convs_per_level = convs_per_level;
        a.head_channels = {1}; // unused; trunk only
        a.head_kernel = head_kernel;
        a.m = m;
        a.pair_mode = pair_mode;
        return a;
    }
};

template <typename T>
struct ClassifierNetT {
    ClassifierConfig cfg;
    ParamSet<T> params;
};

using ClassifierNet = ClassifierNetT<float>;

template <typename T>
ClassifierNetT<T> build_classifier(const ClassifierConfig& cfg, Rng& rng) {
    cfg.trunk().validate();
    if (cfg.head_channels.empty()) throw ConfigError("classifier: head must be non-empty");
    ClassifierNetT<T> net;
    net.cfg = cfg;
    auto& ps = net.params;
    const int F = cfg.feat_channels, R = cfg.reduced_channels;
    for (int i = 0; i < cfg.convs_per_level; ++i)
        add_conv(ps, rng, "feat0.conv" + std::to_string(i), F, i == 0 ? 1 : F, cfg.feat_kernel);
    add_conv(ps, rng, "feat0.reduce", R, F, 1);
    add_conv(ps, rng, "corr0.reduce", R, pair_count(R, cfg.pair_mode), 1);
    int prev = R;
    for (std::size_t i = 0; i < cfg.head_channels.size(); ++i) {
        add_conv(ps, rng, "head.conv" + std::to_string(i), cfg.head_channels[i], prev,
                 cfg.head_kernel);
        prev = cfg.head_channels[i];
    }
    add_linear(ps, rng, "fc", 3, prev);
    return net;
}

// y: N x 1 x H x W normalized luminance -> N x 3 logits
template <typename T>
int classifier_logits(ClassifierNetT<T>& net, TapeT<T>& t, int y) {
    const AnalysisConfig trunk = net.cfg.trunk();
    const TensorT<T>& vy = t.val(y);
    if (vy.ndim() != 4 || vy.dim(1) != 1)
        throw ShapeError("classifier: input must be Nx1xHxW, got " + vy.shape_str());
    int feats = detail::analysis_features(net.params, trunk, t, y, 0);
    int h = detail::analysis_corr_path(net.params, trunk, t, feats, 0);
    const int pad = (net.cfg.head_kernel - 1) / 2;
    for (std::size_t i = 0; i < net.cfg.head_channels.size(); ++i)
        h = relu(t, conv_named(net.params, t, h, "head.conv" + std::to_string(i), pad));
    int g = global_avg_pool(t, h);
    return linear_named(net.params, t, g, "fc");
}

// argmax of the logits; ties break toward the smaller class
int classify_kernel_size(ClassifierNet& net, const Tensor& y_norm);

// ---------------------------------------------------------------- staging

enum class Stage { pretrain_analysis, pretrain_synthesis, e2e, classifier };

const char* to_string(Stage s);

struct TrainPlan {
    Stage stage = Stage::pretrain_analysis;
    double lr = 1e-4;
    int plateau_epochs = 5;
    double lr_decay = 0.8;
    int batch_size = 4;
    long long iterations = 2000;
    int epoch_iters = 500;
    std::uint64_t seed = 0;
    std::string loss_log_path;                        // empty: no log
    long long checkpoint_every = 0;                   // 0: only on completion
    std::function<void(long long)> checkpoint_hook;   // called at emit points
};

// Deterministic sample stream; sample(i) depends on i and fixed state only.
class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual TrainingSample sample(std::uint64_t index) const = 0;
};

// On-the-fly generation from a pool of sharp images.
class PoolSource : public SampleSource {
public:
    PoolSource(std::vector<Tensor> pool, TrajectoryConfig traj, double noise_sigma, int crop,
               int bound1, int bound2, std::uint64_t seed)
        : pool_(std::move(pool)), traj_(traj), noise_(noise_sigma), crop_(crop), b1_(bound1),
          b2_(bound2), seed_(seed) {
        if (pool_.empty()) throw UsageError("PoolSource: empty image pool");
    }

    TrainingSample sample(std::uint64_t index) const override {
        Rng rng(mix_seed(seed_, index));
        const Tensor& img = pool_[rng.uniform_index(pool_.size())];
        return make_sample(rng, img, traj_, noise_, crop_, b1_, b2_);
    }

private:
    std::vector<Tensor> pool_;
    TrajectoryConfig traj_;
    double noise_;
    int crop_, b1_, b2_;
    std::uint64_t seed_;
};

// Classifier data: cycles target classes 0,1,2 and rejection-samples kernels
// until the support class matches, drawing kernel scale from a per-class
// speed band to keep rejections rare.
class ClassBalancedSource : public SampleSource {
public:
    ClassBalancedSource(std::vector<Tensor> pool, TrajectoryConfig base, double noise_sigma,
                        int crop, int bound1, int bound2, std::uint64_t seed);

    TrainingSample sample(std::uint64_t index) const override;

private:
    std::vector<Tensor> pool_;
    TrajectoryConfig per_class_[3];
    double noise_;
    int crop_, b1_, b2_;
    std::uint64_t seed_;
};

struct StageResult {
    std::vector<double> epoch_losses;
    double final_loss = 0.0; // mean loss over the last completed epoch
    double final_lr = 0.0;
    long long iterations = 0;
};

// Runs one training stage. Networks not used by the stage may be null:
//   pretrain_analysis  : analysis
//   pretrain_synthesis : synthesis (consumes ground-truth kernels)
//   e2e                : analysis + synthesis, image loss only
//   classifier         : classifier
StageResult run_stage(const TrainPlan& plan, const SampleSource& source, AnalysisNet* analysis,
                      SynthesisNet* synthesis, ClassifierNet* classifier);

// Batch assembly helpers shared with evaluation.
Tensor stack_blurred(const std::vector<TrainingSample>& batch);
Tensor stack_sharp(const std::vector<TrainingSample>& batch);
Tensor stack_y(const std::vector<TrainingSample>& batch);
Tensor stack_kernels(const std::vector<TrainingSample>& batch);       // N x 1 x m x m
Tensor stack_kernels_flat(const std::vector<TrainingSample>& batch);  // N x m*m

} // namespace deblur
