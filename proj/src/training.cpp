#include "deblur/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "deblur/errors.hpp"

namespace deblur {

// ------------------------------------------------------------------- Adam

Adam::Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape));
        v_.push_back(Tensor::zeros(p->value.shape));
    }
}

void Adam::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

void Adam::step(double lr) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(t_));
    const double c2 = 1.0 - std::pow(b2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const double g = p.grad.data[j];
            if (!std::isfinite(g))
                throw TrainError("non-finite gradient in parameter '" + p.name + "' (element " +
                                 std::to_string(j) + ", step " + std::to_string(t_) + ")");
            const double mj = b1 * m.data[j] + (1.0 - b1) * g;
            const double vj = b2 * v.data[j] + (1.0 - b2) * g * g;
            m.data[j] = float(mj);
            v.data[j] = float(vj);
            p.value.data[j] -= float(lr * (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps));
        }
    }
}

// -------------------------------------------------------------- classifier

int classify_kernel_size(ClassifierNet& net, const Tensor& y_norm) {
    Tensor y = y_norm;
    if (y.ndim() == 3) y = Tensor({1, y.dim(0), y.dim(1), y.dim(2)}, y.data);
    Tape tape;
    const int logits = classifier_logits(net, tape, tape.leaf(std::move(y)));
    const Tensor& v = tape.val(logits);
    int best = 0;
    for (int c = 1; c < 3; ++c)
        if (v.at2(0, c) > v.at2(0, best)) best = c;
    return best;
}

// ------------------------------------------------------------ data sources

ClassBalancedSource::ClassBalancedSource(std::vector<Tensor> pool, TrajectoryConfig base,
                                         double noise_sigma, int crop, int bound1, int bound2,
                                         std::uint64_t seed)
    : pool_(std::move(pool)), noise_(noise_sigma), crop_(crop), b1_(bound1), b2_(bound2),
      seed_(seed) {
    if (pool_.empty()) throw UsageError("ClassBalancedSource: empty image pool");
    base.validate();
    const double unit = base.max_speed / double(base.m); // speed per kernel cell
    for (int c = 0; c < 3; ++c) per_class_[c] = base;
    per_class_[0].max_speed = unit * 0.35 * b1_;
    per_class_[0].max_accel = base.max_accel * 0.3;
    per_class_[0].psf_sigma_max = std::min(base.psf_sigma_max, base.psf_sigma_min + 0.3);
    per_class_[1].max_speed = unit * 0.9 * b2_;
    per_class_[2].max_speed = base.max_speed * 1.4;
}

TrainingSample ClassBalancedSource::sample(std::uint64_t index) const {
    const int target = int(index % 3);
    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng rng(mix_seed(seed_, index * 64 + std::uint64_t(attempt)));
        const Tensor& img = pool_[rng.uniform_index(pool_.size())];
        Tensor sharp = random_crop(img, crop_, rng);
        BlurKernel k = make_kernel(rng, per_class_[target]);
        if (size_class_of(kernel_support_size(k), b1_, b2_) != target && attempt < 63) continue;
        TrainingSample s;
        s.sharp = std::move(sharp);
        s.kernel = std::move(k);
        s.blurred = apply_blur(s.sharp, s.kernel, noise_, rng);
        auto [yn, mu, sd] = normalize_y(rgb_to_y(s.blurred));
        s.y_norm = std::move(yn);
        s.y_mean = mu;
        s.y_std = sd;
        s.size_class = size_class_of(kernel_support_size(s.kernel), b1_, b2_);
        return s;
    }
    throw TrainError("ClassBalancedSource: unreachable");
}

// ---------------------------------------------------------------- batching

namespace {

Tensor stack(const std::vector<TrainingSample>& batch, const Tensor TrainingSample::*field) {
    const int n = int(batch.size());
    const Tensor& first = batch.front().*field;
    std::vector<int> shape;
    shape.push_back(n);
    for (int d : first.shape) shape.push_back(d);
    Tensor out(shape);
    const std::size_t stride = first.numel();
    for (int i = 0; i < n; ++i) {
        const Tensor& t = batch[std::size_t(i)].*field;
        if (t.numel() != stride) throw ShapeError("stack: inconsistent sample shapes");
        std::copy_n(t.ptr(), stride, out.ptr() + std::size_t(i) * stride);
    }
    return out;
}

} // namespace

Tensor stack_blurred(const std::vector<TrainingSample>& batch) {
    return stack(batch, &TrainingSample::blurred);
}
Tensor stack_sharp(const std::vector<TrainingSample>& batch) {
    return stack(batch, &TrainingSample::sharp);
}
Tensor stack_y(const std::vector<TrainingSample>& batch) {
    return stack(batch, &TrainingSample::y_norm);
}

Tensor stack_kernels(const std::vector<TrainingSample>& batch) {
    const int n = int(batch.size());
    const int m = batch.front().kernel.m;
    Tensor out({n, 1, m, m});
    for (int i = 0; i < n; ++i) {
        const BlurKernel& k = batch[std::size_t(i)].kernel;
        if (k.m != m) throw ShapeError("stack_kernels: inconsistent kernel sizes");
        std::copy_n(k.grid.data(), k.grid.size(), out.ptr() + std::size_t(i) * m * m);
    }
    return out;
}

Tensor stack_kernels_flat(const std::vector<TrainingSample>& batch) {
    Tensor k = stack_kernels(batch);
    return Tensor({k.dim(0), k.dim(2) * k.dim(3)}, std::move(k.data));
}

// ---------------------------------------------------------------- training

const char* to_string(Stage s) {
    switch (s) {
        case Stage::pretrain_analysis: return "pretrain-analysis";
        case Stage::pretrain_synthesis: return "pretrain-synthesis";
        case Stage::e2e: return "e2e";
        case Stage::classifier: return "classifier";
    }
    return "?";
}

StageResult run_stage(const TrainPlan& plan, const SampleSource& source, AnalysisNet* analysis,
                      SynthesisNet* synthesis, ClassifierNet* classifier) {
    const Stage stage = plan.stage;
    if ((stage == Stage::pretrain_analysis || stage == Stage::e2e) && !analysis)
        throw ConfigError("stage needs an analysis network");
    if ((stage == Stage::pretrain_synthesis || stage == Stage::e2e) && !synthesis)
        throw ConfigError("stage needs a synthesis network");
    if (stage == Stage::classifier && !classifier)
        throw ConfigError("stage needs a classifier network");
    if (plan.batch_size < 1 || plan.iterations < 1 || plan.epoch_iters < 1)
        throw ConfigError("train plan counts must be >= 1");

    std::vector<Param*> trained;
    if (stage == Stage::pretrain_analysis || stage == Stage::e2e)
        for (auto* p : analysis->params.all()) trained.push_back(p);
    if (stage == Stage::pretrain_synthesis || stage == Stage::e2e)
        for (auto* p : synthesis->params.all()) trained.push_back(p);
    if (stage == Stage::classifier)
        for (auto* p : classifier->params.all()) trained.push_back(p);

    Adam opt(trained);
    PlateauSchedule sched(plan.lr, plan.plateau_epochs, plan.lr_decay);

    std::ofstream log;
    if (!plan.loss_log_path.empty()) {
        log.open(plan.loss_log_path, std::ios::trunc);
        if (!log) throw IoError("cannot open loss log: " + plan.loss_log_path);
    }

    StageResult res;
    double lr = plan.lr;
    double epoch_acc = 0.0;
    int epoch_n = 0;

    const int B = plan.batch_size;
    std::vector<TrainingSample> batch(std::size_t(B));
    for (long long iter = 0; iter < plan.iterations; ++iter) {
#pragma omp parallel for schedule(static)
        for (int j = 0; j < B; ++j)
            batch[std::size_t(j)] = source.sample(std::uint64_t(iter) * B + std::uint64_t(j));

        Tape tape;
        int loss = -1;
        switch (stage) {
            case Stage::pretrain_analysis: {
                const int y = tape.leaf(stack_y(batch));
                const int kt = tape.leaf(stack_kernels(batch));
                loss = l1_kernel_loss(tape, estimate_kernel(*analysis, tape, y), kt);
                break;
            }
            case Stage::pretrain_synthesis: {
                const int b = tape.leaf(stack_blurred(batch));
                const int kt = tape.leaf(stack_kernels_flat(batch));
                const int sharp = tape.leaf(stack_sharp(batch));
                loss = l2_image_loss(tape, synthesize(*synthesis, tape, b, kt), sharp);
                break;
            }
            case Stage::e2e: {
                // image loss only; ground-truth kernels never touch the tape
                const int y = tape.leaf(stack_y(batch));
                const int b = tape.leaf(stack_blurred(batch));
                const int sharp = tape.leaf(stack_sharp(batch));
                int khat = estimate_kernel(*analysis, tape, y);
                const int m = analysis->cfg.m;
                khat = reshape(tape, khat, {B, m * m});
                loss = l2_image_loss(tape, synthesize(*synthesis, tape, b, khat), sharp);
                break;
            }
            case Stage::classifier: {
                const int y = tape.leaf(stack_y(batch));
                std::vector<int> labels(std::size_t(B));
                for (int j = 0; j < B; ++j) labels[std::size_t(j)] = batch[std::size_t(j)].size_class;
                loss = cross_entropy3(tape, classifier_logits(*classifier, tape, y), labels);
                break;
            }
        }

        const double loss_v = double(tape.val(loss).data[0]);
        if (!std::isfinite(loss_v))
            throw TrainError("non-finite loss at iteration " + std::to_string(iter) + " in stage " +
                             std::string(to_string(stage)));

        opt.zero_grad();
        tape.backward(loss);
        opt.step(lr);

        if (log) {
            char line[96];
            std::snprintf(line, sizeof(line), "%lld %.8e %.8e\n", iter, loss_v, lr);
            log << line;
        }

        epoch_acc += loss_v;
        ++epoch_n;
        if (epoch_n == plan.epoch_iters) {
            const double epoch_loss = epoch_acc / epoch_n;
            res.epoch_losses.push_back(epoch_loss);
            res.final_loss = epoch_loss;
            lr = sched.on_epoch_end(epoch_loss);
            epoch_acc = 0.0;
            epoch_n = 0;
        }

        if (plan.checkpoint_hook && plan.checkpoint_every > 0 &&
            (iter + 1) % plan.checkpoint_every == 0 && iter + 1 < plan.iterations)
            plan.checkpoint_hook(iter + 1);
    }

    if (epoch_n > 0) {
        res.final_loss = epoch_acc / epoch_n;
        res.epoch_losses.push_back(res.final_loss);
    }
    res.final_lr = lr;
    res.iterations = plan.iterations;
    if (plan.checkpoint_hook) plan.checkpoint_hook(plan.iterations);
    return res;
}

} // namespace deblur
