#include "deblur/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "deblur/errors.hpp"

namespace deblur {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    std::size_t b = s.find_last_not_of(" \t");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
    return x;
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
    return x;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(int(parse_int(key, trim(item))));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

GuidanceMode parse_guidance(const std::string& v) {
    if (v == "none") return GuidanceMode::none;
    if (v == "additive") return GuidanceMode::additive;
    if (v == "multiplicative") return GuidanceMode::multiplicative;
    if (v == "both") return GuidanceMode::both;
    throw ConfigError("synthesis.guidance: unknown mode '" + v + "'");
}

PairMode parse_pair_mode(const std::string& v) {
    if (v == "unordered_diag") return PairMode::unordered_diag;
    if (v == "ordered_offdiag") return PairMode::ordered_offdiag;
    throw ConfigError("xcorr.pair_mode: unknown mode '" + v + "'");
}

} // namespace

RunConfig RunConfig::preset_toy() { return RunConfig{}; }

RunConfig RunConfig::preset_paper() {
    RunConfig c;
    c.preset = "paper";
    c.image_crop = 512;
    c.kernel_m = 85;
    c.analysis_feat_channels = 64;
    c.analysis_reduced_channels = 32;
    c.synthesis_channels = 128;
    c.synthesis_guide_hidden = 128;
    c.traj_control_points = 10;
    c.traj_max_speed = 12.0;
    c.traj_max_accel = 5.0;
    c.traj_samples_per_segment = 24;
    c.traj_psf_sigma_min = 0.3;
    c.traj_psf_sigma_max = 2.0;
    c.class_bound1 = 31;
    c.class_bound2 = 61;
    c.train_lr = 1e-4;
    c.train_iterations = 1000000;
    c.train_epoch_iters = 5000;
    return c;
}

RunConfig RunConfig::from_preset(const std::string& name) {
    if (name == "toy") return preset_toy();
    if (name == "paper") return preset_paper();
    throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
}

AnalysisConfig RunConfig::analysis() const {
    AnalysisConfig a;
    a.levels = analysis_levels;
    a.feat_channels = analysis_feat_channels;
    a.reduced_channels = analysis_reduced_channels;
    a.feat_kernel = analysis_feat_kernel;
    a.convs_per_level = analysis_convs_per_level;
    a.integrate_kernel = analysis_integrate_kernel;
    a.head_channels = analysis_head_channels;
    a.head_kernel = analysis_head_kernel;
    a.m = kernel_m;
    a.pair_mode = pair_mode;
    return a;
}

SynthesisConfig RunConfig::synthesis() const {
    SynthesisConfig s;
    s.depth = synthesis_depth;
    s.channels = synthesis_channels;
    s.guide_hidden = synthesis_guide_hidden;
    s.convs_per_block = synthesis_convs_per_block;
    s.m = kernel_m;
    s.guidance = guidance;
    return s;
}

TrajectoryConfig RunConfig::trajectory() const {
    TrajectoryConfig t;
    t.num_control_points = traj_control_points;
    t.max_speed = traj_max_speed;
    t.max_accel = traj_max_accel;
    t.samples_per_segment = traj_samples_per_segment;
    t.psf_sigma_min = traj_psf_sigma_min;
    t.psf_sigma_max = traj_psf_sigma_max;
    t.exposure_jitter = traj_exposure_jitter;
    t.m = kernel_m;
    return t;
}

void RunConfig::validate() const {
    analysis().validate();
    synthesis().validate();
    trajectory().validate();
    if (noise_sigma < 0.0) throw ConfigError("noise.sigma must be non-negative");
    const int div_a = 1 << (analysis_levels - 1);
    const int div_s = 1 << synthesis_depth;
    if (image_crop % div_a != 0)
        throw ConfigError("image.crop " + std::to_string(image_crop) +
                          " not divisible by 2^(levels-1) = " + std::to_string(div_a));
    if (image_crop % div_s != 0)
        throw ConfigError("image.crop " + std::to_string(image_crop) +
                          " not divisible by 2^depth = " + std::to_string(div_s));
    if (!(0 < class_bound1 && class_bound1 < class_bound2 && class_bound2 < kernel_m))
        throw ConfigError("classify.bounds must satisfy 0 < b1 < b2 < m");
    if (train_lr <= 0.0) throw ConfigError("train.lr must be positive");
    if (!(train_lr_decay > 0.0 && train_lr_decay < 1.0))
        throw ConfigError("train.lr_decay must be in (0,1)");
    if (train_batch < 1 || train_iterations < 1 || train_epoch_iters < 1 ||
        train_plateau_epochs < 1)
        throw ConfigError("train counts must be >= 1");
    if (train_checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
}

std::string RunConfig::serialize() const {
    std::map<std::string, std::string> kv;
    kv["preset"] = preset;
    kv["image.crop"] = std::to_string(image_crop);
    kv["kernel.m"] = std::to_string(kernel_m);
    kv["noise.sigma"] = fmt_double(noise_sigma);
    kv["analysis.levels"] = std::to_string(analysis_levels);
    kv["analysis.feat_channels"] = std::to_string(analysis_feat_channels);
    kv["analysis.reduced_channels"] = std::to_string(analysis_reduced_channels);
    kv["analysis.feat_kernel"] = std::to_string(analysis_feat_kernel);
    kv["analysis.convs_per_level"] = std::to_string(analysis_convs_per_level);
    kv["analysis.integrate_kernel"] = std::to_string(analysis_integrate_kernel);
    kv["analysis.head_channels"] = fmt_int_list(analysis_head_channels);
    kv["analysis.head_kernel"] = std::to_string(analysis_head_kernel);
    kv["xcorr.pair_mode"] = to_string(pair_mode);
    kv["synthesis.depth"] = std::to_string(synthesis_depth);
    kv["synthesis.channels"] = std::to_string(synthesis_channels);
    kv["synthesis.guide_hidden"] = std::to_string(synthesis_guide_hidden);
    kv["synthesis.convs_per_block"] = std::to_string(synthesis_convs_per_block);
    kv["synthesis.guidance"] = to_string(guidance);
    kv["traj.control_points"] = std::to_string(traj_control_points);
    kv["traj.max_speed"] = fmt_double(traj_max_speed);
    kv["traj.max_accel"] = fmt_double(traj_max_accel);
    kv["traj.samples_per_segment"] = std::to_string(traj_samples_per_segment);
    kv["traj.psf_sigma_min"] = fmt_double(traj_psf_sigma_min);
    kv["traj.psf_sigma_max"] = fmt_double(traj_psf_sigma_max);
    kv["traj.exposure_jitter"] = fmt_double(traj_exposure_jitter);
    kv["classify.bounds"] = std::to_string(class_bound1) + "," + std::to_string(class_bound2);
    kv["train.lr"] = fmt_double(train_lr);
    kv["train.batch"] = std::to_string(train_batch);
    kv["train.iterations"] = std::to_string(train_iterations);
    kv["train.epoch_iters"] = std::to_string(train_epoch_iters);
    kv["train.plateau_epochs"] = std::to_string(train_plateau_epochs);
    kv["train.lr_decay"] = fmt_double(train_lr_decay);
    kv["train.checkpoint_every"] = std::to_string(train_checkpoint_every);

    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, val).second) throw ConfigError("duplicate key '" + key + "'");
    }

    RunConfig c = kv.count("preset") ? from_preset(kv.at("preset")) : preset_toy();
    for (const auto& [key, val] : kv) {
        if (key == "preset") continue;
        else if (key == "image.crop") c.image_crop = int(parse_int(key, val));
        else if (key == "kernel.m") c.kernel_m = int(parse_int(key, val));
        else if (key == "noise.sigma") c.noise_sigma = parse_double(key, val);
        else if (key == "analysis.levels") c.analysis_levels = int(parse_int(key, val));
        else if (key == "analysis.feat_channels") c.analysis_feat_channels = int(parse_int(key, val));
        else if (key == "analysis.reduced_channels") c.analysis_reduced_channels = int(parse_int(key, val));
        else if (key == "analysis.feat_kernel") c.analysis_feat_kernel = int(parse_int(key, val));
        else if (key == "analysis.convs_per_level") c.analysis_convs_per_level = int(parse_int(key, val));
        else if (key == "analysis.integrate_kernel") c.analysis_integrate_kernel = int(parse_int(key, val));
        else if (key == "analysis.head_channels") c.analysis_head_channels = parse_int_list(key, val);
        else if (key == "analysis.head_kernel") c.analysis_head_kernel = int(parse_int(key, val));
        else if (key == "xcorr.pair_mode") c.pair_mode = parse_pair_mode(val);
        else if (key == "synthesis.depth") c.synthesis_depth = int(parse_int(key, val));
        else if (key == "synthesis.channels") c.synthesis_channels = int(parse_int(key, val));
        else if (key == "synthesis.guide_hidden") c.synthesis_guide_hidden = int(parse_int(key, val));
        else if (key == "synthesis.convs_per_block") c.synthesis_convs_per_block = int(parse_int(key, val));
        else if (key == "synthesis.guidance") c.guidance = parse_guidance(val);
        else if (key == "traj.control_points") c.traj_control_points = int(parse_int(key, val));
        else if (key == "traj.max_speed") c.traj_max_speed = parse_double(key, val);
        else if (key == "traj.max_accel") c.traj_max_accel = parse_double(key, val);
        else if (key == "traj.samples_per_segment") c.traj_samples_per_segment = int(parse_int(key, val));
        else if (key == "traj.psf_sigma_min") c.traj_psf_sigma_min = parse_double(key, val);
        else if (key == "traj.psf_sigma_max") c.traj_psf_sigma_max = parse_double(key, val);
        else if (key == "traj.exposure_jitter") c.traj_exposure_jitter = parse_double(key, val);
        else if (key == "classify.bounds") {
            const auto b = parse_int_list(key, val);
            if (b.size() != 2) throw ConfigError("classify.bounds: expected two values");
            c.class_bound1 = b[0];
            c.class_bound2 = b[1];
        }
        else if (key == "train.lr") c.train_lr = parse_double(key, val);
        else if (key == "train.batch") c.train_batch = int(parse_int(key, val));
        else if (key == "train.iterations") c.train_iterations = parse_int(key, val);
        else if (key == "train.epoch_iters") c.train_epoch_iters = int(parse_int(key, val));
        else if (key == "train.plateau_epochs") c.train_plateau_epochs = int(parse_int(key, val));
        else if (key == "train.lr_decay") c.train_lr_decay = parse_double(key, val);
        else if (key == "train.checkpoint_every") c.train_checkpoint_every = parse_int(key, val);
        else throw ConfigError("unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

} // namespace deblur
