#include "poseadapt/config.hpp"

#include <fstream>
#include <sstream>

namespace poseadapt {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw UsageError("bad numeric value for '" + key + "': " + v);
    return d;
}

int to_int(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    const int i = static_cast<int>(d);
    if (static_cast<double>(i) != d) throw UsageError("expected integer for '" + key + "': " + v);
    return i;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw UsageError("expected boolean for '" + key + "': " + v);
}

std::optional<bool> to_switch(const std::string& key, const std::string& v) {
    if (v == "default") return std::nullopt;
    return to_bool(key, v);
}

SelectionStrategy selection_from_name(const std::string& v) {
    if (v == "uniform") return SelectionStrategy::uniform;
    if (v == "weighted") return SelectionStrategy::weighted;
    if (v == "weighted_stochastic") return SelectionStrategy::weighted_stochastic;
    if (v == "balanced") return SelectionStrategy::balanced;
    if (v == "balanced_clustered") return SelectionStrategy::balanced_clustered;
    throw UsageError("unknown selection_strategy: " + v);
}

const char* selection_name(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::uniform: return "uniform";
        case SelectionStrategy::weighted: return "weighted";
        case SelectionStrategy::weighted_stochastic: return "weighted_stochastic";
        case SelectionStrategy::balanced: return "balanced";
        case SelectionStrategy::balanced_clustered: return "balanced_clustered";
    }
    return "?";
}

PseudoLabelMode pl_from_name(const std::string& v) {
    if (v == "weak") return PseudoLabelMode::weak;
    if (v == "strong") return PseudoLabelMode::strong;
    if (v == "adaptive") return PseudoLabelMode::adaptive;
    throw UsageError("unknown pseudo_label_mode: " + v);
}

const char* pl_name(PseudoLabelMode m) {
    switch (m) {
        case PseudoLabelMode::weak: return "weak";
        case PseudoLabelMode::strong: return "strong";
        case PseudoLabelMode::adaptive: return "adaptive";
    }
    return "?";
}

std::string switch_name(const std::optional<bool>& s) {
    if (!s.has_value()) return "default";
    return *s ? "on" : "off";
}

}  // namespace

const char* mode_name(PipelineModeKind mode) {
    switch (mode) {
        case PipelineModeKind::single_stream: return "single";
        case PipelineModeKind::per_video_reset: return "pervideo";
        case PipelineModeKind::full_method: return "full";
    }
    return "?";
}

PipelineModeKind mode_from_name(const std::string& name) {
    if (name == "single") return PipelineModeKind::single_stream;
    if (name == "pervideo") return PipelineModeKind::per_video_reset;
    if (name == "full") return PipelineModeKind::full_method;
    throw UsageError("unknown mode: " + name + " (expected single|pervideo|full)");
}

void apply_key(ExperimentConfig& cfg, const std::string& section, const std::string& key,
               const std::string& value) {
    StreamConfig& st = cfg.stream;
    RunConfig& r = cfg.run;
    PretrainConfig& pt = cfg.pretrain;
    const std::string full = section.empty() ? key : section + "." + key;

    if (section == "stream") {
        if (key == "video_count") st.video_count = to_int(full, value);
        else if (key == "frames_per_video") st.frames_per_video = to_int(full, value);
        else if (key == "source_sample_count") st.source_sample_count = to_int(full, value);
        else if (key == "source_angle_range") st.source_angle_range = to_double(full, value);
        else if (key == "target_angle_range") st.target_angle_range = to_double(full, value);
        else if (key == "target_mean_shift") st.target_mean_shift = to_double(full, value);
        else if (key == "walk_step") st.walk_step = to_double(full, value);
        else if (key == "trans_walk_step") st.trans_walk_step = to_double(full, value);
        else if (key == "domain_shift_mag") st.domain_shift_mag = to_double(full, value);
        else if (key == "per_video_shift_frac") st.per_video_shift_frac = to_double(full, value);
        else if (key == "focal_jitter") st.focal_jitter = to_double(full, value);
        else if (key == "noise_sigma_base") st.noise_sigma_base = to_double(full, value);
        else if (key == "event_rate") st.event_rate = to_double(full, value);
        else if (key == "event_noise_multiplier") st.event_noise_multiplier = to_double(full, value);
        else if (key == "conf_scale") st.conf_scale = to_double(full, value);
        else if (key == "conf_jitter") st.conf_jitter = to_double(full, value);
        else if (key == "student_t_noise") st.student_t_noise = to_bool(full, value);
        else if (key == "student_t_dof") st.student_t_dof = to_double(full, value);
        else if (key == "feature_noise") st.feature_noise = to_double(full, value);
        else throw UsageError("unknown config key: " + full);
    } else if (section == "model") {
        if (key == "hidden1") pt.hidden1 = to_int(full, value);
        else if (key == "hidden2") pt.hidden2 = to_int(full, value);
        else if (key == "ema_decay") r.ema_decay = to_double(full, value);
        else throw UsageError("unknown config key: " + full);
    } else if (section == "pretrain") {
        if (key == "learning_rate") pt.learning_rate = to_double(full, value);
        else if (key == "batch_size") pt.batch_size = to_int(full, value);
        else if (key == "max_epochs") pt.max_epochs = to_int(full, value);
        else if (key == "patience") pt.patience = to_int(full, value);
        else if (key == "val_fraction") pt.val_fraction = to_double(full, value);
        else throw UsageError("unknown config key: " + full);
    } else if (section == "engine") {
        if (key == "lambda1") r.weights.lambda1 = to_double(full, value);
        else if (key == "lambda2") r.weights.lambda2 = to_double(full, value);
        else if (key == "cos_sim_stop_threshold") r.two_stage.cos_sim_stop_threshold = to_double(full, value);
        else if (key == "stage1_max_iters") r.two_stage.stage1_max_iters = to_int(full, value);
        else if (key == "stage2_epe_threshold_px") r.two_stage.stage2_epe_threshold_px = to_double(full, value);
        else if (key == "stage2_max_iters") r.two_stage.stage2_max_iters = to_int(full, value);
        else if (key == "similarity_layer") r.two_stage.similarity_layer = to_int(full, value);
        else if (key == "lr_stream") r.lr_stream = to_double(full, value);
        else if (key == "momentum_stream") r.momentum_stream = to_double(full, value);
        else if (key == "lr_agg") r.lr_agg = to_double(full, value);
        else if (key == "momentum_agg") r.momentum_agg = to_double(full, value);
        else if (key == "batch_agg") r.batch_agg = to_int(full, value);
        else if (key == "batch_stream") r.batch_stream = to_int(full, value);
        else if (key == "window") r.window = to_int(full, value);
        else if (key == "rot_max") r.aug.rot_max = to_double(full, value);
        else if (key == "scale_min") r.aug.scale_min = to_double(full, value);
        else if (key == "scale_max") r.aug.scale_max = to_double(full, value);
        else if (key == "shift_max") r.aug.shift_max = to_double(full, value);
        else if (key == "crop_min") r.aug.crop_min = to_double(full, value);
        else if (key == "crop_max") r.aug.crop_max = to_double(full, value);
        else if (key == "pseudo_label_source") {
            if (value == "teacher") r.pl_source = PseudoLabelSource::teacher;
            else if (value == "student") r.pl_source = PseudoLabelSource::student;
            else throw UsageError("unknown pseudo_label_source: " + value);
        } else throw UsageError("unknown config key: " + full);
    } else if (section == "selection") {
        if (key == "keypoint_threshold") r.rule.keypoint_threshold = to_double(full, value);
        else if (key == "min_confident_count") r.rule.min_confident_count = to_int(full, value);
        else if (key == "n_clusters") r.n_clusters = to_int(full, value);
        else if (key == "n_samples_video") r.n_per_video = to_int(full, value);
        else if (key == "selection_strategy") r.selection = selection_from_name(value);
        else if (key == "pseudo_label_mode") r.pl_mode = pl_from_name(value);
        else throw UsageError("unknown config key: " + full);
    } else if (section == "run") {
        if (key == "mode") r.mode = mode_from_name(value);
        else if (key == "aggregation") r.switches.aggregation = to_switch(full, value);
        else if (key == "local_aug") r.switches.local_aug = to_switch(full, value);
        else if (key == "two_stage") r.switches.two_stage = to_switch(full, value);
        else if (key == "seed") {
            const long long s = static_cast<long long>(to_double(full, value));
            cfg.stream.seed = static_cast<std::uint64_t>(s);
            r.seed = static_cast<std::uint64_t>(s);
        } else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "checkpoint") cfg.checkpoint = value;
        else if (key == "streams") cfg.streams_path = value;
        else if (key == "ablate_seeds") cfg.ablate_seeds = to_int(full, value);
        else if (key == "clean_streams") cfg.clean_streams = to_bool(full, value);
        else throw UsageError("unknown config key: " + full);
    } else {
        throw UsageError("unknown config section: [" + section + "]");
    }
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    ExperimentConfig cfg;
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw UsageError("malformed section header at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("expected key = value at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw UsageError("empty key or value at line " + std::to_string(lineno));
        apply_key(cfg, section, key, value);
    }
    return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    const StreamConfig& st = cfg.stream;
    const RunConfig& r = cfg.run;
    const PretrainConfig& pt = cfg.pretrain;
    os << "[stream]\n";
    os << "video_count = " << st.video_count << "\n";
    os << "frames_per_video = " << st.frames_per_video << "\n";
    os << "source_sample_count = " << st.source_sample_count << "\n";
    os << "source_angle_range = " << format_double(st.source_angle_range) << "\n";
    os << "target_angle_range = " << format_double(st.target_angle_range) << "\n";
    os << "target_mean_shift = " << format_double(st.target_mean_shift) << "\n";
    os << "walk_step = " << format_double(st.walk_step) << "\n";
    os << "trans_walk_step = " << format_double(st.trans_walk_step) << "\n";
    os << "domain_shift_mag = " << format_double(st.domain_shift_mag) << "\n";
    os << "per_video_shift_frac = " << format_double(st.per_video_shift_frac) << "\n";
    os << "focal_jitter = " << format_double(st.focal_jitter) << "\n";
    os << "noise_sigma_base = " << format_double(st.noise_sigma_base) << "\n";
    os << "event_rate = " << format_double(st.event_rate) << "\n";
    os << "event_noise_multiplier = " << format_double(st.event_noise_multiplier) << "\n";
    os << "conf_scale = " << format_double(st.conf_scale) << "\n";
    os << "conf_jitter = " << format_double(st.conf_jitter) << "\n";
    os << "student_t_noise = " << (st.student_t_noise ? "true" : "false") << "\n";
    os << "student_t_dof = " << format_double(st.student_t_dof) << "\n";
    os << "feature_noise = " << format_double(st.feature_noise) << "\n";
    os << "[model]\n";
    os << "hidden1 = " << pt.hidden1 << "\n";
    os << "hidden2 = " << pt.hidden2 << "\n";
    os << "ema_decay = " << format_double(r.ema_decay) << "\n";
    os << "[pretrain]\n";
    os << "learning_rate = " << format_double(pt.learning_rate) << "\n";
    os << "batch_size = " << pt.batch_size << "\n";
    os << "max_epochs = " << pt.max_epochs << "\n";
    os << "patience = " << pt.patience << "\n";
    os << "val_fraction = " << format_double(pt.val_fraction) << "\n";
    os << "[engine]\n";
    os << "lambda1 = " << format_double(r.weights.lambda1) << "\n";
    os << "lambda2 = " << format_double(r.weights.lambda2) << "\n";
    os << "cos_sim_stop_threshold = " << format_double(r.two_stage.cos_sim_stop_threshold) << "\n";
    os << "stage1_max_iters = " << r.two_stage.stage1_max_iters << "\n";
    os << "stage2_epe_threshold_px = " << format_double(r.two_stage.stage2_epe_threshold_px) << "\n";
    os << "stage2_max_iters = " << r.two_stage.stage2_max_iters << "\n";
    os << "similarity_layer = " << r.two_stage.similarity_layer << "\n";
    os << "lr_stream = " << format_double(r.lr_stream) << "\n";
    os << "momentum_stream = " << format_double(r.momentum_stream) << "\n";
    os << "lr_agg = " << format_double(r.lr_agg) << "\n";
    os << "momentum_agg = " << format_double(r.momentum_agg) << "\n";
    os << "batch_agg = " << r.batch_agg << "\n";
    os << "batch_stream = " << r.batch_stream << "\n";
    os << "window = " << r.window << "\n";
    os << "rot_max = " << format_double(r.aug.rot_max) << "\n";
    os << "scale_min = " << format_double(r.aug.scale_min) << "\n";
    os << "scale_max = " << format_double(r.aug.scale_max) << "\n";
    os << "shift_max = " << format_double(r.aug.shift_max) << "\n";
    os << "crop_min = " << format_double(r.aug.crop_min) << "\n";
    os << "crop_max = " << format_double(r.aug.crop_max) << "\n";
    os << "pseudo_label_source = "
       << (r.pl_source == PseudoLabelSource::teacher ? "teacher" : "student") << "\n";
    os << "[selection]\n";
    os << "keypoint_threshold = " << format_double(r.rule.keypoint_threshold) << "\n";
    os << "min_confident_count = " << r.rule.min_confident_count << "\n";
    os << "n_clusters = " << r.n_clusters << "\n";
    os << "n_samples_video = " << r.n_per_video << "\n";
    os << "selection_strategy = " << selection_name(r.selection) << "\n";
    os << "pseudo_label_mode = " << pl_name(r.pl_mode) << "\n";
    os << "[run]\n";
    os << "mode = " << mode_name(r.mode) << "\n";
    os << "aggregation = " << switch_name(r.switches.aggregation) << "\n";
    os << "local_aug = " << switch_name(r.switches.local_aug) << "\n";
    os << "two_stage = " << switch_name(r.switches.two_stage) << "\n";
    os << "seed = " << r.seed << "\n";
    os << "out_dir = " << cfg.out_dir << "\n";
    os << "checkpoint = " << cfg.checkpoint << "\n";
    os << "streams = " << cfg.streams_path << "\n";
    os << "ablate_seeds = " << cfg.ablate_seeds << "\n";
    os << "clean_streams = " << (cfg.clean_streams ? "true" : "false") << "\n";
    return os.str();
}

}  // namespace poseadapt
