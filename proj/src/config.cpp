#include "gkd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace gkd {

std::string mode_name(AblationMode m)
{
    switch (m) {
    case AblationMode::Scratch: return "scratch";
    case AblationMode::UniformKD: return "uniform_kd";
    case AblationMode::GlOnly: return "gl_only";
    case AblationMode::GrOnly: return "gr_only";
    case AblationMode::GlGr: return "gl_gr";
    }
    return "?";
}

AblationMode parse_mode(const std::string& s)
{
    for (AblationMode m : kAllModes)
        if (mode_name(m) == s) return m;
    throw std::invalid_argument("unknown ablation mode '" + s + "' (scratch, uniform_kd, gl_only, gr_only, gl_gr)");
}

ModeWeights mode_weights(AblationMode mode, Scalar lambda, Scalar beta)
{
    ModeWeights w;
    switch (mode) {
    case AblationMode::Scratch: break;
    case AblationMode::UniformKD:
        w = {1.0 - lambda, lambda, 0.0, true, false, false};
        break;
    case AblationMode::GlOnly:
        w = {1.0 - lambda, lambda, 0.0, true, true, false};
        break;
    case AblationMode::GrOnly:
        w = {1.0, 0.0, beta, false, false, true};
        break;
    case AblationMode::GlGr:
        w = {1.0 - lambda, lambda, beta, true, true, true};
        break;
    }
    return w;
}

void DistillConfig::validate() const
{
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("distill.lambda must lie in (0, 1)");
    if (!(beta >= 0.0)) throw std::invalid_argument("distill.beta must be nonnegative");
    if (!(teacher_temperature > 0.0) || !(vertex_temperature > 0.0)) throw std::invalid_argument("temperatures must be positive");
    if (epochs < 0 || batch_size < 1) throw std::invalid_argument("distill.epochs/batch_size out of range");
    if (!(lr > 0.0) || lr_decay_every < 1 || !(lr_decay_factor > 0.0)) throw std::invalid_argument("invalid learning-rate schedule");
    if (sketch_dim < 1 || vertex_channels < 1 || sketch_dim % vertex_channels != 0)
        throw std::invalid_argument("distill.sketch_dim must be a positive multiple of distill.vertex_channels");
    if (edge_dims < 1) throw std::invalid_argument("distill.edge_dims must be >= 1");
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v)
{
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
        std::size_t used = 0;
        try {
            out = static_cast<T>(std::stod(v, &used));
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != v.size() || v.empty()) throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
    } else {
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt(Scalar v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

template <typename T>
std::string join(const std::vector<T>& xs)
{
    std::ostringstream os;
    for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
    return os.str();
}

std::vector<std::string> split_list(const std::string& v)
{
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

struct Field {
    std::string key;
    std::string doc;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field number(std::string key, std::string doc, T ExperimentConfig::*outer)
{
    return {key, std::move(doc), [outer](const ExperimentConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return fmt(c.*outer);
                else return std::to_string(c.*outer);
            },
            [outer, key](ExperimentConfig& c, const std::string& v) { c.*outer = parse_number<T>(key, v); }};
}

template <typename S, typename T>
Field nested(std::string key, std::string doc, S ExperimentConfig::*outer, T S::*inner)
{
    return {key, std::move(doc),
            [outer, inner](const ExperimentConfig& c) {
                if constexpr (std::is_same_v<T, bool>) return std::string((c.*outer).*inner ? "true" : "false");
                else if constexpr (std::is_floating_point_v<T>) return fmt((c.*outer).*inner);
                else return std::to_string((c.*outer).*inner);
            },
            [outer, inner, key](ExperimentConfig& c, const std::string& v) {
                if constexpr (std::is_same_v<T, bool>) (c.*outer).*inner = parse_bool(key, v);
                else (c.*outer).*inner = parse_number<T>(key, v);
            }};
}

Field path_field(std::string key, std::string doc, std::filesystem::path ExperimentConfig::*m)
{
    return {key, std::move(doc), [m](const ExperimentConfig& c) { return (c.*m).string(); },
            [m](ExperimentConfig& c, const std::string& v) { c.*m = v; }};
}

Field index_list(std::string key, std::string doc, std::vector<Index> ModelConfig::*m)
{
    return {key, std::move(doc), [m](const ExperimentConfig& c) { return join(c.model.*m); },
            [m, key](ExperimentConfig& c, const std::string& v) {
                std::vector<Index> out;
                for (const auto& s : split_list(v)) out.push_back(parse_number<Index>(key, s));
                c.model.*m = out;
            }};
}

Field bool_list(std::string key, std::string doc, std::vector<bool> ModelConfig::*m)
{
    return {key, std::move(doc),
            [m](const ExperimentConfig& c) {
                std::vector<int> v((c.model.*m).begin(), (c.model.*m).end());
                return join(v);
            },
            [m, key](ExperimentConfig& c, const std::string& v) {
                std::vector<bool> out;
                for (const auto& s : split_list(v)) out.push_back(parse_bool(key, s));
                c.model.*m = out;
            }};
}

const std::vector<Field>& fields()
{
    using E = ExperimentConfig;
    static const std::vector<Field> f = {
        path_field("data.dir", "dataset root holding train/val/test", &E::data_dir),
        number("data.seed", "generator seed", &E::data_seed),
        nested("data.train", "train clips", &E::sizes, &DatasetSizes::train),
        nested("data.val", "validation clips", &E::sizes, &DatasetSizes::val),
        nested("data.test", "test clips", &E::sizes, &DatasetSizes::test),
        nested("data.frames", "frames per clip", &E::geometry, &GeometryConfig::frames),
        nested("data.channels", "channels per frame", &E::geometry, &GeometryConfig::channels),
        nested("data.height", "frame height", &E::geometry, &GeometryConfig::height),
        nested("data.width", "frame width", &E::geometry, &GeometryConfig::width),
        nested("data.object_size", "sprite size in pixels", &E::geometry, &GeometryConfig::object_size),
        nested("data.min_speed", "minimum pixels per frame", &E::geometry, &GeometryConfig::min_speed),
        nested("data.max_speed", "maximum pixels per frame", &E::geometry, &GeometryConfig::max_speed),
        nested("data.distractors", "distractor sprites per clip", &E::geometry, &GeometryConfig::distractors),
        nested("data.noise", "additive Gaussian noise stdev", &E::geometry, &GeometryConfig::noise),
        nested("model.n_classes", "number of classes (<= 16)", &E::model, &ModelConfig::n_classes),
        nested("model.input_frames", "frames stacked into the encoder input", &E::model, &ModelConfig::input_frames),
        index_list("model.teacher_channels", "teacher conv widths", &ModelConfig::teacher_channels),
        bool_list("model.teacher_downsample", "teacher 2x pooling per block", &ModelConfig::teacher_downsample),
        index_list("model.student_channels", "student conv widths", &ModelConfig::student_channels),
        bool_list("model.student_downsample", "student 2x pooling per block", &ModelConfig::student_downsample),
        nested("model.pretext_hidden", "hidden units of the pretext MLP", &E::model, &ModelConfig::pretext_hidden),
        nested("model.triplet_margin", "tracking triplet margin", &E::model, &ModelConfig::triplet_margin),
        nested("pretext.sorting_n", "frames per sorting tuple", &E::pretext, &PretextOptions::sorting_n),
        nested("pretext.egomotion_max_gap", "largest frame gap sampled", &E::pretext, &PretextOptions::egomotion_max_gap),
        nested("pretext.patch_size", "tracking patch size", &E::pretext, &PretextOptions::patch_size),
        nested("pretext.tracking_delta", "tracking frame offset", &E::pretext, &PretextOptions::tracking_delta),
        nested("pretext.samples_per_clip", "pretext samples drawn per clip", &E::pretext, &PretextOptions::samples_per_clip),
        number("teacher.seed", "teacher init / sampling seed", &E::teacher_seed),
        path_field("teacher.dir", "teacher checkpoint directory", &E::teacher_dir),
        nested("pretrain.lr", "pretext learning rate", &E::pretrain, &TrainOptions::lr),
        nested("pretrain.epochs", "pretext max epochs", &E::pretrain, &TrainOptions::max_epochs),
        nested("pretrain.patience", "epochs without validation improvement before stopping", &E::pretrain, &TrainOptions::patience),
        nested("pretrain.batch_size", "pretext batch size", &E::pretrain, &TrainOptions::batch_size),
        nested("finetune.lr", "teacher fine-tune learning rate", &E::finetune, &TrainOptions::lr),
        nested("finetune.epochs", "teacher fine-tune epochs", &E::finetune, &TrainOptions::max_epochs),
        nested("finetune.batch_size", "teacher fine-tune batch size", &E::finetune, &TrainOptions::batch_size),
        nested("distill.lambda", "soft-loss weight in (0,1)", &E::distill, &DistillConfig::lambda),
        nested("distill.beta", "representation-graph loss weight", &E::distill, &DistillConfig::beta),
        nested("distill.teacher_temperature", "softening temperature of teacher logits", &E::distill, &DistillConfig::teacher_temperature),
        nested("distill.vertex_temperature", "softening temperature of bilinear vertices", &E::distill, &DistillConfig::vertex_temperature),
        nested("distill.epochs", "student epochs", &E::distill, &DistillConfig::epochs),
        nested("distill.batch_size", "student batch size", &E::distill, &DistillConfig::batch_size),
        nested("distill.lr", "initial learning rate", &E::distill, &DistillConfig::lr),
        nested("distill.lr_decay_every", "epochs between decays", &E::distill, &DistillConfig::lr_decay_every),
        nested("distill.lr_decay_factor", "multiplicative decay", &E::distill, &DistillConfig::lr_decay_factor),
        nested("distill.beta1", "Adam beta1", &E::distill, &DistillConfig::beta1),
        nested("distill.beta2", "Adam beta2", &E::distill, &DistillConfig::beta2),
        nested("distill.weight_decay", "L2 penalty on student weights", &E::distill, &DistillConfig::weight_decay),
        nested("distill.seed", "run seed (student init, shuffling, sketches)", &E::distill, &DistillConfig::seed),
        {"distill.mode", "scratch | uniform_kd | gl_only | gr_only | gl_gr",
         [](const E& c) { return mode_name(c.distill.mode); }, [](E& c, const std::string& v) { c.distill.mode = parse_mode(v); }},
        nested("distill.sketch_dim", "count-sketch output dimension e", &E::distill, &DistillConfig::sketch_dim),
        nested("distill.vertex_channels", "channels C_k each vertex is split into", &E::distill, &DistillConfig::vertex_channels),
        nested("distill.shared_sketch", "use one hash for both operands", &E::distill, &DistillConfig::shared_sketch),
        nested("distill.edge_dims", "length of each representation edge vector", &E::distill, &DistillConfig::edge_dims),
        nested("distill.bandwidth_sample", "max vectors used for the median bandwidth", &E::distill, &DistillConfig::bandwidth_sample),
        number("ablation.seeds", "seeds per mode", &E::ablation_seeds),
        {"ablation.modes", "comma-separated modes",
         [](const E& c) {
             std::vector<std::string> names;
             for (AblationMode m : c.ablation_modes) names.push_back(mode_name(m));
             return join(names);
         },
         [](E& c, const std::string& v) {
             c.ablation_modes.clear();
             for (const auto& s : split_list(v)) c.ablation_modes.push_back(parse_mode(s));
         }},
        path_field("run.dir", "output root for runs and the ablation table", &E::run_dir),
    };
    return f;
}

bool is_location(const std::string& key) { return key == "data.dir" || key == "teacher.dir" || key == "run.dir"; }

bool hashed_for_teacher(const std::string& key)
{
    if (is_location(key)) return false;
    return key.rfind("data.", 0) == 0 || key.rfind("model.", 0) == 0 || key.rfind("pretext.", 0) == 0 ||
           key.rfind("teacher.seed", 0) == 0 || key.rfind("pretrain.", 0) == 0 || key.rfind("finetune.", 0) == 0;
}

std::uint64_t hash_lines(const ExperimentConfig& c, const std::function<bool(const std::string&)>& keep)
{
    std::string text;
    for (const Field& f : fields())
        if (keep(f.key) && f.key != "data.dir" && f.key != "teacher.dir") text += f.key + "=" + f.get(c) + "\n";
    return fnv1a(text.data(), text.size());
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

void ExperimentConfig::validate() const
{
    geometry.validate();
    model.validate();
    distill.validate();
    if (model.n_classes > kMaxClasses) throw std::invalid_argument("model.n_classes exceeds " + std::to_string(kMaxClasses));
    if (model.frame_channels != geometry.channels || model.height != geometry.height || model.width != geometry.width)
        throw std::invalid_argument("model input geometry does not match data geometry");
    if (geometry.frames % model.input_frames != 0) throw std::invalid_argument("data.frames must be a multiple of model.input_frames");
    const auto tap = model.student_encoder().tap_shape(model.height, model.width);
    if (distill.sketch_dim / distill.vertex_channels != tap[1] * tap[2])
        throw std::invalid_argument("distill.sketch_dim / distill.vertex_channels must equal the student tap spatial size " +
                                    std::to_string(tap[1] * tap[2]));
    if (ablation_seeds < 1) throw std::invalid_argument("ablation.seeds must be >= 1");
    if (ablation_modes.empty()) throw std::invalid_argument("ablation.modes is empty");
}

void ExperimentConfig::set(const std::string& key, const std::string& value)
{
    for (const Field& f : fields())
        if (f.key == key) {
            f.set(*this, value);
            if (key == "data.channels") model.frame_channels = geometry.channels;
            if (key == "data.height") model.height = geometry.height;
            if (key == "data.width") model.width = geometry.width;
            if (key == "teacher.seed") pretrain.seed = finetune.seed = teacher_seed;
            return;
        }
    throw std::invalid_argument("unknown config key '" + key + "'");
}

std::string ExperimentConfig::to_text() const
{
    std::string out;
    for (const Field& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
    return out;
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::schema()
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const Field& f : fields()) out.emplace_back(f.key, f.doc);
    return out;
}

std::uint64_t ExperimentConfig::hash() const
{
    return hash_lines(*this, [](const std::string& k) { return k.rfind("ablation.", 0) != 0 && !is_location(k); });
}

std::uint64_t ExperimentConfig::teacher_hash() const { return hash_lines(*this, hashed_for_teacher); }

void apply_setting(ExperimentConfig& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("expected key = value, got '" + assignment + "'");
    cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        try {
            apply_setting(base, line);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

void apply_paper_scale(ExperimentConfig& cfg)
{
    cfg.distill.epochs = 350;
    cfg.distill.batch_size = 128;
    cfg.distill.lr = 0.01;
    cfg.distill.lr_decay_every = 50;
    cfg.distill.lr_decay_factor = 0.5;
}

std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

} // namespace gkd
