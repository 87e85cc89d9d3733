#include "gkd/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gkd {

EncoderConfig ModelConfig::teacher_encoder() const
{
    EncoderConfig e;
    e.in_channels = input_channels();
    e.channels = teacher_channels;
    e.downsample = teacher_downsample;
    return e;
}

EncoderConfig ModelConfig::student_encoder() const
{
    EncoderConfig e;
    e.in_channels = input_channels();
    e.channels = student_channels;
    e.downsample = student_downsample;
    return e;
}

void ModelConfig::validate() const
{
    teacher_encoder().validate();
    student_encoder().validate();
    const auto t = teacher_encoder().tap_shape(height, width);
    const auto s = student_encoder().tap_shape(height, width);
    if (t[1] != s[1] || t[2] != s[2])
        throw std::invalid_argument("teacher and student tap layers must share spatial size (" + std::to_string(t[1]) + "x" +
                                    std::to_string(t[2]) + " vs " + std::to_string(s[1]) + "x" + std::to_string(s[2]) + ")");
    if (n_classes < 2) throw std::invalid_argument("need at least two classes");
}

ClassifierNet::ClassifierNet(EncoderConfig encoder, Index n_classes, std::uint64_t seed) : enc_(std::move(encoder)), classes_(n_classes)
{
    enc_.validate();
    std::mt19937_64 rng(seed);
    init_encoder(params_, "enc", enc_, rng);
    init_linear(params_, "head", enc_.channels[static_cast<std::size_t>(enc_.tap_block())], classes_, rng);
}

ClassifierNet::Output ClassifierNet::forward(const BoundParams& p, Var input) const
{
    if (input.shape().size() != 4 || input.shape()[1] != enc_.in_channels)
        throw std::invalid_argument("model input must be [N, " + std::to_string(enc_.in_channels) + ", H, W], got " +
                                    shape_string(input.shape()));
    EncoderOutput e = encoder_forward(p, "enc", enc_, input);
    return {linear_forward(p, "head", global_avg_pool(e.tap)), e.tap};
}

ClassifierNet::Eval ClassifierNet::forward_with_tap(const Tensor& batch) const
{
    Tape tape;
    BoundParams p = bind(tape, params_, [](const std::string&) { return false; });
    Output o = forward(p, tape.constant(batch));
    const Index n = batch.dim(0);
    return {o.logits.value().matrix(n, classes_), o.tap.value()};
}

namespace {

Index pretext_outputs(PretextTask task, const ModelConfig& cfg)
{
    switch (task) {
    case PretextTask::Sorting: return sorting_label_count(cfg.sorting_n);
    case PretextTask::Egomotion: return 2;
    default: return 0;
    }
}

Index branches(PretextTask task, const ModelConfig& cfg)
{
    switch (task) {
    case PretextTask::Sorting: return cfg.sorting_n;
    case PretextTask::Egomotion: return 2;
    case PretextTask::Tracking: return 3;
    case PretextTask::Prediction: return 1;
    }
    return 1;
}

/// Tile an input [c', H, W] along channels up to `channels`.
void write_replicated(const Tensor& in, Index channels, Scalar* out)
{
    const Index c = in.dim(0);
    if (channels % c != 0) throw std::invalid_argument("cannot tile pretext input to the encoder channel count");
    for (Index r = 0; r < channels / c; ++r) std::copy(in.data().data(), in.data().data() + in.size(), out + r * in.size());
}

} // namespace

TeacherModel::TeacherModel(PretextTask task, const ModelConfig& cfg, std::uint64_t seed)
    : ClassifierNet(cfg.teacher_encoder(), cfg.n_classes, seed), task_(task), cfg_(cfg)
{
    std::mt19937_64 rng(mix_seed(seed, 0x9E7));
    if (task == PretextTask::Sorting || task == PretextTask::Egomotion) {
        // Frame-level tasks keep the spatial layout of the last block: ordering depends on where the object is.
        EncoderConfig last = enc_;
        last.tap_index = -1;
        const auto shape = last.tap_shape(cfg.height, cfg.width);
        const Index feat = shape[0] * shape[1] * shape[2];
        init_linear(params_, "pretext.fc0", branches(task, cfg) * feat, cfg.pretext_hidden, rng);
        init_linear(params_, "pretext.fc1", cfg.pretext_hidden, pretext_outputs(task, cfg), rng);
    } else if (task == PretextTask::Prediction) {
        const auto tap = enc_.tap_shape(cfg.height, cfg.width);
        Index in = tap[0], h = tap[1], stage = 0;
        while (h < cfg.height) {
            const bool last = 2 * h >= cfg.height;
            const Index out = last ? cfg.frame_channels : std::max<Index>(8, in / 2);
            init_conv(params_, "pretext.dec" + std::to_string(stage++), in, out, 3, rng);
            in = out;
            h *= 2;
        }
    }
}

TeacherModel::PretextOutput TeacherModel::pretext_forward(const BoundParams& p, Tape& tape,
                                                          std::span<const PretextSample* const> batch) const
{
    if (batch.empty()) throw std::invalid_argument("empty pretext batch");
    for (const PretextSample* s : batch)
        if (s->task != task_) throw std::invalid_argument("pretext sample task does not match the teacher");
    const auto n = static_cast<Index>(batch.size());
    const Index nb = branches(task_, cfg_);
    const Index cin = enc_.in_channels;

    if (task_ == PretextTask::Prediction) {
        const Tensor& f0 = batch.front()->inputs.front();
        const Index hw = f0.dim(1) * f0.dim(2);
        Tensor x({n, cin, f0.dim(1), f0.dim(2)});
        Tensor target({n, batch.front()->target.size()});
        for (Index i = 0; i < n; ++i) {
            const auto& in = batch[static_cast<std::size_t>(i)]->inputs;
            if (static_cast<Index>(in.size()) * f0.dim(0) != cin) throw std::invalid_argument("prediction context does not match encoder input");
            for (std::size_t t = 0; t < in.size(); ++t)
                x.data().segment((i * cin) * hw + static_cast<Index>(t) * in[t].size(), in[t].size()) = in[t].data();
            target.data().segment(i * target.dim(1), target.dim(1)) = batch[static_cast<std::size_t>(i)]->target.data();
        }
        EncoderOutput e = encoder_forward(p, "enc", enc_, tape.constant(std::move(x)));
        Var y = e.tap;
        for (Index stage = 0; p.contains("pretext.dec" + std::to_string(stage) + ".w"); ++stage) {
            y = conv_forward(p, "pretext.dec" + std::to_string(stage), upsample2(y), 3);
            if (p.contains("pretext.dec" + std::to_string(stage + 1) + ".w")) y = relu(y);
        }
        Var loss = mse(y, target);
        return {loss, loss.value()[0]};
    }

    const Tensor& first = batch.front()->inputs.front();
    const Index h = first.dim(1), w = first.dim(2);
    const Index per = cin * h * w;
    Tensor x({nb * n, cin, h, w});
    for (Index b = 0; b < nb; ++b)
        for (Index i = 0; i < n; ++i)
            write_replicated(batch[static_cast<std::size_t>(i)]->inputs.at(static_cast<std::size_t>(b)), cin,
                             x.data().data() + (b * n + i) * per);
    Var last = encoder_forward(p, "enc", enc_, tape.constant(std::move(x))).last;
    Var pooled = task_ == PretextTask::Tracking ? global_avg_pool(last) : reshape(last, {nb * n, last.size() / (nb * n)});
    std::vector<Var> parts;
    for (Index b = 0; b < nb; ++b) parts.push_back(slice_rows(pooled, b * n, n));

    if (task_ == PretextTask::Tracking) {
        Var da = sub(parts[0], parts[1]);
        Var dn = sub(parts[0], parts[2]);
        Var pos = sum_rows(mul(da, da));
        Var neg = sum_rows(mul(dn, dn));
        Var loss = mean(relu(add_scalar(sub(pos, neg), cfg_.triplet_margin)));
        Index ok = 0;
        for (Index i = 0; i < n; ++i) ok += neg.value()[i] >= pos.value()[i] + cfg_.triplet_margin;
        return {loss, static_cast<Scalar>(ok) / static_cast<Scalar>(n)};
    }

    Var hidden = relu(linear_forward(p, "pretext.fc0", concat_cols(parts)));
    Var logits = linear_forward(p, "pretext.fc1", hidden);
    std::vector<int> labels;
    for (const PretextSample* s : batch) labels.push_back(s->label);
    Var loss = mean(cross_entropy_rows(logits, labels));
    const Index c = logits.shape()[1];
    auto lm = logits.value().matrix(n, c);
    Index ok = 0;
    for (Index i = 0; i < n; ++i) {
        Index arg = 0;
        lm.row(i).maxCoeff(&arg);
        ok += arg == labels[static_cast<std::size_t>(i)];
    }
    return {loss, static_cast<Scalar>(ok) / static_cast<Scalar>(n)};
}

namespace {

template <typename Fn>
void for_batches(const std::vector<Index>& order, Index batch_size, Fn&& fn)
{
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        fn(std::span<const Index>(order.data() + start, end - start));
    }
}

std::vector<Adam::Slot> slots_for(ParameterStore& store, const std::function<bool(const std::string&)>& trainable)
{
    std::vector<Adam::Slot> out;
    for (const auto& name : store.names())
        if (!trainable || trainable(name)) out.push_back({name, &store.get(name)});
    return out;
}

} // namespace

PretrainReport evaluate_pretext(const TeacherModel& teacher, const std::vector<PretextSample>& samples, Index batch_size)
{
    PretrainReport r;
    if (samples.empty()) return r;
    std::vector<Index> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Scalar loss = 0.0, metric = 0.0;
    for_batches(order, batch_size, [&](std::span<const Index> idx) {
        std::vector<const PretextSample*> batch;
        for (Index i : idx) batch.push_back(&samples[static_cast<std::size_t>(i)]);
        Tape tape;
        BoundParams p = bind(tape, teacher.params(), [](const std::string&) { return false; });
        auto out = teacher.pretext_forward(p, tape, batch);
        loss += out.loss.value()[0] * static_cast<Scalar>(idx.size());
        metric += out.metric * static_cast<Scalar>(idx.size());
    });
    r.val_loss = loss / static_cast<Scalar>(samples.size());
    r.val_metric = metric / static_cast<Scalar>(samples.size());
    return r;
}

TeacherModel pretrain_teacher(PretextTask task, const std::vector<PretextSample>& samples, const std::vector<PretextSample>& val,
                              const ModelConfig& cfg, const TrainOptions& opt, PretrainReport* report)
{
    cfg.validate();
    if (samples.empty()) throw std::invalid_argument("no pretext samples");
    for (const auto* set : {&samples, &val})
        for (const auto& s : *set)
            if (s.task != task) throw std::invalid_argument("pretext sample arity/task does not match teacher task");
    TeacherModel teacher(task, cfg, opt.seed);

    std::vector<Index> train_idx(samples.size());
    std::iota(train_idx.begin(), train_idx.end(), 0);

    Adam adam({opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
    auto slots = slots_for(teacher.params(), [](const std::string& n) { return n.rfind("head.", 0) != 0; });
    std::mt19937_64 rng(mix_seed(opt.seed, 0x7EA));
    PretrainReport rep;
    ParameterStore best = teacher.params();
    Scalar best_val = std::numeric_limits<Scalar>::infinity();
    int since_best = 0;
    for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        Scalar total = 0.0;
        for_batches(train_idx, opt.batch_size, [&](std::span<const Index> idx) {
            std::vector<const PretextSample*> batch;
            for (Index i : idx) batch.push_back(&samples[static_cast<std::size_t>(i)]);
            Tape tape;
            BoundParams p = bind(tape, teacher.params(), [](const std::string& n) { return n.rfind("head.", 0) != 0; });
            TeacherModel::PretextOutput out;
            try {
                out = teacher.pretext_forward(p, tape, batch);
            } catch (const std::domain_error& e) {
                throw std::runtime_error("pretext training of " + task_name(task) + " teacher diverged at epoch " +
                                         std::to_string(epoch) + ": " + e.what());
            }
            tape.backward(out.loss);
            accumulate_grads(tape, p, teacher.params());
            adam.step(slots, opt.lr);
            total += out.loss.value()[0] * static_cast<Scalar>(idx.size());
        });
        rep.epochs_run = epoch + 1;
        rep.train_loss = total / static_cast<Scalar>(train_idx.size());
        const PretrainReport v = val.empty() ? PretrainReport{} : evaluate_pretext(teacher, val);
        const Scalar score = val.empty() ? rep.train_loss : v.val_loss;
        if (score < best_val) {
            best_val = score;
            best = teacher.params();
            rep.val_loss = v.val_loss;
            rep.val_metric = v.val_metric;
            since_best = 0;
        } else if (++since_best >= opt.patience) {
            break;
        }
    }
    if (opt.max_epochs > 0) teacher.params() = best;
    if (report) *report = rep;
    return teacher;
}

std::vector<int> predict(const ClassifierNet& model, const std::vector<VideoClip>& clips, Index input_frames, Index batch_size)
{
    std::vector<int> out;
    std::vector<Index> order(clips.size());
    std::iota(order.begin(), order.end(), 0);
    for_batches(order, batch_size, [&](std::span<const Index> idx) {
        auto e = model.forward_with_tap(batch_inputs(clips, idx, input_frames));
        for (Index i = 0; i < e.logits.rows(); ++i) {
            Index arg = 0;
            e.logits.row(i).maxCoeff(&arg);
            out.push_back(static_cast<int>(arg));
        }
    });
    return out;
}

namespace {

Scalar accuracy_of(const std::vector<int>& pred, const std::vector<VideoClip>& clips)
{
    if (clips.empty()) return 0.0;
    Index ok = 0;
    for (std::size_t i = 0; i < clips.size(); ++i) ok += pred[i] == clips[i].label;
    return static_cast<Scalar>(ok) / static_cast<Scalar>(clips.size());
}

} // namespace

FinetuneReport finetune_classifier(ClassifierNet& model, const std::vector<VideoClip>& train, const std::vector<VideoClip>& val,
                                   Index input_frames, FinetunePolicy policy, const TrainOptions& opt)
{
    if (train.empty()) throw std::invalid_argument("no labeled clips to fine-tune on");
    auto trainable = [policy](const std::string& n) {
        return n.rfind("head.", 0) == 0 || (policy == FinetunePolicy::Full && n.rfind("enc.", 0) == 0);
    };
    Adam adam({opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
    auto slots = slots_for(model.params(), trainable);
    std::vector<Index> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(opt.seed, 0xF17E));
    ParameterStore best = model.params();
    Scalar best_acc = -1.0;
    for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for_batches(order, opt.batch_size, [&](std::span<const Index> idx) {
            Tape tape;
            BoundParams p = bind(tape, model.params(), trainable);
            auto out = model.forward(p, tape.constant(batch_inputs(train, idx, input_frames)));
            std::vector<int> labels;
            for (Index i : idx) labels.push_back(train[static_cast<std::size_t>(i)].label);
            Var loss;
            try {
                loss = mean(cross_entropy_rows(out.logits, labels));
            } catch (const std::domain_error& e) {
                throw std::runtime_error(std::string("fine-tuning diverged: ") + e.what());
            }
            tape.backward(loss);
            accumulate_grads(tape, p, model.params());
            adam.step(slots, opt.lr);
        });
        if (!val.empty()) {
            const Scalar acc = accuracy_of(predict(model, val, input_frames), val);
            if (acc > best_acc) {
                best_acc = acc;
                best = model.params();
            }
        }
    }
    if (!val.empty() && opt.max_epochs > 0) model.params() = best;
    FinetuneReport r;
    r.train_accuracy = accuracy_of(predict(model, train, input_frames), train);
    r.val_accuracy = val.empty() ? 0.0 : accuracy_of(predict(model, val, input_frames), val);
    return r;
}

} // namespace gkd
