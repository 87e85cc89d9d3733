#include "gkd/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace gkd {

Tensor& ParameterStore::add(const std::string& name, Tensor init)
{
    if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    init.set_requires_grad(true);
    names_.push_back(name);
    return index_[name] = std::move(init);
}

Tensor& ParameterStore::get(const std::string& name)
{
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
}

Index ParameterStore::count(const std::string& prefix) const
{
    Index n = 0;
    for (const auto& name : names_)
        if (name.rfind(prefix, 0) == 0) n += get(name).size();
    return n;
}

std::uint64_t ParameterStore::checksum(const std::string& prefix) const
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& name : names_) {
        if (name.rfind(prefix, 0) != 0) continue;
        h = fnv1a(name.data(), name.size(), h);
        const std::uint64_t t = get(name).checksum();
        h = fnv1a(&t, sizeof t, h);
    }
    return h;
}

void ParameterStore::zero_grad()
{
    for (auto& [name, t] : index_) t.zero_grad();
}

Var BoundParams::operator[](const std::string& name) const
{
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("parameter not bound: " + name);
    return it->second;
}

BoundParams bind(Tape& tape, const ParameterStore& store, const std::function<bool(const std::string&)>& trainable)
{
    BoundParams b;
    for (const auto& name : store.names()) {
        const bool train = !trainable || trainable(name);
        b.vars_[name] = tape.leaf(store.get(name), train);
    }
    return b;
}

void accumulate_grads(const Tape& tape, const BoundParams& bound, ParameterStore& store)
{
    for (const auto& [name, v] : bound.vars())
        if (v.requires_grad()) store.get(name).grad() += tape.grad(v);
}

std::array<Index, 3> EncoderConfig::tap_shape(Index height, Index width) const
{
    for (Index b = 0; b <= tap_block(); ++b)
        if (downsample[static_cast<std::size_t>(b)]) {
            height /= 2;
            width /= 2;
        }
    return {channels[static_cast<std::size_t>(tap_block())], height, width};
}

void EncoderConfig::validate() const
{
    if (channels.empty()) throw std::invalid_argument("encoder needs at least one block");
    if (downsample.size() != channels.size()) throw std::invalid_argument("encoder downsample flags do not match block count");
    if (tap_block() < 0 || tap_block() >= blocks()) throw std::invalid_argument("encoder tap index out of range");
    if (kernel % 2 != 1) throw std::invalid_argument("encoder kernel must be odd");
}

void init_conv(ParameterStore& store, const std::string& name, Index in, Index out, Index kernel, std::mt19937_64& rng)
{
    std::normal_distribution<Scalar> n(0.0, std::sqrt(2.0 / static_cast<Scalar>(in * kernel * kernel)));
    Tensor w({out, in, kernel, kernel});
    for (Index i = 0; i < w.size(); ++i) w[i] = n(rng);
    store.add(name + ".w", std::move(w));
    store.add(name + ".b", Tensor({out}));
}

void init_linear(ParameterStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng)
{
    std::normal_distribution<Scalar> n(0.0, std::sqrt(1.0 / static_cast<Scalar>(in)));
    Tensor w({out, in});
    for (Index i = 0; i < w.size(); ++i) w[i] = n(rng);
    store.add(name + ".w", std::move(w));
    store.add(name + ".b", Tensor({out}));
}

void init_encoder(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, std::mt19937_64& rng)
{
    cfg.validate();
    Index in = cfg.in_channels;
    for (Index b = 0; b < cfg.blocks(); ++b) {
        const Index out = cfg.channels[static_cast<std::size_t>(b)];
        init_conv(store, prefix + ".conv" + std::to_string(b), in, out, cfg.kernel, rng);
        in = out;
    }
}

Var conv_forward(const BoundParams& p, const std::string& name, Var x, Index kernel)
{
    return conv2d(x, p[name + ".w"], p[name + ".b"], {1, kernel / 2});
}

Var linear_forward(const BoundParams& p, const std::string& name, Var x) { return linear(x, p[name + ".w"], p[name + ".b"]); }

EncoderOutput encoder_forward(const BoundParams& p, const std::string& prefix, const EncoderConfig& cfg, Var x)
{
    EncoderOutput out;
    for (Index b = 0; b < cfg.blocks(); ++b) {
        x = relu(conv_forward(p, prefix + ".conv" + std::to_string(b), x, cfg.kernel));
        if (cfg.downsample[static_cast<std::size_t>(b)]) x = avg_pool2(x);
        if (b == cfg.tap_block()) out.tap = x;
    }
    out.last = x;
    return out;
}

} // namespace gkd
