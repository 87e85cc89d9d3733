#pragma once

#include "gkd/autodiff.hpp"

#include <array>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace gkd {

/// Named parameters in insertion order.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor init);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::string>& names() const { return names_; }
    /// Total scalar count over names starting with `prefix`.
    Index count(const std::string& prefix = "") const;
    std::uint64_t checksum(const std::string& prefix = "") const;
    void zero_grad();

private:
    std::vector<std::string> names_;
    std::map<std::string, Tensor> index_;
};

/// Tape handles for a ParameterStore, created once per step.
class BoundParams {
public:
    Var operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return vars_.count(name) > 0; }
    const std::map<std::string, Var>& vars() const { return vars_; }

private:
    friend BoundParams bind(Tape&, const ParameterStore&, const std::function<bool(const std::string&)>&);
    std::map<std::string, Var> vars_;
};

/// Puts every parameter on the tape; those passing `trainable` require gradients.
BoundParams bind(Tape& tape, const ParameterStore& store, const std::function<bool(const std::string&)>& trainable = {});
/// Adds tape gradients of trainable bound parameters into the store's grad slots.
void accumulate_grads(const Tape& tape, const BoundParams& bound, ParameterStore& store);

struct EncoderConfig {
    Index in_channels = 4;
    std::vector<Index> channels;
    std::vector<bool> downsample;
    Index tap_index = -1;  // block whose output feeds the representation graph; -1 = last
    Index kernel = 3;

    Index blocks() const { return static_cast<Index>(channels.size()); }
    Index tap_block() const { return tap_index < 0 ? blocks() - 1 : tap_index; }
    /// Output (C, H, W) of the tap block for an H×W input.
    std::array<Index, 3> tap_shape(Index height, Index width) const;
    void validate() const;
};

void init_conv(ParameterStore& store, const std::string& name, Index in, Index out, Index kernel, std::mt19937_64& rng);
void init_linear(ParameterStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng);
void init_encoder(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, std::mt19937_64& rng);

Var conv_forward(const BoundParams& p, const std::string& name, Var x, Index kernel);
Var linear_forward(const BoundParams& p, const std::string& name, Var x);

struct EncoderOutput {
    Var tap;   // [N, C_tap, H', W'], post-activation
    Var last;  // final block output
};
/// conv (same padding) → ReLU → optional 2×2 average pool, per block.
EncoderOutput encoder_forward(const BoundParams& p, const std::string& prefix, const EncoderConfig& cfg, Var x);

} // namespace gkd
