#pragma once

#include "gkd/nn.hpp"

#include <map>
#include <string>
#include <vector>

namespace gkd {

struct AdamConfig {
    Scalar lr = 0.01;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar eps = 1e-8;
    Scalar weight_decay = 0.0;  // L2 penalty added to the gradient
};

/// lr0 · factor^⌊epoch / every⌋ (epochs are 0-based).
Scalar step_decay_lr(Scalar lr0, int epoch, int every, Scalar factor);

/// Adam with bias correction. State is keyed by parameter name so several
/// stores (student weights, graph edges) can share one optimizer.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    struct Slot {
        std::string name;
        Tensor* param;
    };
    /// One update of every slot from its grad; grads are cleared afterwards.
    void step(const std::vector<Slot>& slots, Scalar lr);

    const AdamConfig& config() const { return cfg_; }
    long long steps() const { return t_; }

    /// Moment buffers, for checkpointing.
    std::vector<std::pair<std::string, Tensor>> state() const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& entries);

private:
    AdamConfig cfg_;
    long long t_ = 0;
    std::map<std::string, Vector> m_, v_;
};

} // namespace gkd
