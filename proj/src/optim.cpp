#include "gkd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gkd {

Scalar step_decay_lr(Scalar lr0, int epoch, int every, Scalar factor)
{
    if (every <= 0) return lr0;
    return lr0 * std::pow(factor, epoch / every);
}

void Adam::step(const std::vector<Slot>& slots, Scalar lr)
{
    ++t_;
    const Scalar bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Scalar>(t_));
    const Scalar bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Scalar>(t_));
    for (const Slot& s : slots) {
        Tensor& p = *s.param;
        if (!p.has_grad()) continue;
        Vector g = p.grad();
        if (cfg_.weight_decay > 0.0) g += cfg_.weight_decay * p.data();
        if (!g.allFinite()) throw std::domain_error("non-finite gradient for " + s.name);
        Vector& m = m_[s.name];
        Vector& v = v_[s.name];
        if (m.size() == 0) {
            m = Vector::Zero(p.size());
            v = Vector::Zero(p.size());
        }
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        p.data().array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
        p.zero_grad();
    }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const
{
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("adam/step", Tensor({1}, {static_cast<Scalar>(t_)}));
    for (const auto& [name, m] : m_) out.emplace_back("adam/m/" + name, Tensor::from_vector(m));
    for (const auto& [name, v] : v_) out.emplace_back("adam/v/" + name, Tensor::from_vector(v));
    return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& entries)
{
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const auto& [key, t] : entries) {
        if (key == "adam/step")
            t_ = static_cast<long long>(t[0]);
        else if (key.rfind("adam/m/", 0) == 0)
            m_[key.substr(7)] = t.data();
        else if (key.rfind("adam/v/", 0) == 0)
            v_[key.substr(7)] = t.data();
    }
}

} // namespace gkd
