#include "capsforge/optimizer.hpp"

#include <cmath>

namespace capsforge {

Optimizer::Optimizer(std::vector<TensorF> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
        if (!p.node()->leaf) throw ContractError("optimizer: " + p.name() + " is not a leaf");
        if (!p.requires_grad()) throw ContractError("optimizer: " + p.name() + " does not require grad");
    }
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Sgd::Sgd(std::vector<TensorF> params, float lr) : Optimizer(std::move(params)), lr_(lr) {
    if (!(lr > 0.0f)) throw ContractError("sgd: learning rate must be positive");
}

void Sgd::step() {
    for (auto& p : params_) {
        if (!p.has_grad()) continue;
        auto& node = *p.node();
        for (std::size_t i = 0; i < node.value.size(); ++i) node.value[i] -= lr_ * node.grad[i];
        check_finite<float>(node.value, "sgd_step", node.name);
    }
}

Adam::Adam(std::vector<TensorF> params, Config cfg) : Optimizer(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0.0f)) throw ContractError("adam: learning rate must be positive");
    if (cfg_.beta1 < 0.0f || cfg_.beta1 >= 1.0f || cfg_.beta2 < 0.0f || cfg_.beta2 >= 1.0f)
        throw ContractError("adam: betas must lie in [0,1)");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0f);
        v_.emplace_back(p.size(), 0.0f);
    }
}

void Adam::step() {
    ++t_;
    const float b1t = std::pow(cfg_.beta1, static_cast<float>(t_));
    const float b2t = std::pow(cfg_.beta2, static_cast<float>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& node = *params_[pi].node();
        auto& m = m_[pi];
        auto& v = v_[pi];
        const bool has = params_[pi].has_grad();
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            const float g = has ? node.grad[i] : 0.0f;
            m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
            const float mhat = m[i] / (1.0f - b1t);
            const float vhat = v[i] / (1.0f - b2t);
            node.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        check_finite<float>(node.value, "adam_step", node.name);
    }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, std::vector<TensorF> params, float lr) {
    if (name == "adam") {
        Adam::Config cfg;
        cfg.lr = lr;
        return std::make_unique<Adam>(std::move(params), cfg);
    }
    if (name == "sgd") return std::make_unique<Sgd>(std::move(params), lr);
    throw ContractError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

}  // namespace capsforge
