#pragma once

#include <memory>
#include <string>
#include <vector>

#include "capsforge/tensor.hpp"

namespace capsforge {

// Updates run in declaration order over the given leaves; a leaf whose grad
// was never populated in the current step is treated as zero.
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step() = 0;
    void zero_grad();
    const std::vector<TensorF>& params() const { return params_; }

protected:
    explicit Optimizer(std::vector<TensorF> params);
    std::vector<TensorF> params_;
};

class Sgd : public Optimizer {
public:
    Sgd(std::vector<TensorF> params, float lr);
    void step() override;

private:
    float lr_;
};

class Adam : public Optimizer {
public:
    struct Config {
        float lr = 1e-3f;
        float beta1 = 0.9f;
        float beta2 = 0.999f;
        float eps = 1e-8f;
    };

    Adam(std::vector<TensorF> params, Config cfg);
    void step() override;
    std::uint64_t steps_taken() const { return t_; }

private:
    Config cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

// name is "adam" or "sgd"; anything else throws ContractError.
std::unique_ptr<Optimizer> make_optimizer(const std::string& name, std::vector<TensorF> params, float lr);

}  // namespace capsforge
