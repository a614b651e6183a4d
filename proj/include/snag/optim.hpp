#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "snag/rng.hpp"
#include "snag/tensor.hpp"

namespace snag {

// Named trainable tensors in insertion order. Order is part of the public
// contract: optimizer state and checkpoints index by it.
class ParamStore {
public:
    Tensor& create(const std::string& name, Shape shape);
    Tensor& put(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    size_t size() const { return items_.size(); }
    Tensor& at(size_t i) { return items_[i].second; }
    const std::vector<std::pair<std::string, Tensor>>& items() const {
        return items_;
    }

    void zero_grad();
    int64_t num_scalars() const;

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// W ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in defaults to shape[0]
// for matrices laid out [in, out].
Tensor init_uniform(Shape shape, Scalar bound, Rng& rng);
Tensor init_fan_in(Shape shape, Rng& rng);
Tensor init_normal(Shape shape, Scalar mu, Scalar sigma, Rng& rng);

struct AdamConfig {
    Scalar lr = 1e-3;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar eps = 1e-8;
    Scalar weight_decay = 0.0;  // decoupled (AdamW) when nonzero
};

// Adam / AdamW over a ParamStore. Reads each parameter's accumulated grad
// buffer and updates values in place.
class Adam {
public:
    Adam(ParamStore& params, AdamConfig cfg);

    void step();
    void set_lr(Scalar lr) { cfg_.lr = lr; }
    Scalar lr() const { return cfg_.lr; }
    int64_t steps_taken() const { return t_; }

private:
    ParamStore& params_;
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::vector<std::vector<Scalar>> m_, v_;
};

// Linear warm-up to base_lr over ceil(warmup_frac * total) steps, then
// cosine decay to zero. step is 0-based.
Scalar cosine_warmup_lr(Scalar base_lr, int64_t step, int64_t total_steps,
                        Scalar warmup_frac);

}  // namespace snag
