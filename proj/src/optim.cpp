#include "snag/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace snag {

Tensor& ParamStore::create(const std::string& name, Shape shape) {
    return put(name, Tensor::zeros(std::move(shape), true));
}

Tensor& ParamStore::put(const std::string& name, Tensor t) {
    if (index_.count(name))
        throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return items_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const {
    return index_.count(name) != 0;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

int64_t ParamStore::num_scalars() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

Tensor init_uniform(Shape shape, Scalar bound, Rng& rng) {
    std::vector<Scalar> data(numel(shape));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor init_fan_in(Shape shape, Rng& rng) {
    if (shape.empty() || shape[0] <= 0)
        throw std::invalid_argument("init_fan_in: bad shape");
    Scalar fan_in = static_cast<Scalar>(shape[0]);
    return init_uniform(std::move(shape), 1.0 / std::sqrt(fan_in), rng);
}

Tensor init_normal(Shape shape, Scalar mu, Scalar sigma, Rng& rng) {
    std::vector<Scalar> data(numel(shape));
    for (auto& v : data) v = rng.normal(mu, sigma);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Adam::Adam(ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, t] : params.items()) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void Adam::step() {
    if (m_.size() != params_.size())
        throw std::logic_error("Adam: ParamStore grew after construction");
    ++t_;
    Scalar b1t = 1.0 - std::pow(cfg_.beta1, static_cast<Scalar>(t_));
    Scalar b2t = 1.0 - std::pow(cfg_.beta2, static_cast<Scalar>(t_));
    for (size_t p = 0; p < params_.size(); ++p) {
        Tensor& t = params_.at(p);
        const auto& g = t.grad();
        auto& val = t.mutable_data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (size_t i = 0; i < val.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            Scalar mhat = m[i] / b1t;
            Scalar vhat = v[i] / b2t;
            if (cfg_.weight_decay != 0.0)
                val[i] -= cfg_.lr * cfg_.weight_decay * val[i];
            val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

Scalar cosine_warmup_lr(Scalar base_lr, int64_t step, int64_t total_steps,
                        Scalar warmup_frac) {
    if (total_steps <= 0) throw std::invalid_argument("cosine_warmup_lr: total_steps <= 0");
    if (step < 0) step = 0;
    if (step >= total_steps) step = total_steps - 1;
    int64_t warm = static_cast<int64_t>(
        std::ceil(warmup_frac * static_cast<Scalar>(total_steps)));
    if (step < warm)
        return base_lr * static_cast<Scalar>(step + 1) /
               static_cast<Scalar>(warm);
    int64_t rest = total_steps - warm;
    if (rest <= 0) return base_lr;
    Scalar u = static_cast<Scalar>(step - warm) / static_cast<Scalar>(rest);
    return 0.5 * base_lr * (1.0 + std::cos(Rng::kPi * u));
}

}  // namespace snag
