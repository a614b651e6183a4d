#include "snag/gmnm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace snag {

bool noise_applies_to(const NoiseConfig& cfg, Modality m) {
    return std::find(cfg.modalities.begin(), cfg.modalities.end(), m) !=
           cfg.modalities.end();
}

Rng noise_stream(uint64_t seed, int epoch, Modality m) {
    return Rng(seed).substream(0x6e6d, static_cast<uint64_t>(epoch),
                               static_cast<uint64_t>(m));
}

namespace {

// Shared backward builder: out = x on kept rows, scale*x + offset on masked
// rows; masked entries of `factor` already hold the row's scale.
Tensor row_affine(const Tensor& x, std::vector<Scalar> out_vals,
                  std::vector<Scalar> factor, const char* op) {
    auto node = std::make_shared<Node>();
    node->shape = x.shape();
    node->value = std::move(out_vals);
    if (grad_enabled() && x.requires_grad()) {
        node->requires_grad = true;
        node->op = op;
        node->parents = {x.handle()};
        node->backprop = [factor = std::move(factor)](Node& self) {
            Node& pa = *self.parents[0];
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * factor[i];
        };
    }
    return Tensor(node);
}

}  // namespace

Tensor apply_gmnm(const Tensor& x, const std::vector<Scalar>& mu,
                  const std::vector<Scalar>& phi, Scalar rho, Scalar eps,
                  Rng rng) {
    if (x.rank() != 2)
        throw std::invalid_argument("apply_gmnm: need [rows, dim] input");
    if (rho < 0.0 || rho > 1.0 || eps < 0.0 || eps > 1.0)
        throw std::invalid_argument("apply_gmnm: rho and eps must be in [0,1]");
    int64_t rows = x.dim(0), dim = x.dim(1);
    if (static_cast<int64_t>(mu.size()) != dim ||
        static_cast<int64_t>(phi.size()) != dim)
        throw std::invalid_argument("apply_gmnm: stats dim mismatch");
    for (Scalar p : phi)
        if (p < 0.0) throw std::invalid_argument("apply_gmnm: negative std");
    if (rho == 0.0 || eps == 0.0) return x;

    const auto& xv = x.data();
    std::vector<Scalar> out(xv.size());
    std::vector<Scalar> factor(xv.size(), 1.0);
    for (int64_t i = 0; i < rows; ++i) {
        bool masked = rng.uniform() <= rho;
        const Scalar* src = xv.data() + i * dim;
        Scalar* dst = out.data() + i * dim;
        if (!masked) {
            std::copy(src, src + dim, dst);
            continue;
        }
        for (int64_t j = 0; j < dim; ++j) {
            Scalar z = rng.normal();
            dst[j] = (1.0 - eps) * src[j] + eps * (phi[j] * z + mu[j]);
            factor[i * dim + j] = 1.0 - eps;
        }
    }
    return row_affine(x, std::move(out), std::move(factor), "gmnm");
}

Tensor apply_dropout(const Tensor& x, Scalar p, bool inverted, Rng rng) {
    if (p < 0.0 || p >= 1.0)
        throw std::invalid_argument("apply_dropout: p must be in [0,1)");
    if (p == 0.0) return x;
    Scalar keep_scale = inverted ? 1.0 / (1.0 - p) : 1.0;
    const auto& xv = x.data();
    std::vector<Scalar> out(xv.size());
    std::vector<Scalar> factor(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) {
        Scalar f = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] = xv[i] * f;
        factor[i] = f;
    }
    return row_affine(x, std::move(out), std::move(factor), "dropout");
}

Tensor apply_noise(const Tensor& x, const std::vector<Scalar>& mu,
                   const std::vector<Scalar>& phi, const NoiseConfig& cfg,
                   uint64_t seed, int epoch, Modality m) {
    if (cfg.mode == NoiseMode::off || !noise_applies_to(cfg, m)) return x;
    Rng rng = noise_stream(seed, epoch, m);
    if (cfg.mode == NoiseMode::gmnm)
        return apply_gmnm(x, mu, phi, cfg.rho, cfg.epsilon, rng);
    return apply_dropout(x, cfg.dropout_p, cfg.dropout_inverted, rng);
}

void tensor_stats(const Tensor& x, std::vector<Scalar>& mu,
                  std::vector<Scalar>& phi) {
    if (x.rank() != 2)
        throw std::invalid_argument("tensor_stats: need [rows, dim]");
    int64_t rows = x.dim(0), dim = x.dim(1);
    mu.assign(dim, 0.0);
    phi.assign(dim, 0.0);
    const auto& v = x.data();
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < dim; ++j) mu[j] += v[i * dim + j];
    for (int64_t j = 0; j < dim; ++j) mu[j] /= static_cast<Scalar>(rows);
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < dim; ++j) {
            Scalar d = v[i * dim + j] - mu[j];
            phi[j] += d * d;
        }
    for (int64_t j = 0; j < dim; ++j)
        phi[j] = std::sqrt(phi[j] / static_cast<Scalar>(rows));
}

}  // namespace snag
