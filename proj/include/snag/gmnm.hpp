#pragma once

#include <vector>

#include "snag/graphdata.hpp"
#include "snag/rng.hpp"
#include "snag/tensor.hpp"

namespace snag {

enum class NoiseMode { gmnm, dropout, off };

struct NoiseConfig {
    NoiseMode mode = NoiseMode::gmnm;
    Scalar rho = 0.2;      // per-row masking probability
    Scalar epsilon = 0.7;  // noise mix ratio
    Scalar dropout_p = 0.1;
    bool dropout_inverted = false;  // scale survivors by 1/(1-p)
    std::vector<Modality> modalities;  // which modalities get masked
};

bool noise_applies_to(const NoiseConfig& cfg, Modality m);

// Stream for one (seed, epoch, modality) draw; consuming one epoch's noise
// never shifts another's.
Rng noise_stream(uint64_t seed, int epoch, Modality m);

// Per row draw p ~ U(0,1); rows with p <= rho become
// (1-eps) x + eps (phi ⊙ z + mu), z ~ N(0, I). Unmasked rows pass through
// bit-identically, and gradients flow into x scaled by (1-eps) on masked
// rows. rho=0 or eps=0 returns x itself.
Tensor apply_gmnm(const Tensor& x, const std::vector<Scalar>& mu,
                  const std::vector<Scalar>& phi, Scalar rho, Scalar eps,
                  Rng rng);

// Elementwise zeroing at rate p; survivors unscaled unless inverted.
Tensor apply_dropout(const Tensor& x, Scalar p, bool inverted, Rng rng);

// Mode dispatcher used by both training loops.
Tensor apply_noise(const Tensor& x, const std::vector<Scalar>& mu,
                   const std::vector<Scalar>& phi, const NoiseConfig& cfg,
                   uint64_t seed, int epoch, Modality m);

// Per-dimension mean and population std of a [rows, dim] tensor's values;
// the learnable g table recomputes these each epoch before masking.
void tensor_stats(const Tensor& x, std::vector<Scalar>& mu,
                  std::vector<Scalar>& phi);

}  // namespace snag
