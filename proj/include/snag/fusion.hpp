#pragma once

#include <string>
#include <vector>

#include "snag/optim.hpp"
#include "snag/rng.hpp"
#include "snag/tensor.hpp"

namespace snag {

// One interaction block: per-head cross-modal attention over an entity's
// modality sequence, output map, FFN, two residual+LN stages.
struct FusionWeights {
    int d = 0;
    int heads = 1;
    int ffn_dim = 0;
    std::vector<Tensor> w_q;  // per head [d, d_h]
    std::vector<Tensor> w_k;
    std::vector<Tensor> w_v;
    Tensor w_o;   // [d, d]
    Tensor w_1;   // [d, ffn_dim]
    Tensor b_1;   // [ffn_dim]
    Tensor w_2;   // [ffn_dim, d]
    Tensor b_2;   // [d]
    Tensor ln1_g, ln1_b;  // [d]
    Tensor ln2_g, ln2_b;
};

// ffn_dim 0 picks 4d. d must divide evenly by heads.
FusionWeights make_fusion_weights(ParamStore& params, const std::string& name,
                                  int d, int heads, int ffn_dim, Rng& rng);

struct FusionOutput {
    Tensor fused;               // [B, M, d]
    std::vector<Tensor> betas;  // per head [B, M, M], rows sum to 1
    Tensor conf;                // [B, M] simplex rows
};

// Attention sublayer only: returns (concat-head output mapped by W_o, betas).
std::pair<Tensor, std::vector<Tensor>> mhca(const Tensor& h,
                                            const FusionWeights& w);

// Full block over h: [B, M, d]. conf is softmax over modalities of the
// per-key attention mass, scaled by 1/sqrt(M*heads).
FusionOutput fuse(const Tensor& h, const FusionWeights& w);

// Standalone confidence from one run's betas.
Tensor confidence(const std::vector<Tensor>& betas);

enum class FusionVariant { full, fc, ws, at, ts, only_g };

FusionVariant parse_fusion_variant(const std::string& s);
std::string fusion_variant_name(FusionVariant v);

// Parameters for the reduced fusion baselines. Only the fields a variant
// needs get created.
struct VariantParams {
    Tensor w_fc;  // [M*d, d]
    Tensor b_fc;  // [d]
    Tensor ws_logits;  // [M]
    Tensor at_w;  // [d, k]
    Tensor at_b;  // [k]
    Tensor at_v;  // [k]
};

VariantParams make_variant_params(ParamStore& params, const std::string& name,
                                  FusionVariant v, int num_modalities, int d,
                                  Rng& rng);

// Collapses [B, M, d] to one [B, d] vector per entity. ts runs the full
// block and takes the confidence-weighted sum of the fused rows; full and
// only_g are not accepted here (they keep per-modality outputs).
Tensor fuse_variant(const Tensor& h, FusionVariant kind,
                    const VariantParams& p, const FusionWeights* w);

}  // namespace snag
