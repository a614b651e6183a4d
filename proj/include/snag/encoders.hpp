#pragma once

#include <vector>

#include "snag/graphdata.hpp"
#include "snag/optim.hpp"
#include "snag/rng.hpp"
#include "snag/tensor.hpp"

namespace snag {

// Feature matrix as a constant tensor (no grad).
Tensor features_tensor(const ModalityFeatureStore& store);

// Fills absent rows per-dimension from Normal(mu, phi^2) using the store's
// frozen stats. The presence mask keeps recording original absence.
void impute_missing(ModalityFeatureStore& store, uint64_t seed);

struct ModalityProjector {
    Tensor W;  // [d_m, d]
    Tensor b;  // [d]
};

ModalityProjector make_projector(ParamStore& params, const std::string& name,
                                 int d_m, int d, Rng& rng);

// h^m = x W + b over rows of x ([E, d_m] -> [E, d]).
Tensor embed_modality(const Tensor& x, const ModalityProjector& p);

// Dense 0/1 neighbor mask with self-loops, [E, E] constants.
Tensor adjacency_mask(const KnowledgeGraph& kg);
// Block-diagonal mask for two graphs sharing one id space (g2 offset by
// |E1|); used by the MMEA union encoder.
Tensor adjacency_mask_union(const KnowledgeGraph& g1,
                            const KnowledgeGraph& g2);

struct GatHead {
    Tensor a_src;  // [d]
    Tensor a_dst;  // [d]
};

struct GatLayer {
    Tensor w_diag;  // [d], the diagonal of W_g, shared by this layer's heads
    std::vector<GatHead> heads;
};

struct GatParams {
    std::vector<GatLayer> layers;
    Scalar leaky_slope = 0.2;
    bool average_heads = true;  // false concatenates (needs d % heads == 0)
};

GatParams make_gat(ParamStore& params, const std::string& name, int d,
                   int num_layers, int num_heads, Rng& rng);

// Two-layer message passing: per head softmax(LeakyReLU(u_i + v_j)) over the
// masked neighborhood, heads combined, ELU between layers (not after the
// last).
Tensor gat_forward(const Tensor& x, const Tensor& adj_mask,
                   const GatParams& p);

enum class StructureMode { kgc_fc, mmea_gat };

struct StructureEncoder {
    StructureMode mode = StructureMode::kgc_fc;
    Tensor x_g;  // [E, d] learnable table
    ModalityProjector fc;  // kgc mode
    GatParams gat;         // mmea mode
    Tensor adj_mask;
};

StructureEncoder make_structure_encoder_kgc(ParamStore& params, int ne, int d,
                                            Rng& rng);
StructureEncoder make_structure_encoder_mmea(ParamStore& params,
                                             const Tensor& adj_mask, int ne,
                                             int d, int num_layers,
                                             int num_heads, Rng& rng);

// x defaults to the learnable table; GMNM passes its masked copy instead.
Tensor encode_structure(const StructureEncoder& enc);
Tensor encode_structure(const StructureEncoder& enc, const Tensor& x);

}  // namespace snag
