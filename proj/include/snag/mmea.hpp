#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "snag/encoders.hpp"
#include "snag/fusion.hpp"
#include "snag/gmnm.hpp"
#include "snag/graphdata.hpp"
#include "snag/optim.hpp"
#include "snag/tensor.hpp"

namespace snag {

// Alignment-head settings. The modality set is {g, r, a, v, s} in that
// order throughout.
struct MmeaConfig {
    int d = 300;
    Scalar tau = 0.1;       // contrastive temperature
    Scalar lr = 1e-3;
    Scalar weight_decay = 0.0;
    int batch_size = 3500;
    int epochs = 500;
    Scalar warmup_frac = 0.15;
    int probe_every = 5;     // K_e
    int promote_after = 10;  // K_s consecutive mutual observations
    bool iterative = false;  // run the probation loop
    bool normalize = true;   // L2-normalize before every dot product
    bool detach_confidence = false;  // stop ECIA gradients into the
                                     // confidence scores
    int heads = 1;
    int ffn_dim = 0;
    int gat_layers = 2;
    int gat_heads = 2;
    NoiseConfig noise;   // constructed masking all five modalities
    int eval_every = 0;  // test Hits@1 cadence, 0 disables
    int patience = 0;    // early-stopping evals without improvement, 0 off
    Scalar valid_frac = 0.0;  // seed share carved off when patience > 0

    MmeaConfig() {
        noise.modalities = {Modality::g, Modality::r, Modality::a,
                            Modality::v, Modality::s};
    }
};

constexpr int kMmeaModalities = 5;

// One graph's non-structural feature stores.
struct ModalityInputs {
    ModalityFeatureStore r, a, v, s;
};

struct MmeaModel {
    MmeaConfig cfg;
    uint64_t seed = 0;
    int ne1 = 0, ne2 = 0;  // union rows = ne1 + ne2, g2 ids offset by ne1
    ParamStore params;
    StructureEncoder structure;
    ModalityProjector proj_r, proj_a, proj_v, proj_s;
    FusionWeights fusion;
    Tensor gmi_logits;               // [5]
    Tensor x_r, x_a, x_v, x_s;       // union constants
    std::vector<Scalar> mu_r, phi_r, mu_a, phi_a, mu_v, phi_v, mu_s, phi_s;
};

// Stores must already be imputed; per-modality dims must match across the
// two graphs. Masking stats freeze over the union's originally present rows.
MmeaModel make_mmea_model(const KnowledgeGraph& g1, const KnowledgeGraph& g2,
                          const ModalityInputs& in1, const ModalityInputs& in2,
                          const MmeaConfig& cfg, uint64_t seed);

struct MmeaForward {
    std::vector<Tensor> h_m;      // 5 pre-fusion matrices [E, d]
    Tensor gmi;                   // [E, 5d]
    std::vector<Tensor> fused_m;  // 5 transformer outputs [E, d]
    Tensor conf;                  // [E, 5]
};

MmeaForward mmea_forward(const MmeaModel& m, int epoch, bool train_mode);

// w_m = softmax(logits); concatenation of w_m-scaled blocks.
Tensor gmi_embed(const std::vector<Tensor>& h_m, const Tensor& gmi_logits);

// Bidirectional in-batch alignment loss over paired rows of a and b:
// gamma = exp(sim / tau), p is the pair's share against in-batch negatives
// from both sides, loss = -mean log((p12 + p21) / 2). Batch 1 gives 0.
Tensor contrastive_loss(const Tensor& a, const Tensor& b, Scalar tau,
                        bool normalize);

// Same with a per-pair weight phi in (0, 1] multiplied inside the log.
Tensor weighted_contrastive_loss(const Tensor& a, const Tensor& b,
                                 const Tensor& phi, Scalar tau,
                                 bool normalize);

// Sum over modalities of the weighted loss with phi_m = min of the two
// entities' confidence in that modality.
Tensor ecia_loss(const std::vector<Tensor>& h1, const std::vector<Tensor>& h2,
                 const Tensor& conf1, const Tensor& conf2, Scalar tau,
                 bool normalize);

// Sum over modalities of the plain loss on the transformer outputs.
Tensor iir_loss(const std::vector<Tensor>& f1, const std::vector<Tensor>& f2,
                Scalar tau, bool normalize);

// Consecutive mutual-NN counters keyed by candidate pair.
struct ProbationCache {
    std::map<std::pair<int, int>, int> counters;
};

// sims: [n1, n2] similarities for the current unpromoted candidates
// cand1/cand2. Mutual nearest neighbours enter the cache or bump their
// counter; observed-but-broken pairs drop out; a counter reaching
// promote_after promotes the pair (removed from the cache, returned).
std::vector<std::pair<int, int>> probe_and_promote(
    ProbationCache& cache, const Tensor& sims, const std::vector<int>& cand1,
    const std::vector<int>& cand2, int promote_after);

struct Promotion {
    int epoch, e1, e2;
};

struct MmeaTrainResult {
    std::vector<Scalar> epoch_loss;
    std::vector<std::array<Scalar, 3>> parts;  // gmi, ecia, iir means
    std::vector<std::pair<int, Scalar>> test_hits1;
    std::vector<std::pair<int, Scalar>> valid_hits1;
    std::vector<Promotion> promotions;
    int stopped_epoch = -1;  // early stop, -1 means the full schedule ran
};

// Optimizes L_gmi + L_ecia + L_iir with cosine warm-up; optional probation
// every probe_every epochs when iterative. Deterministic per model seed.
// Throws on non-finite loss.
MmeaTrainResult train_mmea(MmeaModel& m, const AlignmentSet& alignment);

// Per-graph GMI embeddings for ranking: rows of the union split back into
// the two id spaces.
std::pair<Tensor, Tensor> mmea_inference_embeddings(const MmeaModel& m);

}  // namespace snag
