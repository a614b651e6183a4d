#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "snag/encoders.hpp"
#include "snag/fusion.hpp"
#include "snag/gmnm.hpp"
#include "snag/graphdata.hpp"
#include "snag/optim.hpp"
#include "snag/rng.hpp"
#include "snag/tensor.hpp"

namespace snag {

// Completion-head settings. Defaults are the published operating point.
struct KgcConfig {
    int d = 256;            // entity dim, even
    Scalar margin = 12.0;   // lambda
    int negatives = 32;     // K per positive
    Scalar tau = 2.0;       // self-adversarial temperature
    int batch_size = 1024;
    Scalar lr = 1e-4;
    int epochs = 200;
    bool l2_score = false;  // L2 over the complex difference instead of L1
    bool detach_adversarial = false;  // stop gradients through the weights
    bool mean_fused = false;          // mean over modalities instead of the
                                      // fused structure row
    int heads = 2;
    int ffn_dim = 0;  // 0 picks 4d
    FusionVariant variant = FusionVariant::full;
    NoiseConfig noise;   // constructed masking only v and s
    int eval_every = 0;  // filtered valid MRR cadence, 0 disables

    KgcConfig() {
        noise.modalities = {Modality::v, Modality::s};
    }
};

// Batched rotation score: heads [N, d], phases [N, d/2], tails [N, d] -> [N].
// Entity halves are (real, imag); the relation rotates by unit complex
// numbers and the score is the norm of the complex difference (L1 over
// moduli by default).
Tensor rotate_scores(const Tensor& heads, const Tensor& phases,
                     const Tensor& tails, bool l2 = false);

// Head or tail corrupted by fair coin with a uniformly random other entity;
// resampling avoids known train triples (bounded, then accepts).
std::vector<Triple> sample_negatives(const Triple& t, int k,
                                     const TripleIndex& known,
                                     int num_entities, Rng& rng);

// Self-adversarial weights: softmax over each row of tau * neg_scores.
Tensor adversarial_weights(const Tensor& neg_scores, Scalar tau);

// -log sig(margin - pos) - sum_i v_i log sig(neg_i - margin), v_i the
// softmax of tau * neg over each row's K negatives, averaged over the batch.
Tensor kgc_loss(const Tensor& pos_scores, const Tensor& neg_scores,
                const KgcConfig& cfg);

struct KgcModel {
    KgcConfig cfg;
    uint64_t seed = 0;
    int ne = 0, nr = 0;
    ParamStore params;
    StructureEncoder structure;
    ModalityProjector proj_v, proj_s;
    FusionWeights fusion;
    VariantParams variant;
    Tensor phases;    // [R, d/2]
    Tensor x_v, x_s;  // constant raw features
    std::vector<Scalar> mu_v, phi_v, mu_s, phi_s;  // frozen masking stats
};

// Features must be imputed already; masking stats freeze from the stores'
// original-present-row statistics.
KgcModel make_kgc_model(const KnowledgeGraph& kg,
                        const ModalityFeatureStore& v,
                        const ModalityFeatureStore& s, const KgcConfig& cfg,
                        uint64_t seed);

// One forward pass over every entity: embed {g, v, s}, mask when training,
// fuse, then pick the configured representation. [E, d].
Tensor kgc_entity_reprs(const KgcModel& m, int epoch, bool train_mode);

struct KgcTrainResult {
    std::vector<Scalar> epoch_loss;
    std::vector<std::pair<int, Scalar>> val_mrr;  // (epoch, filtered MRR)
};

// Minibatch training; throws on a non-finite loss with an epoch/batch
// diagnostic. Deterministic for a fixed model seed.
KgcTrainResult train_kgc(KgcModel& m, const KnowledgeGraph& kg);

}  // namespace snag
