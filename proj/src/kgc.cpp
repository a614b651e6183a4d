#include "snag/kgc.hpp"

#include <cmath>
#include <stdexcept>

#include "snag/eval.hpp"

namespace snag {

Tensor rotate_scores(const Tensor& heads, const Tensor& phases,
                     const Tensor& tails, bool l2) {
    if (heads.rank() != 2 || tails.rank() != 2 || phases.rank() != 2)
        throw std::invalid_argument("rotate_scores: need 2-D inputs");
    int d = heads.dim(1);
    if (d % 2 != 0)
        throw std::invalid_argument("rotate_scores: entity dim must be even");
    if (tails.dim(1) != d || phases.dim(1) != d / 2 ||
        tails.dim(0) != heads.dim(0) || phases.dim(0) != heads.dim(0))
        throw std::invalid_argument("rotate_scores: shape mismatch");
    int half = d / 2;
    Tensor re_h = slice_lastdim(heads, 0, half);
    Tensor im_h = slice_lastdim(heads, half, half);
    Tensor re_t = slice_lastdim(tails, 0, half);
    Tensor im_t = slice_lastdim(tails, half, half);
    Tensor c = cos(phases), s = sin(phases);
    Tensor d_re = sub(sub(mul(re_h, c), mul(im_h, s)), re_t);
    Tensor d_im = sub(add(mul(re_h, s), mul(im_h, c)), im_t);
    if (l2) return l2_norm_lastdim(concat_lastdim({d_re, d_im}));
    Tensor moduli = sqrt(add(mul(d_re, d_re), mul(d_im, d_im)));
    return sum_axis(moduli, -1);
}

std::vector<Triple> sample_negatives(const Triple& t, int k,
                                     const TripleIndex& known,
                                     int num_entities, Rng& rng) {
    if (num_entities < 2)
        throw std::invalid_argument("sample_negatives: need >= 2 entities");
    std::vector<Triple> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
        bool corrupt_head = rng.uniform() < 0.5;
        int orig = corrupt_head ? t.h : t.t;
        Triple neg = t;
        for (int tries = 0; tries < 100; ++tries) {
            int c = static_cast<int>(rng.uniform_int(num_entities - 1));
            if (c >= orig) ++c;
            if (corrupt_head)
                neg.h = c;
            else
                neg.t = c;
            if (!known.contains(neg.h, neg.r, neg.t)) break;
        }
        out.push_back(neg);
    }
    return out;
}

Tensor adversarial_weights(const Tensor& neg_scores, Scalar tau) {
    if (tau <= 0.0)
        throw std::invalid_argument("adversarial_weights: tau must be > 0");
    return softmax_lastdim(mul_scalar(neg_scores, tau));
}

Tensor kgc_loss(const Tensor& pos_scores, const Tensor& neg_scores,
                const KgcConfig& cfg) {
    if (cfg.margin <= 0.0 || cfg.tau <= 0.0)
        throw std::invalid_argument("kgc_loss: margin and tau must be > 0");
    if (pos_scores.rank() != 1 || neg_scores.rank() != 2 ||
        neg_scores.dim(0) != pos_scores.dim(0))
        throw std::invalid_argument("kgc_loss: want pos [B] and neg [B, K]");
    Tensor v = adversarial_weights(neg_scores, cfg.tau);
    if (cfg.detach_adversarial) v = detach(v);
    Tensor pos_term = log(sigmoid(neg(pos_scores) + cfg.margin));  // [B]
    Tensor neg_term =
        sum_axis(mul(v, log(sigmoid(neg_scores - cfg.margin))), -1);  // [B]
    return neg(mean_all(add(pos_term, neg_term)));
}

KgcModel make_kgc_model(const KnowledgeGraph& kg,
                        const ModalityFeatureStore& v,
                        const ModalityFeatureStore& s, const KgcConfig& cfg,
                        uint64_t seed) {
    if (cfg.d <= 0 || cfg.d % 2 != 0)
        throw std::invalid_argument("kgc: entity dim must be positive even");
    if (cfg.negatives < 1)
        throw std::invalid_argument("kgc: need at least one negative");
    if (v.rows != kg.num_entities() || s.rows != kg.num_entities())
        throw std::invalid_argument("kgc: feature row count != |E|");
    for (const ModalityFeatureStore* st : {&v, &s})
        if (!st->imputed && st->num_present() != st->rows)
            throw std::invalid_argument(
                "kgc: impute features before building the model");

    KgcModel m;
    m.cfg = cfg;
    m.seed = seed;
    m.ne = kg.num_entities();
    m.nr = kg.num_relations();
    Rng rng = Rng(seed).substream(0x6b67, 0, 0);
    m.structure = make_structure_encoder_kgc(m.params, m.ne, cfg.d, rng);
    m.proj_v = make_projector(m.params, "proj_v", v.dim, cfg.d, rng);
    m.proj_s = make_projector(m.params, "proj_s", s.dim, cfg.d, rng);
    m.fusion =
        make_fusion_weights(m.params, "fusion", cfg.d, cfg.heads, cfg.ffn_dim,
                            rng);
    if (cfg.variant != FusionVariant::full &&
        cfg.variant != FusionVariant::only_g)
        m.variant = make_variant_params(m.params, "variant", cfg.variant, 3,
                                        cfg.d, rng);
    m.phases = m.params.put("rel_phases",
                            init_uniform({m.nr, cfg.d / 2}, Rng::kPi, rng));
    m.x_v = features_tensor(v);
    m.x_s = features_tensor(s);
    m.mu_v = v.mu;
    m.phi_v = v.phi;
    m.mu_s = s.mu;
    m.phi_s = s.phi;
    return m;
}

Tensor kgc_entity_reprs(const KgcModel& m, int epoch, bool train_mode) {
    Tensor x_g = m.structure.x_g;
    Tensor x_v = m.x_v;
    Tensor x_s = m.x_s;
    if (train_mode && m.cfg.noise.mode != NoiseMode::off) {
        if (noise_applies_to(m.cfg.noise, Modality::g)) {
            std::vector<Scalar> mu_g, phi_g;
            tensor_stats(x_g, mu_g, phi_g);
            x_g = apply_noise(x_g, mu_g, phi_g, m.cfg.noise, m.seed, epoch,
                              Modality::g);
        }
        x_v = apply_noise(x_v, m.mu_v, m.phi_v, m.cfg.noise, m.seed, epoch,
                          Modality::v);
        x_s = apply_noise(x_s, m.mu_s, m.phi_s, m.cfg.noise, m.seed, epoch,
                          Modality::s);
    }
    Tensor h_g = encode_structure(m.structure, x_g);
    if (m.cfg.variant == FusionVariant::only_g) return h_g;
    Tensor h_v = embed_modality(x_v, m.proj_v);
    Tensor h_s = embed_modality(x_s, m.proj_s);
    Tensor stacked =
        reshape(concat_lastdim({h_g, h_v, h_s}), {m.ne, 3, m.cfg.d});
    if (m.cfg.variant != FusionVariant::full)
        return fuse_variant(stacked, m.cfg.variant, m.variant, &m.fusion);
    FusionOutput out = fuse(stacked, m.fusion);
    if (m.cfg.mean_fused) return mean_axis(out.fused, 1);
    return slice_lastdim(reshape(out.fused, {m.ne, 3 * m.cfg.d}), 0, m.cfg.d);
}

KgcTrainResult train_kgc(KgcModel& m, const KnowledgeGraph& kg) {
    if (kg.train.empty())
        throw std::invalid_argument("train_kgc: empty train split");
    KgcTrainResult trace;
    TripleIndex known(kg, /*include_valid_test=*/false);
    Adam opt(m.params, AdamConfig{m.cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    int n = static_cast<int>(kg.train.size());

    for (int epoch = 0; epoch < m.cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng(m.seed).substream(0x7368, epoch, 0);
        std::vector<int> order = shuffle_rng.permutation(n);
        Scalar epoch_loss = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += m.cfg.batch_size) {
            int bsz = std::min(m.cfg.batch_size, n - start);
            Rng neg_rng = Rng(m.seed).substream(0x6e65, epoch, batches);
            std::vector<int> hs, ts, rs, nhs, nts, nrs;
            for (int i = 0; i < bsz; ++i) {
                const Triple& t = kg.train[order[start + i]];
                hs.push_back(t.h);
                rs.push_back(t.r);
                ts.push_back(t.t);
                for (const Triple& ng : sample_negatives(
                         t, m.cfg.negatives, known, m.ne, neg_rng)) {
                    nhs.push_back(ng.h);
                    nrs.push_back(ng.r);
                    nts.push_back(ng.t);
                }
            }
            Tensor reprs = kgc_entity_reprs(m, epoch, /*train_mode=*/true);
            Tensor pos = rotate_scores(gather_rows(reprs, hs),
                                       gather_rows(m.phases, rs),
                                       gather_rows(reprs, ts), m.cfg.l2_score);
            Tensor negs = reshape(
                rotate_scores(gather_rows(reprs, nhs),
                              gather_rows(m.phases, nrs),
                              gather_rows(reprs, nts), m.cfg.l2_score),
                {bsz, m.cfg.negatives});
            Tensor loss = kgc_loss(pos, negs, m.cfg);
            Scalar lv = loss.item();
            if (!std::isfinite(lv))
                throw std::runtime_error(
                    "train_kgc: non-finite loss at epoch " +
                    std::to_string(epoch) + " batch " +
                    std::to_string(batches));
            m.params.zero_grad();
            backward(loss);
            opt.step();
            epoch_loss += lv;
            ++batches;
        }
        trace.epoch_loss.push_back(epoch_loss / batches);
        if (m.cfg.eval_every > 0 && (epoch + 1) % m.cfg.eval_every == 0 &&
            !kg.valid.empty()) {
            NoGradGuard ng;
            Tensor reprs = kgc_entity_reprs(m, epoch, /*train_mode=*/false);
            KgcEvalOptions opt_eval;
            opt_eval.split = Split::valid;
            opt_eval.l2_score = m.cfg.l2_score;
            trace.val_mrr.emplace_back(
                epoch, eval_kgc(reprs, m.phases, kg, opt_eval).mrr);
        }
    }
    return trace;
}

}  // namespace snag
