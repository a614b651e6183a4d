#include "snag/mmea.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "snag/eval.hpp"

namespace snag {

namespace {

ModalityFeatureStore union_store(const ModalityFeatureStore& a,
                                 const ModalityFeatureStore& b,
                                 const char* what) {
    if (a.tag != b.tag || a.dim != b.dim)
        throw std::invalid_argument(std::string("mmea: modality mismatch "
                                                "between the two graphs: ") +
                                    what);
    for (const ModalityFeatureStore* st : {&a, &b})
        if (!st->imputed && st->num_present() != st->rows)
            throw std::invalid_argument(
                std::string("mmea: impute features first: ") + what);
    ModalityFeatureStore u;
    u.tag = a.tag;
    u.rows = a.rows + b.rows;
    u.dim = a.dim;
    u.matrix = a.matrix;
    u.matrix.insert(u.matrix.end(), b.matrix.begin(), b.matrix.end());
    u.present = a.present;
    u.present.insert(u.present.end(), b.present.begin(), b.present.end());
    u.imputed = true;
    u.recompute_stats();
    return u;
}

}  // namespace

MmeaModel make_mmea_model(const KnowledgeGraph& g1, const KnowledgeGraph& g2,
                          const ModalityInputs& in1, const ModalityInputs& in2,
                          const MmeaConfig& cfg, uint64_t seed) {
    if (cfg.d <= 0) throw std::invalid_argument("mmea: d must be positive");
    if (cfg.tau <= 0.0) throw std::invalid_argument("mmea: tau must be > 0");
    int ne1 = g1.num_entities(), ne2 = g2.num_entities();
    for (const auto& [in, kg] : {std::pair{&in1, &g1}, std::pair{&in2, &g2}})
        for (const ModalityFeatureStore* st :
             {&in->r, &in->a, &in->v, &in->s})
            if (st->rows != kg->num_entities())
                throw std::invalid_argument(
                    "mmea: feature row count != |E| for a modality");

    MmeaModel m;
    m.cfg = cfg;
    m.seed = seed;
    m.ne1 = ne1;
    m.ne2 = ne2;
    ModalityFeatureStore ur = union_store(in1.r, in2.r, "r");
    ModalityFeatureStore ua = union_store(in1.a, in2.a, "a");
    ModalityFeatureStore uv = union_store(in1.v, in2.v, "v");
    ModalityFeatureStore us = union_store(in1.s, in2.s, "s");

    Rng rng = Rng(seed).substream(0x6d65, 0, 0);
    Tensor adj = adjacency_mask_union(g1, g2);
    m.structure = make_structure_encoder_mmea(m.params, adj, ne1 + ne2, cfg.d,
                                              cfg.gat_layers, cfg.gat_heads,
                                              rng);
    m.proj_r = make_projector(m.params, "proj_r", ur.dim, cfg.d, rng);
    m.proj_a = make_projector(m.params, "proj_a", ua.dim, cfg.d, rng);
    m.proj_v = make_projector(m.params, "proj_v", uv.dim, cfg.d, rng);
    m.proj_s = make_projector(m.params, "proj_s", us.dim, cfg.d, rng);
    m.fusion = make_fusion_weights(m.params, "fusion", cfg.d, cfg.heads,
                                   cfg.ffn_dim, rng);
    m.gmi_logits = m.params.create("gmi_logits", {kMmeaModalities});
    m.x_r = features_tensor(ur);
    m.x_a = features_tensor(ua);
    m.x_v = features_tensor(uv);
    m.x_s = features_tensor(us);
    m.mu_r = ur.mu;
    m.phi_r = ur.phi;
    m.mu_a = ua.mu;
    m.phi_a = ua.phi;
    m.mu_v = uv.mu;
    m.phi_v = uv.phi;
    m.mu_s = us.mu;
    m.phi_s = us.phi;
    return m;
}

MmeaForward mmea_forward(const MmeaModel& m, int epoch, bool train_mode) {
    Tensor x_g = m.structure.x_g;
    Tensor x_r = m.x_r, x_a = m.x_a, x_v = m.x_v, x_s = m.x_s;
    if (train_mode && m.cfg.noise.mode != NoiseMode::off) {
        if (noise_applies_to(m.cfg.noise, Modality::g)) {
            // The learnable table moves every step, so its masking stats are
            // recomputed as running values.
            std::vector<Scalar> mu_g, phi_g;
            tensor_stats(x_g, mu_g, phi_g);
            x_g = apply_noise(x_g, mu_g, phi_g, m.cfg.noise, m.seed, epoch,
                              Modality::g);
        }
        x_r = apply_noise(x_r, m.mu_r, m.phi_r, m.cfg.noise, m.seed, epoch,
                          Modality::r);
        x_a = apply_noise(x_a, m.mu_a, m.phi_a, m.cfg.noise, m.seed, epoch,
                          Modality::a);
        x_v = apply_noise(x_v, m.mu_v, m.phi_v, m.cfg.noise, m.seed, epoch,
                          Modality::v);
        x_s = apply_noise(x_s, m.mu_s, m.phi_s, m.cfg.noise, m.seed, epoch,
                          Modality::s);
    }
    MmeaForward f;
    f.h_m.push_back(encode_structure(m.structure, x_g));
    f.h_m.push_back(embed_modality(x_r, m.proj_r));
    f.h_m.push_back(embed_modality(x_a, m.proj_a));
    f.h_m.push_back(embed_modality(x_v, m.proj_v));
    f.h_m.push_back(embed_modality(x_s, m.proj_s));
    f.gmi = gmi_embed(f.h_m, m.gmi_logits);

    int e = m.ne1 + m.ne2, d = m.cfg.d;
    Tensor stacked =
        reshape(concat_lastdim(f.h_m), {e, kMmeaModalities, d});
    FusionOutput out = fuse(stacked, m.fusion);
    Tensor flat = reshape(out.fused, {e, kMmeaModalities * d});
    for (int mm = 0; mm < kMmeaModalities; ++mm)
        f.fused_m.push_back(slice_lastdim(flat, mm * d, d));
    f.conf = out.conf;
    return f;
}

Tensor gmi_embed(const std::vector<Tensor>& h_m, const Tensor& gmi_logits) {
    if (h_m.empty()) throw std::invalid_argument("gmi_embed: no modalities");
    int mcount = static_cast<int>(h_m.size());
    if (gmi_logits.size() != mcount)
        throw std::invalid_argument("gmi_embed: logit count != modalities");
    Tensor w = softmax_lastdim(gmi_logits);
    std::vector<Tensor> parts;
    parts.reserve(h_m.size());
    for (int i = 0; i < mcount; ++i)
        parts.push_back(mul(h_m[i], slice_lastdim(w, i, 1)));
    return parts.size() == 1 ? parts[0] : concat_lastdim(parts);
}

namespace {

// (p12 + p21) / 2 per batch row; inputs already normalized if requested.
// In-batch negatives for row i: the other rows of the cross matrix plus the
// off-diagonal of the same-side matrix. Summing the same-side part through a
// zeroed-diagonal mask instead of subtracting the diagonal back out keeps a
// lone pair at exactly p = 1 and avoids cancellation at small tau, where the
// self-similarity term dwarfs everything else.
Tensor bidirectional_p(const Tensor& a, const Tensor& b, Scalar tau) {
    int bsz = a.dim(0);
    std::vector<Scalar> mvals(static_cast<size_t>(bsz) * bsz, 1.0);
    for (int i = 0; i < bsz; ++i) mvals[static_cast<size_t>(i) * bsz + i] = 0.0;
    Tensor off = Tensor::from_data({bsz, bsz}, std::move(mvals));

    Scalar inv = 1.0 / tau;
    Tensor g12 = exp(mul_scalar(matmul_nt(a, b), inv));
    Tensor g21 = exp(mul_scalar(matmul_nt(b, a), inv));
    Tensor g11 = exp(mul_scalar(matmul_nt(a, a), inv));
    Tensor g22 = exp(mul_scalar(matmul_nt(b, b), inv));
    Tensor p12 = div(diag2d(g12),
                     add(diag2d(g12), add(sum_axis(mul(g12, off), -1),
                                          sum_axis(mul(g11, off), -1))));
    Tensor p21 = div(diag2d(g21),
                     add(diag2d(g21), add(sum_axis(mul(g21, off), -1),
                                          sum_axis(mul(g22, off), -1))));
    return mul_scalar(add(p12, p21), 0.5);
}

void check_pair_batch(const Tensor& a, const Tensor& b, Scalar tau,
                      const char* op) {
    if (tau <= 0.0)
        throw std::invalid_argument(std::string(op) + ": tau must be > 0");
    if (a.rank() != 2 || b.rank() != 2 || a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) +
                                    ": want matching [B, dim] inputs");
}

}  // namespace

Tensor contrastive_loss(const Tensor& a, const Tensor& b, Scalar tau,
                        bool normalize) {
    check_pair_batch(a, b, tau, "contrastive_loss");
    Tensor an = normalize ? l2_normalize_lastdim(a) : a;
    Tensor bn = normalize ? l2_normalize_lastdim(b) : b;
    return neg(mean_all(log(bidirectional_p(an, bn, tau))));
}

Tensor weighted_contrastive_loss(const Tensor& a, const Tensor& b,
                                 const Tensor& phi, Scalar tau,
                                 bool normalize) {
    check_pair_batch(a, b, tau, "weighted_contrastive_loss");
    if (phi.rank() != 1 || phi.dim(0) != a.dim(0))
        throw std::invalid_argument("weighted_contrastive_loss: phi is [B]");
    Tensor an = normalize ? l2_normalize_lastdim(a) : a;
    Tensor bn = normalize ? l2_normalize_lastdim(b) : b;
    return neg(mean_all(log(mul(bidirectional_p(an, bn, tau), phi))));
}

Tensor ecia_loss(const std::vector<Tensor>& h1, const std::vector<Tensor>& h2,
                 const Tensor& conf1, const Tensor& conf2, Scalar tau,
                 bool normalize) {
    if (h1.size() != h2.size() || h1.empty())
        throw std::invalid_argument("ecia_loss: modality lists mismatch");
    int mcount = static_cast<int>(h1.size());
    int bsz = h1[0].dim(0);
    if (conf1.rank() != 2 || conf1.dim(0) != bsz || conf1.dim(1) != mcount ||
        conf2.shape() != conf1.shape())
        throw std::invalid_argument("ecia_loss: confidences are [B, M]");
    Tensor total;
    for (int mm = 0; mm < mcount; ++mm) {
        Tensor phi = reshape(minimum(slice_lastdim(conf1, mm, 1),
                                     slice_lastdim(conf2, mm, 1)),
                             {bsz});
        Tensor term =
            weighted_contrastive_loss(h1[mm], h2[mm], phi, tau, normalize);
        total = mm == 0 ? term : add(total, term);
    }
    return total;
}

Tensor iir_loss(const std::vector<Tensor>& f1, const std::vector<Tensor>& f2,
                Scalar tau, bool normalize) {
    if (f1.size() != f2.size() || f1.empty())
        throw std::invalid_argument("iir_loss: modality lists mismatch");
    Tensor total;
    for (size_t mm = 0; mm < f1.size(); ++mm) {
        Tensor term = contrastive_loss(f1[mm], f2[mm], tau, normalize);
        total = mm == 0 ? term : add(total, term);
    }
    return total;
}

std::vector<std::pair<int, int>> probe_and_promote(
    ProbationCache& cache, const Tensor& sims, const std::vector<int>& cand1,
    const std::vector<int>& cand2, int promote_after) {
    if (promote_after < 1)
        throw std::invalid_argument("probe_and_promote: threshold >= 1");
    int n1 = static_cast<int>(cand1.size());
    int n2 = static_cast<int>(cand2.size());
    std::vector<std::pair<int, int>> mutual;
    if (n1 > 0 && n2 > 0) {
        if (sims.rank() != 2 || sims.dim(0) != n1 || sims.dim(1) != n2)
            throw std::invalid_argument("probe_and_promote: sims shape");
        const auto& s = sims.data();
        std::vector<int> best2(n1, 0), best1(n2, 0);
        for (int i = 0; i < n1; ++i)
            for (int j = 1; j < n2; ++j)
                if (s[i * n2 + j] > s[i * n2 + best2[i]]) best2[i] = j;
        for (int j = 0; j < n2; ++j)
            for (int i = 1; i < n1; ++i)
                if (s[i * n2 + j] > s[best1[j] * n2 + j]) best1[j] = i;
        for (int i = 0; i < n1; ++i)
            if (best1[best2[i]] == i)
                mutual.emplace_back(cand1[i], cand2[best2[i]]);
    }
    // Consecutiveness: anything cached but not re-observed drops out.
    std::vector<std::pair<int, int>> promoted;
    std::map<std::pair<int, int>, int> next;
    for (const auto& pr : mutual) {
        auto it = cache.counters.find(pr);
        int c = (it == cache.counters.end() ? 0 : it->second) + 1;
        if (c >= promote_after)
            promoted.push_back(pr);
        else
            next[pr] = c;
    }
    cache.counters = std::move(next);
    return promoted;
}

std::pair<Tensor, Tensor> mmea_inference_embeddings(const MmeaModel& m) {
    NoGradGuard ng;
    MmeaForward f = mmea_forward(m, 0, /*train_mode=*/false);
    std::vector<int> ids1(m.ne1), ids2(m.ne2);
    for (int i = 0; i < m.ne1; ++i) ids1[i] = i;
    for (int i = 0; i < m.ne2; ++i) ids2[i] = m.ne1 + i;
    return {gather_rows(f.gmi, ids1), gather_rows(f.gmi, ids2)};
}

MmeaTrainResult train_mmea(MmeaModel& m, const AlignmentSet& alignment) {
    if (alignment.seed.empty())
        throw std::invalid_argument("train_mmea: empty seed alignment");
    const MmeaConfig& cfg = m.cfg;
    MmeaTrainResult trace;

    std::vector<std::pair<int, int>> train_pairs = alignment.seed;
    std::vector<std::pair<int, int>> valid_pairs;
    if (cfg.patience > 0 && cfg.valid_frac > 0.0) {
        Rng carve = Rng(m.seed).substream(0x7661, 0, 0);
        carve.shuffle(train_pairs);
        size_t nv = static_cast<size_t>(
            std::ceil(cfg.valid_frac * static_cast<double>(train_pairs.size())));
        nv = std::min(nv, train_pairs.size() - 1);
        valid_pairs.assign(train_pairs.end() - nv, train_pairs.end());
        train_pairs.resize(train_pairs.size() - nv);
    }

    Adam opt(m.params,
             AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    int64_t batches0 =
        (static_cast<int64_t>(train_pairs.size()) + cfg.batch_size - 1) /
        cfg.batch_size;
    int64_t total_steps = batches0 * cfg.epochs;
    int64_t step = 0;

    ProbationCache cache;
    std::set<int> promoted1, promoted2;
    Scalar best_valid = -1.0;
    int evals_since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng(m.seed).substream(0x656f, epoch, 0);
        std::vector<int> order =
            shuffle_rng.permutation(static_cast<int>(train_pairs.size()));
        Scalar ep_loss = 0.0, ep_gmi = 0.0, ep_ecia = 0.0, ep_iir = 0.0;
        int batches = 0;
        int n = static_cast<int>(train_pairs.size());
        for (int start = 0; start < n; start += cfg.batch_size) {
            int bsz = std::min(cfg.batch_size, n - start);
            std::vector<int> ids1, ids2;
            for (int i = 0; i < bsz; ++i) {
                const auto& pr = train_pairs[order[start + i]];
                ids1.push_back(pr.first);
                ids2.push_back(m.ne1 + pr.second);
            }
            MmeaForward f = mmea_forward(m, epoch, /*train_mode=*/true);
            Tensor conf = cfg.detach_confidence ? detach(f.conf) : f.conf;

            Tensor l_gmi = contrastive_loss(gather_rows(f.gmi, ids1),
                                            gather_rows(f.gmi, ids2),
                                            cfg.tau, cfg.normalize);
            std::vector<Tensor> h1, h2, u1, u2;
            for (int mm = 0; mm < kMmeaModalities; ++mm) {
                h1.push_back(gather_rows(f.h_m[mm], ids1));
                h2.push_back(gather_rows(f.h_m[mm], ids2));
                u1.push_back(gather_rows(f.fused_m[mm], ids1));
                u2.push_back(gather_rows(f.fused_m[mm], ids2));
            }
            Tensor l_ecia =
                ecia_loss(h1, h2, gather_rows(conf, ids1),
                          gather_rows(conf, ids2), cfg.tau, cfg.normalize);
            Tensor l_iir = iir_loss(u1, u2, cfg.tau, cfg.normalize);
            Tensor loss = add(add(l_gmi, l_ecia), l_iir);
            Scalar lv = loss.item();
            if (!std::isfinite(lv))
                throw std::runtime_error(
                    "train_mmea: non-finite loss at epoch " +
                    std::to_string(epoch) + " batch " +
                    std::to_string(batches));
            m.params.zero_grad();
            backward(loss);
            opt.set_lr(cosine_warmup_lr(cfg.lr, step, total_steps,
                                        cfg.warmup_frac));
            opt.step();
            ++step;
            ep_loss += lv;
            ep_gmi += l_gmi.item();
            ep_ecia += l_ecia.item();
            ep_iir += l_iir.item();
            ++batches;
        }
        trace.epoch_loss.push_back(ep_loss / batches);
        trace.parts.push_back({ep_gmi / batches, ep_ecia / batches,
                               ep_iir / batches});

        bool probe_now =
            cfg.iterative && cfg.probe_every > 0 &&
            (epoch + 1) % cfg.probe_every == 0;
        bool eval_now =
            cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        if (!probe_now && !eval_now) continue;

        auto [emb1, emb2] = mmea_inference_embeddings(m);
        if (probe_now) {
            std::vector<int> cand1, cand2;
            for (const auto& [e1, e2] : alignment.test) {
                if (!promoted1.count(e1)) cand1.push_back(e1);
                if (!promoted2.count(e2)) cand2.push_back(e2);
            }
            Tensor sims =
                similarity_matrix(gather_rows(emb1, cand1),
                                  gather_rows(emb2, cand2), cfg.normalize);
            for (const auto& [e1, e2] : probe_and_promote(
                     cache, sims, cand1, cand2, cfg.promote_after)) {
                train_pairs.emplace_back(e1, e2);
                promoted1.insert(e1);
                promoted2.insert(e2);
                trace.promotions.push_back({epoch, e1, e2});
            }
        }
        if (eval_now) {
            if (!alignment.test.empty())
                trace.test_hits1.emplace_back(
                    epoch,
                    eval_ea(emb1, emb2, alignment.test, EaEvalOptions{})
                        .hits1);
            if (!valid_pairs.empty()) {
                Scalar vh =
                    eval_ea(emb1, emb2, valid_pairs, EaEvalOptions{}).hits1;
                trace.valid_hits1.emplace_back(epoch, vh);
                if (vh > best_valid + 1e-12) {
                    best_valid = vh;
                    evals_since_best = 0;
                } else if (++evals_since_best >= cfg.patience) {
                    trace.stopped_epoch = epoch;
                    break;
                }
            }
        }
    }
    return trace;
}

}  // namespace snag
