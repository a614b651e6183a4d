#include "snag/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace snag {

FusionWeights make_fusion_weights(ParamStore& params, const std::string& name,
                                  int d, int heads, int ffn_dim, Rng& rng) {
    if (heads < 1 || d % heads != 0)
        throw std::invalid_argument("fusion: d must divide evenly by heads");
    FusionWeights w;
    w.d = d;
    w.heads = heads;
    w.ffn_dim = ffn_dim > 0 ? ffn_dim : 4 * d;
    int d_h = d / heads;
    for (int i = 0; i < heads; ++i) {
        std::string h = name + ".h" + std::to_string(i);
        w.w_q.push_back(params.put(h + ".wq", init_fan_in({d, d_h}, rng)));
        w.w_k.push_back(params.put(h + ".wk", init_fan_in({d, d_h}, rng)));
        w.w_v.push_back(params.put(h + ".wv", init_fan_in({d, d_h}, rng)));
    }
    w.w_o = params.put(name + ".wo", init_fan_in({d, d}, rng));
    w.w_1 = params.put(name + ".w1", init_fan_in({d, w.ffn_dim}, rng));
    w.b_1 = params.create(name + ".b1", {w.ffn_dim});
    w.w_2 = params.put(name + ".w2", init_fan_in({w.ffn_dim, d}, rng));
    w.b_2 = params.create(name + ".b2", {d});
    w.ln1_g = params.put(name + ".ln1g", Tensor::full({d}, 1.0));
    w.ln1_b = params.create(name + ".ln1b", {d});
    w.ln2_g = params.put(name + ".ln2g", Tensor::full({d}, 1.0));
    w.ln2_b = params.create(name + ".ln2b", {d});
    return w;
}

namespace {

// LN over the last dim with a learnable affine on top.
Tensor affine_layernorm(const Tensor& x, const Tensor& gain,
                        const Tensor& bias) {
    return add(mul(layernorm_lastdim(x), gain), bias);
}

}  // namespace

std::pair<Tensor, std::vector<Tensor>> mhca(const Tensor& h,
                                            const FusionWeights& w) {
    if (h.rank() != 3 || h.dim(2) != w.d)
        throw std::invalid_argument("mhca: need [B, M, d] input");
    int d_h = w.d / w.heads;
    Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(d_h));
    std::vector<Tensor> heads_out, betas;
    for (int i = 0; i < w.heads; ++i) {
        Tensor q = matmul(h, w.w_q[i]);  // [B, M, d_h]
        Tensor k = matmul(h, w.w_k[i]);
        Tensor v = matmul(h, w.w_v[i]);
        Tensor beta = softmax_lastdim(mul_scalar(bmm_nt(q, k), scale));
        betas.push_back(beta);
        heads_out.push_back(bmm(beta, v));  // [B, M, d_h]
    }
    Tensor cat = w.heads == 1 ? heads_out[0] : concat_lastdim(heads_out);
    return {matmul(cat, w.w_o), betas};
}

Tensor confidence(const std::vector<Tensor>& betas) {
    if (betas.empty()) throw std::invalid_argument("confidence: no betas");
    int m = betas[0].dim(2);
    // Attention mass each modality receives as a key, pooled over heads and
    // queries.
    Tensor mass = sum_axis(betas[0], 1);  // [B, M]
    for (size_t i = 1; i < betas.size(); ++i)
        mass = add(mass, sum_axis(betas[i], 1));
    Scalar scale =
        1.0 / std::sqrt(static_cast<Scalar>(m) *
                        static_cast<Scalar>(betas.size()));
    return softmax_lastdim(mul_scalar(mass, scale));
}

FusionOutput fuse(const Tensor& h, const FusionWeights& w) {
    auto [att, betas] = mhca(h, w);
    Tensor x = affine_layernorm(add(att, h), w.ln1_g, w.ln1_b);
    Tensor ffn = add(matmul(relu(add(matmul(x, w.w_1), w.b_1)), w.w_2), w.b_2);
    FusionOutput out;
    out.fused = affine_layernorm(add(ffn, x), w.ln2_g, w.ln2_b);
    out.conf = confidence(betas);
    out.betas = std::move(betas);
    return out;
}

FusionVariant parse_fusion_variant(const std::string& s) {
    if (s == "full") return FusionVariant::full;
    if (s == "fc") return FusionVariant::fc;
    if (s == "ws") return FusionVariant::ws;
    if (s == "at") return FusionVariant::at;
    if (s == "ts") return FusionVariant::ts;
    if (s == "only_g") return FusionVariant::only_g;
    throw std::invalid_argument("unknown fusion variant: " + s);
}

std::string fusion_variant_name(FusionVariant v) {
    switch (v) {
        case FusionVariant::full: return "full";
        case FusionVariant::fc: return "fc";
        case FusionVariant::ws: return "ws";
        case FusionVariant::at: return "at";
        case FusionVariant::ts: return "ts";
        case FusionVariant::only_g: return "only_g";
    }
    throw std::invalid_argument("unknown fusion variant");
}

VariantParams make_variant_params(ParamStore& params, const std::string& name,
                                  FusionVariant v, int num_modalities, int d,
                                  Rng& rng) {
    VariantParams p;
    switch (v) {
        case FusionVariant::fc:
            p.w_fc = params.put(name + ".fc.w",
                                init_fan_in({num_modalities * d, d}, rng));
            p.b_fc = params.create(name + ".fc.b", {d});
            break;
        case FusionVariant::ws:
            p.ws_logits = params.create(name + ".ws.logits", {num_modalities});
            break;
        case FusionVariant::at: {
            int k = std::max(4, d / 2);
            p.at_w = params.put(name + ".at.w", init_fan_in({d, k}, rng));
            p.at_b = params.create(name + ".at.b", {k});
            p.at_v = params.put(name + ".at.v", init_fan_in({k}, rng));
            break;
        }
        default:
            break;  // full / ts / only_g add no extra parameters
    }
    return p;
}

Tensor fuse_variant(const Tensor& h, FusionVariant kind,
                    const VariantParams& p, const FusionWeights* w) {
    if (h.rank() != 3)
        throw std::invalid_argument("fuse_variant: need [B, M, d]");
    int b = h.dim(0), m = h.dim(1), d = h.dim(2);
    switch (kind) {
        case FusionVariant::fc: {
            Tensor flat = reshape(h, {b, m * d});
            return add(matmul(flat, p.w_fc), p.b_fc);
        }
        case FusionVariant::ws: {
            Tensor wts = softmax_lastdim(p.ws_logits);  // [M]
            Tensor scaled = mul(h, reshape(wts, {m, 1}));
            return sum_axis(scaled, 1);
        }
        case FusionVariant::at: {
            // score_m = v . tanh(h_m W + b), softmaxed per entity.
            Tensor hidden = tanh(add(matmul(h, p.at_w), p.at_b));  // [B,M,k]
            Tensor scores = sum_axis(mul(hidden, p.at_v), -1);     // [B,M]
            Tensor a = softmax_lastdim(scores);
            return sum_axis(mul(h, reshape(a, {b, m, 1})), 1);
        }
        case FusionVariant::ts: {
            if (!w)
                throw std::invalid_argument("fuse_variant: ts needs weights");
            FusionOutput out = fuse(h, *w);
            Tensor scaled = mul(out.fused, reshape(out.conf, {b, m, 1}));
            return sum_axis(scaled, 1);
        }
        default:
            throw std::invalid_argument(
                "fuse_variant: kind keeps per-modality outputs");
    }
}

}  // namespace snag
