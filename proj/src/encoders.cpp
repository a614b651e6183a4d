#include "snag/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace snag {

Tensor features_tensor(const ModalityFeatureStore& store) {
    return Tensor::from_data({store.rows, store.dim}, store.matrix);
}

void impute_missing(ModalityFeatureStore& store, uint64_t seed) {
    if (store.num_present() == 0)
        throw std::runtime_error("impute_missing: no present rows for modality " +
                                 std::string(1, modality_tag(store.tag)));
    if (store.num_present() == store.rows) {
        store.imputed = true;
        return;
    }
    Rng rng = Rng(seed).substream(0x1390, static_cast<uint64_t>(store.tag));
    for (int i = 0; i < store.rows; ++i) {
        if (store.present[i]) continue;
        Scalar* r = store.row(i);
        for (int j = 0; j < store.dim; ++j)
            r[j] = rng.normal(store.mu[j], store.phi[j]);
    }
    store.imputed = true;
}

ModalityProjector make_projector(ParamStore& params, const std::string& name,
                                 int d_m, int d, Rng& rng) {
    ModalityProjector p;
    p.W = params.put(name + ".W", init_fan_in({d_m, d}, rng));
    p.b = params.create(name + ".b", {d});
    return p;
}

Tensor embed_modality(const Tensor& x, const ModalityProjector& p) {
    if (x.dim(-1) != p.W.dim(0))
        throw std::invalid_argument(
            "embed_modality: feature dim " + std::to_string(x.dim(-1)) +
            " != projector input dim " + std::to_string(p.W.dim(0)));
    return add(matmul(x, p.W), p.b);
}

namespace {

void mask_from_adjacency(const std::vector<std::vector<int>>& adj, int offset,
                         int total, std::vector<Scalar>& data) {
    int n = static_cast<int>(adj.size());
    for (int i = 0; i < n; ++i) {
        int64_t base = static_cast<int64_t>(offset + i) * total + offset;
        data[base + i] = 1.0;  // self-loop
        for (int j : adj[i]) data[base + j] = 1.0;
    }
}

}  // namespace

Tensor adjacency_mask(const KnowledgeGraph& kg) {
    int n = kg.num_entities();
    std::vector<Scalar> data(static_cast<size_t>(n) * n, 0.0);
    mask_from_adjacency(kg.adjacency(), 0, n, data);
    return Tensor::from_data({n, n}, std::move(data));
}

Tensor adjacency_mask_union(const KnowledgeGraph& g1,
                            const KnowledgeGraph& g2) {
    int n1 = g1.num_entities();
    int n = n1 + g2.num_entities();
    std::vector<Scalar> data(static_cast<size_t>(n) * n, 0.0);
    mask_from_adjacency(g1.adjacency(), 0, n, data);
    mask_from_adjacency(g2.adjacency(), n1, n, data);
    return Tensor::from_data({n, n}, std::move(data));
}

GatParams make_gat(ParamStore& params, const std::string& name, int d,
                   int num_layers, int num_heads, Rng& rng) {
    if (num_layers < 1 || num_heads < 1)
        throw std::invalid_argument("make_gat: layers and heads must be >= 1");
    GatParams p;
    for (int l = 0; l < num_layers; ++l) {
        GatLayer layer;
        std::string base = name + ".l" + std::to_string(l);
        // Identity-like diagonal keeps early propagation close to the input.
        layer.w_diag = params.put(base + ".w", Tensor::full({d}, 1.0, true));
        for (int h = 0; h < num_heads; ++h) {
            GatHead head;
            std::string hb = base + ".h" + std::to_string(h);
            head.a_src = params.put(hb + ".a_src", init_fan_in({d}, rng));
            head.a_dst = params.put(hb + ".a_dst", init_fan_in({d}, rng));
            layer.heads.push_back(head);
        }
        p.layers.push_back(std::move(layer));
    }
    return p;
}

Tensor gat_forward(const Tensor& x, const Tensor& adj_mask,
                   const GatParams& p) {
    if (x.rank() != 2 || adj_mask.rank() != 2 || adj_mask.dim(0) != x.dim(0) ||
        adj_mask.dim(1) != x.dim(0))
        throw std::invalid_argument("gat_forward: need x [E,d], mask [E,E]");
    Tensor h = x;
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const GatLayer& layer = p.layers[l];
        Tensor wh = mul(h, layer.w_diag);  // diagonal W_g
        Tensor combined;
        for (size_t k = 0; k < layer.heads.size(); ++k) {
            const GatHead& head = layer.heads[k];
            Tensor u = sum_axis(mul(wh, head.a_src), -1);  // [E]
            Tensor v = sum_axis(mul(wh, head.a_dst), -1);
            Tensor logits = leaky_relu(outer_add(u, v), p.leaky_slope);
            Tensor alpha = masked_softmax_lastdim(logits, adj_mask);
            Tensor out = matmul(alpha, wh);  // [E, d]
            if (!p.average_heads) {
                combined = k == 0 ? out : concat_lastdim({combined, out});
            } else {
                combined = k == 0 ? out : add(combined, out);
            }
        }
        if (p.average_heads && layer.heads.size() > 1)
            combined = mul_scalar(
                combined, 1.0 / static_cast<Scalar>(layer.heads.size()));
        h = (l + 1 < p.layers.size()) ? elu(combined) : combined;
    }
    return h;
}

StructureEncoder make_structure_encoder_kgc(ParamStore& params, int ne, int d,
                                            Rng& rng) {
    StructureEncoder enc;
    enc.mode = StructureMode::kgc_fc;
    enc.x_g = params.put(
        "g.x", init_uniform({ne, d}, 1.0 / std::sqrt(static_cast<Scalar>(d)), rng));
    enc.fc = make_projector(params, "g.fc", d, d, rng);
    return enc;
}

StructureEncoder make_structure_encoder_mmea(ParamStore& params,
                                             const Tensor& adj_mask, int ne,
                                             int d, int num_layers,
                                             int num_heads, Rng& rng) {
    StructureEncoder enc;
    enc.mode = StructureMode::mmea_gat;
    enc.x_g = params.put(
        "g.x", init_uniform({ne, d}, 1.0 / std::sqrt(static_cast<Scalar>(d)), rng));
    enc.gat = make_gat(params, "g.gat", d, num_layers, num_heads, rng);
    enc.adj_mask = adj_mask;
    return enc;
}

Tensor encode_structure(const StructureEncoder& enc) {
    return encode_structure(enc, enc.x_g);
}

Tensor encode_structure(const StructureEncoder& enc, const Tensor& x) {
    if (enc.mode == StructureMode::kgc_fc) return embed_modality(x, enc.fc);
    return gat_forward(x, enc.adj_mask, enc.gat);
}

}  // namespace snag
