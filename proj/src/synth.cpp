#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>

#include "snag/graphdata.hpp"

namespace snag {

namespace {

// Substream keys; fixed so each randomness source is independent of the
// consumption order of the others.
enum : uint64_t {
    kStructure = 1,
    kPermutation = 2,
    kFeatures = 3,
    kPresence = 4,
    kAttributes = 5,
    kSplits = 6,
    kAlignment = 7,
    kJitter = 8,
};

std::string padded(const char* prefix, int i, int width) {
    std::string digits = std::to_string(i);
    std::string out = prefix;
    for (int k = static_cast<int>(digits.size()); k < width; ++k) out += '0';
    return out + digits;
}

int name_width(int n) {
    int w = 1;
    while (n >= 10) {
        n /= 10;
        ++w;
    }
    return w;
}

// Entities are split into near-equal contiguous blocks.
int cluster_of(int e, int ne, int nc) {
    return static_cast<int>(static_cast<int64_t>(e) * nc / ne);
}

ModalityFeatureStore make_store(Modality tag, int rows, int dim) {
    ModalityFeatureStore st;
    st.tag = tag;
    st.rows = rows;
    st.dim = dim;
    st.matrix.assign(static_cast<size_t>(rows) * dim, 0.0);
    st.present.assign(rows, 1);
    return st;
}

// Moves valid/test triples into train until every entity and relation is
// covered by train, so strict reloads of written splits succeed.
void ensure_train_coverage(KnowledgeGraph& kg) {
    std::vector<char> ent_seen(kg.num_entities(), 0);
    std::vector<char> rel_seen(kg.num_relations(), 0);
    for (const Triple& t : kg.train) {
        ent_seen[t.h] = ent_seen[t.t] = 1;
        rel_seen[t.r] = 1;
    }
    for (Split s : {Split::valid, Split::test}) {
        auto& src = kg.split(s);
        for (size_t i = 0; i < src.size();) {
            const Triple& t = src[i];
            if (!ent_seen[t.h] || !ent_seen[t.t] || !rel_seen[t.r]) {
                ent_seen[t.h] = ent_seen[t.t] = 1;
                rel_seen[t.r] = 1;
                kg.train.push_back(t);
                src.erase(src.begin() + static_cast<int64_t>(i));
            } else {
                ++i;
            }
        }
    }
}

}  // namespace

SyntheticData generate_synthetic(const SynthSpec& spec, uint64_t seed) {
    if (spec.r_img < 0.0 || spec.r_img > 1.0)
        throw std::invalid_argument("generate_synthetic: r_img outside [0,1]");
    if (spec.r_sa < 0.0 || spec.r_sa > 1.0)
        throw std::invalid_argument("generate_synthetic: r_sa outside [0,1]");
    if (spec.jitter < 0.0)
        throw std::invalid_argument("generate_synthetic: negative jitter");
    if (spec.num_entities < 2 || spec.num_relations < 1)
        throw std::invalid_argument("generate_synthetic: need >= 2 entities and >= 1 relation");
    if (spec.num_clusters < 1 || spec.num_clusters > spec.num_entities)
        throw std::invalid_argument("generate_synthetic: bad num_clusters");
    if (spec.valid_frac < 0 || spec.test_frac < 0 ||
        spec.valid_frac + spec.test_frac >= 1.0)
        throw std::invalid_argument("generate_synthetic: bad split fractions");

    Rng base(seed);
    const int ne = spec.num_entities;
    const int nc = spec.num_clusters;
    const int nr = spec.num_relations;

    SyntheticData out;
    int ew = name_width(ne - 1);
    for (int i = 0; i < ne; ++i) out.g1.entities.intern(padded("a", i, ew));
    for (int i = 0; i < ne; ++i) out.g2.entities.intern(padded("b", i, ew));
    int rw = name_width(nr - 1);
    for (int i = 0; i < nr; ++i) {
        std::string name = padded("r", i, rw);
        out.g1.relations.intern(name);
        out.g2.relations.intern(name);
    }

    std::vector<std::vector<int>> clusters(nc);
    for (int e = 0; e < ne; ++e) clusters[cluster_of(e, ne, nc)].push_back(e);

    // Relation 0 cycles inside each cluster (covers every entity); the rest
    // are random bijections between a source and a target cluster.
    Rng srng = base.substream(kStructure);
    std::vector<Triple> triples;
    for (const auto& members : clusters) {
        int n = static_cast<int>(members.size());
        for (int i = 0; i < n; ++i)
            triples.push_back({members[i], 0, members[(i + 1) % n]});
    }
    for (int r = 1; r < nr; ++r) {
        int src = (r - 1) % nc;
        int dst = nc == 1 ? src : (src + 1 + ((r - 1) / nc) % (nc - 1)) % nc;
        auto heads = clusters[src];
        auto tails = clusters[dst];
        srng.shuffle(heads);
        srng.shuffle(tails);
        size_t n = std::min(heads.size(), tails.size());
        for (size_t i = 0; i < n; ++i)
            triples.push_back({heads[i], r, tails[i]});
    }

    // Splits on G1, then coverage repair so train alone spans the vocab.
    Rng sprng = base.substream(kSplits);
    sprng.shuffle(triples);
    size_t n_test = static_cast<size_t>(
        std::llround(spec.test_frac * static_cast<double>(triples.size())));
    size_t n_valid = static_cast<size_t>(
        std::llround(spec.valid_frac * static_cast<double>(triples.size())));
    for (size_t i = 0; i < triples.size(); ++i) {
        if (i < n_test)
            out.g1.test.push_back(triples[i]);
        else if (i < n_test + n_valid)
            out.g1.valid.push_back(triples[i]);
        else
            out.g1.train.push_back(triples[i]);
    }
    ensure_train_coverage(out.g1);

    // G2 is the permuted image of G1, split for split.
    Rng prng = base.substream(kPermutation);
    std::vector<int> perm = prng.permutation(ne);
    for (Split s : {Split::train, Split::valid, Split::test})
        for (const Triple& t : out.g1.split(s))
            out.g2.split(s).push_back({perm[t.h], t.r, perm[t.t]});

    // Cluster-anchored features; aligned rows agree up to jitter.
    Rng frng = base.substream(kFeatures);
    std::vector<std::vector<Scalar>> vc(nc, std::vector<Scalar>(spec.d_v));
    std::vector<std::vector<Scalar>> sc(nc, std::vector<Scalar>(spec.d_s));
    for (int c = 0; c < nc; ++c) {
        for (auto& x : vc[c]) x = frng.normal(0.0, 2.0);
        for (auto& x : sc[c]) x = frng.normal(0.0, 2.0);
    }
    out.v1 = make_store(Modality::v, ne, spec.d_v);
    out.s1 = make_store(Modality::s, ne, spec.d_s);
    out.v2 = make_store(Modality::v, ne, spec.d_v);
    out.s2 = make_store(Modality::s, ne, spec.d_s);
    for (int e = 0; e < ne; ++e) {
        int c = cluster_of(e, ne, nc);
        for (int j = 0; j < spec.d_v; ++j)
            out.v1.row(e)[j] = vc[c][j] + frng.normal(0.0, 0.5);
        for (int j = 0; j < spec.d_s; ++j)
            out.s1.row(e)[j] = sc[c][j] + frng.normal(0.0, 0.5);
    }
    Rng jrng = base.substream(kJitter);
    for (int e = 0; e < ne; ++e) {
        int e2 = perm[e];
        for (int j = 0; j < spec.d_v; ++j)
            out.v2.row(e2)[j] =
                out.v1.row(e)[j] + spec.jitter * jrng.normal();
        for (int j = 0; j < spec.d_s; ++j)
            out.s2.row(e2)[j] =
                out.s1.row(e)[j] + spec.jitter * jrng.normal();
    }

    // Visual presence honors r_img exactly (independent draw per graph);
    // absent rows are zeroed until imputation.
    int n_img = static_cast<int>(std::llround(spec.r_img * ne));
    Rng mrng = base.substream(kPresence);
    for (ModalityFeatureStore* v : {&out.v1, &out.v2}) {
        std::fill(v->present.begin(), v->present.end(), 0);
        for (int e : mrng.sample_without_replacement(ne, n_img))
            v->present[e] = 1;
        for (int e = 0; e < ne; ++e)
            if (!v->present[e])
                std::fill(v->row(e), v->row(e) + v->dim, 0.0);
    }
    out.v1.recompute_stats();
    out.v2.recompute_stats();
    out.s1.recompute_stats();
    out.s2.recompute_stats();

    // Cluster-tied attribute keys plus one random key; aligned entities get
    // identical key sets.
    int kw = name_width(std::max(1, spec.num_attr_keys - 1));
    for (int k = 0; k < spec.num_attr_keys; ++k) {
        out.attrs1.keys.intern(padded("k", k, kw));
        out.attrs2.keys.intern(padded("k", k, kw));
    }
    Rng arng = base.substream(kAttributes);
    for (int e = 0; e < ne && spec.num_attr_keys > 0; ++e) {
        int c = cluster_of(e, ne, nc);
        std::unordered_set<int> keys;
        for (int j = 0; j < spec.attrs_per_entity; ++j)
            keys.insert((c * spec.attrs_per_entity + j) % spec.num_attr_keys);
        keys.insert(static_cast<int>(arng.uniform_int(spec.num_attr_keys)));
        std::vector<int> sorted(keys.begin(), keys.end());
        std::sort(sorted.begin(), sorted.end());
        for (int k : sorted) {
            out.attrs1.items.emplace_back(e, k);
            out.attrs2.items.emplace_back(perm[e], k);
        }
    }
    std::sort(out.attrs2.items.begin(), out.attrs2.items.end());

    for (int e = 0; e < ne; ++e) out.pairs.emplace_back(e, perm[e]);
    Rng alrng = base.substream(kAlignment);
    out.alignment = split_alignment(out.pairs, spec.r_sa, alrng);
    return out;
}

}  // namespace snag
