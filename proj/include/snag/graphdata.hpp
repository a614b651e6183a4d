#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "snag/rng.hpp"
#include "snag/tensor.hpp"

namespace snag {

// Interning bijection: id -> name -> id is identity.
class Vocab {
public:
    int intern(const std::string& name);
    int id(const std::string& name) const;  // -1 when absent
    const std::string& name(int id) const;
    int size() const { return static_cast<int>(names_.size()); }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
};

struct Triple {
    int h, r, t;
    bool operator==(const Triple& o) const {
        return h == o.h && r == o.r && t == o.t;
    }
};

enum class Split { train, valid, test };
const char* split_name(Split s);

struct KnowledgeGraph {
    Vocab entities;
    Vocab relations;
    std::vector<Triple> train, valid, test;

    int num_entities() const { return entities.size(); }
    int num_relations() const { return relations.size(); }
    std::vector<Triple>& split(Split s);
    const std::vector<Triple>& split(Split s) const;

    // Undirected neighbor lists from train triples, sorted, deduplicated,
    // no self entries (encoders add self-loops themselves).
    std::vector<std::vector<int>> adjacency() const;
};

// Membership index over (h, r, t) keys; used by filtered ranking and
// negative-sample rejection.
class TripleIndex {
public:
    TripleIndex(const KnowledgeGraph& kg, bool include_valid_test);
    bool contains(int h, int r, int t) const {
        return keys_.count(key(h, r, t)) != 0;
    }

private:
    int64_t key(int64_t h, int64_t r, int64_t t) const {
        return (h * nr_ + r) * ne_ + t;
    }
    int64_t ne_, nr_;
    std::unordered_set<int64_t> keys_;
};

// Appends one split from a `head<TAB>relation<TAB>tail` file. In strict
// mode valid/test may not introduce entities unseen in train.
void load_triples_file(KnowledgeGraph& kg, const std::string& path, Split s,
                       bool strict = true);
// Reads <dir>/train.tsv, valid.tsv, test.tsv; missing valid/test files give
// empty splits.
KnowledgeGraph load_triples(const std::string& dir, bool strict = true);
void write_triples_file(const KnowledgeGraph& kg, Split s,
                        const std::string& path);

enum class Modality { g, r, a, v, s };
char modality_tag(Modality m);
Modality modality_from_tag(char c);

struct ModalityFeatureStore {
    Modality tag = Modality::v;
    int rows = 0;
    int dim = 0;
    std::vector<Scalar> matrix;     // rows x dim, row-major
    std::vector<uint8_t> present;   // per row; keeps original absence after
                                    // imputation fills the values
    bool imputed = false;
    std::vector<Scalar> mu, phi;    // per dim, over present rows, population std

    Scalar* row(int i) { return matrix.data() + static_cast<int64_t>(i) * dim; }
    const Scalar* row(int i) const {
        return matrix.data() + static_cast<int64_t>(i) * dim;
    }
    int num_present() const;
    void recompute_stats();
};

// Binary `MMFT` (magic, u32 rows, u32 dim, row-major f32 LE) or CSV with the
// entity name in column 0. Binary requires rows == expected_rows and marks
// every row present; CSV marks listed rows present. NaN input is an error.
ModalityFeatureStore load_features(const std::string& path, Modality tag,
                                   int expected_rows,
                                   const Vocab* entities = nullptr);
void write_features(const ModalityFeatureStore& store,
                    const std::string& path);
// Present rows only, full double precision; the format of choice when some
// rows are absent, since MMFT marks everything present on reload.
void write_features_csv(const ModalityFeatureStore& store,
                        const Vocab& entities, const std::string& path);

struct AttributeSet {
    Vocab keys;
    std::vector<std::pair<int, int>> items;  // (entity id, key id)
};

// `entity<TAB>attribute` lines; strict mode rejects unknown entities.
AttributeSet load_attributes(const std::string& path, const Vocab& entities,
                             bool strict = true);
void write_attributes(const AttributeSet& attrs, const Vocab& entities,
                      const std::string& path);

// BoW column k of entity e describes the k-th most frequent item in the
// corpus: occurrence count for relations, 0/1 presence for attributes.
// swap_semantics flips which side gets counts vs presence.
std::pair<ModalityFeatureStore, ModalityFeatureStore> build_bow_features(
    const KnowledgeGraph& kg, const AttributeSet& attrs, int d_r, int d_a,
    bool swap_semantics = false);

struct AlignmentSet {
    std::vector<std::pair<int, int>> seed;  // training pairs
    std::vector<std::pair<int, int>> test;  // held-out pairs
};

// Shuffles pairs and takes round(r_sa * n) as seeds.
AlignmentSet split_alignment(std::vector<std::pair<int, int>> pairs,
                             double r_sa, Rng& rng);
std::vector<std::pair<int, int>> load_alignment(const std::string& path,
                                                const Vocab& e1,
                                                const Vocab& e2,
                                                bool strict = true);
void write_alignment(const std::vector<std::pair<int, int>>& pairs,
                     const Vocab& e1, const Vocab& e2,
                     const std::string& path);

struct SynthSpec {
    int num_entities = 60;
    int num_relations = 4;
    int num_clusters = 4;
    int d_v = 16;
    int d_s = 16;
    double r_img = 1.0;       // fraction of entities with visual features
    double r_sa = 0.3;        // seed alignment ratio
    double jitter = 0.0;      // G2 feature perturbation scale
    double valid_frac = 0.0;  // relational triple split fractions (KGC)
    double test_frac = 0.0;
    int attrs_per_entity = 2;
    int num_attr_keys = 12;
};

struct SyntheticData {
    KnowledgeGraph g1, g2;
    AttributeSet attrs1, attrs2;
    ModalityFeatureStore v1, s1, v2, s2;
    std::vector<std::pair<int, int>> pairs;  // full ground truth, g1 -> g2
    AlignmentSet alignment;
};

// Cluster-structured G1 plus an isomorphic permuted G2 whose aligned
// features match G1 up to Gaussian jitter. Deterministic per seed.
SyntheticData generate_synthetic(const SynthSpec& spec, uint64_t seed);

}  // namespace snag
