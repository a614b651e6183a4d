#include "snag/graphdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace snag {

namespace {

[[noreturn]] void fail_at(const std::string& path, int line,
                          const std::string& msg) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_on(const std::string& line, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

// Strips a trailing CR so CRLF files parse like LF files.
bool next_line(std::ifstream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return in;
}

}  // namespace

int Vocab::intern(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(names_.size());
    names_.push_back(name);
    index_[name] = id;
    return id;
}

int Vocab::id(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

const std::string& Vocab::name(int id) const {
    if (id < 0 || id >= size())
        throw std::invalid_argument("Vocab: id " + std::to_string(id) +
                                    " out of range");
    return names_[id];
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        default: return "test";
    }
}

std::vector<Triple>& KnowledgeGraph::split(Split s) {
    switch (s) {
        case Split::train: return train;
        case Split::valid: return valid;
        default: return test;
    }
}

const std::vector<Triple>& KnowledgeGraph::split(Split s) const {
    return const_cast<KnowledgeGraph*>(this)->split(s);
}

std::vector<std::vector<int>> KnowledgeGraph::adjacency() const {
    std::vector<std::vector<int>> adj(num_entities());
    for (const Triple& t : train) {
        if (t.h != t.t) {
            adj[t.h].push_back(t.t);
            adj[t.t].push_back(t.h);
        }
    }
    for (auto& nb : adj) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    return adj;
}

TripleIndex::TripleIndex(const KnowledgeGraph& kg, bool include_valid_test)
    : ne_(kg.num_entities()), nr_(kg.num_relations()) {
    auto put = [&](const std::vector<Triple>& ts) {
        for (const Triple& t : ts) keys_.insert(key(t.h, t.r, t.t));
    };
    put(kg.train);
    if (include_valid_test) {
        put(kg.valid);
        put(kg.test);
    }
}

void load_triples_file(KnowledgeGraph& kg, const std::string& path, Split s,
                       bool strict) {
    auto in = open_or_throw(path);
    std::string line;
    int line_no = 0;
    auto& out = kg.split(s);
    while (next_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_on(line, '\t');
        if (fields.size() != 3)
            fail_at(path, line_no, "expected 3 tab-separated fields, got " +
                                       std::to_string(fields.size()));
        if (strict && s != Split::train) {
            for (int side : {0, 2})
                if (kg.entities.id(fields[side]) < 0)
                    fail_at(path, line_no,
                            "entity '" + fields[side] + "' not seen in train");
        }
        Triple t;
        t.h = kg.entities.intern(fields[0]);
        t.r = kg.relations.intern(fields[1]);
        t.t = kg.entities.intern(fields[2]);
        out.push_back(t);
    }
}

KnowledgeGraph load_triples(const std::string& dir, bool strict) {
    KnowledgeGraph kg;
    load_triples_file(kg, dir + "/train.tsv", Split::train, strict);
    for (Split s : {Split::valid, Split::test}) {
        std::string path = dir + "/" + split_name(s) + ".tsv";
        if (std::filesystem::exists(path)) load_triples_file(kg, path, s, strict);
    }
    return kg;
}

void write_triples_file(const KnowledgeGraph& kg, Split s,
                        const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const Triple& t : kg.split(s))
        out << kg.entities.name(t.h) << '\t' << kg.relations.name(t.r) << '\t'
            << kg.entities.name(t.t) << '\n';
}

char modality_tag(Modality m) {
    switch (m) {
        case Modality::g: return 'g';
        case Modality::r: return 'r';
        case Modality::a: return 'a';
        case Modality::v: return 'v';
        default: return 's';
    }
}

Modality modality_from_tag(char c) {
    switch (c) {
        case 'g': return Modality::g;
        case 'r': return Modality::r;
        case 'a': return Modality::a;
        case 'v': return Modality::v;
        case 's': return Modality::s;
        default:
            throw std::invalid_argument(std::string("unknown modality tag '") +
                                        c + "'");
    }
}

int ModalityFeatureStore::num_present() const {
    int n = 0;
    for (uint8_t p : present) n += p ? 1 : 0;
    return n;
}

void ModalityFeatureStore::recompute_stats() {
    mu.assign(dim, 0.0);
    phi.assign(dim, 0.0);
    int n = num_present();
    if (n == 0) return;
    for (int i = 0; i < rows; ++i) {
        if (!present[i]) continue;
        const Scalar* r = row(i);
        for (int j = 0; j < dim; ++j) mu[j] += r[j];
    }
    for (int j = 0; j < dim; ++j) mu[j] /= n;
    for (int i = 0; i < rows; ++i) {
        if (!present[i]) continue;
        const Scalar* r = row(i);
        for (int j = 0; j < dim; ++j) {
            Scalar d = r[j] - mu[j];
            phi[j] += d * d;
        }
    }
    for (int j = 0; j < dim; ++j) phi[j] = std::sqrt(phi[j] / n);
}

namespace {

ModalityFeatureStore load_features_mmft(std::ifstream& in,
                                        const std::string& path, Modality tag,
                                        int expected_rows) {
    uint32_t rows = 0, dim = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&dim), 4);
    if (!in) throw std::runtime_error(path + ": truncated MMFT header");
    if (expected_rows >= 0 && static_cast<int>(rows) != expected_rows)
        throw std::runtime_error(path + ": MMFT row count " +
                                 std::to_string(rows) + " != expected " +
                                 std::to_string(expected_rows));
    ModalityFeatureStore store;
    store.tag = tag;
    store.rows = static_cast<int>(rows);
    store.dim = static_cast<int>(dim);
    std::vector<float> buf(static_cast<size_t>(rows) * dim);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error(path + ": truncated MMFT payload");
    store.matrix.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        if (std::isnan(buf[i]))
            throw std::runtime_error(path + ": NaN in feature data");
        store.matrix[i] = static_cast<Scalar>(buf[i]);
    }
    store.present.assign(store.rows, 1);
    store.recompute_stats();
    return store;
}

ModalityFeatureStore load_features_csv(const std::string& path, Modality tag,
                                       int expected_rows,
                                       const Vocab* entities) {
    if (!entities)
        throw std::runtime_error(path +
                                 ": CSV features need an entity vocabulary");
    auto in = open_or_throw(path);
    ModalityFeatureStore store;
    store.tag = tag;
    store.rows = expected_rows;
    std::string line;
    int line_no = 0;
    while (next_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_on(line, ',');
        if (fields.size() < 2)
            fail_at(path, line_no, "expected entity,v1,... fields");
        int id = entities->id(fields[0]);
        if (id < 0)
            fail_at(path, line_no, "unknown entity '" + fields[0] + "'");
        int d = static_cast<int>(fields.size()) - 1;
        if (store.dim == 0) {
            store.dim = d;
            store.matrix.assign(static_cast<size_t>(store.rows) * d, 0.0);
            store.present.assign(store.rows, 0);
        } else if (d != store.dim) {
            fail_at(path, line_no,
                    "row has " + std::to_string(d) + " values, expected " +
                        std::to_string(store.dim));
        }
        Scalar* r = store.row(id);
        for (int j = 0; j < d; ++j) {
            try {
                r[j] = std::stod(fields[j + 1]);
            } catch (const std::exception&) {
                fail_at(path, line_no, "bad number '" + fields[j + 1] + "'");
            }
            if (std::isnan(r[j])) fail_at(path, line_no, "NaN in feature data");
        }
        store.present[id] = 1;
    }
    if (store.dim == 0)
        throw std::runtime_error(path + ": no feature rows found");
    store.recompute_stats();
    return store;
}

}  // namespace

ModalityFeatureStore load_features(const std::string& path, Modality tag,
                                   int expected_rows, const Vocab* entities) {
    auto in = open_or_throw(path);
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    if (in && std::memcmp(magic, "MMFT", 4) == 0)
        return load_features_mmft(in, path, tag, expected_rows);
    in.close();
    return load_features_csv(path, tag, expected_rows, entities);
}

void write_features(const ModalityFeatureStore& store,
                    const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write("MMFT", 4);
    uint32_t rows = static_cast<uint32_t>(store.rows);
    uint32_t dim = static_cast<uint32_t>(store.dim);
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    std::vector<float> buf(store.matrix.size());
    for (size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<float>(store.matrix[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void write_features_csv(const ModalityFeatureStore& store,
                        const Vocab& entities, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char num[64];
    for (int i = 0; i < store.rows; ++i) {
        if (!store.present[i]) continue;
        out << entities.name(i);
        const Scalar* r = store.row(i);
        for (int j = 0; j < store.dim; ++j) {
            std::snprintf(num, sizeof(num), "%.17g", r[j]);
            out << ',' << num;
        }
        out << '\n';
    }
}

AttributeSet load_attributes(const std::string& path, const Vocab& entities,
                             bool strict) {
    auto in = open_or_throw(path);
    AttributeSet attrs;
    std::string line;
    int line_no = 0;
    while (next_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_on(line, '\t');
        if (fields.size() != 2)
            fail_at(path, line_no, "expected 2 tab-separated fields");
        int id = entities.id(fields[0]);
        if (id < 0) {
            if (strict)
                fail_at(path, line_no, "unknown entity '" + fields[0] + "'");
            continue;
        }
        attrs.items.emplace_back(id, attrs.keys.intern(fields[1]));
    }
    return attrs;
}

void write_attributes(const AttributeSet& attrs, const Vocab& entities,
                      const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& [e, k] : attrs.items)
        out << entities.name(e) << '\t' << attrs.keys.name(k) << '\n';
}

namespace {

// Items ranked by corpus frequency descending, id ascending on ties;
// returns item id -> rank (dense, 0 = most frequent).
std::vector<int> frequency_ranks(const std::vector<int64_t>& counts) {
    std::vector<int> order(counts.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (counts[a] != counts[b]) return counts[a] > counts[b];
        return a < b;
    });
    std::vector<int> rank(counts.size());
    for (size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = static_cast<int>(pos);
    return rank;
}

}  // namespace

std::pair<ModalityFeatureStore, ModalityFeatureStore> build_bow_features(
    const KnowledgeGraph& kg, const AttributeSet& attrs, int d_r, int d_a,
    bool swap_semantics) {
    if (d_r < 1 || d_a < 1)
        throw std::invalid_argument("build_bow_features: dims must be >= 1");
    int ne = kg.num_entities();

    // Relation side: per-entity occurrence counts over every split, both roles.
    std::vector<int64_t> rel_corpus(kg.num_relations(), 0);
    std::vector<std::unordered_map<int, int>> rel_counts(ne);
    for (Split s : {Split::train, Split::valid, Split::test}) {
        for (const Triple& t : kg.split(s)) {
            rel_corpus[t.r] += 2;
            rel_counts[t.h][t.r] += 1;
            rel_counts[t.t][t.r] += 1;
        }
    }
    std::vector<int> rel_rank = frequency_ranks(rel_corpus);

    ModalityFeatureStore rel;
    rel.tag = Modality::r;
    rel.rows = ne;
    rel.dim = d_r;
    rel.matrix.assign(static_cast<size_t>(ne) * d_r, 0.0);
    rel.present.assign(ne, 1);
    bool rel_counts_mode = !swap_semantics;
    for (int e = 0; e < ne; ++e) {
        Scalar* row = rel.row(e);
        for (const auto& [r, c] : rel_counts[e]) {
            int pos = rel_rank[r];
            if (pos < d_r)
                row[pos] = rel_counts_mode ? static_cast<Scalar>(c) : 1.0;
        }
    }
    rel.recompute_stats();

    // Attribute side: key presence (or counts when swapped).
    std::vector<int64_t> key_corpus(attrs.keys.size(), 0);
    for (const auto& [e, k] : attrs.items) key_corpus[k] += 1;
    std::vector<int> key_rank = frequency_ranks(key_corpus);

    ModalityFeatureStore att;
    att.tag = Modality::a;
    att.rows = ne;
    att.dim = d_a;
    att.matrix.assign(static_cast<size_t>(ne) * d_a, 0.0);
    att.present.assign(ne, 1);
    for (const auto& [e, k] : attrs.items) {
        int pos = key_rank[k];
        if (pos < d_a) {
            Scalar* row = att.row(e);
            if (swap_semantics)
                row[pos] += 1.0;
            else
                row[pos] = 1.0;
        }
    }
    att.recompute_stats();
    return {std::move(rel), std::move(att)};
}

AlignmentSet split_alignment(std::vector<std::pair<int, int>> pairs,
                             double r_sa, Rng& rng) {
    if (r_sa < 0.0 || r_sa > 1.0)
        throw std::invalid_argument("split_alignment: r_sa outside [0,1]");
    std::unordered_set<int> seen1, seen2;
    for (const auto& [a, b] : pairs) {
        if (!seen1.insert(a).second || !seen2.insert(b).second)
            throw std::invalid_argument(
                "split_alignment: entity appears in more than one pair");
    }
    rng.shuffle(pairs);
    size_t n_seed = static_cast<size_t>(
        std::llround(r_sa * static_cast<double>(pairs.size())));
    AlignmentSet out;
    out.seed.assign(pairs.begin(), pairs.begin() + n_seed);
    out.test.assign(pairs.begin() + n_seed, pairs.end());
    return out;
}

std::vector<std::pair<int, int>> load_alignment(const std::string& path,
                                                const Vocab& e1,
                                                const Vocab& e2, bool strict) {
    auto in = open_or_throw(path);
    std::vector<std::pair<int, int>> pairs;
    std::string line;
    int line_no = 0;
    while (next_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_on(line, '\t');
        if (fields.size() != 2)
            fail_at(path, line_no, "expected 2 tab-separated fields");
        int a = e1.id(fields[0]);
        int b = e2.id(fields[1]);
        if (a < 0 || b < 0) {
            if (strict)
                fail_at(path, line_no, "unknown entity in alignment pair");
            continue;
        }
        pairs.emplace_back(a, b);
    }
    return pairs;
}

void write_alignment(const std::vector<std::pair<int, int>>& pairs,
                     const Vocab& e1, const Vocab& e2,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& [a, b] : pairs)
        out << e1.name(a) << '\t' << e2.name(b) << '\n';
}

}  // namespace snag
