#include "snag/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace snag {

RankResult summarize_ranks(std::vector<Scalar> ranks, std::vector<int> dirs) {
    RankResult r;
    r.ranks = std::move(ranks);
    r.dirs = std::move(dirs);
    if (r.ranks.empty()) return r;
    Scalar inv = 0.0, sum = 0.0;
    int h1 = 0, h3 = 0, h10 = 0;
    for (Scalar rk : r.ranks) {
        inv += 1.0 / rk;
        sum += rk;
        if (rk <= 1.0 + 1e-9) ++h1;
        if (rk <= 3.0 + 1e-9) ++h3;
        if (rk <= 10.0 + 1e-9) ++h10;
    }
    Scalar n = static_cast<Scalar>(r.ranks.size());
    r.mrr = inv / n;
    r.mean_rank = sum / n;
    r.hits1 = h1 / n;
    r.hits3 = h3 / n;
    r.hits10 = h10 / n;
    return r;
}

Scalar rank_among(const std::vector<Scalar>& scores, size_t target,
                  bool ascending) {
    Scalar s = scores[target];
    int64_t better = 0, equal = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (i == target) continue;
        if (scores[i] == s)
            ++equal;
        else if (ascending ? scores[i] < s : scores[i] > s)
            ++better;
    }
    return static_cast<Scalar>(better) + 1.0 + static_cast<Scalar>(equal) / 2.0;
}

Scalar brute_force_rank(const std::vector<Scalar>& scores, size_t target,
                        bool ascending) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
    });
    // Mean position of the target's tie group, 1-based.
    Scalar s = scores[target];
    Scalar first = 0.0, count = 0.0;
    for (size_t pos = 0; pos < order.size(); ++pos) {
        if (scores[order[pos]] == s) {
            if (count == 0.0) first = static_cast<Scalar>(pos) + 1.0;
            count += 1.0;
        }
    }
    return first + (count - 1.0) / 2.0;
}

namespace {

std::vector<Scalar> scores_for_query(const Tensor& reprs, const Tensor& phases,
                                     int fixed_entity, int relation,
                                     bool fixed_is_head, bool l2) {
    int ne = reprs.dim(0);
    std::vector<int> rep(ne, fixed_entity), all(ne), rel(ne, relation);
    std::iota(all.begin(), all.end(), 0);
    Tensor fixed_rows = gather_rows(reprs, rep);
    Tensor cand_rows = gather_rows(reprs, all);
    Tensor phase_rows = gather_rows(phases, rel);
    Tensor s = fixed_is_head
                   ? rotate_scores(fixed_rows, phase_rows, cand_rows, l2)
                   : rotate_scores(cand_rows, phase_rows, fixed_rows, l2);
    return s.data();
}

}  // namespace

RankResult eval_kgc(const Tensor& reprs, const Tensor& phases,
                    const KnowledgeGraph& kg, const KgcEvalOptions& opt) {
    const std::vector<Triple>& queries = kg.split(opt.split);
    if (queries.empty())
        throw std::invalid_argument("eval_kgc: empty query split");
    NoGradGuard ng;
    int ne = kg.num_entities();
    TripleIndex known(kg, /*include_valid_test=*/true);

    std::vector<Scalar> ranks;
    std::vector<int> dirs;
    auto rank_dir = [&](const Triple& q, bool tail_query) {
        int fixed = tail_query ? q.h : q.t;
        int answer = tail_query ? q.t : q.h;
        std::vector<Scalar> all =
            scores_for_query(reprs, phases, fixed, q.r, tail_query,
                             opt.l2_score);
        std::vector<Scalar> kept;
        size_t target = 0;
        kept.reserve(all.size());
        for (int c = 0; c < ne; ++c) {
            if (opt.filtered && c != answer) {
                bool hit = tail_query ? known.contains(q.h, q.r, c)
                                      : known.contains(c, q.r, q.t);
                if (hit) continue;
            }
            if (c == answer) target = kept.size();
            kept.push_back(all[c]);
        }
        ranks.push_back(rank_among(kept, target, /*ascending=*/true));
        dirs.push_back(tail_query ? 1 : 0);
    };
    for (const Triple& q : queries) {
        rank_dir(q, false);
        rank_dir(q, true);
    }
    return summarize_ranks(std::move(ranks), std::move(dirs));
}

Tensor similarity_matrix(const Tensor& emb1, const Tensor& emb2,
                         bool normalize) {
    NoGradGuard ng;
    Tensor a = normalize ? l2_normalize_lastdim(emb1) : emb1;
    Tensor b = normalize ? l2_normalize_lastdim(emb2) : emb2;
    return matmul_nt(a, b);
}

RankResult eval_ea(const Tensor& emb1, const Tensor& emb2,
                   const std::vector<std::pair<int, int>>& test_pairs,
                   const EaEvalOptions& opt) {
    if (test_pairs.empty())
        throw std::invalid_argument("eval_ea: empty test pair set");
    NoGradGuard ng;

    std::vector<int> sources, pool;
    sources.reserve(test_pairs.size());
    for (const auto& [e1, e2] : test_pairs) sources.push_back(e1);
    if (opt.full_pool) {
        pool.resize(emb2.dim(0));
        std::iota(pool.begin(), pool.end(), 0);
    } else {
        for (const auto& [e1, e2] : test_pairs) pool.push_back(e2);
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    }

    Tensor sims = similarity_matrix(gather_rows(emb1, sources),
                                    gather_rows(emb2, pool), opt.normalize);
    int np = static_cast<int>(pool.size());
    std::vector<Scalar> ranks;
    std::vector<int> dirs;
    for (size_t i = 0; i < test_pairs.size(); ++i) {
        size_t target =
            std::lower_bound(pool.begin(), pool.end(), test_pairs[i].second) -
            pool.begin();
        std::vector<Scalar> row(sims.data().begin() + i * np,
                                sims.data().begin() + (i + 1) * np);
        ranks.push_back(rank_among(row, target, /*ascending=*/false));
        dirs.push_back(0);
    }
    return summarize_ranks(std::move(ranks), std::move(dirs));
}

}  // namespace snag
