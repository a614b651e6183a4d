#pragma once

#include <utility>
#include <vector>

#include "snag/graphdata.hpp"
#include "snag/kgc.hpp"
#include "snag/tensor.hpp"

namespace snag {

// Ranks are 1-based; ties take the mean rank of their group, so values can
// be half-integral. dirs tags each rank 0 = head query, 1 = tail query
// (EA queries are all 0).
struct RankResult {
    std::vector<Scalar> ranks;
    std::vector<int> dirs;
    Scalar mrr = 0.0;
    Scalar hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
    Scalar mean_rank = 0.0;
};

RankResult summarize_ranks(std::vector<Scalar> ranks, std::vector<int> dirs);

// #better + 1 + #equal/2 over the candidate list; scores[target] is the
// query's own score. ascending ranks low scores best.
Scalar rank_among(const std::vector<Scalar>& scores, size_t target,
                  bool ascending);

// Same rank by full sort; test oracle for rank_among.
Scalar brute_force_rank(const std::vector<Scalar>& scores, size_t target,
                        bool ascending);

struct KgcEvalOptions {
    Split split = Split::test;
    bool filtered = true;
    bool l2_score = false;
};

// Both directions per triple, ascending rotate score; filtered mode drops
// candidates forming a different known triple (train, valid and test).
RankResult eval_kgc(const Tensor& reprs, const Tensor& phases,
                    const KnowledgeGraph& kg, const KgcEvalOptions& opt);

// Row-normalized inner products, [n1, n2]. Shared by EA ranking and the
// probation probe so both rank identically.
Tensor similarity_matrix(const Tensor& emb1, const Tensor& emb2,
                         bool normalize = true);

struct EaEvalOptions {
    bool full_pool = false;  // rank against every target entity
    bool normalize = true;
};

// One query per test pair: rank the true counterpart among the test-side
// target entities by descending similarity.
RankResult eval_ea(const Tensor& emb1, const Tensor& emb2,
                   const std::vector<std::pair<int, int>>& test_pairs,
                   const EaEvalOptions& opt);

}  // namespace snag
