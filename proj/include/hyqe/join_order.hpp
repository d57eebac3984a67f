#pragma once

#include <map>
#include <string>
#include <vector>

#include "hyqe/cost.hpp"
#include "hyqe/rational.hpp"

namespace hyqe {

struct JoinInput {
    std::string name;
    Rational size;
    /// Estimated bytes per row.
    Rational width;
    /// Distinct counts of the columns that appear in join predicates.
    std::map<std::string, Rational> key_distinct;
};

/// Equi-join predicate between two inputs, by index into the input list.
struct JoinEdge {
    std::size_t left = 0;
    std::string left_column;
    std::size_t right = 0;
    std::string right_column;
};

/// A left-deep tree as the order in which inputs enter it.
struct JoinTree {
    std::vector<std::size_t> order;
    Rational cost;
    Rational cardinality;
};

/// Cardinality of the join of a set of inputs: the product of their sizes
/// times 1/max(dA, dB) per predicate inside the set. Independent of order,
/// so it matches the pairwise formula on every tree-shaped join graph.
Rational join_set_card(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges,
                       const std::vector<std::size_t>& members);

/// Cost of joining a composite with one more input:
/// (|A| + |B|)·c_cpu + ceil((|A|·wA + |B|·wB) / page_size)·c_io.
Rational join_step_cost(const Rational& card_a, const Rational& width_a, const Rational& card_b, const Rational& width_b,
                        const CostModelParams& p);

/// Accumulated cost of a left-deep order. Throws PlanningError when an input
/// has no predicate to the inputs before it and cross products are off.
Rational left_deep_cost(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges,
                        const std::vector<std::size_t>& order, const CostModelParams& p, bool allow_cross = false);

/// Subset DP over left-deep trees. Ties go to the lexicographically smallest
/// sequence of input names. Throws PlanningError for a disconnected graph
/// (unless allow_cross) or fewer than 2 inputs.
JoinTree dp_join_order(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges,
                       const CostModelParams& p, bool allow_cross = false);

/// Cheapest pair first, then the input with the cheapest next join.
JoinTree greedy_join_order(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges,
                           const CostModelParams& p, bool allow_cross = false);

}  // namespace hyqe
