#include "hyqe/join_order.hpp"

#include <algorithm>
#include <optional>

#include "hyqe/error.hpp"

namespace hyqe {

namespace {

Rational key_distinct(const JoinInput& in, const std::string& column)
{
    auto it = in.key_distinct.find(column);
    if (it == in.key_distinct.end()) {
        throw PlanningError("no distinct count for " + in.name + "." + column);
    }
    return it->second;
}

bool connected_to(const std::vector<JoinEdge>& edges, std::uint64_t mask, std::size_t r)
{
    for (const auto& e : edges) {
        if ((e.left == r && (mask >> e.right & 1U)) || (e.right == r && (mask >> e.left & 1U))) {
            return true;
        }
    }
    return false;
}

std::uint64_t mask_of(const std::vector<std::size_t>& members)
{
    std::uint64_t m = 0;
    for (auto i : members) {
        m |= std::uint64_t{1} << i;
    }
    return m;
}

Rational card_of_mask(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges, std::uint64_t mask)
{
    Rational card = 1;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (mask >> i & 1U) {
            card *= inputs[i].size;
        }
    }
    if (card == 0) {
        return 0;
    }
    for (const auto& e : edges) {
        if ((mask >> e.left & 1U) && (mask >> e.right & 1U)) {
            const Rational d = std::max(key_distinct(inputs[e.left], e.left_column), key_distinct(inputs[e.right], e.right_column));
            if (d == 0) {
                throw PlanningError("degenerate join statistics between " + inputs[e.left].name + " and " +
                                    inputs[e.right].name);
            }
            card /= d;
        }
    }
    return card;
}

Rational width_of_mask(const std::vector<JoinInput>& inputs, std::uint64_t mask)
{
    Rational w = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (mask >> i & 1U) {
            w += inputs[i].width;
        }
    }
    return w;
}

bool names_less(const std::vector<JoinInput>& inputs, const std::vector<std::size_t>& a, const std::vector<std::size_t>& b)
{
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), [&](std::size_t x, std::size_t y) {
        return inputs[x].name < inputs[y].name;
    });
}

void check_inputs(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges)
{
    if (inputs.size() < 2) {
        throw PlanningError("join ordering needs at least 2 inputs");
    }
    if (inputs.size() > 62) {
        throw PlanningError("too many join inputs");
    }
    for (const auto& e : edges) {
        if (e.left >= inputs.size() || e.right >= inputs.size() || e.left == e.right) {
            throw PlanningError("join predicate names an unknown input");
        }
    }
}

}  // namespace

Rational join_set_card(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges,
                       const std::vector<std::size_t>& members)
{
    return card_of_mask(inputs, edges, mask_of(members));
}

Rational join_step_cost(const Rational& card_a, const Rational& width_a, const Rational& card_b, const Rational& width_b,
                        const CostModelParams& p)
{
    const Rational gamma_in = card_a + card_b;
    const Rational pages = pages_for(card_a * width_a + card_b * width_b, 1, p.page_size);
    return sys_cost(gamma_in, pages, p);
}

Rational left_deep_cost(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges,
                        const std::vector<std::size_t>& order, const CostModelParams& p, bool allow_cross)
{
    check_inputs(inputs, edges);
    Rational cost = 0;
    std::uint64_t mask = std::uint64_t{1} << order.at(0);
    for (std::size_t k = 1; k < order.size(); ++k) {
        const std::size_t r = order[k];
        if (!allow_cross && !connected_to(edges, mask, r)) {
            throw PlanningError("order requires a cross product at " + inputs[r].name);
        }
        cost += join_step_cost(card_of_mask(inputs, edges, mask), width_of_mask(inputs, mask), inputs[r].size,
                               inputs[r].width, p);
        mask |= std::uint64_t{1} << r;
    }
    return cost;
}

JoinTree dp_join_order(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges,
                       const CostModelParams& p, bool allow_cross)
{
    check_inputs(inputs, edges);
    const std::size_t n = inputs.size();
    if (n > 20) {
        throw PlanningError("too many inputs for exhaustive join ordering");
    }
    struct Entry {
        bool set = false;
        Rational cost;
        std::vector<std::size_t> order;
    };
    const std::uint64_t full = (std::uint64_t{1} << n) - 1;
    std::vector<Entry> best(full + 1);
    std::vector<std::optional<Rational>> card(full + 1);
    auto card_at = [&](std::uint64_t m) -> const Rational& {
        if (!card[m]) {
            card[m] = card_of_mask(inputs, edges, m);
        }
        return *card[m];
    };
    for (std::size_t i = 0; i < n; ++i) {
        auto& e = best[std::uint64_t{1} << i];
        e.set = true;
        e.cost = 0;
        e.order = {i};
    }
    // Masks grow numerically, so every subset is final before it is extended.
    for (std::uint64_t mask = 1; mask <= full; ++mask) {
        if (!best[mask].set) {
            continue;
        }
        const Rational width = width_of_mask(inputs, mask);
        for (std::size_t r = 0; r < n; ++r) {
            if (mask >> r & 1U) {
                continue;
            }
            if (!allow_cross && !connected_to(edges, mask, r)) {
                continue;
            }
            const std::uint64_t next = mask | (std::uint64_t{1} << r);
            Rational cost = best[mask].cost + join_step_cost(card_at(mask), width, inputs[r].size, inputs[r].width, p);
            std::vector<std::size_t> order = best[mask].order;
            order.push_back(r);
            auto& slot = best[next];
            if (!slot.set || cost < slot.cost || (cost == slot.cost && names_less(inputs, order, slot.order))) {
                slot.set = true;
                slot.cost = std::move(cost);
                slot.order = std::move(order);
            }
        }
    }
    if (!best[full].set) {
        throw PlanningError("join graph is disconnected; cross products are disabled");
    }
    return JoinTree{best[full].order, best[full].cost, card_at(full)};
}

JoinTree greedy_join_order(const std::vector<JoinInput>& inputs, const std::vector<JoinEdge>& edges,
                           const CostModelParams& p, bool allow_cross)
{
    check_inputs(inputs, edges);
    const std::size_t n = inputs.size();
    std::optional<std::vector<std::size_t>> seed;
    Rational seed_cost;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (!allow_cross && !connected_to(edges, std::uint64_t{1} << i, j)) {
                continue;
            }
            std::vector<std::size_t> pair = inputs[j].name < inputs[i].name ? std::vector<std::size_t>{j, i}
                                                                             : std::vector<std::size_t>{i, j};
            Rational cost = join_step_cost(inputs[pair[0]].size, inputs[pair[0]].width, inputs[pair[1]].size,
                                           inputs[pair[1]].width, p);
            if (!seed || cost < seed_cost || (cost == seed_cost && names_less(inputs, pair, *seed))) {
                seed = pair;
                seed_cost = cost;
            }
        }
    }
    if (!seed) {
        throw PlanningError("join graph is disconnected; cross products are disabled");
    }
    JoinTree tree;
    tree.order = *seed;
    tree.cost = seed_cost;
    std::uint64_t mask = mask_of(tree.order);
    while (tree.order.size() < n) {
        const Rational card = card_of_mask(inputs, edges, mask);
        const Rational width = width_of_mask(inputs, mask);
        std::optional<std::size_t> pick;
        Rational pick_cost;
        for (std::size_t r = 0; r < n; ++r) {
            if ((mask >> r & 1U) || (!allow_cross && !connected_to(edges, mask, r))) {
                continue;
            }
            Rational cost = join_step_cost(card, width, inputs[r].size, inputs[r].width, p);
            if (!pick || cost < pick_cost || (cost == pick_cost && inputs[r].name < inputs[*pick].name)) {
                pick = r;
                pick_cost = cost;
            }
        }
        if (!pick) {
            throw PlanningError("join graph is disconnected; cross products are disabled");
        }
        tree.order.push_back(*pick);
        tree.cost += pick_cost;
        mask |= std::uint64_t{1} << *pick;
    }
    tree.cardinality = card_of_mask(inputs, edges, mask);
    return tree;
}

}  // namespace hyqe
