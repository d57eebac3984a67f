#pragma once

#include <string_view>
#include <vector>

#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"

namespace hyqe {

/// Reads structured params back out of an instruction written with the
/// operator's step template, e.g. "Return rows from step_1 where price > 100".
/// `parents` lets qualified names such as step_1.price drop their step
/// prefix. `input` (optional) decides whether a bare filter operand is a
/// column or a literal. Throws ParseError when the text does not follow the
/// template.
StepParams parse_instruction(OperatorTag op, std::string_view text, const std::vector<std::string>& parents = {},
                             const std::vector<Column>* input = nullptr);

}  // namespace hyqe
