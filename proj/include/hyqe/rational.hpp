#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>

namespace hyqe {

/// Exact arithmetic for cardinalities and costs, so cost comparisons in the
/// optimizer never depend on floating-point summation order.
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

/// Parses "0.001", "1e-3", "2", "1/3" exactly. Throws ParseError.
Rational rational_from_string(std::string_view text);
/// Exact binary value of the double.
Rational rational_from_double(double d);
double to_double(const Rational& r);
BigInt floor_of(const Rational& r);
BigInt ceil_of(const Rational& r);
/// "n" for integers, "n/d" otherwise.
std::string to_string(const Rational& r);

}  // namespace hyqe
