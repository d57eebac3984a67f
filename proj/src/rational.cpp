#include "hyqe/rational.hpp"

#include <cmath>

#include "hyqe/error.hpp"
#include "hyqe/value.hpp"

namespace hyqe {

Rational rational_from_string(std::string_view text)
{
    const std::string s = trim(text);
    auto bad = [&]() -> Rational { throw ParseError("not a number: '" + s + "'"); };
    if (s.empty()) {
        return bad();
    }
    if (auto slash = s.find('/'); slash != std::string::npos) {
        Rational num = rational_from_string(s.substr(0, slash));
        Rational den = rational_from_string(s.substr(slash + 1));
        if (den == 0) {
            return bad();
        }
        return num / den;
    }
    std::size_t i = 0;
    bool negative = false;
    if (s[i] == '+' || s[i] == '-') {
        negative = s[i] == '-';
        ++i;
    }
    BigInt digits = 0;
    long scale = 0;
    bool any = false;
    bool fraction = false;
    for (; i < s.size(); ++i) {
        const char c = s[i];
        if (c >= '0' && c <= '9') {
            digits = digits * 10 + (c - '0');
            any = true;
            if (fraction) {
                --scale;
            }
        } else if (c == '.' && !fraction) {
            fraction = true;
        } else {
            break;
        }
    }
    if (!any) {
        return bad();
    }
    if (i < s.size()) {
        if (s[i] != 'e' && s[i] != 'E') {
            return bad();
        }
        const std::string exp = s.substr(i + 1);
        if (exp.empty()) {
            return bad();
        }
        std::size_t used = 0;
        long e = 0;
        try {
            e = std::stol(exp, &used);
        } catch (const std::exception&) {
            return bad();
        }
        if (used != exp.size()) {
            return bad();
        }
        scale += e;
    }
    Rational value(digits);
    BigInt ten_pow = boost::multiprecision::pow(BigInt(10), static_cast<unsigned>(scale < 0 ? -scale : scale));
    if (scale < 0) {
        value /= Rational(ten_pow);
    } else {
        value *= Rational(ten_pow);
    }
    return negative ? Rational(-value) : value;
}

Rational rational_from_double(double d)
{
    if (!std::isfinite(d)) {
        throw Error("non-finite value has no rational form");
    }
    int exp = 0;
    const double mant = std::frexp(d, &exp);
    // 53 bits of mantissa as an integer, then scale by 2^(exp-53).
    const auto m = static_cast<long long>(std::ldexp(mant, 53));
    Rational r(m);
    const int shift = exp - 53;
    BigInt p = boost::multiprecision::pow(BigInt(2), static_cast<unsigned>(shift < 0 ? -shift : shift));
    if (shift < 0) {
        r /= Rational(p);
    } else {
        r *= Rational(p);
    }
    return r;
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

BigInt floor_of(const Rational& r)
{
    BigInt n = boost::multiprecision::numerator(r);
    BigInt d = boost::multiprecision::denominator(r);
    BigInt q = n / d;
    if (n % d != 0 && n < 0) {
        q -= 1;
    }
    return q;
}

BigInt ceil_of(const Rational& r)
{
    BigInt n = boost::multiprecision::numerator(r);
    BigInt d = boost::multiprecision::denominator(r);
    BigInt q = n / d;
    if (n % d != 0 && n > 0) {
        q += 1;
    }
    return q;
}

std::string to_string(const Rational& r) { return r.str(); }

}  // namespace hyqe
