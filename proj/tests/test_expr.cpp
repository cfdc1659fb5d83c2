#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "nbsolve/expr.hpp"

using nbs::EvalError;
using nbs::Expr;
using nbs::ParseError;

namespace {

double ev(const char* text, double t, std::vector<double> x) {
    return Expr::parse(text, static_cast<int>(x.size())).eval(t, x);
}

// splitmix64, good enough for test point generation
std::uint64_t mix(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double uniform(std::uint64_t& s, double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(mix(s) >> 11) * 0x1.0p-53;
}

}  // namespace

TEST_CASE("precedence and arithmetic") {
    CHECK(ev("1 + 2*3", 0, {0}) == 7.0);
    CHECK(ev("2*x1^2 - 1", 0, {3}) == 17.0);
    CHECK(ev("2^3^2", 0, {0}) == 64.0);  // left associative: (2^3)^2
    CHECK(ev("10 - 4 - 3", 0, {0}) == 3.0);
    CHECK(ev("12 / 2 / 3", 0, {0}) == 2.0);
    CHECK(ev("-2^2", 0, {0}) == 4.0);  // unary minus binds tighter than ^
    CHECK(ev("-(2^2)", 0, {0}) == -4.0);
    CHECK(ev("2 + 3 * 4 ^ 2", 0, {0}) == 50.0);
}

TEST_CASE("variables and functions") {
    CHECK(ev("max(0, x1 - 1.0)", 0, {3}) == 2.0);
    CHECK(ev("max(0, x1 - 1.0)", 0, {0.5}) == 0.0);
    CHECK(ev("cos(x1)", 0, {0}) == 1.0);
    CHECK(ev("exp(-t)*cos(x1)", 1, {0}) == doctest::Approx(0.36787944117144233).epsilon(1e-15));
    CHECK(ev("min(abs(x1), 1)", 0, {-0.25}) == 0.25);
    CHECK(ev("pow(2, 10)", 0, {0}) == 1024.0);
    CHECK(ev("sqrt(x1)", 0, {9}) == 3.0);
    CHECK(ev("log(exp(1))", 0, {0}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(ev("sin(0)", 0, {0}) == 0.0);
    CHECK(ev("x1 + 2*x2", 0, {1, 10}) == 21.0);
    CHECK(ev("t*t", 3, {0}) == 9.0);
}

TEST_CASE("parse errors carry a position") {
    CHECK_THROWS_AS(Expr::parse("x2", 1), ParseError);
    CHECK_THROWS_AS(Expr::parse("", 1), ParseError);
    CHECK_THROWS_AS(Expr::parse("1 +", 1), ParseError);
    CHECK_THROWS_AS(Expr::parse("foo(x1)", 1), ParseError);
    CHECK_THROWS_AS(Expr::parse("(1 + 2", 1), ParseError);
    CHECK_THROWS_AS(Expr::parse("min(1)", 1), ParseError);
    try {
        Expr::parse("1 + * 2", 1);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position == 4);
    }
}

TEST_CASE("domain errors carry the sub-expression") {
    CHECK_THROWS_AS(ev("1/x1", 0, {0}), EvalError);
    CHECK_THROWS_AS(ev("log(x1)", 0, {-1}), EvalError);
    CHECK_THROWS_AS(ev("sqrt(x1)", 0, {-1}), EvalError);
    CHECK_THROWS_AS(ev("pow(x1, 0.5)", 0, {-2}), EvalError);
    try {
        ev("1 + log(x1 - 5)", 0, {1});
        FAIL("expected EvalError");
    } catch (const EvalError& e) {
        CHECK(e.subexpr.find("log") != std::string::npos);
    }
}

TEST_CASE("pretty-print round trip") {
    const char* cases[] = {
        "1 + 2*3",          "2*x1^2 - 1",    "-2^2",
        "max(0, x1 - 1.0)", "exp(-t)*cos(x1)", "min(abs(x1), 1)",
        "pow(x1, 2) / (1 + t)", "0.5*cos(x1) + 0.1", "x1 - -x2",
    };
    for (const char* text : cases) {
        CAPTURE(text);
        Expr a = Expr::parse(text, 2);
        Expr b = Expr::parse(a.str(), 2);
        CHECK(a.same_structure(b));
        std::vector<double> x = {0.3, -0.7};
        CHECK(a.eval(0.5, x) == b.eval(0.5, x));
    }
}

TEST_CASE("binary operators match host arithmetic on random operands") {
    struct Case {
        const char* text;
        double (*host)(double, double);
        double lo, hi;
    };
    const Case cases[] = {
        {"x1 + x2", [](double a, double b) { return a + b; }, -100.0, 100.0},
        {"x1 - x2", [](double a, double b) { return a - b; }, -100.0, 100.0},
        {"x1 * x2", [](double a, double b) { return a * b; }, -100.0, 100.0},
        {"x1 / x2", [](double a, double b) { return a / b; }, 0.5, 100.0},
        {"x1 ^ x2", [](double a, double b) { return std::pow(a, b); }, 0.5, 4.0},
    };
    std::uint64_t state = 42;
    for (const Case& cs : cases) {
        Expr e = Expr::parse(cs.text, 2);
        for (int i = 0; i < 1000; ++i) {
            double a = uniform(state, cs.lo, cs.hi);
            double b = uniform(state, cs.lo, cs.hi);
            std::vector<double> x = {a, b};
            double got = e.eval(0, x);
            double want = cs.host(a, b);
            CAPTURE(cs.text);
            // identical within 1 ulp
            CHECK((got == want || std::nextafter(want, got) == got));
        }
    }
}

TEST_CASE("dependence flags") {
    CHECK(Expr::parse("3.5", 1).is_constant());
    CHECK(!Expr::parse("t", 1).depends_on_x());
    CHECK(Expr::parse("t", 1).depends_on_t());
    CHECK(Expr::parse("x1", 1).depends_on_x());
    CHECK(!Expr::parse("cos(x1)", 1).depends_on_t());
}
