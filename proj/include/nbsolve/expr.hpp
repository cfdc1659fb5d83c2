#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nbs {

// Syntax error with byte position into the source string.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t pos, const std::string& what)
        : std::runtime_error("parse error at position " + std::to_string(pos) + ": " + what),
          position(pos) {}
    std::size_t position;
};

// Domain error during evaluation (division by zero, log of a non-positive
// number, ...). Carries the offending sub-expression in printed form.
class EvalError : public std::runtime_error {
public:
    EvalError(std::string sub, const std::string& what)
        : std::runtime_error("evaluation error in '" + sub + "': " + what),
          subexpr(std::move(sub)) {}
    std::string subexpr;
};

/// Parsed arithmetic expression over the variables t, x1..xd.
///
/// Grammar (EBNF, see docs/expr-grammar.md):
///   expr   := term   { ("+" | "-") term }
///   term   := power  { ("*" | "/") power }
///   power  := factor { "^" factor }
///   factor := "-" factor | number | ident | ident "(" expr {"," expr} ")" | "(" expr ")"
///
/// Binary operators are left associative; unary minus binds tighter than "^".
/// Functions: min, max, abs, exp, log, sqrt, sin, cos, pow.
class Expr {
public:
    struct Node;

    Expr() = default;

    // Throws ParseError on malformed input or variable index > dim.
    static Expr parse(std::string_view text, int dim);

    // Throws EvalError on domain failures. x.size() must be >= dim().
    double eval(double t, std::span<const double> x) const;

    // Canonical printed form; reparses to a structurally identical tree.
    std::string str() const;

    bool depends_on_t() const;
    bool depends_on_x() const;
    // True when the expression is a function of neither t nor x.
    bool is_constant() const { return !depends_on_t() && !depends_on_x(); }

    int dim() const { return dim_; }
    bool valid() const { return root_ != nullptr; }

    bool same_structure(const Expr& other) const;

private:
    std::shared_ptr<const Node> root_;
    int dim_ = 0;
};

}  // namespace nbs
