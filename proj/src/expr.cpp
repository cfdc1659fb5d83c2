#include "nbsolve/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <vector>

namespace nbs {

namespace {

enum class Op { add, sub, mul, div, neg, pow_, min_, max_, abs_, exp_, log_, sqrt_, sin_, cos_ };

const char* op_name(Op op) {
    switch (op) {
        case Op::add: return "+";
        case Op::sub: return "-";
        case Op::mul: return "*";
        case Op::div: return "/";
        case Op::neg: return "-";
        case Op::pow_: return "pow";
        case Op::min_: return "min";
        case Op::max_: return "max";
        case Op::abs_: return "abs";
        case Op::exp_: return "exp";
        case Op::log_: return "log";
        case Op::sqrt_: return "sqrt";
        case Op::sin_: return "sin";
        case Op::cos_: return "cos";
    }
    return "?";
}

}  // namespace

struct Expr::Node {
    enum class Kind { number, var_t, var_x, unary, binary, call } kind;
    double value = 0.0;           // number
    int index = 0;                // var_x (1-based)
    Op op = Op::add;              // unary/binary/call
    bool caret = false;           // binary pow written with '^'
    std::shared_ptr<const Node> lhs, rhs;
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;
using Kind = Expr::Node::Kind;

NodePtr make_number(double v) {
    auto n = std::make_shared<Expr::Node>();
    n->kind = Kind::number;
    n->value = v;
    return n;
}

NodePtr make_node(Kind k, Op op, NodePtr lhs, NodePtr rhs = nullptr, bool caret = false) {
    auto n = std::make_shared<Expr::Node>();
    n->kind = k;
    n->op = op;
    n->lhs = std::move(lhs);
    n->rhs = std::move(rhs);
    n->caret = caret;
    return n;
}

class Parser {
public:
    Parser(std::string_view text, int dim) : text_(text), dim_(dim) {}

    NodePtr run() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError(pos_, "empty expression");
        NodePtr e = parse_expr();
        skip_ws();
        if (pos_ < text_.size())
            throw ParseError(pos_, std::string("unexpected '") + text_[pos_] + "'");
        return e;
    }

private:
    std::string_view text_;
    int dim_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    char peek() {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    bool accept(char c) {
        if (peek() == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c))
            throw ParseError(pos_, std::string("expected '") + c + "'");
    }

    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        for (;;) {
            char c = peek();
            if (c == '+' || c == '-') {
                ++pos_;
                NodePtr rhs = parse_term();
                lhs = make_node(Kind::binary, c == '+' ? Op::add : Op::sub, lhs, rhs);
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_term() {
        NodePtr lhs = parse_power();
        for (;;) {
            char c = peek();
            if (c == '*' || c == '/') {
                ++pos_;
                NodePtr rhs = parse_power();
                lhs = make_node(Kind::binary, c == '*' ? Op::mul : Op::div, lhs, rhs);
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_power() {
        NodePtr lhs = parse_factor();
        while (accept('^')) {
            NodePtr rhs = parse_factor();
            lhs = make_node(Kind::binary, Op::pow_, lhs, rhs, /*caret=*/true);
        }
        return lhs;
    }

    NodePtr parse_factor() {
        char c = peek();
        if (c == '-') {
            ++pos_;
            return make_node(Kind::unary, Op::neg, parse_factor());
        }
        if (c == '(') {
            ++pos_;
            NodePtr e = parse_expr();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
        throw ParseError(pos_, "expected a number, variable, function or '('");
    }

    NodePtr parse_number() {
        skip_ws();
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
            ++pos_;
        // exponent part
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t mark = pos_++;
            if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
            if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
                    ++pos_;
            } else {
                pos_ = mark;  // 'e' was an identifier start, not an exponent
            }
        }
        std::string tok(text_.substr(start, pos_ - start));
        try {
            std::size_t used = 0;
            double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            return make_number(v);
        } catch (const std::exception&) {
            throw ParseError(start, "malformed number '" + tok + "'");
        }
    }

    NodePtr parse_ident() {
        skip_ws();
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        std::string name(text_.substr(start, pos_ - start));

        if (name == "t") {
            auto n = std::make_shared<Expr::Node>();
            n->kind = Kind::var_t;
            return n;
        }
        if (name.size() >= 2 && name[0] == 'x' &&
            std::all_of(name.begin() + 1, name.end(),
                        [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
            int idx = std::stoi(name.substr(1));
            if (idx < 1) throw ParseError(start, "variable index must be >= 1");
            if (idx > dim_)
                throw ParseError(start, "variable index exceeds dimension (" + name + " with d=" +
                                            std::to_string(dim_) + ")");
            auto n = std::make_shared<Expr::Node>();
            n->kind = Kind::var_x;
            n->index = idx;
            return n;
        }

        struct Fn { const char* name; Op op; int arity; };
        static const Fn fns[] = {
            {"min", Op::min_, 2}, {"max", Op::max_, 2}, {"pow", Op::pow_, 2},
            {"abs", Op::abs_, 1}, {"exp", Op::exp_, 1}, {"log", Op::log_, 1},
            {"sqrt", Op::sqrt_, 1}, {"sin", Op::sin_, 1}, {"cos", Op::cos_, 1},
        };
        for (const Fn& fn : fns) {
            if (name == fn.name) {
                expect('(');
                NodePtr a = parse_expr();
                NodePtr b;
                if (fn.arity == 2) {
                    expect(',');
                    b = parse_expr();
                }
                expect(')');
                if (fn.arity == 2 && fn.op == Op::pow_)
                    return make_node(Kind::binary, Op::pow_, a, b, /*caret=*/false);
                return make_node(fn.arity == 1 ? Kind::unary : Kind::binary, fn.op, a, b);
            }
        }
        throw ParseError(start, "unknown identifier '" + name + "'");
    }
};

void print_node(std::ostream& os, const Expr::Node& n);

void print_child(std::ostream& os, const Expr::Node& n) {
    // Parenthesize every compound child; keeps printing canonical without
    // tracking precedence.
    bool atom = n.kind == Kind::number || n.kind == Kind::var_t || n.kind == Kind::var_x;
    if (atom) {
        print_node(os, n);
    } else {
        os << '(';
        print_node(os, n);
        os << ')';
    }
}

void print_node(std::ostream& os, const Expr::Node& n) {
    switch (n.kind) {
        case Kind::number: {
            std::ostringstream tmp;
            tmp.precision(17);
            tmp << n.value;
            os << tmp.str();
            return;
        }
        case Kind::var_t:
            os << 't';
            return;
        case Kind::var_x:
            os << 'x' << n.index;
            return;
        case Kind::unary:
            if (n.op == Op::neg) {
                os << '-';
                print_child(os, *n.lhs);
            } else {
                os << op_name(n.op) << '(';
                print_node(os, *n.lhs);
                os << ')';
            }
            return;
        case Kind::binary:
            switch (n.op) {
                case Op::add: case Op::sub: case Op::mul: case Op::div:
                    print_child(os, *n.lhs);
                    os << ' ' << op_name(n.op) << ' ';
                    print_child(os, *n.rhs);
                    return;
                case Op::pow_:
                    if (n.caret) {
                        print_child(os, *n.lhs);
                        os << " ^ ";
                        print_child(os, *n.rhs);
                    } else {
                        os << "pow(";
                        print_node(os, *n.lhs);
                        os << ", ";
                        print_node(os, *n.rhs);
                        os << ')';
                    }
                    return;
                default:
                    os << op_name(n.op) << '(';
                    print_node(os, *n.lhs);
                    os << ", ";
                    print_node(os, *n.rhs);
                    os << ')';
                    return;
            }
        case Kind::call:
            return;  // unused
    }
}

std::string node_str(const Expr::Node& n) {
    std::ostringstream os;
    print_node(os, n);
    return os.str();
}

[[noreturn]] void domain_error(const Expr::Node& n, const char* what) {
    throw EvalError(node_str(n), what);
}

double eval_node(const Expr::Node& n, double t, std::span<const double> x) {
    switch (n.kind) {
        case Kind::number: return n.value;
        case Kind::var_t: return t;
        case Kind::var_x: return x[static_cast<std::size_t>(n.index - 1)];
        case Kind::unary: {
            double a = eval_node(*n.lhs, t, x);
            switch (n.op) {
                case Op::neg: return -a;
                case Op::abs_: return std::abs(a);
                case Op::exp_: return std::exp(a);
                case Op::log_:
                    if (a <= 0.0) domain_error(n, "log of a non-positive value");
                    return std::log(a);
                case Op::sqrt_:
                    if (a < 0.0) domain_error(n, "sqrt of a negative value");
                    return std::sqrt(a);
                case Op::sin_: return std::sin(a);
                case Op::cos_: return std::cos(a);
                default: break;
            }
            break;
        }
        case Kind::binary: {
            double a = eval_node(*n.lhs, t, x);
            double b = eval_node(*n.rhs, t, x);
            switch (n.op) {
                case Op::add: return a + b;
                case Op::sub: return a - b;
                case Op::mul: return a * b;
                case Op::div:
                    if (b == 0.0) domain_error(n, "division by zero");
                    return a / b;
                case Op::pow_:
                    if (a < 0.0 && b != std::floor(b))
                        domain_error(n, "negative base with non-integer exponent");
                    return std::pow(a, b);
                case Op::min_: return std::min(a, b);
                case Op::max_: return std::max(a, b);
                default: break;
            }
            break;
        }
        case Kind::call: break;
    }
    domain_error(n, "malformed expression node");
}

bool depends(const Expr::Node& n, Kind what) {
    if (n.kind == what) return true;
    if (n.lhs && depends(*n.lhs, what)) return true;
    if (n.rhs && depends(*n.rhs, what)) return true;
    return false;
}

bool structurally_equal(const Expr::Node& a, const Expr::Node& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case Kind::number: return a.value == b.value;
        case Kind::var_t: return true;
        case Kind::var_x: return a.index == b.index;
        default: break;
    }
    if (a.op != b.op) return false;
    if (static_cast<bool>(a.lhs) != static_cast<bool>(b.lhs)) return false;
    if (static_cast<bool>(a.rhs) != static_cast<bool>(b.rhs)) return false;
    if (a.lhs && !structurally_equal(*a.lhs, *b.lhs)) return false;
    if (a.rhs && !structurally_equal(*a.rhs, *b.rhs)) return false;
    return true;
}

}  // namespace

Expr Expr::parse(std::string_view text, int dim) {
    Expr e;
    e.root_ = Parser(text, dim).run();
    e.dim_ = dim;
    return e;
}

double Expr::eval(double t, std::span<const double> x) const {
    return eval_node(*root_, t, x);
}

std::string Expr::str() const { return node_str(*root_); }

bool Expr::depends_on_t() const { return depends(*root_, Kind::var_t); }
bool Expr::depends_on_x() const { return depends(*root_, Kind::var_x); }

bool Expr::same_structure(const Expr& other) const {
    return structurally_equal(*root_, *other.root_);
}

}  // namespace nbs
