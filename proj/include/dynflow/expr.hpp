#pragma once

// Small arithmetic expression evaluator used by JSON space configs, e.g.
//   "edge_length": "0.1*exp(0.5*t)"   "log_density": "x^2*sin(t)"

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dynflow/core.hpp"

namespace dynflow {

class Expr {
public:
    Expr() = default;

    /// Parse `src`; identifiers must be one of `vars` or a known constant/function.
    static Expr compile(const std::string& src, const std::vector<std::string>& vars) {
        Parser p{src, vars, 0};
        Expr e;
        e.root_ = p.parse_expr();
        p.skip_ws();
        if (p.pos != src.size())
            throw ValidationError("expression: unexpected '" + src.substr(p.pos) + "' in \"" + src + "\"");
        e.src_ = src;
        e.nvars_ = vars.size();
        return e;
    }

    double operator()(const double* vals) const { return eval(*root_, vals); }
    double operator()(std::initializer_list<double> vals) const { return eval(*root_, vals.begin()); }

    const std::string& source() const { return src_; }
    bool empty() const { return !root_; }

private:
    enum class Op { Num, Var, Neg, Add, Sub, Mul, Div, Pow, Call };
    enum class Fn { Exp, Log, Sin, Cos, Tan, Sqrt, Abs, Tanh, Cosh, Sinh, Min, Max, Pow, Step, Atan };

    struct Node {
        Op op = Op::Num;
        double num = 0.0;
        std::size_t var = 0;
        Fn fn = Fn::Exp;
        std::vector<std::shared_ptr<const Node>> kids;
    };
    using NodeP = std::shared_ptr<const Node>;

    struct Parser {
        const std::string& s;
        const std::vector<std::string>& vars;
        std::size_t pos;

        void skip_ws() {
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        }
        bool eat(char c) {
            skip_ws();
            if (pos < s.size() && s[pos] == c) { ++pos; return true; }
            return false;
        }
        [[noreturn]] void fail(const std::string& msg) {
            throw ValidationError("expression: " + msg + " at offset " + std::to_string(pos) + " in \"" + s + "\"");
        }
        static NodeP make(Op op, std::vector<NodeP> kids) {
            auto n = std::make_shared<Node>();
            n->op = op;
            n->kids = std::move(kids);
            return n;
        }

        NodeP parse_expr() {
            NodeP lhs = parse_term();
            for (;;) {
                if (eat('+')) lhs = make(Op::Add, {lhs, parse_term()});
                else if (eat('-')) lhs = make(Op::Sub, {lhs, parse_term()});
                else return lhs;
            }
        }
        NodeP parse_term() {
            NodeP lhs = parse_unary();
            for (;;) {
                if (eat('*')) lhs = make(Op::Mul, {lhs, parse_unary()});
                else if (eat('/')) lhs = make(Op::Div, {lhs, parse_unary()});
                else return lhs;
            }
        }
        NodeP parse_unary() {
            if (eat('-')) return make(Op::Neg, {parse_unary()});
            if (eat('+')) return parse_unary();
            return parse_power();
        }
        NodeP parse_power() {
            NodeP base = parse_primary();
            if (eat('^')) return make(Op::Pow, {base, parse_unary()});
            return base;
        }
        NodeP parse_primary() {
            skip_ws();
            if (pos >= s.size()) fail("unexpected end");
            char c = s[pos];
            if (eat('(')) {
                NodeP e = parse_expr();
                if (!eat(')')) fail("expected ')'");
                return e;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                const char* begin = s.c_str() + pos;
                char* end = nullptr;
                double v = std::strtod(begin, &end);
                if (end == begin) fail("bad number");
                pos += static_cast<std::size_t>(end - begin);
                auto n = std::make_shared<Node>();
                n->num = v;
                return n;
            }
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                std::size_t b = pos;
                while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
                std::string id = s.substr(b, pos - b);
                if (eat('(')) return parse_call(id);
                for (std::size_t k = 0; k < vars.size(); ++k) {
                    if (vars[k] == id) {
                        auto n = std::make_shared<Node>();
                        n->op = Op::Var;
                        n->var = k;
                        return n;
                    }
                }
                auto n = std::make_shared<Node>();
                if (id == "pi") n->num = M_PI;
                else if (id == "e") n->num = M_E;
                else if (id == "inf") n->num = kInf;
                else { pos = b; fail("unknown identifier '" + id + "'"); }
                return n;
            }
            fail(std::string("unexpected '") + c + "'");
        }
        NodeP parse_call(const std::string& id) {
            static const std::vector<std::pair<std::string, std::pair<Fn, int>>> table = {
                {"exp", {Fn::Exp, 1}},   {"log", {Fn::Log, 1}},   {"sin", {Fn::Sin, 1}},
                {"cos", {Fn::Cos, 1}},   {"tan", {Fn::Tan, 1}},   {"sqrt", {Fn::Sqrt, 1}},
                {"abs", {Fn::Abs, 1}},   {"tanh", {Fn::Tanh, 1}}, {"cosh", {Fn::Cosh, 1}},
                {"sinh", {Fn::Sinh, 1}}, {"atan", {Fn::Atan, 1}}, {"min", {Fn::Min, 2}},
                {"max", {Fn::Max, 2}},   {"pow", {Fn::Pow, 2}},   {"step", {Fn::Step, 1}},
            };
            for (const auto& [name, spec] : table) {
                if (name != id) continue;
                std::vector<NodeP> args;
                if (!eat(')')) {
                    do args.push_back(parse_expr());
                    while (eat(','));
                    if (!eat(')')) fail("expected ')' after arguments of " + id);
                }
                if (static_cast<int>(args.size()) != spec.second)
                    fail(id + " takes " + std::to_string(spec.second) + " argument(s)");
                auto n = std::make_shared<Node>();
                n->op = Op::Call;
                n->fn = spec.first;
                n->kids = std::move(args);
                return n;
            }
            fail("unknown function '" + id + "'");
        }
    };

    static double eval(const Node& n, const double* v) {
        switch (n.op) {
        case Op::Num: return n.num;
        case Op::Var: return v[n.var];
        case Op::Neg: return -eval(*n.kids[0], v);
        case Op::Add: return eval(*n.kids[0], v) + eval(*n.kids[1], v);
        case Op::Sub: return eval(*n.kids[0], v) - eval(*n.kids[1], v);
        case Op::Mul: return eval(*n.kids[0], v) * eval(*n.kids[1], v);
        case Op::Div: return eval(*n.kids[0], v) / eval(*n.kids[1], v);
        case Op::Pow: return std::pow(eval(*n.kids[0], v), eval(*n.kids[1], v));
        case Op::Call: break;
        }
        double a = eval(*n.kids[0], v);
        switch (n.fn) {
        case Fn::Exp: return std::exp(a);
        case Fn::Log: return std::log(a);
        case Fn::Sin: return std::sin(a);
        case Fn::Cos: return std::cos(a);
        case Fn::Tan: return std::tan(a);
        case Fn::Sqrt: return std::sqrt(a);
        case Fn::Abs: return std::abs(a);
        case Fn::Tanh: return std::tanh(a);
        case Fn::Cosh: return std::cosh(a);
        case Fn::Sinh: return std::sinh(a);
        case Fn::Atan: return std::atan(a);
        case Fn::Step: return a >= 0.0 ? 1.0 : 0.0;
        case Fn::Min: return std::min(a, eval(*n.kids[1], v));
        case Fn::Max: return std::max(a, eval(*n.kids[1], v));
        case Fn::Pow: return std::pow(a, eval(*n.kids[1], v));
        }
        return 0.0;
    }

    NodeP root_;
    std::string src_;
    std::size_t nvars_ = 0;
};

} // namespace dynflow
