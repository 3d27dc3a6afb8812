#include <gtest/gtest.h>

#include <cmath>

#include "dynflow/expr.hpp"

using dynflow::Expr;

TEST(Expr, ArithmeticAndPrecedence) {
    Expr e = Expr::compile("1 + 2*3^2 - 4/2", {});
    EXPECT_DOUBLE_EQ(e({}), 17.0);
    EXPECT_DOUBLE_EQ(Expr::compile("-2^2", {})({}), -4.0);
    EXPECT_DOUBLE_EQ(Expr::compile("2^3^2", {})({}), 512.0);
    EXPECT_DOUBLE_EQ(Expr::compile("(1+2)*(3+4)", {})({}), 21.0);
}

TEST(Expr, VariablesAndFunctions) {
    Expr e = Expr::compile("exp(c*t) * sin(pi*x) + max(x, t)", {"t", "x", "c"});
    double t = 0.3, x = 0.25, c = -0.5;
    EXPECT_NEAR(e({t, x, c}), std::exp(c * t) * std::sin(M_PI * x) + std::max(x, t), 1e-15);
    EXPECT_DOUBLE_EQ(Expr::compile("step(x - 1)", {"x"})({1.0}), 1.0);
    EXPECT_DOUBLE_EQ(Expr::compile("step(x - 1)", {"x"})({0.5}), 0.0);
    EXPECT_DOUBLE_EQ(Expr::compile("1e-3 * 2.5E2", {})({}), 0.25);
}

TEST(Expr, Errors) {
    EXPECT_THROW(Expr::compile("1 +", {}), dynflow::ValidationError);
    EXPECT_THROW(Expr::compile("foo(1)", {}), dynflow::ValidationError);
    EXPECT_THROW(Expr::compile("y", {"x"}), dynflow::ValidationError);
    EXPECT_THROW(Expr::compile("sin(1, 2)", {}), dynflow::ValidationError);
    EXPECT_THROW(Expr::compile("(1", {}), dynflow::ValidationError);
    EXPECT_THROW(Expr::compile("1 2", {}), dynflow::ValidationError);
}
