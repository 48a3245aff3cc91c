#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "msdial/adadelta.hpp"
#include "msdial/ops.hpp"
#include "msdial/tape.hpp"
#include "test_support.hpp"

namespace msdial {
namespace {

using test::expect_bitwise_equal;

void set_grad(Tensor& t, double value) {
    t.impl()->ensure_grad();
    for (double& g : t.impl()->grad) g = value;
}

TEST(AdadeltaTest, ZeroGradientLeavesEverythingUntouched) {
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, /*requires_grad=*/true);
    Adadelta opt({p});
    set_grad(p, 0.0);
    opt.step();
    test::expect_values_near(p, {1.0, -2.0, 0.5}, 0.0);
    for (double v : opt.accum_grad_sq(0)) EXPECT_EQ(v, 0.0);
    for (double v : opt.accum_delta_sq(0)) EXPECT_EQ(v, 0.0);
}

TEST(AdadeltaTest, FirstStepHandComputedValue) {
    Tensor p = Tensor::from({1}, {0.0}, /*requires_grad=*/true);
    Adadelta opt({p});  // rho 0.9, eps 1e-6, lr 1
    set_grad(p, 1.0);
    opt.step();
    // E[g^2] = 0.1; delta = -(sqrt(1e-6) / sqrt(0.1 + 1e-6)) = -0.0031623
    const double expected = -(std::sqrt(1e-6) / std::sqrt(0.1 + 1e-6));
    EXPECT_NEAR(expected, -0.0031623, 1e-7);
    EXPECT_DOUBLE_EQ(p.values()[0], expected);
    EXPECT_DOUBLE_EQ(opt.accum_grad_sq(0)[0], 0.1);
}

TEST(AdadeltaTest, DefaultLearningRateIsOne) {
    EXPECT_DOUBLE_EQ(AdadeltaConfig{}.lr, 1.0);
    EXPECT_DOUBLE_EQ(AdadeltaConfig{}.rho, 0.9);
    EXPECT_DOUBLE_EQ(AdadeltaConfig{}.eps, 1e-6);
}

TEST(AdadeltaTest, UpdateOpposesTheGradient) {
    Rng rng(257);
    Tensor p = randn({32}, rng).set_requires_grad(true);
    const Tensor before = p.clone();
    Adadelta opt({p});
    Tensor grads = randn({32}, rng);
    p.impl()->ensure_grad();
    for (std::size_t i = 0; i < 32; ++i) p.impl()->grad[i] = grads.values()[i];
    opt.step();
    for (std::size_t i = 0; i < 32; ++i) {
        const double g = grads.values()[i];
        const double delta = p.values()[i] - before.values()[i];
        if (g != 0.0) {
            EXPECT_LT(delta * g, 0.0) << "at " << i;
        }
    }
}

TEST(AdadeltaTest, FirstStepMagnitudeClosedForm) {
    Rng rng(263);
    Tensor p = Tensor::zeros({16}, /*requires_grad=*/true);
    Adadelta opt({p});
    Tensor grads = randn({16}, rng);
    p.impl()->ensure_grad();
    for (std::size_t i = 0; i < 16; ++i) p.impl()->grad[i] = grads.values()[i];
    opt.step();
    const double rho = 0.9;
    const double eps = 1e-6;
    for (std::size_t i = 0; i < 16; ++i) {
        const double g = grads.values()[i];
        const double bound = std::sqrt(eps) / std::sqrt((1.0 - rho) * g * g + eps) * std::abs(g);
        EXPECT_DOUBLE_EQ(std::abs(p.values()[i]), bound);
    }
}

TEST(AdadeltaTest, DeterministicGivenIdenticalState) {
    Rng rng(269);
    Tensor grads = randn({8}, rng);
    auto run = [&] {
        Tensor p = Tensor::full({8}, 0.5);
        p.set_requires_grad(true);
        Adadelta opt({p});
        for (int step = 0; step < 5; ++step) {
            p.impl()->ensure_grad();
            for (std::size_t i = 0; i < 8; ++i) p.impl()->grad[i] = grads.values()[i] * (step + 1);
            opt.step();
        }
        return p;
    };
    expect_bitwise_equal(run(), run());
}

TEST(AdadeltaTest, MissingGradientIsAnError) {
    Tensor p = Tensor::zeros({2}, /*requires_grad=*/true);
    Tensor q = Tensor::zeros({2}, /*requires_grad=*/true);
    Adadelta opt({p, q});
    set_grad(p, 1.0);
    try {
        opt.step();
        FAIL() << "expected missing-gradient error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("parameter 1"), std::string::npos);
    }
}

TEST(AdadeltaTest, GradientsZeroedAfterStep) {
    Tensor p = Tensor::zeros({2}, /*requires_grad=*/true);
    Adadelta opt({p});
    set_grad(p, 2.0);
    opt.step();
    for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(AdadeltaTest, DrivesASimpleQuadraticDown) {
    // Minimizes (x - 3)^2 through the tape, end to end.
    Tensor x = Tensor::scalar(0.0).set_requires_grad(true);
    Adadelta opt({x}, {0.9, 1e-6, 1.0});
    Tape tape;
    double first_loss = 0.0;
    double last_loss = 0.0;
    for (int step = 0; step < 2000; ++step) {
        TapeScope scope(tape);
        Tensor diff = sub(x, Tensor::scalar(3.0));
        Tensor loss = sum_all(mul(diff, diff));
        if (step == 0) first_loss = loss.item();
        last_loss = loss.item();
        tape.backward(loss);
        tape.clear();
        opt.step();
    }
    EXPECT_LT(last_loss, 0.05 * first_loss);
}

}  // namespace
}  // namespace msdial
