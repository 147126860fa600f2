#include <gtest/gtest.h>

#include <functional>

#include "helpers.hpp"
#include "pairlab/tape.hpp"

using namespace pairlab;
using namespace testing_util;

namespace {

ParameterSet two_layer(std::uint32_t seed) {
  ParameterSet p;
  p.tensors = {random_matrix(4, 3, seed), random_matrix(4, 1, seed + 1), random_matrix(2, 4, seed + 2),
               random_matrix(2, 1, seed + 3)};
  return p;
}

// ||W2 act(W1 x + b1) + b2 - t||^2 summed over the batch.
double loss_value(const ParameterSet& p, const Matrix& x, const Matrix& t, Activation act) {
  GradientTape tape(&p);
  const auto in = tape.input(x);
  const auto h = tape.activation(tape.affine(in, 0, 1), act);
  const auto out = tape.affine(h, 2, 3);
  return tape.scalar(tape.squared_norm(tape.sub(out, tape.input(t))));
}

double central_difference(const std::function<double(double)>& f, double h = 1e-6) {
  return (f(h) - f(-h)) / (2 * h);
}

}  // namespace

TEST(Activation, ParseAndName) {
  EXPECT_EQ(parse_activation("tanh"), Activation::tanh);
  EXPECT_EQ(parse_activation("linear"), Activation::identity);
  EXPECT_EQ(to_string(parse_activation("elu")), "elu");
  EXPECT_THROW(parse_activation("relu6"), ArgumentError);
}

TEST(GradientTape, ForwardValuesMatchDirectEvaluation) {
  const auto p = two_layer(1);
  const Matrix x = random_matrix(3, 5, 5);
  GradientTape tape(&p);
  const auto h = tape.activation(tape.affine(tape.input(x), 0, 1), Activation::tanh);
  Matrix pre = p.tensors[0] * x;
  pre.colwise() += p.tensors[1].col(0);
  EXPECT_LT((tape.value(h) - Matrix(pre.array().tanh())).norm(), 1e-15);
  EXPECT_TRUE(tape.replay_matches());
}

TEST(GradientTape, ParameterGradientsMatchFiniteDifferences) {
  for (Activation act : {Activation::tanh, Activation::elu, Activation::identity}) {
    const auto p = two_layer(10);
    const Matrix x = random_matrix(3, 4, 11);
    const Matrix t = random_matrix(2, 4, 12);
    GradientTape tape(&p);
    const auto in = tape.input(x);
    const auto out = tape.affine(tape.activation(tape.affine(in, 0, 1), act), 2, 3);
    tape.backward(tape.squared_norm(tape.sub(out, tape.input(t))));
    const auto& g = tape.parameter_gradient();
    for (std::size_t s = 0; s < p.size(); ++s) {
      for (Index k = 0; k < p.tensors[s].size(); ++k) {
        const double fd = central_difference([&](double h) {
          ParameterSet q = p;
          q.tensors[s].data()[k] += h;
          return loss_value(q, x, t, act);
        });
        EXPECT_NEAR(g.tensors[s].data()[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
    const Matrix gx = tape.input_gradient(in);
    for (Index k = 0; k < x.size(); ++k) {
      const double fd = central_difference([&](double h) {
        Matrix y = x;
        y.data()[k] += h;
        return loss_value(p, y, t, act);
      });
      EXPECT_NEAR(gx.data()[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(GradientTape, ScaleAddAndReusedNodes) {
  const Matrix a = random_matrix(3, 2, 20);
  GradientTape tape;
  const auto x = tape.input(a);
  // f = ||2x + x||^2 = 9 ||x||^2
  const auto f = tape.squared_norm(tape.add(tape.scale(x, 2.0), x));
  EXPECT_NEAR(tape.scalar(f), 9 * a.squaredNorm(), 1e-12);
  tape.backward(f);
  EXPECT_LT((tape.input_gradient(x) - 18 * a).norm(), 1e-12);
}

TEST(GradientTape, GradientsAccumulateUntilCleared) {
  const Matrix a = random_matrix(2, 2, 30);
  GradientTape tape;
  const auto x = tape.input(a);
  const auto f = tape.squared_norm(x);
  tape.backward(f);
  tape.backward(f, Matrix::Constant(1, 1, 0.5));
  EXPECT_LT((tape.input_gradient(x) - 3 * a).norm(), 1e-14);
  tape.clear_gradients();
  EXPECT_EQ(tape.input_gradient(x).norm(), 0.0);
}

TEST(GradientTape, UnreachedInputHasZeroGradient) {
  GradientTape tape;
  const auto x = tape.input(Matrix::Ones(2, 1));
  const auto y = tape.input(Matrix::Ones(2, 1));
  tape.backward(tape.squared_norm(x));
  EXPECT_EQ(tape.input_gradient(y).norm(), 0.0);
}

TEST(GradientTape, ShapeErrorsThrow) {
  const auto p = two_layer(40);
  GradientTape tape(&p);
  const auto a = tape.input(Matrix::Ones(2, 1));
  const auto b = tape.input(Matrix::Ones(3, 1));
  EXPECT_THROW(tape.add(a, b), ArgumentError);
  EXPECT_THROW(tape.affine(a, 0, 1), ArgumentError);
  EXPECT_THROW(tape.affine(b, 0, 7), ArgumentError);
  EXPECT_THROW(tape.backward(a, Matrix::Ones(1, 1)), ArgumentError);
  EXPECT_THROW(tape.value(99), ArgumentError);
  GradientTape bare;
  EXPECT_THROW(bare.affine(bare.input(Matrix::Ones(3, 1)), 0, 1), ArgumentError);
}
