#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "pairlab/dataset.hpp"
#include "pairlab/error.hpp"
#include "pairlab/pair_model.hpp"
#include "pairlab/random.hpp"

namespace pairlab {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  LossWeights loss_weights = {1.0, 1.0, 1.0, 1.0};

  void validate() const {
    if (epochs < 0 || batch_size < 1) throw ArgumentError("train: epochs must be >= 0 and batch size >= 1");
    if (!(learning_rate >= 0.0)) throw ArgumentError("train: learning rate must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ArgumentError("train: Adam decays must lie in [0, 1)");
    for (double w : loss_weights)
      if (!(w >= 0.0)) throw ArgumentError("train: loss weights must be nonnegative");
  }
};

struct TrainResult {
  PairModel model;
  /// Mean per-sample loss over the batches of each epoch.
  std::vector<double> trace;
};

/// Adam state over a ParameterSet.
class Adam {
 public:
  Adam(const ParameterSet& like, double lr, double beta1, double beta2, double eps)
      : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParameterSet& params, const ParameterSet& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& m = m_.tensors[k];
      auto& v = v_.tensors[k];
      const auto& g = grad.tensors[k];
      m = b1_ * m + (1.0 - b1_) * g;
      v = b2_ * v + (1.0 - b2_) * g.cwiseProduct(g);
      params.tensors[k].array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

 private:
  ParameterSet m_, v_;
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
};

/// Mini-batch Adam on the pair loss. The dataset's normalization is copied
/// into the model; the shuffle of epoch e is drawn from stream (seed, e).
inline TrainResult train(PairModel model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.n() != model.x_dim() || data.q() != model.y_dim()) {
    throw ArgumentError("train: dataset dimensions do not match the model");
  }
  if (data.count() < 1) throw ArgumentError("train: empty dataset");
  model.set_normalization(data.normalization);
  const Matrix xn = data.normalization.normalize_x(data.X);
  const Matrix yn = data.normalization.normalize_y(data.Y);

  Adam adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  TrainResult out;
  const Index count = data.count();
  std::vector<Index> order(static_cast<std::size_t>(count));
  Matrix bx(xn.rows(), 0), by(yn.rows(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    Stream rng(cfg.seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }
    double epoch_loss = 0.0;
    for (Index start = 0; start < count; start += cfg.batch_size) {
      const Index b = std::min<Index>(cfg.batch_size, count - start);
      bx.resize(xn.rows(), b);
      by.resize(yn.rows(), b);
      for (Index k = 0; k < b; ++k) {
        const Index src = order[static_cast<std::size_t>(start + k)];
        bx.col(k) = xn.col(src);
        by.col(k) = yn.col(src);
      }
      auto lg = pair_loss_grad(model, bx, by, cfg.loss_weights);
      if (!std::isfinite(lg.loss) || !lg.gradient.all_finite()) {
        throw TrainingDivergence(epoch, "non-finite loss or gradient");
      }
      epoch_loss += lg.loss;
      adam.step(model.parameters(), lg.gradient);
    }
    if (!model.parameters().all_finite()) throw TrainingDivergence(epoch, "non-finite parameters");
    out.trace.push_back(epoch_loss / static_cast<double>(count));
  }
  out.model = std::move(model);
  return out;
}

}  // namespace pairlab
