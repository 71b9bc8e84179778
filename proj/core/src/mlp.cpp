#include "mograppa/mlp.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "mograppa/grid.hpp"

namespace mograppa {

double softplus(double z)
{
  // log(1 + e^z) without overflow for large |z|.
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z)
{
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  double const e = std::exp(z);
  return e / (1.0 + e);
}

Mlp::Mlp(int n_in, std::vector<int> hidden, int n_out, std::uint64_t seed)
{
  if (n_in < 1 || n_out < 1) {
    throw Error("Mlp: input and output widths must be >= 1");
  }
  widths_.push_back(n_in);
  for (int h : hidden) {
    if (h < 1) {
      throw Error("Mlp: hidden widths must be >= 1");
    }
    widths_.push_back(h);
  }
  widths_.push_back(n_out);
  layout();

  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto const &L = layers_[l];
    // Output layer starts small so the initial kernels are near zero.
    double const gain = l + 1 == layers_.size() ? 0.1 : 1.0;
    std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(L.n_in)));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(L.n_in) * L.n_out; ++i) {
      params_(L.w_offset + i) = normal(rng);
    }
    params_.segment(L.b_offset, L.n_out).setZero();
  }
}

Mlp::Mlp(std::vector<int> widths, Eigen::VectorXd params)
  : widths_(std::move(widths))
{
  if (widths_.size() < 2) {
    throw Error("Mlp: need at least an input and output width");
  }
  for (int w : widths_) {
    if (w < 1) {
      throw Error("Mlp: layer widths must be >= 1");
    }
  }
  layout();
  if (params.size() != params_.size()) {
    throw Error(fmt::format("Mlp: expected {} parameters, got {}", params_.size(), params.size()));
  }
  params_ = std::move(params);
}

void Mlp::layout()
{
  layers_.clear();
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    Layer L{off, 0, widths_[l], widths_[l + 1]};
    off += static_cast<Eigen::Index>(L.n_in) * L.n_out;
    L.b_offset = off;
    off += L.n_out;
    layers_.push_back(L);
  }
  params_ = Eigen::VectorXd::Zero(off);
}

template <typename T>
double Mlp::pass(Eigen::MatrixXd const &X, LossFn const *loss, Eigen::MatrixXd *Y, Eigen::VectorXd *grad) const
{
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  if (X.rows() != n_in()) {
    throw Error(fmt::format("Mlp: input has {} rows, network expects {}", X.rows(), n_in()));
  }
  std::size_t const n = layers_.size();
  auto weight = [&](std::size_t l) -> Mat {
    auto const &L = layers_[l];
    return Eigen::Map<Eigen::MatrixXd const>(params_.data() + L.w_offset, L.n_out, L.n_in).cast<T>();
  };
  auto bias = [&](std::size_t l) -> Vec {
    auto const &L = layers_[l];
    return Eigen::Map<Eigen::VectorXd const>(params_.data() + L.b_offset, L.n_out).cast<T>();
  };
  std::vector<Mat> W(n);
  for (std::size_t l = 0; l < n; ++l) {
    W[l] = weight(l);
  }

  bool const keep = grad != nullptr;
  std::vector<Mat> acts; // input to each layer
  std::vector<Mat> slope; // activation derivative of each hidden layer
  acts.push_back(X.cast<T>());
  Mat out;
  for (std::size_t l = 0; l < n; ++l) {
    Mat z = W[l] * acts.back();
    z.colwise() += bias(l);
    if (l + 1 < n) {
      // softplus(z) = max(z, 0) + log1p(e^-|z|); the derivative sigmoid(z) reuses e^-|z|.
      Mat const e = (-z.array().abs()).exp().matrix();
      Mat h = (z.array().max(T(0)) + e.array().log1p()).matrix();
      if (keep) {
        slope.push_back((z.array() >= T(0)).select(T(1) / (T(1) + e.array()), e.array() / (T(1) + e.array())).matrix());
        acts.push_back(std::move(h));
      } else {
        acts.back() = std::move(h);
      }
    } else {
      out = std::move(z);
    }
  }
  Eigen::MatrixXd const Yd = out.template cast<double>();
  if (Y != nullptr) {
    *Y = Yd;
  }
  if (!keep) {
    return 0.0;
  }

  Eigen::MatrixXd dY(Yd.rows(), Yd.cols());
  double const value = (*loss)(Yd, dY);
  if (dY.rows() != Yd.rows() || dY.cols() != Yd.cols()) {
    throw Error("Mlp: loss gradient has the wrong shape");
  }
  Mat delta = dY.cast<T>();
  grad->setZero(params_.size());
  for (std::size_t l = n; l-- > 0;) {
    auto const &L = layers_[l];
    Mat const gw = delta * acts[l].transpose();
    Eigen::Map<Eigen::MatrixXd>(grad->data() + L.w_offset, L.n_out, L.n_in) = gw.template cast<double>();
    grad->segment(L.b_offset, L.n_out) = delta.rowwise().sum().template cast<double>();
    if (l > 0) {
      Mat back = W[l].transpose() * delta;
      delta = back.cwiseProduct(slope[l - 1]);
    }
  }
  return value;
}

Eigen::MatrixXd Mlp::forward(Eigen::MatrixXd const &X) const
{
  Eigen::MatrixXd Y;
  if (precision_ == Precision::Single) {
    pass<float>(X, nullptr, &Y, nullptr);
  } else {
    pass<double>(X, nullptr, &Y, nullptr);
  }
  return Y;
}

Eigen::VectorXd Mlp::backward(Eigen::MatrixXd const &X, Eigen::MatrixXd const &dY) const
{
  Eigen::VectorXd grad;
  value_and_gradient(
    X,
    [&](Eigen::MatrixXd const &, Eigen::MatrixXd &d) {
      d = dY;
      return 0.0;
    },
    grad);
  return grad;
}

double Mlp::value_and_gradient(Eigen::MatrixXd const &X, LossFn const &loss, Eigen::VectorXd &grad) const
{
  if (precision_ == Precision::Single) {
    return pass<float>(X, &loss, nullptr, &grad);
  }
  return pass<double>(X, &loss, nullptr, &grad);
}

Adam::Adam(Eigen::Index n, AdamOptions opts)
  : opts_(opts)
  , m_(Eigen::VectorXd::Zero(n))
  , v_(Eigen::VectorXd::Zero(n))
{
}

void Adam::step(Eigen::VectorXd &params, Eigen::VectorXd const &grad, double lr)
{
  ++t_;
  m_ = opts_.beta1 * m_ + (1.0 - opts_.beta1) * grad;
  v_ = opts_.beta2 * v_ + (1.0 - opts_.beta2) * grad.cwiseAbs2();
  double const c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  double const c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + opts_.eps);
}

double cosine_lr(double lr0, long step, long total_steps)
{
  if (total_steps <= 0) {
    return lr0;
  }
  double const frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * frac));
}

} // namespace mograppa
