#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace mograppa {

/// Fully connected network with softplus hidden activations and a linear output layer.
/// All weights and biases live in one flat parameter vector; layer l uses a
/// column-major (out x in) weight block followed by its bias.
class Mlp
{
public:
  /// Arithmetic used by forward and gradient passes. Parameters are always stored in double.
  enum class Precision
  {
    Double,
    Single,
  };

  Mlp() = default;
  Mlp(int n_in, std::vector<int> hidden, int n_out, std::uint64_t seed);
  /// Rebuild from serialized layer widths and parameters.
  Mlp(std::vector<int> widths, Eigen::VectorXd params);

  int n_in() const { return widths_.front(); }
  int n_out() const { return widths_.back(); }
  std::vector<int> const &widths() const { return widths_; }
  Eigen::VectorXd const &params() const { return params_; }
  Eigen::VectorXd &params() { return params_; }
  Eigen::Index n_params() const { return params_.size(); }
  Precision precision() const { return precision_; }
  void set_precision(Precision p) { precision_ = p; }

  /// X is n_in x batch; returns n_out x batch.
  Eigen::MatrixXd forward(Eigen::MatrixXd const &X) const;

  /// Forward pass keeping activations, then backpropagation of dY (gradient of the
  /// loss with respect to the outputs). Returns the parameter gradient.
  Eigen::VectorXd backward(Eigen::MatrixXd const &X, Eigen::MatrixXd const &dY) const;

  /// Loss callback: given outputs Y, return the loss and write dLoss/dY.
  using LossFn = std::function<double(Eigen::MatrixXd const &Y, Eigen::MatrixXd &dY)>;
  /// One forward and backward pass; returns the loss and writes the parameter gradient.
  double value_and_gradient(Eigen::MatrixXd const &X, LossFn const &loss, Eigen::VectorXd &grad) const;

private:
  struct Layer
  {
    Eigen::Index w_offset;
    Eigen::Index b_offset;
    int n_in;
    int n_out;
  };
  std::vector<int> widths_;
  std::vector<Layer> layers_;
  Eigen::VectorXd params_;
  Precision precision_ = Precision::Double;

  void layout();
  template <typename T>
  double pass(Eigen::MatrixXd const &X, LossFn const *loss, Eigen::MatrixXd *Y, Eigen::VectorXd *grad) const;
};

double softplus(double z);
double sigmoid(double z);

struct AdamOptions
{
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam
{
public:
  Adam(Eigen::Index n, AdamOptions opts);
  /// One step with an explicit learning rate (callers apply the schedule).
  void step(Eigen::VectorXd &params, Eigen::VectorXd const &grad, double lr);

private:
  AdamOptions opts_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

/// Cosine decay from lr0 to 0 over total_steps.
double cosine_lr(double lr0, long step, long total_steps);

} // namespace mograppa
