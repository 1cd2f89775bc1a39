#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace viclf::nn {

using Mat = Eigen::MatrixXd;

/// A trainable tensor with its accumulated gradient.
struct Param {
  Mat value;
  Mat grad;

  Param() = default;
  explicit Param(Mat v) : value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct NamedParam {
  std::string name;
  Param* param;
};

struct NamedConstParam {
  std::string name;
  const Param* param;
};

using ParamList = std::vector<NamedParam>;

/// y = x W + b, W stored as (in x out).
struct Linear {
  Param w;
  Param b;

  Linear() = default;
  Linear(int in, int out);

  Mat forward(const Mat& x) const;
  /// Accumulates dW, db and returns dL/dx.
  Mat backward(const Mat& x, const Mat& dy);

  void collect(const std::string& prefix, ParamList& out);
};

/// Row-wise layer normalization with affine gain and shift.
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Param gamma;
  Param beta;

  struct Cache {
    Mat xhat;
    Eigen::VectorXd inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Mat forward(const Mat& x, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& dy);

  void collect(const std::string& prefix, ParamList& out);
};

/// Exact (erf) GELU.
Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& x, const Mat& dy);

/// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& x);

struct AttentionCache {
  Mat q, k, v;
  std::vector<Mat> probs;  // one (Tq x Tk) per head
  int heads = 1;
};

/// Multi-head scaled dot-product attention on already projected Q/K/V.
/// Heads split the feature columns evenly; scaling is 1/sqrt(d/heads).
Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v, int heads,
                         AttentionCache* cache);
void scaled_dot_attention_backward(const AttentionCache& cache, const Mat& dout, Mat& dq,
                                   Mat& dk, Mat& dv);

// Parameter-set helpers ---------------------------------------------------

void zero_grads(const ParamList& params);
/// Plain SGD step: value -= lr * scale * grad.
void sgd_step(const ParamList& params, double lr, double scale = 1.0);
double grad_norm(const ParamList& params);
/// Rescales all gradients so their global L2 norm is at most max_norm.
void clip_grad_norm(const ParamList& params, double max_norm);

/// Byte hash over parameter names, shapes and values, in list order.
std::uint64_t hash_params(const std::vector<NamedConstParam>& params);
std::vector<NamedConstParam> as_const(const ParamList& params);

/// Gaussian init N(0, std^2).
Mat randn(int rows, int cols, double stddev, std::mt19937_64& rng);

}  // namespace viclf::nn
