#include "viclf/nn.hpp"

#include <cmath>
#include <numbers>
#include <string_view>

#include "viclf/core_types.hpp"
#include "viclf/hash.hpp"

namespace viclf::nn {

Linear::Linear(int in, int out) : w(Mat::Zero(in, out)), b(Mat::Zero(1, out)) {}

Mat Linear::forward(const Mat& x) const {
  if (x.cols() != w.value.rows()) {
    throw ShapeError("linear input width mismatch");
  }
  Mat y = x * w.value;
  y.rowwise() += b.value.row(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy) {
  w.grad.noalias() += x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  return dy * w.value.transpose();
}

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".w", &w});
  out.push_back({prefix + ".b", &b});
}

LayerNorm::LayerNorm(int dim) : gamma(Mat::Ones(1, dim)), beta(Mat::Zero(1, dim)) {}

Mat LayerNorm::forward(const Mat& x, Cache* cache) const {
  const auto n = x.cols();
  Eigen::VectorXd mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().sum() / static_cast<double>(n);
  Eigen::VectorXd inv_std = (var.array() + kEps).rsqrt();
  Mat xhat = centered.array().colwise() * inv_std.array();
  Mat y = xhat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat LayerNorm::backward(const Cache& cache, const Mat& dy) {
  const auto n = static_cast<double>(dy.cols());
  gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  Eigen::VectorXd mean_d = dxhat.rowwise().mean();
  Eigen::VectorXd mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum() / n;
  Mat dx = dxhat.colwise() - mean_d;
  dx -= (cache.xhat.array().colwise() * mean_dx.array()).matrix();
  return dx.array().colwise() * cache.inv_std.array();
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".gamma", &gamma});
  out.push_back({prefix + ".beta", &beta});
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Mat d = x.unaryExpr([inv_sqrt_2pi](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
  });
  return d.cwiseProduct(dy);
}

Mat softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v, int heads,
                         AttentionCache* cache) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || heads <= 0 || q.cols() % heads != 0 ||
      v.cols() % heads != 0) {
    throw ShapeError("attention operand shapes are inconsistent");
  }
  const int dh = static_cast<int>(q.cols()) / heads;
  const int dv = static_cast<int>(v.cols()) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat out(q.rows(), v.cols());
  if (cache != nullptr) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->heads = heads;
    cache->probs.clear();
  }
  for (int h = 0; h < heads; ++h) {
    Mat scores = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    Mat probs = softmax_rows(scores);
    out.middleCols(h * dv, dv).noalias() = probs * v.middleCols(h * dv, dv);
    if (cache != nullptr) cache->probs.push_back(std::move(probs));
  }
  return out;
}

void scaled_dot_attention_backward(const AttentionCache& cache, const Mat& dout, Mat& dq,
                                   Mat& dk, Mat& dv) {
  const int heads = cache.heads;
  const int dh = static_cast<int>(cache.q.cols()) / heads;
  const int dvh = static_cast<int>(cache.v.cols()) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Mat::Zero(cache.q.rows(), cache.q.cols());
  dk = Mat::Zero(cache.k.rows(), cache.k.cols());
  dv = Mat::Zero(cache.v.rows(), cache.v.cols());
  for (int h = 0; h < heads; ++h) {
    const Mat& p = cache.probs[h];
    const auto dout_h = dout.middleCols(h * dvh, dvh);
    dv.middleCols(h * dvh, dvh).noalias() = p.transpose() * dout_h;
    Mat dp = dout_h * cache.v.middleCols(h * dvh, dvh).transpose();
    Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
    Mat ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * cache.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * cache.q.middleCols(h * dh, dh);
  }
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.param->zero_grad();
}

void sgd_step(const ParamList& params, double lr, double scale) {
  for (const auto& p : params) p.param->value -= (lr * scale) * p.param->grad;
}

double grad_norm(const ParamList& params) {
  double total = 0.0;
  for (const auto& p : params) total += p.param->grad.squaredNorm();
  return std::sqrt(total);
}

void clip_grad_norm(const ParamList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) p.param->grad *= s;
  }
}

std::uint64_t hash_params(const std::vector<NamedConstParam>& params) {
  Fnv1a h;
  for (const auto& p : params) {
    h.update(p.name);
    const Eigen::Index dims[2] = {p.param->value.rows(), p.param->value.cols()};
    h.update(dims, sizeof(dims));
    h.update(p.param->value.data(), static_cast<std::size_t>(p.param->value.size()) * sizeof(double));
  }
  return h.digest();
}

std::vector<NamedConstParam> as_const(const ParamList& params) {
  std::vector<NamedConstParam> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.param});
  return out;
}

Mat randn(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace viclf::nn
