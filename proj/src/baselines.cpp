#include "wz/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "wz/errors.hpp"

namespace wz {

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

PredictionOutput<double> make_output(Tensor<double> y, double p1) {
  PredictionOutput<double> out;
  out.y_speed = std::move(y);
  out.p_incident = Tensor<double>({2});
  out.p_incident[0] = 1.0 - p1;
  out.p_incident[1] = p1;
  return out;
}

}  // namespace

HistoricalAverageBaseline fit_historical_baseline(const std::vector<Sample<double>>& train) {
  if (train.empty())
    throw std::invalid_argument("fit_historical_baseline: empty training split");
  HistoricalAverageBaseline b;
  long positives = 0;
  for (const auto& s : train) positives += s.y_incident;
  b.base_rate = static_cast<double>(positives) / static_cast<double>(train.size());
  b.fitted = true;
  return b;
}

PredictionOutput<double> predict_historical(const HistoricalAverageBaseline& b,
                                            const Sample<double>& s) {
  if (!b.fitted) throw config_error("historical-average baseline is not fitted");
  const int h = s.image.mask.dim(0);
  const int w = s.image.mask.dim(1);
  Tensor<double> y({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      y(i, j) = s.image.data(i, j, kChanHistSpeed) * s.image.mask(i, j);
  return make_output(std::move(y), b.base_rate);
}

Eigen::Vector3d fit_incident_logistic(const std::vector<Sample<double>>& train) {
  if (train.empty()) throw std::invalid_argument("fit_incident_logistic: empty training split");
  const long n = static_cast<long>(train.size());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (long i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = train[static_cast<std::size_t>(i)].features[kFeatLanesClosed];
    x(i, 2) = train[static_cast<std::size_t>(i)].features[kFeatDuration];
    y(i) = train[static_cast<std::size_t>(i)].y_incident;
  }

  // IRLS: Newton steps on the ridge-penalized log-likelihood.
  const double lambda = 1e-6;
  Eigen::Vector3d beta = Eigen::Vector3d::Zero();
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd p = eta.unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd w = (p.array() * (1.0 - p.array())).cwiseMax(1e-9);
    Eigen::Matrix3d h = x.transpose() * w.asDiagonal() * x + lambda * Eigen::Matrix3d::Identity();
    Eigen::Vector3d g = x.transpose() * (y - p) - lambda * beta;
    Eigen::Vector3d step = h.ldlt().solve(g);
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-12) break;
  }
  return beta;
}

LinearArBaseline fit_linear_ar(const std::vector<Sample<double>>& train, int lookback,
                               double ridge_lambda) {
  if (train.empty()) throw std::invalid_argument("fit_linear_ar: empty training split");
  if (lookback < 1) throw config_error("linear-AR lookback must be at least 1");
  if (ridge_lambda <= 0) throw config_error("linear-AR ridge lambda must be positive");

  const int rows = train.front().image.mask.dim(0);
  const int d = lookback + 1;
  std::vector<Eigen::MatrixXd> a(static_cast<std::size_t>(rows), Eigen::MatrixXd::Zero(d, d));
  std::vector<Eigen::VectorXd> b(static_cast<std::size_t>(rows), Eigen::VectorXd::Zero(d));
  std::vector<long> windows(static_cast<std::size_t>(rows), 0);
  Eigen::MatrixXd a_pool = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd b_pool = Eigen::VectorXd::Zero(d);
  long pool_windows = 0;

  Eigen::VectorXd xw(d);
  for (const auto& s : train) {
    if (s.image.mask.dim(0) != rows)
      throw std::invalid_argument("fit_linear_ar: inconsistent canvas across samples");
    for (int r = 0; r < s.image.real_rows; ++r) {
      for (int t = lookback; t < s.image.real_cols; ++t) {
        xw(0) = 1.0;
        for (int j = 0; j < lookback; ++j) xw(j + 1) = s.y_speed(r, t - lookback + j);
        const double target = s.y_speed(r, t);
        a[static_cast<std::size_t>(r)].noalias() += xw * xw.transpose();
        b[static_cast<std::size_t>(r)].noalias() += xw * target;
        ++windows[static_cast<std::size_t>(r)];
        a_pool.noalias() += xw * xw.transpose();
        b_pool.noalias() += xw * target;
        ++pool_windows;
      }
    }
  }
  if (pool_windows == 0)
    throw data_error("fit_linear_ar: no scenario provides more bins than the lookback");

  LinearArBaseline out;
  out.lookback = lookback;
  out.ridge_lambda = ridge_lambda;
  const Eigen::MatrixXd reg = ridge_lambda * Eigen::MatrixXd::Identity(d, d);
  out.pooled_coeffs = (a_pool + reg).ldlt().solve(b_pool);
  out.row_coeffs.resize(rows, d);
  for (int r = 0; r < rows; ++r) {
    if (windows[static_cast<std::size_t>(r)] > 0)
      out.row_coeffs.row(r) =
          (a[static_cast<std::size_t>(r)] + reg).ldlt().solve(b[static_cast<std::size_t>(r)]);
    else
      out.row_coeffs.row(r) = out.pooled_coeffs;
  }
  out.incident_coeffs = fit_incident_logistic(train);
  out.fitted = true;
  return out;
}

PredictionOutput<double> predict_linear_ar(const LinearArBaseline& b, const Sample<double>& s) {
  if (!b.fitted) throw config_error("linear-AR baseline is not fitted");
  const int h = s.image.mask.dim(0);
  const int w = s.image.mask.dim(1);
  if (h != b.row_coeffs.rows())
    throw std::invalid_argument("predict_linear_ar: sample canvas does not match the fit");
  const int k = b.lookback;

  Tensor<double> y({h, w});
  for (int r = 0; r < s.image.real_rows; ++r) {
    const int seeded = std::min(k, s.image.real_cols);
    for (int t = 0; t < seeded; ++t) y(r, t) = s.image.data(r, t, kChanHistSpeed);
    for (int t = k; t < s.image.real_cols; ++t) {
      double v = b.row_coeffs(r, 0);
      for (int j = 0; j < k; ++j) v += b.row_coeffs(r, j + 1) * y(r, t - k + j);
      y(r, t) = std::clamp(v, 0.0, 1.0);
    }
  }

  const double p1 = sigmoid(b.incident_coeffs(0) +
                            b.incident_coeffs(1) * s.features[kFeatLanesClosed] +
                            b.incident_coeffs(2) * s.features[kFeatDuration]);
  return make_output(std::move(y), p1);
}

}  // namespace wz
