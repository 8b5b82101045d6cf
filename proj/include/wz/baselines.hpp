#pragma once

#include <Eigen/Dense>
#include <vector>

#include "wz/model.hpp"

// Non-neural reference predictors. Both emit the same PredictionOutput as the
// network (normalized speeds, incident posterior) so they run through the
// identical evaluation path.

namespace wz {

// Predicts the historical profile back verbatim; the incident posterior is
// the training-split base rate.
struct HistoricalAverageBaseline {
  double base_rate = 0;
  bool fitted = false;
};

HistoricalAverageBaseline fit_historical_baseline(const std::vector<Sample<double>>& train);

PredictionOutput<double> predict_historical(const HistoricalAverageBaseline& b,
                                            const Sample<double>& s);

// Per-link-row autoregression: ridge-fit AR(lookback) with intercept on the
// actual-speed series, seeded with the first `lookback` historical bins and
// rolled forward appending its own predictions. Rows never seen in training
// fall back to coefficients pooled over all rows. The incident posterior
// comes from a logistic fit on (lanes_closed, duration).
struct LinearArBaseline {
  int lookback = 4;
  double ridge_lambda = 1e-6;
  Eigen::MatrixXd row_coeffs;       // [canvas rows, 1 + lookback]: intercept, oldest .. newest lag
  Eigen::VectorXd pooled_coeffs;    // same layout, all rows pooled
  Eigen::Vector3d incident_coeffs;  // intercept, lanes_closed, duration (normalized features)
  bool fitted = false;
};

LinearArBaseline fit_linear_ar(const std::vector<Sample<double>>& train, int lookback = 4,
                               double ridge_lambda = 1e-6);

PredictionOutput<double> predict_linear_ar(const LinearArBaseline& b, const Sample<double>& s);

// Deterministic ridge-regularized IRLS; shared by the fitted baselines.
Eigen::Vector3d fit_incident_logistic(const std::vector<Sample<double>>& train);

}  // namespace wz
