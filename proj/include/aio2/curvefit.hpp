#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

namespace aio2 {

// Accuracy-per-epoch series are stored 0-based: series[j] is epoch j+1.
using AccuracySeries = std::vector<double>;

struct LinearFit {
  double k = 0.0;  // slope per epoch
  double m = 0.0;  // intercept
};

// Least-squares line through y on abscissae 0..n-1.
LinearFit ols_fit(std::span<const double> y);

// OLS slope over the w+1 points f_{i-w}..f_i (epochs are 1-indexed).
// Requires w >= 2 and i > w; i must not exceed the series length.
double window_slope(std::span<const double> series, int i, int w);

// f(x) = a(1-exp(-b x^c)) with 0 < a < 1, b > 0, 0 < c < 1. Under these
// constraints f' is strictly positive and strictly decreasing for x >= 1.
struct ExpFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double sse = 0.0;
  bool well_conditioned = true;  // false for flat data / singular steps
  int restarts_used = 0;         // 1-based index of the winning start
};

double saturating_exp(double a, double b, double c, double x);
double saturating_exp_gradient(double a, double b, double c, double x);

inline double exp_value(const ExpFit& f, double x) {
  return saturating_exp(f.a, f.b, f.c, x);
}
double exp_gradient(const ExpFit& f, double x);  // requires x >= 1

// Constrained nonlinear least squares of the saturating exponential to
// f_1..f_n at x = 1..n. Optimizes unconstrained surrogates (logit a,
// log b, logit c) with Levenberg-Marquardt damping (lambda 1e-3, x10 on
// reject, /10 on accept), analytic Jacobian, at most 500 iterations per
// start, convergence at relative SSE change < 1e-10. Five deterministic
// starts: a in {0.5,0.9} x b in {0.01,0.1} at c = 0.5, then a data-driven
// start. Deterministic; throws InsufficientHistoryError for n < 5 and
// FitError when every start diverges.
ExpFit fit_saturating_exp(std::span<const double> series);

nlohmann::json fit_to_json(const ExpFit& fit);

// Plain curve CSV: header "epoch,acc", epochs 1..n in order, acc in [0,1].
void write_accuracy_csv(const std::filesystem::path& path,
                        const AccuracySeries& series);
AccuracySeries read_accuracy_csv(const std::filesystem::path& path);

}  // namespace aio2
