#include "aio2/curvefit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "aio2/errors.hpp"

namespace aio2 {

LinearFit ols_fit(std::span<const double> y) {
  const std::size_t n = y.size();
  if (n < 2) throw ContractError("ols_fit: need at least 2 points");
  const double x_mean = static_cast<double>(n - 1) / 2.0;
  double y_mean = 0.0;
  for (double v : y) y_mean += v;
  y_mean /= static_cast<double>(n);
  double cov = 0.0, var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - x_mean;
    cov += dx * (y[i] - y_mean);
    var += dx * dx;
  }
  LinearFit fit;
  fit.k = cov / var;
  fit.m = y_mean - fit.k * x_mean;
  return fit;
}

double window_slope(std::span<const double> series, int i, int w) {
  if (w < 2) throw ContractError("window_slope: window must be >= 2");
  if (i <= w) {
    throw InsufficientHistoryError("window_slope: epoch " + std::to_string(i) +
                                   " has no full window of size " +
                                   std::to_string(w));
  }
  if (i > static_cast<int>(series.size())) {
    throw InsufficientHistoryError("window_slope: epoch " + std::to_string(i) +
                                   " beyond series of length " +
                                   std::to_string(series.size()));
  }
  return ols_fit(series.subspan(static_cast<std::size_t>(i - w - 1),
                                static_cast<std::size_t>(w + 1)))
      .k;
}

double saturating_exp(double a, double b, double c, double x) {
  return a * (1.0 - std::exp(-b * std::pow(x, c)));
}

double saturating_exp_gradient(double a, double b, double c, double x) {
  return a * b * c * std::pow(x, c - 1.0) * std::exp(-b * std::pow(x, c));
}

double exp_gradient(const ExpFit& f, double x) {
  if (x < 1.0) throw ContractError("exp_gradient: x must be >= 1");
  return saturating_exp_gradient(f.a, f.b, f.c, x);
}

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Surrogates: a = sigmoid(ua), b = exp(ub), c = sigmoid(uc). The box keeps
// the mapped parameters strictly inside their constraints in double
// precision (sigmoid(+-30) stays off 0/1) and b small enough that f' never
// underflows to an exact 0 on the epoch ranges we evaluate.
constexpr double kSurrogateLim = 30.0;
const double kMaxLogB = std::log(3.0);

struct Params {
  double ua, ub, uc;
  double a() const { return sigmoid(ua); }
  double b() const { return std::exp(ub); }
  double c() const { return sigmoid(uc); }

  Params clamped() const {
    return {std::clamp(ua, -kSurrogateLim, kSurrogateLim),
            std::clamp(ub, -kSurrogateLim, kMaxLogB),
            std::clamp(uc, -kSurrogateLim, kSurrogateLim)};
  }
};

double sse_at(const Params& p, std::span<const double> y) {
  double sse = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = saturating_exp(p.a(), p.b(), p.c(), static_cast<double>(i + 1)) - y[i];
    sse += r * r;
  }
  return sse;
}

// One damped Gauss-Newton solve from a fixed start. Returns finite-SSE best
// point reached; sets *singular when a normal-equation solve degenerated.
struct StartResult {
  Params p{};
  double sse = std::numeric_limits<double>::infinity();
  bool ok = false;
  bool singular = false;
};

StartResult run_start(Params p, std::span<const double> y) {
  StartResult res;
  const std::size_t n = y.size();
  double sse = sse_at(p, y);
  if (!std::isfinite(sse)) return res;
  double lambda = 1e-3;
  bool converged = false;

  for (int iter = 0; iter < 500 && !converged; ++iter) {
    // Normal equations JtJ and Jtr at the current point.
    const double a = p.a(), b = p.b(), c = p.c();
    double jtj[3][3] = {};
    double jtr[3] = {};
    for (std::size_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(i + 1);
      const double xc = std::pow(x, c);
      const double t = std::exp(-b * xc);
      const double r = a * (1.0 - t) - y[i];
      const double ja = (1.0 - t) * a * (1.0 - a);
      const double jb = a * xc * t * b;
      const double jc = a * b * xc * std::log(x) * t * c * (1.0 - c);
      const double j[3] = {ja, jb, jc};
      for (int u = 0; u < 3; ++u) {
        jtr[u] += j[u] * r;
        for (int v = 0; v < 3; ++v) jtj[u][v] += j[u] * j[v];
      }
    }

    bool stepped = false;
    while (lambda <= 1e12) {
      // Solve (JtJ + lambda diag(JtJ)) delta = -Jtr by Gaussian elimination.
      double m[3][4];
      for (int u = 0; u < 3; ++u) {
        for (int v = 0; v < 3; ++v) m[u][v] = jtj[u][v];
        m[u][u] += lambda * std::max(jtj[u][u], 1e-12);
        m[u][3] = -jtr[u];
      }
      bool singular = false;
      for (int col = 0; col < 3 && !singular; ++col) {
        int piv = col;
        for (int row = col + 1; row < 3; ++row) {
          if (std::abs(m[row][col]) > std::abs(m[piv][col])) piv = row;
        }
        if (std::abs(m[piv][col]) < 1e-30) {
          singular = true;
          break;
        }
        std::swap(m[col], m[piv]);
        for (int row = col + 1; row < 3; ++row) {
          const double f = m[row][col] / m[col][col];
          for (int v = col; v < 4; ++v) m[row][v] -= f * m[col][v];
        }
      }
      if (singular) {
        res.singular = true;
        lambda *= 10.0;
        continue;
      }
      double delta[3];
      for (int u = 2; u >= 0; --u) {
        double s = m[u][3];
        for (int v = u + 1; v < 3; ++v) s -= m[u][v] * delta[v];
        delta[u] = s / m[u][u];
      }
      const Params cand =
          Params{p.ua + delta[0], p.ub + delta[1], p.uc + delta[2]}.clamped();
      const double cand_sse = sse_at(cand, y);
      if (std::isfinite(cand_sse) && cand_sse < sse) {
        const double rel = (sse - cand_sse) / std::max(sse, 1e-300);
        p = cand;
        sse = cand_sse;
        lambda = std::max(lambda / 10.0, 1e-15);
        stepped = true;
        converged = rel < 1e-10;
        break;
      }
      lambda *= 10.0;
    }
    if (!stepped) break;  // damping exhausted; local stall
  }

  res.p = p;
  res.sse = sse;
  res.ok = std::isfinite(sse);
  return res;
}

Params data_driven_start(std::span<const double> y) {
  const std::size_t n = y.size();
  double y_max = y[0];
  for (double v : y) y_max = std::max(y_max, v);
  const double a = std::clamp(y_max, 1e-3, 1.0 - 1e-3);
  // Two-point fit of ln b + c ln x = ln(-ln(1 - f/a)) at x = 1 and x = n.
  const auto g = [&](double f) {
    const double ratio = std::clamp(f / a, 1e-6, 1.0 - 1e-6);
    return std::log(-std::log(1.0 - ratio));
  };
  const double g1 = g(y.front());
  const double gn = g(y.back());
  double b = std::exp(g1);
  double c = n > 1 ? (gn - g1) / std::log(static_cast<double>(n)) : 0.5;
  b = std::clamp(b, 1e-6, 3.0);
  c = std::clamp(c, 1e-3, 1.0 - 1e-3);
  return Params{logit(a), std::log(b), logit(c)}.clamped();
}

}  // namespace

ExpFit fit_saturating_exp(std::span<const double> series) {
  if (series.size() < 5) {
    throw InsufficientHistoryError("fit_saturating_exp: need >= 5 points, got " +
                                   std::to_string(series.size()));
  }
  double lo = series[0], hi = series[0];
  for (double v : series) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  std::array<Params, 5> starts = {
      Params{logit(0.5), std::log(0.01), logit(0.5)},
      Params{logit(0.5), std::log(0.1), logit(0.5)},
      Params{logit(0.9), std::log(0.01), logit(0.5)},
      Params{logit(0.9), std::log(0.1), logit(0.5)},
      data_driven_start(series),
  };

  StartResult best;
  int best_idx = 0;
  std::ostringstream diag;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const StartResult r = run_start(starts[s], series);
    diag << (s ? ", " : "") << "start" << s + 1 << " sse="
         << (r.ok ? std::to_string(r.sse) : "diverged");
    if (r.ok && r.sse < best.sse) {
      best = r;
      best_idx = static_cast<int>(s) + 1;
    }
  }
  if (!best.ok) {
    throw FitError("fit_saturating_exp: all starts diverged (" + diag.str() + ")");
  }

  ExpFit fit;
  fit.a = best.p.a();
  fit.b = best.p.b();
  fit.c = best.p.c();
  fit.sse = best.sse;
  fit.restarts_used = best_idx;
  fit.well_conditioned = (hi - lo) >= 1e-9 && !best.singular;
  return fit;
}

nlohmann::json fit_to_json(const ExpFit& fit) {
  return {{"a", fit.a},
          {"b", fit.b},
          {"c", fit.c},
          {"sse", fit.sse},
          {"restarts_used", fit.restarts_used},
          {"well_conditioned", fit.well_conditioned}};
}

void write_accuracy_csv(const std::filesystem::path& path,
                        const AccuracySeries& series) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,acc\n";
  out.precision(17);
  for (std::size_t i = 0; i < series.size(); ++i) {
    out << i + 1 << "," << series[i] << "\n";
  }
}

AccuracySeries read_accuracy_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || (line != "epoch,acc" && line != "epoch,acc\r")) {
    throw IoError("expected 'epoch,acc' header in " + path.string());
  }
  AccuracySeries series;
  int expect = 1;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::istringstream ss(line);
    int epoch;
    char comma;
    double acc;
    if (!(ss >> epoch >> comma >> acc) || comma != ',') {
      throw IoError("bad curve row '" + line + "' in " + path.string());
    }
    if (epoch != expect) {
      throw IoError("curve epochs must run 1..n in order in " + path.string());
    }
    if (!(acc >= 0.0 && acc <= 1.0)) {
      throw IoError("accuracy outside [0,1] in " + path.string());
    }
    series.push_back(acc);
    ++expect;
  }
  if (series.empty()) throw IoError("empty curve in " + path.string());
  return series;
}

}  // namespace aio2
