#pragma once

// Shape-preserving (monotone) piecewise-cubic Hermite interpolation after
// Fritsch and Carlson: no overshoot between samples, so interpolated curves
// never invent extra crossings.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sqzforge/errors.hpp"

namespace sqz {

class MonotoneCubic {
 public:
  MonotoneCubic() = default;

  /// `x` must be strictly monotone (either direction); at least two points.
  MonotoneCubic(std::vector<double> x, std::vector<double> y) {
    if (x.size() != y.size()) throw ConfigError("interpolation: x and y differ in length");
    if (x.size() < 2) throw ConfigError("interpolation: at least two samples are required");
    if (x.front() > x.back()) {
      std::reverse(x.begin(), x.end());
      std::reverse(y.begin(), y.end());
    }
    for (std::size_t i = 1; i < x.size(); ++i)
      if (!(x[i] > x[i - 1])) throw ConfigError("interpolation: abscissae must be strictly monotone");
    x_ = std::move(x);
    y_ = std::move(y);
    const std::size_t n = x_.size();
    std::vector<double> delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) delta[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
    d_.assign(n, 0.0);
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
      return;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (delta[i - 1] * delta[i] <= 0.0) continue;
      const double h0 = x_[i] - x_[i - 1];
      const double h1 = x_[i + 1] - x_[i];
      const double w0 = 2.0 * h1 + h0;
      const double w1 = h1 + 2.0 * h0;
      d_[i] = (w0 + w1) / (w0 / delta[i - 1] + w1 / delta[i]);
    }
    d_[0] = end_slope(x_[1] - x_[0], x_[2] - x_[1], delta[0], delta[1]);
    d_[n - 1] = end_slope(x_[n - 1] - x_[n - 2], x_[n - 2] - x_[n - 3], delta[n - 2], delta[n - 3]);
  }

  [[nodiscard]] double lo() const { return x_.front(); }
  [[nodiscard]] double hi() const { return x_.back(); }

  /// Value at `x`; outside the sample range the end intervals are extended.
  [[nodiscard]] double operator()(double x) const {
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    std::size_t i = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
    i = std::min(i, x_.size() - 2);
    const double h = x_[i + 1] - x_[i];
    const double t = (x - x_[i]) / h;
    const double t2 = t * t;
    const double t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * d_[i] + (-2 * t3 + 3 * t2) * y_[i + 1] +
           (t3 - t2) * h * d_[i + 1];
  }

 private:
  // three-point end derivative, limited to keep the end interval monotone
  static double end_slope(double h0, double h1, double d0, double d1) {
    double d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (d * d0 <= 0.0) return 0.0;
    if (d0 * d1 <= 0.0 && std::abs(d) > 3.0 * std::abs(d0)) d = 3.0 * d0;
    return d;
  }

  std::vector<double> x_, y_, d_;
};

}  // namespace sqz
