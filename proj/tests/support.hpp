#pragma once

// Shared test helpers: Kolmogorov-Smirnov checks against numerically
// normalized densities, batch-means standard errors, scratch directories.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

inline std::string data_path(const std::string& name) { return std::string(MSEMARK_TEST_DATA) + "/" + name; }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// CDF of an unnormalized log-density tabulated on [lo, hi] and
/// integrated with the trapezoid rule.
class GridCdf {
 public:
  GridCdf(const std::function<double(double)>& log_density, double lo, double hi, std::size_t n = 200001)
      : lo_(lo), step_((hi - lo) / static_cast<double>(n - 1)), cdf_(n, 0.0) {
    std::vector<double> ld(n);
    double top = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      ld[i] = log_density(lo + step_ * static_cast<double>(i));
      top = std::max(top, ld[i]);
    }
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = std::isfinite(ld[i]) ? std::exp(ld[i] - top) : 0.0;
    for (std::size_t i = 1; i < n; ++i) cdf_[i] = cdf_[i - 1] + 0.5 * (d[i - 1] + d[i]) * step_;
    const double total = cdf_.back();
    for (double& c : cdf_) c /= total;
    density_ = std::move(d);
    for (double& v : density_) v /= total;
  }

  double operator()(double x) const {
    if (x <= lo_) return 0.0;
    const double pos = (x - lo_) / step_;
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= cdf_.size()) return 1.0;
    const double f = pos - static_cast<double>(i);
    return cdf_[i] + f * (cdf_[i + 1] - cdf_[i]);
  }

  double lo() const { return lo_; }
  double step() const { return step_; }
  const std::vector<double>& density() const { return density_; }

 private:
  double lo_;
  double step_;
  std::vector<double> cdf_;
  std::vector<double> density_;
};

inline double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic one-sample critical value sqrt(-ln(level / 2) / 2) / sqrt(n).
inline double ks_critical(std::size_t n, double level = 0.001) {
  return std::sqrt(-std::log(level / 2.0) / 2.0) / std::sqrt(static_cast<double>(n));
}

inline double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Standard error of the mean of an autocorrelated series.
inline double batch_means_se(const std::vector<double>& v, std::size_t batches = 50) {
  const std::size_t size = v.size() / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b)
    means[b] = std::accumulate(v.begin() + b * size, v.begin() + (b + 1) * size, 0.0) / static_cast<double>(size);
  return std::sqrt(variance(means) / static_cast<double>(batches));
}

/// A fresh directory under the system temp path, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("msemark-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
