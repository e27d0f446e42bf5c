#include "msemark/random.hpp"

#include <algorithm>
#include <boost/random/binomial_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "msemark/errors.hpp"

namespace msemark {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void require(bool ok, const char* dist, const char* param, double value) {
  if (!ok)
    throw DomainError(std::string(dist) + ": invalid parameter " + param + " = " + std::to_string(value));
}

bool positive(double v) { return v > 0.0 && std::isfinite(v); }

}  // namespace

double RandomStream::uniform() {
  while (true) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    if (u > 0.0) return u;
  }
}

double RandomStream::standard_normal() {
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  return normal(engine_);
}

std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(root);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return h;
}

double draw(const dist::Normal& d, RandomStream& rng) {
  require(std::isfinite(d.mean), "Normal", "mean", d.mean);
  require(d.variance >= 0.0 && std::isfinite(d.variance), "Normal", "variance", d.variance);
  return d.mean + std::sqrt(d.variance) * rng.standard_normal();
}

double draw_log_gamma(double shape, RandomStream& rng) {
  require(positive(shape), "Gamma", "shape", shape);
  if (shape < 1.0) {
    // Gamma(a) = Gamma(a + 1) * U^{1/a}
    const double boosted = draw_log_gamma(shape + 1.0, rng);
    return boosted + std::log(rng.uniform()) / shape;
  }
  // Marsaglia & Tsang (2000).
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = rng.standard_normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

double draw(const dist::Gamma& d, RandomStream& rng) {
  require(positive(d.shape), "Gamma", "shape", d.shape);
  require(positive(d.rate), "Gamma", "rate", d.rate);
  return std::exp(draw_log_gamma(d.shape, rng)) / d.rate;
}

double draw(const dist::Beta& d, RandomStream& rng) {
  require(positive(d.a), "Beta", "a", d.a);
  require(positive(d.b), "Beta", "b", d.b);
  const double la = draw_log_gamma(d.a, rng);
  const double lb = draw_log_gamma(d.b, rng);
  // X / (X + Y) evaluated on the log scale.
  return 1.0 / (1.0 + std::exp(lb - la));
}

double draw(const dist::InverseGamma& d, RandomStream& rng) {
  require(positive(d.shape), "InverseGamma", "shape", d.shape);
  require(positive(d.scale), "InverseGamma", "scale", d.scale);
  return d.scale * std::exp(-draw_log_gamma(d.shape, rng));
}

std::uint64_t draw(const dist::Poisson& d, RandomStream& rng) {
  require(d.mean >= 0.0 && std::isfinite(d.mean) && d.mean < 1e15, "Poisson", "mean", d.mean);
  if (d.mean == 0.0) return 0;
  boost::random::poisson_distribution<std::uint64_t, double> poisson(d.mean);
  return poisson(rng.engine());
}

std::uint64_t draw(const dist::Binomial& d, RandomStream& rng) {
  require(d.prob >= 0.0 && d.prob <= 1.0, "Binomial", "prob", d.prob);
  if (d.trials == 0 || d.prob == 0.0) return 0;
  if (d.prob == 1.0) return d.trials;
  boost::random::binomial_distribution<std::int64_t, double> binomial(static_cast<std::int64_t>(d.trials),
                                                                      d.prob);
  return static_cast<std::uint64_t>(binomial(rng.engine()));
}

std::size_t draw(const dist::Categorical& d, RandomStream& rng) {
  if (d.weights.empty()) throw DomainError("Categorical: no categories");
  double total = 0.0;
  for (double w : d.weights) {
    require(w >= 0.0 && std::isfinite(w), "Categorical", "weight", w);
    total += w;
  }
  require(total > 0.0 && std::isfinite(total), "Categorical", "total weight", total);
  const double target = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < d.weights.size(); ++k) {
    if (d.weights[k] <= 0.0) continue;
    acc += d.weights[k];
    last_positive = k;
    if (target < acc) return k;
  }
  return last_positive;
}

std::vector<double> draw(const dist::Dirichlet& d, RandomStream& rng) {
  if (d.alpha.empty()) throw DomainError("Dirichlet: no components");
  std::vector<double> out(d.alpha.size());
  double top = kNegInf;
  for (std::size_t k = 0; k < out.size(); ++k) {
    require(positive(d.alpha[k]), "Dirichlet", "alpha", d.alpha[k]);
    out[k] = draw_log_gamma(d.alpha[k], rng);
    top = std::max(top, out[k]);
  }
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<std::uint64_t> draw(const dist::Multinomial& d, RandomStream& rng) {
  if (d.probs.empty()) throw DomainError("Multinomial: no categories");
  double total = 0.0;
  for (double p : d.probs) {
    require(p >= 0.0 && std::isfinite(p), "Multinomial", "prob", p);
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-10, "Multinomial", "sum of probs", total);
  std::vector<std::uint64_t> out(d.probs.size(), 0);
  std::uint64_t remaining = d.trials;
  double mass_left = total;
  for (std::size_t k = 0; k + 1 < out.size() && remaining > 0; ++k) {
    const double p = mass_left > 0.0 ? std::clamp(d.probs[k] / mass_left, 0.0, 1.0) : 0.0;
    out[k] = draw(dist::Binomial{remaining, p}, rng);
    remaining -= out[k];
    mass_left -= d.probs[k];
  }
  if (remaining > 0) {
    // Any leftover trials go to the last category with positive mass.
    std::size_t k = out.size() - 1;
    while (k > 0 && d.probs[k] <= 0.0) --k;
    out[k] += remaining;
  }
  return out;
}

double log_density(const dist::Normal& d, double x) {
  require(std::isfinite(d.mean), "Normal", "mean", d.mean);
  require(positive(d.variance), "Normal", "variance", d.variance);
  if (!std::isfinite(x)) return kNegInf;
  const double z = x - d.mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * d.variance) - z * z / (2.0 * d.variance);
}

double log_density(const dist::Gamma& d, double x) {
  require(positive(d.shape), "Gamma", "shape", d.shape);
  require(positive(d.rate), "Gamma", "rate", d.rate);
  if (!(x > 0.0) || !std::isfinite(x)) return kNegInf;
  return d.shape * std::log(d.rate) + (d.shape - 1.0) * std::log(x) - d.rate * x - std::lgamma(d.shape);
}

double log_density(const dist::Beta& d, double x) {
  require(positive(d.a), "Beta", "a", d.a);
  require(positive(d.b), "Beta", "b", d.b);
  if (!(x > 0.0 && x < 1.0)) return kNegInf;
  return (d.a - 1.0) * std::log(x) + (d.b - 1.0) * std::log1p(-x) + std::lgamma(d.a + d.b) -
         std::lgamma(d.a) - std::lgamma(d.b);
}

double log_density(const dist::InverseGamma& d, double x) {
  require(positive(d.shape), "InverseGamma", "shape", d.shape);
  require(positive(d.scale), "InverseGamma", "scale", d.scale);
  if (!(x > 0.0) || !std::isfinite(x)) return kNegInf;
  return d.shape * std::log(d.scale) - std::lgamma(d.shape) - (d.shape + 1.0) * std::log(x) - d.scale / x;
}

double log_density(const dist::Poisson& d, std::uint64_t k) {
  require(d.mean >= 0.0 && std::isfinite(d.mean), "Poisson", "mean", d.mean);
  if (d.mean == 0.0) return k == 0 ? 0.0 : kNegInf;
  const double kd = static_cast<double>(k);
  return kd * std::log(d.mean) - d.mean - std::lgamma(kd + 1.0);
}

double log_density(const dist::Dirichlet& d, std::span<const double> x) {
  if (d.alpha.empty() || x.size() != d.alpha.size())
    throw DomainError("Dirichlet: value and parameter dimensions differ");
  double sum_alpha = 0.0, sum_x = 0.0, out = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    require(positive(d.alpha[k]), "Dirichlet", "alpha", d.alpha[k]);
    if (!(x[k] > 0.0)) return kNegInf;
    sum_alpha += d.alpha[k];
    sum_x += x[k];
    out += (d.alpha[k] - 1.0) * std::log(x[k]) - std::lgamma(d.alpha[k]);
  }
  if (std::abs(sum_x - 1.0) > 1e-10) return kNegInf;
  return out + std::lgamma(sum_alpha);
}

double dm_log_marginal(std::span<const double> counts, double alpha) {
  require(positive(alpha), "DirichletMultinomial", "alpha", alpha);
  if (counts.empty()) throw DomainError("DirichletMultinomial: no components");
  const double per = alpha / static_cast<double>(counts.size());
  const double lg_per = std::lgamma(per);
  double total = 0.0, out = 0.0;
  for (double n : counts) {
    require(n >= 0.0, "DirichletMultinomial", "count", n);
    total += n;
    if (n > 0.0) out += std::lgamma(per + n) - lg_per;
  }
  return out + std::lgamma(alpha) - std::lgamma(alpha + total);
}

}  // namespace msemark
