#pragma once

// Seedable random streams, samplers for the distributions the model needs,
// and log-density evaluators.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace msemark {

/// A reproducible stream of random draws.
///
/// Backed by std::mt19937_64, whose output sequence is fixed by the C++
/// standard; every sampler below is built on that raw output so the draw
/// sequence is identical across platforms and standard libraries.
/// A stream is single-owner. Concurrent workers get their own stream via
/// derive_seed().
class RandomStream {
 public:
  using engine_type = std::mt19937_64;

  explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double uniform();
  double standard_normal();
  engine_type& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  engine_type engine_;
};

/// Splitting rule for independent streams: the root seed and each path
/// element are folded through the splitmix64 finalizer, in order.
/// Worker i of a pool uses derive_seed(root, {i}).
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

namespace dist {

struct Normal {
  double mean = 0.0;
  double variance = 1.0;
};
/// Shape-rate parameterization.
struct Gamma {
  double shape = 1.0;
  double rate = 1.0;
};
struct Beta {
  double a = 1.0;
  double b = 1.0;
};
/// Density ∝ x^{-shape-1} exp(-scale / x).
struct InverseGamma {
  double shape = 1.0;
  double scale = 1.0;
};
struct Poisson {
  double mean = 0.0;
};
struct Binomial {
  std::uint64_t trials = 0;
  double prob = 0.0;
};
/// Non-negative weights with a positive finite sum; normalized internally.
struct Categorical {
  std::span<const double> weights;
};
struct Dirichlet {
  std::span<const double> alpha;
};
/// Probabilities must sum to 1 within 1e-10.
struct Multinomial {
  std::uint64_t trials = 0;
  std::span<const double> probs;
};

}  // namespace dist

double draw(const dist::Normal& d, RandomStream& rng);
double draw(const dist::Gamma& d, RandomStream& rng);
double draw(const dist::Beta& d, RandomStream& rng);
double draw(const dist::InverseGamma& d, RandomStream& rng);
std::uint64_t draw(const dist::Poisson& d, RandomStream& rng);
std::uint64_t draw(const dist::Binomial& d, RandomStream& rng);
std::size_t draw(const dist::Categorical& d, RandomStream& rng);
std::vector<double> draw(const dist::Dirichlet& d, RandomStream& rng);
std::vector<std::uint64_t> draw(const dist::Multinomial& d, RandomStream& rng);

/// ln of a Gamma(shape, 1) variate. Stays finite for very small shapes where
/// the variate itself underflows.
double draw_log_gamma(double shape, RandomStream& rng);

// Log densities. A value outside the support returns -inf; invalid
// parameters throw DomainError.
double log_density(const dist::Normal& d, double x);
double log_density(const dist::Gamma& d, double x);
double log_density(const dist::Beta& d, double x);
double log_density(const dist::InverseGamma& d, double x);
double log_density(const dist::Poisson& d, std::uint64_t k);
double log_density(const dist::Dirichlet& d, std::span<const double> x);

/// ln of the Dirichlet-multinomial marginal of cluster counts with symmetric
/// concentration alpha/K, up to a constant that depends only on the counts:
///   lnΓ(α) − lnΓ(α+N) + Σ_k [lnΓ(α/K + N_k) − lnΓ(α/K)].
double dm_log_marginal(std::span<const double> counts, double alpha);

}  // namespace msemark
