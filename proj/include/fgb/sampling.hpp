#pragma once

#include <cstdint>
#include <vector>

#include "fgb/common.hpp"

namespace fgb::sampling {

// Probability over training samples proportional to the l2 norm of each
// boosting-weight row.
struct SampleDistribution {
  std::vector<double> p;      // sums to 1
  std::vector<double> norms;  // the source residual norms

  std::size_t size() const { return p.size(); }
};

// A multiset of drawn sample indices (i.i.d. with replacement), in draw order.
struct DrawnSubset {
  std::vector<std::size_t> indices;
  uint64_t seed = 0;

  std::size_t draw_count() const { return indices.size(); }
};

std::vector<double> row_norms(const Matrix& weights);

// p_i = ||w_i|| / sum_j ||w_j||. All-zero norms mean boosting has nothing
// left to fit and raise an error.
SampleDistribution residual_distribution(const Matrix& weights);
SampleDistribution distribution_from_norms(const std::vector<double>& norms);

// ceil(sigma * n) independent draws with replacement, reproducible by seed.
DrawnSubset draw_subset(const SampleDistribution& dist, double sigma,
                        uint64_t seed);

// Importance-reweighted square loss over the multiset:
//   sum_{i in subset} 1/(n * p_i) * ||g_i - w_i||^2.
double unbiased_square_loss(const DrawnSubset& subset,
                            const SampleDistribution& dist,
                            const Matrix& learner_outputs, const Matrix& targets,
                            std::size_t n);

// Plain square loss over the full dataset, for unbiasedness comparisons.
double full_square_loss(const Matrix& learner_outputs, const Matrix& targets);

// Excess sampling variance of distribution q over the optimum:
//   sum_i n_i^2 / q_i - (sum_i n_i)^2.
// Zero exactly when q is the residual-norm distribution; positive otherwise.
double jensen_gap(const std::vector<double>& norms, const std::vector<double>& q);

// Monte-Carlo estimate, over `resamples` seeded subset draws, of the
// variance E||gbar - g||^2 of the reweighted stochastic mean-gradient
// around the full-dataset mean of the weight rows. sigma = 1 draws the
// identity subset, so the estimate is exactly zero.
double estimator_variance(const SampleDistribution& dist, double sigma,
                          int resamples, const Matrix& weights, uint64_t seed);

}  // namespace fgb::sampling
