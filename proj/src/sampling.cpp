#include "fgb/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fgb::sampling {

std::vector<double> row_norms(const Matrix& weights) {
  std::vector<double> norms(weights.rows);
  for (std::size_t i = 0; i < weights.rows; ++i) {
    double s = 0.0;
    for (double v : weights.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
  }
  return norms;
}

SampleDistribution distribution_from_norms(const std::vector<double>& norms) {
  check(!norms.empty(), "residual_distribution: no samples");
  double total = 0.0;
  for (double n : norms) {
    check(n >= 0.0 && std::isfinite(n), "residual_distribution: bad norm");
    total += n;
  }
  if (total == 0.0)
    throw Error("residual_distribution: converged residuals (all norms zero)");
  SampleDistribution dist;
  dist.norms = norms;
  dist.p.resize(norms.size());
  for (std::size_t i = 0; i < norms.size(); ++i) dist.p[i] = norms[i] / total;
  return dist;
}

SampleDistribution residual_distribution(const Matrix& weights) {
  return distribution_from_norms(row_norms(weights));
}

DrawnSubset draw_subset(const SampleDistribution& dist, double sigma,
                        uint64_t seed) {
  check(sigma > 0.0 && sigma <= 1.0, "draw_subset: sigma must be in (0, 1]");
  const std::size_t n = dist.size();
  const std::size_t count =
      static_cast<std::size_t>(std::ceil(sigma * static_cast<double>(n)));

  // inverse-CDF sampling on an explicit cumulative table keeps the draw
  // independent of library distribution internals
  std::vector<double> cdf(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += dist.p[i];
    cdf[i] = acc;
  }
  cdf[n - 1] = 1.0;

  DrawnSubset out;
  out.seed = seed;
  out.indices.reserve(count);
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    out.indices.push_back(static_cast<std::size_t>(it - cdf.begin()));
  }
  return out;
}

double unbiased_square_loss(const DrawnSubset& subset,
                            const SampleDistribution& dist,
                            const Matrix& learner_outputs, const Matrix& targets,
                            std::size_t n) {
  check(learner_outputs.rows == targets.rows && learner_outputs.cols == targets.cols,
        "unbiased_square_loss: output/target shape mismatch");
  double loss = 0.0;
  for (std::size_t i : subset.indices) {
    check(i < dist.size() && i < learner_outputs.rows,
          "unbiased_square_loss: drawn index out of range");
    const double p = dist.p[i];
    check(p > 0.0, "unbiased_square_loss: drawn sample has zero probability");
    double sq = 0.0;
    for (std::size_t c = 0; c < targets.cols; ++c) {
      const double d = learner_outputs.at(i, c) - targets.at(i, c);
      sq += d * d;
    }
    loss += sq / (static_cast<double>(n) * p);
  }
  return loss;
}

double full_square_loss(const Matrix& learner_outputs, const Matrix& targets) {
  check(learner_outputs.rows == targets.rows && learner_outputs.cols == targets.cols,
        "full_square_loss: output/target shape mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.rows; ++i)
    for (std::size_t c = 0; c < targets.cols; ++c) {
      const double d = learner_outputs.at(i, c) - targets.at(i, c);
      loss += d * d;
    }
  return loss;
}

double jensen_gap(const std::vector<double>& norms, const std::vector<double>& q) {
  check(norms.size() == q.size(), "jensen_gap: size mismatch");
  double sum_norms = 0.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    check(q[i] >= 0.0, "jensen_gap: negative probability");
    if (norms[i] > 0.0) {
      check(q[i] > 0.0,
            "jensen_gap: zero probability on the support (infinite variance)");
      weighted += norms[i] * norms[i] / q[i];
    }
    sum_norms += norms[i];
  }
  const double gap = weighted - sum_norms * sum_norms;
  // the gap is nonnegative in exact arithmetic; differencing the two large
  // sums can leave roundoff-scale negatives at the optimum
  if (gap < 0.0 && -gap <= 1e-9 * std::max(1.0, sum_norms * sum_norms)) return 0.0;
  return gap;
}

double estimator_variance(const SampleDistribution& dist, double sigma,
                          int resamples, const Matrix& weights, uint64_t seed) {
  check(resamples >= 1, "estimator_variance: need at least one resample");
  check(weights.rows == dist.size(), "estimator_variance: weights misaligned");
  const std::size_t n = dist.size();
  const std::size_t m = weights.cols;

  // full-dataset mean gradient direction: (1/n) sum_i w_i
  std::vector<double> mean(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c) mean[c] += weights.at(i, c);
  for (auto& v : mean) v /= static_cast<double>(n);

  const std::size_t count =
      static_cast<std::size_t>(std::ceil(sigma * static_cast<double>(n)));
  double acc = 0.0;
  std::vector<double> gbar(m);
  for (int s = 0; s < resamples; ++s) {
    std::fill(gbar.begin(), gbar.end(), 0.0);
    if (sigma >= 1.0) {
      // full dataset each draw: no sampling randomness
      gbar = mean;
    } else {
      DrawnSubset subset = draw_subset(dist, sigma, mix_seed(seed, s));
      for (std::size_t i : subset.indices) {
        const double scale = 1.0 / (static_cast<double>(n) * dist.p[i]);
        for (std::size_t c = 0; c < m; ++c) gbar[c] += scale * weights.at(i, c);
      }
      for (auto& v : gbar) v /= static_cast<double>(count);
    }
    double sq = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double d = gbar[c] - mean[c];
      sq += d * d;
    }
    acc += sq;
  }
  return acc / static_cast<double>(resamples);
}

}  // namespace fgb::sampling
