#include "fgb/boosting.hpp"

#include <algorithm>
#include <cmath>

namespace fgb::boosting {

RiskKind risk_kind_from_string(const std::string& s) {
  if (s == "exponential-pairwise") return RiskKind::ExponentialPairwise;
  if (s == "cross-entropy") return RiskKind::CrossEntropy;
  throw ConfigError("unknown risk kind '" + s + "'");
}

std::string to_string(RiskKind kind) {
  return kind == RiskKind::ExponentialPairwise ? "exponential-pairwise"
                                               : "cross-entropy";
}

namespace {

double sample_loss(std::span<const double> f, int z, RiskKind kind,
                   std::size_t sample_index) {
  const std::size_t m = f.size();
  for (double v : f)
    if (!std::isfinite(v))
      throw Error("risk: non-finite score at sample " +
                  std::to_string(sample_index));
  if (kind == RiskKind::ExponentialPairwise) {
    double loss = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (static_cast<int>(j) == z) continue;
      loss += std::exp(-0.5 * (f[z] - f[j]));
    }
    return loss;
  }
  // cross-entropy: logsumexp(f) - f_z
  double mx = f[0];
  for (double v : f) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : f) acc += std::exp(v - mx);
  return mx + std::log(acc) - f[z];
}

}  // namespace

double compute_risk(const Matrix& f_values, const Labels& labels, RiskKind kind) {
  check(f_values.rows == labels.size(), "risk: scores/labels misaligned");
  check(f_values.rows > 0, "risk: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < f_values.rows; ++i) {
    check(labels[i] >= 0 && labels[i] < static_cast<int>(f_values.cols),
          "risk: label out of range at sample " + std::to_string(i));
    total += sample_loss(f_values.row(i), labels[i], kind, i);
  }
  return total / static_cast<double>(f_values.rows);
}

double compute_risk_weighted(const Matrix& f_values, const Labels& labels,
                             RiskKind kind, std::span<const double> row_scales) {
  if (row_scales.empty()) return compute_risk(f_values, labels, kind);
  check(f_values.rows == labels.size() && f_values.rows == row_scales.size(),
        "risk: scores/labels/scales misaligned");
  check(f_values.rows > 0, "risk: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < f_values.rows; ++i)
    total += row_scales[i] * sample_loss(f_values.row(i), labels[i], kind, i);
  return total / static_cast<double>(f_values.rows);
}

Tensor risk_loss_node(const Tensor& f_row, int label, RiskKind kind) {
  const std::size_t m = f_row.numel();
  check(label >= 0 && label < static_cast<int>(m), "risk_loss_node: bad label");
  const auto z = static_cast<std::size_t>(label);
  if (kind == RiskKind::ExponentialPairwise) {
    // sum_j exp(-1/2 (f_z - f_j)) over all j, then drop the j = z unit term
    Tensor fz = broadcast_to(select(f_row, z), m);
    Tensor exponents = scale(fz - f_row, -0.5);
    return add_const(sum_all(exp_elem(exponents)), -1.0);
  }
  // cross-entropy: logsumexp(f) - f_z, with a detached max shift for stability
  double mx = f_row.value_at(0);
  for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, f_row.value_at(i));
  Tensor lse = add_const(log_elem(sum_all(exp_elem(add_const(f_row, -mx)))), mx);
  return lse - select(f_row, z);
}

Matrix compute_weights(const Matrix& f_values, const Labels& labels,
                       RiskKind kind) {
  check(f_values.rows == labels.size(), "weights: scores/labels misaligned");
  Matrix w(f_values.rows, f_values.cols, 0.0);
  if (kind == RiskKind::ExponentialPairwise) {
    for (std::size_t i = 0; i < f_values.rows; ++i) {
      const auto f = f_values.row(i);
      const int z = labels[i];
      for (double v : f)
        if (!std::isfinite(v))
          throw Error("weights: non-finite score at sample " + std::to_string(i));
      double diag = 0.0;
      for (std::size_t k = 0; k < f_values.cols; ++k) {
        if (static_cast<int>(k) == z) continue;
        const double e = std::exp(-0.5 * (f[z] - f[k]));
        w.at(i, k) = -e;
        diag += e;
      }
      w.at(i, z) = diag;
    }
    return w;
  }
  // cross-entropy weights are defined through the gradient duality
  // w = -2 dL/df and read off the recorded loss graph per sample
  for (std::size_t i = 0; i < f_values.rows; ++i) {
    for (double v : f_values.row(i))
      if (!std::isfinite(v))
        throw Error("weights: non-finite score at sample " + std::to_string(i));
    Tensor f(std::vector<std::size_t>{f_values.cols},
             std::vector<double>(f_values.row(i).begin(), f_values.row(i).end()),
             true);
    backward(risk_loss_node(f, labels[i], kind));
    auto g = f.grad();
    for (std::size_t k = 0; k < f_values.cols; ++k) w.at(i, k) = -2.0 * g[k];
  }
  return w;
}

Matrix build_regression_target(const Matrix& weights) { return weights; }

double line_search_alpha(const Matrix& f_values, const Matrix& g_values,
                         const Labels& labels, RiskKind kind,
                         const LineSearchConfig& cfg,
                         std::span<const double> row_scales) {
  check(cfg.alpha_max > 0.0 && cfg.tol > 0.0, "line_search: bad interval/tol");
  check(f_values.rows == g_values.rows && f_values.cols == g_values.cols,
        "line_search: f/g shape mismatch");

  Matrix probe(f_values.rows, f_values.cols, 0.0);
  auto risk_at = [&](double alpha) {
    for (std::size_t i = 0; i < probe.a.size(); ++i)
      probe.a[i] = f_values.a[i] + alpha * g_values.a[i];
    const double r = compute_risk_weighted(probe, labels, kind, row_scales);
    if (!std::isfinite(r))
      throw Error("line_search: non-finite risk at alpha = " + std::to_string(alpha));
    return r;
  };

  // golden-section search on [0, alpha_max]
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.0, b = cfg.alpha_max;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = risk_at(c), fd = risk_at(d);
  while (b - a > cfg.tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = risk_at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = risk_at(d);
    }
  }
  const double alpha_gs = 0.5 * (a + b);

  // Candidate snap: never return a point worse than alpha = 0, and let a
  // monotone-decreasing risk run to the interval end.
  const double r0 = risk_at(0.0);
  const double r_gs = risk_at(alpha_gs);
  const double r_max = risk_at(cfg.alpha_max);
  double best_alpha = 0.0;
  double best_r = r0;
  if (r_gs < best_r) {
    best_r = r_gs;
    best_alpha = alpha_gs;
  }
  if (r_max < best_r) {
    best_alpha = cfg.alpha_max;
  }
  return best_alpha;
}

// ---------------------------------------------------------------------------
// ensemble
// ---------------------------------------------------------------------------

Sample apply_view(const FeatureView& view, const Sample& raw) {
  if (std::holds_alternative<FullView>(view)) return raw;
  if (const auto* sv = std::get_if<SubgridViewDesc>(&view)) {
    check(std::holds_alternative<Tensor>(raw),
          "apply_view: subgrid view on a non-image sample");
    return subgrid::apply_subgrid(std::get<Tensor>(raw), sv->mask);
  }
  const auto& vv = std::get<VocabViewDesc>(view);
  check(std::holds_alternative<std::vector<int>>(raw),
        "apply_view: vocabulary view on a non-sequence sample");
  attnsel::Vocabulary vocab;
  vocab.ids = vv.kept;
  return attnsel::rewrite_sequence(std::get<std::vector<int>>(raw), vocab);
}

bool view_is_identity(const FeatureView& view, const LabeledDataset& data) {
  if (std::holds_alternative<FullView>(view)) return true;
  if (const auto* sv = std::get_if<SubgridViewDesc>(&view))
    return sv->mask.is_identity(data.image_height(), data.image_width());
  return false;
}

int argmax_label(std::span<const double> scores) {
  int best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = static_cast<int>(k);
  return best;
}

std::vector<double> Ensemble::predict_scores(const Sample& raw) const {
  std::vector<double> acc(static_cast<std::size_t>(classes_), 0.0);
  for (std::size_t t = 0; t < rounds_.size(); ++t) {
    Sample viewed;
    try {
      viewed = apply_view(rounds_[t].view, raw);
    } catch (const Error& e) {
      throw Error("ensemble round " + std::to_string(t) + ": " + e.what());
    }
    const std::vector<double> g = rounds_[t].model->score(viewed);
    check(g.size() == acc.size(), "ensemble round " + std::to_string(t) +
                                      ": learner output width mismatch");
    const double coeff = coefficient(t);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += coeff * g[k];
  }
  return acc;
}

int Ensemble::predict_label(const Sample& raw) const {
  const auto scores = predict_scores(raw);
  return argmax_label(scores);
}

// ---------------------------------------------------------------------------
// boosting rounds
// ---------------------------------------------------------------------------

void BoostState::init(const LabeledDataset& data, double nu, RiskKind risk) {
  data.validate();
  train = &data;
  ensemble = Ensemble(data.classes, nu, risk);
  f_train = Matrix(data.size(), static_cast<std::size_t>(data.classes), 0.0);
}

namespace {

// Scores every training input under the round's view and adds
// coeff * g(x^t) into the cached score matrix.
Matrix score_all(const WeakModel& model, const FeatureView& view,
                 const LabeledDataset& data) {
  Matrix g(data.size(), static_cast<std::size_t>(data.classes), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample viewed = apply_view(view, data.samples[i]);
    const auto scores = model.score(viewed);
    check(scores.size() == g.cols, "boost_round: learner output width mismatch");
    for (std::size_t k = 0; k < g.cols; ++k) g.at(i, k) = scores[k];
  }
  return g;
}

}  // namespace

RoundOutcome basic_round(BoostState& state, const RoundHooks& hooks) {
  check(state.train != nullptr, "basic_round: uninitialized state");
  check(state.ensemble.rounds() == 0, "basic_round: ensemble is not empty");
  const LabeledDataset& data = *state.train;

  RoundOutcome out;
  out.weights = compute_weights(state.f_train, data.labels, state.ensemble.risk());
  out.view = FullView{};

  const Matrix targets = build_regression_target(out.weights);
  std::vector<Sample> viewed = data.samples;
  TrainOutcome trained = hooks.train(0, viewed, targets, {});
  check(trained.model != nullptr, "basic_round: trainer returned no model");
  out.model = trained.model;
  out.final_train_loss = trained.final_loss;
  out.alpha = 1.0;

  state.ensemble.append(EnsembleRound{1.0, trained.model, FullView{}});
  const Matrix g = score_all(*trained.model, FullView{}, data);
  for (std::size_t i = 0; i < g.a.size(); ++i) state.f_train.a[i] = g.a[i];
  return out;
}

RoundOutcome boost_round(BoostState& state, const RoundHooks& hooks,
                         const LineSearchConfig& ls) {
  check(state.train != nullptr, "boost_round: uninitialized state");
  check(state.ensemble.rounds() > 0, "boost_round: run basic_round first");
  const LabeledDataset& data = *state.train;
  const int round = static_cast<int>(state.ensemble.rounds());

  RoundOutcome out;
  out.weights = compute_weights(state.f_train, data.labels, state.ensemble.risk());

  // sample selection: identity pass unless a selector draws a multiset
  std::vector<std::size_t> subset;
  std::vector<double> scales;
  if (hooks.select_samples) {
    if (auto drawn = hooks.select_samples(round, out.weights)) {
      subset = std::move(drawn->first);
      scales = std::move(drawn->second);
      check(subset.size() == scales.size(),
            "boost_round: subset/scale length mismatch");
    }
  }
  out.subset = subset;
  out.loss_scales = scales;

  out.view = hooks.build_view ? hooks.build_view(round, out.weights, subset)
                              : FeatureView{FullView{}};

  // viewed inputs and targets for the trainer, with multiplicity when drawn
  std::vector<Sample> viewed;
  Matrix targets;
  if (subset.empty()) {
    viewed.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      viewed.push_back(apply_view(out.view, data.samples[i]));
    targets = out.weights;
  } else {
    viewed.reserve(subset.size());
    targets = Matrix(subset.size(), out.weights.cols, 0.0);
    for (std::size_t r = 0; r < subset.size(); ++r) {
      const std::size_t i = subset[r];
      check(i < data.size(), "boost_round: drawn index out of range");
      viewed.push_back(apply_view(out.view, data.samples[i]));
      for (std::size_t k = 0; k < out.weights.cols; ++k)
        targets.at(r, k) = out.weights.at(i, k);
    }
  }

  TrainOutcome trained = hooks.train(round, viewed, targets, scales);
  check(trained.model != nullptr, "boost_round: trainer returned no model");
  if (!std::isfinite(trained.final_loss))
    throw Error("boost_round: trainer diverged at round " + std::to_string(round));
  out.model = trained.model;
  out.final_train_loss = trained.final_loss;

  // candidate outputs on the full training set for the score-cache update
  const Matrix g_all = score_all(*trained.model, out.view, data);

  // line search: on the drawn multiset with its reweighting when sampling,
  // otherwise on the full dataset
  double alpha = 0.0;
  if (subset.empty()) {
    alpha = line_search_alpha(state.f_train, g_all, data.labels,
                              state.ensemble.risk(), ls);
  } else {
    Matrix f_sub(subset.size(), state.f_train.cols, 0.0);
    Matrix g_sub(subset.size(), state.f_train.cols, 0.0);
    Labels z_sub(subset.size());
    for (std::size_t r = 0; r < subset.size(); ++r) {
      const std::size_t i = subset[r];
      for (std::size_t k = 0; k < state.f_train.cols; ++k) {
        f_sub.at(r, k) = state.f_train.at(i, k);
        g_sub.at(r, k) = g_all.at(i, k);
      }
      z_sub[r] = data.labels[i];
    }
    alpha = line_search_alpha(f_sub, g_sub, z_sub, state.ensemble.risk(), ls,
                              scales);
  }
  out.alpha = alpha;

  state.ensemble.append(EnsembleRound{alpha, trained.model, out.view});
  const double coeff = state.ensemble.nu() * alpha;
  for (std::size_t i = 0; i < g_all.a.size(); ++i)
    state.f_train.a[i] += coeff * g_all.a[i];
  return out;
}

}  // namespace fgb::boosting
