#include "fgb/attn_select.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fgb::attnsel {

bool Vocabulary::contains(int id) const {
  return std::binary_search(ids.begin(), ids.end(), id);
}

std::size_t Vocabulary::content_size() const {
  return ids.size() - (contains(kClsToken) ? 1 : 0);
}

void Vocabulary::validate() const {
  check(std::is_sorted(ids.begin(), ids.end()), "vocabulary: ids not sorted");
  check(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
        "vocabulary: duplicate ids");
  check(contains(kClsToken), "vocabulary: classification token missing");
}

Vocabulary Vocabulary::from_dataset(const LabeledDataset& data) {
  check(data.modality == Modality::Sequence, "vocabulary: sequence data required");
  std::set<int> seen;
  seen.insert(kClsToken);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int t : data.tokens(i)) seen.insert(t);
  Vocabulary v;
  v.ids.assign(seen.begin(), seen.end());
  v.round = 0;
  return v;
}

double self_importance(const AttentionTrace& trace, int p, bool full_product) {
  check(p >= 0 && p < trace.seq_len, "self_importance: position out of range");
  const int last = trace.layer_count - 1;
  double value = trace.head_avg(last, p, 0);
  if (full_product) {
    for (int k = 0; k < last; ++k) value *= trace.head_avg(k, p, p);
  }
  return value;
}

double rest_importance(const AttentionTrace& trace, int p) {
  check(trace.seq_len >= 2,
        "rest_importance: needs at least one token beyond the classification token");
  check(trace.layer_count >= 2,
        "rest_importance: undefined for single-layer models");
  check(p >= 0 && p < trace.seq_len, "rest_importance: position out of range");

  double value = 1.0;
  int cur = p;
  for (int k = 0; k < trace.layer_count - 1; ++k) {
    // best head-averaged attention from the path head to any position other
    // than p itself; ties toward the lower position index
    double best = -1.0;
    int best_j = -1;
    for (int j = 0; j < trace.seq_len; ++j) {
      if (j == p) continue;
      const double a = trace.head_avg(k, cur, j);
      if (a > best) {
        best = a;
        best_j = j;
      }
    }
    value *= best;
    cur = best_j;
  }
  return value * trace.head_avg(trace.layer_count - 1, cur, 0);
}

TokenImportance aggregate_vocab(const std::vector<std::vector<int>>& sequences,
                                const std::vector<AttentionTrace>& traces) {
  check(sequences.size() == traces.size(),
        "aggregate_vocab: sequences/traces misaligned");
  TokenImportance scores;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& seq = sequences[i];
    const auto& trace = traces[i];
    check(static_cast<int>(seq.size()) == trace.seq_len,
          "aggregate_vocab: trace length mismatch at sample " + std::to_string(i));
    if (seq.size() < 2) continue;  // only the classification token, nothing to score
    for (int p = 1; p < static_cast<int>(seq.size()); ++p) {
      const double contribution =
          self_importance(trace, p) + rest_importance(trace, p);
      scores[seq[p]] += contribution;
    }
  }
  return scores;
}

Vocabulary prune_vocab(const TokenImportance& scores, const Vocabulary& previous,
                       double sigma) {
  check(sigma > 0.0 && sigma <= 1.0, "prune_vocab: sigma must be in (0, 1]");
  previous.validate();

  std::vector<int> content;
  content.reserve(previous.ids.size());
  for (int id : previous.ids)
    if (id != kClsToken) content.push_back(id);

  const std::size_t keep = std::min(
      content.size(),
      static_cast<std::size_t>(std::ceil(sigma * static_cast<double>(content.size()))));

  auto score_of = [&](int id) {
    auto it = scores.find(id);
    return it == scores.end() ? 0.0 : it->second;
  };
  // highest score first, ties toward the lower token id
  std::stable_sort(content.begin(), content.end(), [&](int a, int b) {
    const double sa = score_of(a), sb = score_of(b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  content.resize(keep);
  content.push_back(kClsToken);
  std::sort(content.begin(), content.end());

  Vocabulary out;
  out.ids = std::move(content);
  out.round = previous.round + 1;
  return out;
}

std::vector<int> rewrite_sequence(const std::vector<int>& sequence,
                                  const Vocabulary& vocab) {
  check(!sequence.empty() && sequence.front() == kClsToken,
        "rewrite_sequence: sequence must start with the classification token");
  std::vector<int> out;
  out.reserve(sequence.size());
  out.push_back(kClsToken);
  for (std::size_t i = 1; i < sequence.size(); ++i)
    if (vocab.contains(sequence[i])) out.push_back(sequence[i]);
  return out;
}

}  // namespace fgb::attnsel
