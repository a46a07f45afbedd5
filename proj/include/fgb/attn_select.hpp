#pragma once

#include <map>
#include <vector>

#include "fgb/dataset.hpp"
#include "fgb/nn.hpp"

namespace fgb::attnsel {

// Nonnegative importance score per vocabulary token id. Only tokens that
// occur in the scored corpus appear; the classification token is never
// scored (it is always retained).
using TokenImportance = std::map<int, double>;

// Retained token ids, sorted, always containing the classification token.
// Round t vocabularies are nested: V_t is a subset of V_{t-1}.
struct Vocabulary {
  std::vector<int> ids;  // sorted, includes kClsToken
  int round = 0;

  bool contains(int id) const;
  std::size_t content_size() const;  // excludes the classification token
  void validate() const;

  static Vocabulary from_dataset(const LabeledDataset& data);
};

// Positions are 0-based; position 0 is the classification token.

// Final-layer head-averaged attention from position p to the classification
// position. This is the shipped approximation of the self-importance
// product; the full product over lower-layer diagonals is available for
// diagnostics via full_product.
double self_importance(const AttentionTrace& trace, int p,
                       bool full_product = false);

// Greedy max-attention path starting at p through layers 1..L-1 avoiding p,
// times the final-layer attention from the path end to the classification
// position. Requires at least two layers and a sequence of length >= 2.
double rest_importance(const AttentionTrace& trace, int p);

// Sums self- plus rest-importance over every occurrence of each token
// across the corpus. traces[i] must come from the model applied to
// sequences[i]. The classification position is skipped.
TokenImportance aggregate_vocab(const std::vector<std::vector<int>>& sequences,
                                const std::vector<AttentionTrace>& traces);

// Keeps the ceil(sigma * content_size) highest-scored content tokens of the
// previous vocabulary plus the classification token; ties toward the lower
// token id. Unscored tokens count as zero.
Vocabulary prune_vocab(const TokenImportance& scores, const Vocabulary& previous,
                       double sigma);

// Order-preserving removal of tokens absent from the vocabulary; the
// classification token always survives.
std::vector<int> rewrite_sequence(const std::vector<int>& sequence,
                                  const Vocabulary& vocab);

}  // namespace fgb::attnsel
