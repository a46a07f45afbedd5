#pragma once

#include <string>
#include <variant>
#include <vector>

#include "fgb/tensor.hpp"

namespace fgb {

// Reserved classification token: always the first token of a sequence and
// never pruned from a vocabulary.
inline constexpr int kClsToken = 0;

// One training input: an image tensor [C,H,W] or a token-id sequence whose
// first element is the classification token.
using Sample = std::variant<Tensor, std::vector<int>>;

enum class Modality { Image, Sequence };

// Labeled classification dataset of a single modality. Labels are stored
// 0-based internally; file formats use 1-based labels.
struct LabeledDataset {
  Modality modality = Modality::Image;
  int classes = 0;
  std::vector<Sample> samples;
  std::vector<int> labels;

  std::size_t size() const { return samples.size(); }
  const Tensor& image(std::size_t i) const { return std::get<Tensor>(samples[i]); }
  const std::vector<int>& tokens(std::size_t i) const {
    return std::get<std::vector<int>>(samples[i]);
  }

  // Checks label ranges, non-emptiness, homogeneous image extents and
  // classification-token prefixes. Throws on violation.
  void validate() const;

  // Image extents; throws for sequence datasets.
  std::size_t image_channels() const;
  std::size_t image_height() const;
  std::size_t image_width() const;

  // Largest token id present (sequence datasets).
  int max_token_id() const;
};

}  // namespace fgb
