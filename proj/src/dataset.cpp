#include "fgb/dataset.hpp"

#include <algorithm>

namespace fgb {

void LabeledDataset::validate() const {
  check(!samples.empty(), "dataset: no samples");
  check(samples.size() == labels.size(), "dataset: sample/label count mismatch");
  check(classes >= 1, "dataset: class count must be positive");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    check(labels[i] >= 0 && labels[i] < classes,
          "dataset: label out of range at sample " + std::to_string(i));
    if (modality == Modality::Image) {
      check(std::holds_alternative<Tensor>(samples[i]),
            "dataset: mixed modality at sample " + std::to_string(i));
      const Tensor& t = std::get<Tensor>(samples[i]);
      check(t.shape().size() == 3, "dataset: image must be [C,H,W]");
      check(t.shape() == image(0).shape(),
            "dataset: inconsistent image extents at sample " + std::to_string(i));
    } else {
      check(std::holds_alternative<std::vector<int>>(samples[i]),
            "dataset: mixed modality at sample " + std::to_string(i));
      const auto& toks = tokens(i);
      check(!toks.empty() && toks.front() == kClsToken,
            "dataset: sequence must start with the classification token at sample " +
                std::to_string(i));
    }
  }
}

std::size_t LabeledDataset::image_channels() const {
  check(modality == Modality::Image && !samples.empty(), "dataset: not an image set");
  return image(0).shape()[0];
}

std::size_t LabeledDataset::image_height() const {
  check(modality == Modality::Image && !samples.empty(), "dataset: not an image set");
  return image(0).shape()[1];
}

std::size_t LabeledDataset::image_width() const {
  check(modality == Modality::Image && !samples.empty(), "dataset: not an image set");
  return image(0).shape()[2];
}

int LabeledDataset::max_token_id() const {
  check(modality == Modality::Sequence, "dataset: not a sequence set");
  int m = kClsToken;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (int t : tokens(i)) m = std::max(m, t);
  return m;
}

}  // namespace fgb
