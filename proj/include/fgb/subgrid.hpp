#pragma once

#include <functional>
#include <vector>

#include "fgb/dataset.hpp"
#include "fgb/tensor.hpp"

namespace fgb::subgrid {

// Full-grid pixel importance scores with per-pixel staleness: entries carry
// the round at which they were last refreshed. The grid persists across
// boosting rounds; each round refreshes only the pixels that were selected
// in the previous round, and selection always reads the full grid.
struct ImportanceGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> score;        // [H*W], nonnegative
  std::vector<int> refreshed_round; // round stamp per pixel, -1 = never

  ImportanceGrid() = default;
  ImportanceGrid(std::size_t h, std::size_t w)
      : height(h), width(w), score(h * w, 0.0), refreshed_round(h * w, -1) {}

  double at(std::size_t r, std::size_t c) const { return score[r * width + c]; }
};

// A subgrid: the cross product of kept rows and kept columns, both sorted
// strictly increasing.
struct SubgridMask {
  std::vector<int> kept_rows;
  std::vector<int> kept_cols;

  std::size_t pixel_count() const { return kept_rows.size() * kept_cols.size(); }
  bool is_identity(std::size_t h, std::size_t w) const;
  void validate(std::size_t h, std::size_t w) const;
};

// The pixel set refreshed each round: row-major list of (row, col) pairs.
using PixelSet = std::vector<std::pair<int, int>>;

PixelSet full_pixel_set(std::size_t h, std::size_t w);
PixelSet mask_pixel_set(const SubgridMask& mask);

// A model used read-only to score pixels: the feature extractor of the
// incumbent learner composed with the basic learner's classifier head.
// forward must accept a full-size image and yield class scores.
struct ProbeModel {
  std::function<Tensor(const Tensor& image)> forward;
};

// Refreshes the importance of every pixel in refresh_set from the mean
// absolute input gradient of the per-sample square loss
// ||g(x_i) - w_i||^2, summed over channels. Pixels outside the set keep
// their stale scores. weights rows must align with the dataset.
void pixel_importance(const ProbeModel& probe, const LabeledDataset& data,
                      const Matrix& weights, const PixelSet& refresh_set,
                      int round, ImportanceGrid& grid);

// Row score j = sum_k I[j,k] / W; column score k = sum_j I[j,k] / H.
std::pair<std::vector<double>, std::vector<double>> aggregate_rows_cols(
    const ImportanceGrid& grid);

// Keeps the ceil(rho*H) rows and ceil(rho*W) columns with highest scores;
// ties broken toward the lower index.
SubgridMask select_subgrid(const std::vector<double>& row_scores,
                           const std::vector<double>& col_scores, double rho);

// output[c,a,b] = input[c, kept_rows[a], kept_cols[b]]; exact value copy.
Tensor apply_subgrid(const Tensor& image, const SubgridMask& mask);

// mask2 expressed in the coordinates of mask1's output, composed into
// original-image coordinates.
SubgridMask compose(const SubgridMask& first, const SubgridMask& second);

}  // namespace fgb::subgrid
