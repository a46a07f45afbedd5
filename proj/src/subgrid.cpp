#include "fgb/subgrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fgb::subgrid {

bool SubgridMask::is_identity(std::size_t h, std::size_t w) const {
  if (kept_rows.size() != h || kept_cols.size() != w) return false;
  for (std::size_t i = 0; i < h; ++i)
    if (kept_rows[i] != static_cast<int>(i)) return false;
  for (std::size_t i = 0; i < w; ++i)
    if (kept_cols[i] != static_cast<int>(i)) return false;
  return true;
}

void SubgridMask::validate(std::size_t h, std::size_t w) const {
  check(!kept_rows.empty() && !kept_cols.empty(), "subgrid: empty index set");
  for (std::size_t i = 0; i < kept_rows.size(); ++i) {
    check(kept_rows[i] >= 0 && kept_rows[i] < static_cast<int>(h),
          "subgrid: row index out of bounds");
    check(i == 0 || kept_rows[i] > kept_rows[i - 1],
          "subgrid: rows not strictly increasing");
  }
  for (std::size_t i = 0; i < kept_cols.size(); ++i) {
    check(kept_cols[i] >= 0 && kept_cols[i] < static_cast<int>(w),
          "subgrid: column index out of bounds");
    check(i == 0 || kept_cols[i] > kept_cols[i - 1],
          "subgrid: columns not strictly increasing");
  }
}

PixelSet full_pixel_set(std::size_t h, std::size_t w) {
  PixelSet out;
  out.reserve(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out.emplace_back(static_cast<int>(r), static_cast<int>(c));
  return out;
}

PixelSet mask_pixel_set(const SubgridMask& mask) {
  PixelSet out;
  out.reserve(mask.pixel_count());
  for (int r : mask.kept_rows)
    for (int c : mask.kept_cols) out.emplace_back(r, c);
  return out;
}

void pixel_importance(const ProbeModel& probe, const LabeledDataset& data,
                      const Matrix& weights, const PixelSet& refresh_set,
                      int round, ImportanceGrid& grid) {
  check(data.modality == Modality::Image, "pixel_importance: image data required");
  check(weights.rows == data.size(), "pixel_importance: weights/data misaligned");
  const std::size_t c = data.image_channels();
  const std::size_t h = data.image_height();
  const std::size_t w = data.image_width();
  check(grid.height == h && grid.width == w,
        "pixel_importance: grid extents do not match the image grid");

  // accumulated |dL/dx| summed over channels, per pixel
  std::vector<double> acc(h * w, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor x = data.image(i).clone(true);
    Tensor out = probe.forward(x);
    check(out.numel() == weights.cols,
          "pixel_importance: probe output width does not match weights");
    Tensor target(std::vector<std::size_t>{weights.cols},
                  std::vector<double>(weights.row(i).begin(), weights.row(i).end()));
    Tensor diff = reshape(out, {weights.cols}) - target;
    backward(sum_all(diff * diff));
    // a probe constant in its input leaves no gradient: zero importance
    if (!x.has_grad()) continue;
    auto g = x.grad();
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t p = 0; p < h * w; ++p) acc[p] += std::fabs(g[ci * h * w + p]);
  }

  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (const auto& [r, col] : refresh_set) {
    check(r >= 0 && r < static_cast<int>(h) && col >= 0 && col < static_cast<int>(w),
          "pixel_importance: refresh pixel out of bounds");
    const std::size_t p = static_cast<std::size_t>(r) * w + col;
    grid.score[p] = acc[p] * inv_n;
    grid.refreshed_round[p] = round;
  }
}

std::pair<std::vector<double>, std::vector<double>> aggregate_rows_cols(
    const ImportanceGrid& grid) {
  std::vector<double> row_scores(grid.height, 0.0);
  std::vector<double> col_scores(grid.width, 0.0);
  for (std::size_t r = 0; r < grid.height; ++r)
    for (std::size_t c = 0; c < grid.width; ++c) {
      row_scores[r] += grid.at(r, c);
      col_scores[c] += grid.at(r, c);
    }
  for (auto& v : row_scores) v /= static_cast<double>(grid.width);
  for (auto& v : col_scores) v /= static_cast<double>(grid.height);
  return {std::move(row_scores), std::move(col_scores)};
}

namespace {

// Indices of the k highest scores, ties toward the lower index, returned sorted.
std::vector<int> top_k_indices(const std::vector<double>& scores, std::size_t k) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

SubgridMask select_subgrid(const std::vector<double>& row_scores,
                           const std::vector<double>& col_scores, double rho) {
  check(rho > 0.0 && rho <= 1.0, "select_subgrid: rho must be in (0, 1]");
  const std::size_t h = row_scores.size();
  const std::size_t w = col_scores.size();
  check(h > 0 && w > 0, "select_subgrid: empty score vectors");
  const std::size_t keep_r =
      std::min(h, static_cast<std::size_t>(std::ceil(rho * static_cast<double>(h))));
  const std::size_t keep_c =
      std::min(w, static_cast<std::size_t>(std::ceil(rho * static_cast<double>(w))));
  SubgridMask mask;
  mask.kept_rows = top_k_indices(row_scores, std::max<std::size_t>(1, keep_r));
  mask.kept_cols = top_k_indices(col_scores, std::max<std::size_t>(1, keep_c));
  return mask;
}

Tensor apply_subgrid(const Tensor& image, const SubgridMask& mask) {
  check(image.shape().size() == 3, "apply_subgrid: image must be [C,H,W]");
  const std::size_t c = image.shape()[0];
  const std::size_t h = image.shape()[1];
  const std::size_t w = image.shape()[2];
  mask.validate(h, w);
  const std::size_t nh = mask.kept_rows.size();
  const std::size_t nw = mask.kept_cols.size();
  std::vector<double> out(c * nh * nw);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t a = 0; a < nh; ++a)
      for (std::size_t b = 0; b < nw; ++b)
        out[(ci * nh + a) * nw + b] =
            image.value_at((ci * h + mask.kept_rows[a]) * w + mask.kept_cols[b]);
  return Tensor({c, nh, nw}, std::move(out));
}

SubgridMask compose(const SubgridMask& first, const SubgridMask& second) {
  SubgridMask out;
  out.kept_rows.reserve(second.kept_rows.size());
  out.kept_cols.reserve(second.kept_cols.size());
  for (int r : second.kept_rows) {
    check(r >= 0 && r < static_cast<int>(first.kept_rows.size()),
          "compose: row index outside the first mask");
    out.kept_rows.push_back(first.kept_rows[r]);
  }
  for (int c : second.kept_cols) {
    check(c >= 0 && c < static_cast<int>(first.kept_cols.size()),
          "compose: column index outside the first mask");
    out.kept_cols.push_back(first.kept_cols[c]);
  }
  return out;
}

}  // namespace fgb::subgrid
