#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "prd/errors.hpp"
#include "prd/problem.hpp"

namespace prd {

/// Resize and standardization applied to every row before relation extraction.
/// Defaults are the ImageNet statistics expected by pretrained backbones.
struct PreprocessProfile {
  int target_resolution = 224;
  std::array<double, 3> channel_means{0.485, 0.456, 0.406};
  std::array<double, 3> channel_stds{0.229, 0.224, 0.225};
  bool rescale = true;  // divide by 255 before standardizing

  void validate() const {
    if (target_resolution < 8) throw RejectedInput("preprocess target_resolution must be >= 8");
    for (double s : channel_stds)
      if (!(s > 0.0)) throw RejectedInput("preprocess channel stds must be positive");
  }
};

/// Three stacked channels, channel c holding cell c of the row.
template <typename Scalar = float>
struct RowTensor {
  int resolution = 0;
  std::vector<Scalar> values;  // [3][R][R]

  std::span<const Scalar> channel(int c) const {
    const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
    return {values.data() + plane * c, plane};
  }
};

/// Bilinear resample with half-pixel centres (no corner alignment), writing
/// `out_size`^2 values in source units.
template <typename Scalar>
void resize_bilinear(const Cell& cell, int out_size, std::span<Scalar> out) {
  const int in = cell.size();
  const auto px = cell.pixels();
  if (in == out_size) {
    for (std::size_t i = 0; i < px.size(); ++i) out[i] = static_cast<Scalar>(px[i]);
    return;
  }
  const double scale = static_cast<double>(in) / out_size;
  struct Tap {
    int i0, i1;
    double w1;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(out_size));
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
  }
  for (int y = 0; y < out_size; ++y) {
    const Tap ty = taps[static_cast<std::size_t>(y)];
    const std::uint8_t* r0 = px.data() + static_cast<std::size_t>(ty.i0) * in;
    const std::uint8_t* r1 = px.data() + static_cast<std::size_t>(ty.i1) * in;
    for (int x = 0; x < out_size; ++x) {
      const Tap tx = taps[static_cast<std::size_t>(x)];
      const double top = r0[tx.i0] + (r0[tx.i1] - r0[tx.i0]) * tx.w1;
      const double bot = r1[tx.i0] + (r1[tx.i1] - r1[tx.i0]) * tx.w1;
      out[static_cast<std::size_t>(y) * out_size + x] = static_cast<Scalar>(top + (bot - top) * ty.w1);
    }
  }
}

/// Writes one standardized channel for `cell` into `out` (R*R values).
template <typename Scalar>
void preprocess_cell_into(const Cell& cell, int channel, const PreprocessProfile& profile, std::span<Scalar> out) {
  if (cell.empty()) throw RejectedInput("cannot preprocess an empty cell");
  resize_bilinear(cell, profile.target_resolution, out);
  const double mean = profile.channel_means[static_cast<std::size_t>(channel)];
  const double std = profile.channel_stds[static_cast<std::size_t>(channel)];
  const double scale = profile.rescale ? 1.0 / 255.0 : 1.0;
  for (Scalar& v : out) v = static_cast<Scalar>((static_cast<double>(v) * scale - mean) / std);
}

/// Writes the 3*R*R tensor for `row` into `out`.
template <typename Scalar>
void preprocess_row_into(const Row& row, const PreprocessProfile& profile, std::span<Scalar> out) {
  const std::size_t plane = static_cast<std::size_t>(profile.target_resolution) * profile.target_resolution;
  if (out.size() != 3 * plane) throw RejectedInput("preprocess output buffer has the wrong size");
  for (int c = 0; c < 3; ++c) {
    preprocess_cell_into(row[static_cast<std::size_t>(c)], c, profile, out.subspan(plane * c, plane));
  }
}

/// Resize each cell to R x R, rescale to [0,1], standardize per channel.
/// Cell position i becomes channel i.
template <typename Scalar = float>
RowTensor<Scalar> preprocess_row(const Row& row, const PreprocessProfile& profile) {
  profile.validate();
  RowTensor<Scalar> t;
  t.resolution = profile.target_resolution;
  t.values.resize(3 * static_cast<std::size_t>(t.resolution) * t.resolution);
  preprocess_row_into<Scalar>(row, profile, t.values);
  return t;
}

}  // namespace prd
