#pragma once

#include "wsampler/linalg.hpp"

#include <string>
#include <vector>

namespace wsampler {

struct DrawMeta {
  std::string model_tag;
  std::string source;        // "subset:<id>", "combined:<method>", "reference", ...
  std::string seed_lineage;  // human-readable chain of seeds that produced the draws
};

/// Rectangular block of posterior draws: one row per draw, one column per
/// named parameter.
class DrawMatrix {
 public:
  DrawMatrix() = default;
  DrawMatrix(Mat values, std::vector<std::string> names, DrawMeta meta = {});

  const Mat& values() const noexcept { return values_; }
  Mat& values() noexcept { return values_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const DrawMeta& meta() const noexcept { return meta_; }
  DrawMeta& meta() noexcept { return meta_; }

  Index draws() const noexcept { return values_.rows(); }
  Index dim() const noexcept { return values_.cols(); }
  /// Contiguous copy of one coordinate.
  std::vector<double> column(Index j) const;

 private:
  Mat values_;
  std::vector<std::string> names_;
  DrawMeta meta_;
};

}  // namespace wsampler
