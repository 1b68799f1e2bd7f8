#include "wsampler/draws.hpp"

#include "wsampler/error.hpp"

namespace wsampler {

DrawMatrix::DrawMatrix(Mat values, std::vector<std::string> names, DrawMeta meta)
    : values_(std::move(values)), names_(std::move(names)), meta_(std::move(meta)) {
  require(values_.rows() >= 1, Errc::invalid_argument, "draw matrix needs at least one draw");
  require(static_cast<Index>(names_.size()) == values_.cols(), Errc::dimension_mismatch,
          "parameter name count differs from column count");
  require(values_.allFinite(), Errc::non_finite, "draw matrix has non-finite entries");
}

std::vector<double> DrawMatrix::column(Index j) const {
  require(j >= 0 && j < dim(), Errc::invalid_argument, "column index out of range");
  std::vector<double> out(static_cast<std::size_t>(draws()));
  for (Index r = 0; r < draws(); ++r) out[static_cast<std::size_t>(r)] = values_(r, j);
  return out;
}

}  // namespace wsampler
