#pragma once

#include <span>
#include <vector>

namespace casim {

// Monotone cubic (Fritsch-Carlson) interpolant. Preserves monotonicity
// of the data, C1 continuous. Evaluation outside the grid clamps to the
// end panels' cubics.
class MonotoneCubic {
 public:
  MonotoneCubic() = default;
  MonotoneCubic(std::span<const double> x, std::span<const double> y);

  double operator()(double x) const;
  bool empty() const { return x_.empty(); }

 private:
  std::vector<double> x_, y_, slope_;
};

}  // namespace casim
