#pragma once

#include <cstddef>
#include <vector>

#include "jumppath/rate_kernel.hpp"

namespace jumppath {

/// Values attached to the ordered pairs on the support of a kernel, stored
/// in the kernel's adjacency-row order: values(x)[slot] belongs to the pair
/// (x, kernel.out(x)[slot].state). Plain data with value semantics; shape
/// compatibility with the owning kernel is checked where it is consumed.
class PairField {
 public:
  PairField() = default;

  explicit PairField(const RateKernel& k, double fill = 0.0) {
    rows_.resize(static_cast<std::size_t>(k.n_states()));
    for (int x = 0; x < k.n_states(); ++x) {
      rows_[static_cast<std::size_t>(x)].assign(k.out(x).size(), fill);
    }
  }

  template <typename Fn>  // Fn: (int from, int to, double rate) -> double
  static PairField build(const RateKernel& k, Fn&& fn) {
    PairField f(k);
    for (int x = 0; x < k.n_states(); ++x) {
      auto row = k.out(x);
      for (std::size_t s = 0; s < row.size(); ++s) {
        f.rows_[static_cast<std::size_t>(x)][s] = fn(x, row[s].state, row[s].rate);
      }
    }
    return f;
  }

  std::vector<double>& row(int x) { return rows_[static_cast<std::size_t>(x)]; }
  const std::vector<double>& row(int x) const { return rows_[static_cast<std::size_t>(x)]; }
  std::size_t n_rows() const { return rows_.size(); }

  /// Value on the pair (x, y); zero off the stored support.
  double at(const RateKernel& k, int x, int y) const {
    auto row_edges = k.out(x);
    const auto& vals = rows_[static_cast<std::size_t>(x)];
    for (std::size_t s = 0; s < row_edges.size(); ++s) {
      if (row_edges[s].state == y) return vals[s];
    }
    return 0.0;
  }

  void check_shape(const RateKernel& k, const char* name) const {
    bool ok = rows_.size() == static_cast<std::size_t>(k.n_states());
    if (ok) {
      for (int x = 0; x < k.n_states(); ++x) {
        if (rows_[static_cast<std::size_t>(x)].size() != k.out(x).size()) { ok = false; break; }
      }
    }
    if (!ok) throw DimensionMismatchError(std::string(name) + " does not match the kernel support");
  }

 private:
  std::vector<std::vector<double>> rows_;
};

/// ent(s) = s log s - s + 1, with ent(0) = 1.
inline double ent(double s) {
  if (s == 0.0) return 1.0;
  return s * std::log(s) - s + 1.0;
}

}  // namespace jumppath
