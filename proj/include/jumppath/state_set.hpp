#pragma once

#include <algorithm>
#include <initializer_list>
#include <vector>

#include "jumppath/errors.hpp"

namespace jumppath {

/// A set of state indices, kept sorted and deduplicated.
class StateSet {
 public:
  StateSet() = default;
  StateSet(std::initializer_list<int> states) : members_(states) { normalize(); }
  explicit StateSet(std::vector<int> states) : members_(std::move(states)) { normalize(); }

  bool contains(int x) const {
    return std::binary_search(members_.begin(), members_.end(), x);
  }
  bool empty() const { return members_.empty(); }
  std::size_t size() const { return members_.size(); }
  const std::vector<int>& members() const { return members_; }

  bool intersects(const StateSet& other) const {
    auto a = members_.begin();
    auto b = other.members_.begin();
    while (a != members_.end() && b != other.members_.end()) {
      if (*a == *b) return true;
      (*a < *b) ? ++a : ++b;
    }
    return false;
  }

  static StateSet unite(const StateSet& a, const StateSet& b) {
    std::vector<int> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.members_.begin(), a.members_.end(), b.members_.begin(),
                   b.members_.end(), std::back_inserter(out));
    return StateSet(std::move(out));
  }

  /// Throws unless every member lies in [0, n_states).
  void check_bounds(int n_states, const char* name) const {
    for (int x : members_) {
      if (x < 0 || x >= n_states) {
        throw DimensionMismatchError(std::string("state set ") + name +
                                     " contains out-of-range state " +
                                     std::to_string(x));
      }
    }
  }

 private:
  void normalize() {
    std::sort(members_.begin(), members_.end());
    members_.erase(std::unique(members_.begin(), members_.end()), members_.end());
  }

  std::vector<int> members_;
};

/// Validates the (A, B) pair used by transition-path problems.
inline void check_ab_pair(const StateSet& a, const StateSet& b, int n_states) {
  if (a.empty() || b.empty()) throw EmptySetError("sets A and B must be nonempty");
  a.check_bounds(n_states, "A");
  b.check_bounds(n_states, "B");
  if (a.intersects(b)) throw SetsOverlapError("sets A and B must be disjoint");
}

}  // namespace jumppath
