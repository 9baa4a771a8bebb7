// Independent edit-distance oracle: memoized top-down recursion over the three
// unit-cost operations. The op-count walk consumes the sequences from the tail
// (inputs reversed, then walked front-to-front), which is exactly the library's
// documented backtrace order: match, substitute, delete, insert.
#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace edit_oracle {

struct Counts {
  int adds = 0;
  int deletes = 0;
  int subs = 0;
};

class Oracle {
 public:
  Oracle(std::vector<std::string> a, std::vector<std::string> b)
      : a_(std::move(a)), b_(std::move(b)) {}

  int distance() { return dist(0, 0); }

  Counts counts() {
    Oracle reversed(reverse(a_), reverse(b_));
    Counts out;
    std::size_t i = 0;
    std::size_t j = 0;
    const auto& a = reversed.a_;
    const auto& b = reversed.b_;
    while (i < a.size() || j < b.size()) {
      const int here = reversed.dist(i, j);
      if (i < a.size() && j < b.size() && a[i] == b[j] && reversed.dist(i + 1, j + 1) == here) {
        ++i;
        ++j;
      } else if (i < a.size() && j < b.size() && reversed.dist(i + 1, j + 1) + 1 == here) {
        ++out.subs;
        ++i;
        ++j;
      } else if (i < a.size() && reversed.dist(i + 1, j) + 1 == here) {
        ++out.deletes;
        ++i;
      } else {
        ++out.adds;
        ++j;
      }
    }
    return out;
  }

 private:
  static std::vector<std::string> reverse(std::vector<std::string> v) {
    std::reverse(v.begin(), v.end());
    return v;
  }

  int dist(std::size_t i, std::size_t j) {
    if (i == a_.size()) return static_cast<int>(b_.size() - j);
    if (j == b_.size()) return static_cast<int>(a_.size() - i);
    const auto key = std::make_pair(i, j);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    int best = dist(i + 1, j + 1) + (a_[i] == b_[j] ? 0 : 1);
    best = std::min(best, dist(i + 1, j) + 1);
    best = std::min(best, dist(i, j + 1) + 1);
    memo_.emplace(key, best);
    return best;
  }

  std::vector<std::string> a_;
  std::vector<std::string> b_;
  std::map<std::pair<std::size_t, std::size_t>, int> memo_;
};

}  // namespace edit_oracle
