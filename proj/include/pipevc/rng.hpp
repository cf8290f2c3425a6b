#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace pipevc {

// Seeded RNG with hand-rolled draws on top of the standardized mt19937_64
// engine; std distributions are not pinned across standard libraries, these
// are, so seeded runs reproduce everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace pipevc
