#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "safire/rng.hpp"

using namespace safire;

TEST_CASE("determinism: same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("split is independent of parent draw position") {
  // Children are keyed off the stream state, so splits taken from the same
  // state agree while different labels diverge.
  Rng a(7);
  Rng c1 = a.split(3);
  Rng c2 = Rng(7).split(3);
  CHECK(c1.next_u64() == c2.next_u64());
  CHECK(a.split(3).next_u64() != a.split(4).next_u64());
}

TEST_CASE("below has no obvious modulo bias") {
  Rng r(1);
  const uint64_t n = 7;
  std::vector<int> counts(n, 0);
  const int draws = 70000;
  for (int i = 0; i < draws; ++i) ++counts[r.below(n)];
  // chi^2 with 6 dof; 22.46 is the 0.1% critical value.
  double chi2 = 0;
  const double expect = double(draws) / double(n);
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 22.46);
}

TEST_CASE("uniform stays in [0,1)") {
  Rng r(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("normal has roughly standard moments") {
  Rng r(5);
  const int n = 100000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("mix differs across both arguments") {
  std::set<uint64_t> seen;
  for (uint64_t a = 0; a < 10; ++a)
    for (uint64_t b = 0; b < 10; ++b) seen.insert(Rng::mix(a, b));
  CHECK(seen.size() == 100);
}
