#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "hedra/similarity.hpp"
#include "test_support.hpp"

using namespace hedra;
using namespace hedra::sim;

namespace {

struct Fixture {
  ivf::Corpus corpus;
  ivf::IvfIndex index;

  explicit Fixture(std::uint64_t seed = 17, std::size_t n = 1500,
                   std::uint32_t dim = 8) {
    Rng rng(seed);
    corpus = hedra::test::mixture_corpus(rng, n, dim, 10, 0.25);
    const auto centroids = ivf::train_kmeans(corpus, 16, 12, 3);
    index = ivf::build_index(corpus, centroids, Metric::L2);
  }

  ivf::SearchCursor full_search(const Embedding& q, std::size_t nprobe,
                                std::size_t k) const {
    auto cursor = ivf::make_cursor(index, q, nprobe, k);
    while (!cursor.done()) ivf::search_step(index, cursor, 4);
    return cursor;
  }
};

}  // namespace

TEST_CASE("locality records live per request and overwrite on update") {
  Fixture fx;
  LocalityCache cache;
  Rng rng1(1), rng2(2);
  const Embedding q1 = hedra::test::random_query(rng1, 8);
  auto cursor = fx.full_search(q1, 8, kExtendedTopK);
  cache.record_search(5, make_locality_record(fx.index, cursor.query,
                                              cursor.heap, cursor.plan));
  CHECK(cache.size() == 1);
  REQUIRE(cache.find(5) != nullptr);
  const auto first_query = cache.find(5)->query;

  auto cursor2 = fx.full_search(hedra::test::random_query(rng2, 8), 8,
                                kExtendedTopK);
  cache.record_search(5, make_locality_record(fx.index, cursor2.query,
                                              cursor2.heap, cursor2.plan));
  CHECK(cache.size() == 1);
  CHECK(cache.find(5)->query != first_query);

  cache.evict(5);  // request completion drops the record
  CHECK(cache.find(5) == nullptr);
  CHECK(cache.size() == 0);
}

TEST_CASE("probe with the identical query re-scores the cached extended top-k") {
  Fixture fx;
  LocalityCache cache;
  Rng rng(3);
  const auto q = hedra::test::random_query(rng, 8);
  auto cursor = fx.full_search(q, fx.index.k_clusters(), kExtendedTopK);
  cache.record_search(1, make_locality_record(fx.index, cursor.query,
                                              cursor.heap, cursor.plan));
  const auto probe =
      probe_cache(cache, 1, cursor.query, 5, 1e-12, cursor.plan);
  REQUIRE(probe.has_value());
  CHECK(probe->seed == cursor.heap.truncated(5));
}

TEST_CASE("probe misses when the query drifted past delta or has no record") {
  Fixture fx;
  LocalityCache cache;
  Rng rng(4);
  const auto q = hedra::test::random_query(rng, 8);
  auto cursor = fx.full_search(q, 8, kExtendedTopK);
  cache.record_search(1, make_locality_record(fx.index, cursor.query,
                                              cursor.heap, cursor.plan));
  Embedding far = cursor.query;
  far[0] += 100.0f;
  CHECK_FALSE(probe_cache(cache, 1, far, 5, 0.5, cursor.plan).has_value());
  CHECK_FALSE(probe_cache(cache, 2, cursor.query, 5, 0.5, cursor.plan).has_value());
}

TEST_CASE("seeding never changes the final result") {
  Fixture fx;
  LocalityCache cache;
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = hedra::test::random_query(rng, 8);
    auto base = fx.full_search(q, 6, kExtendedTopK);
    cache.record_search(9, make_locality_record(fx.index, base.query, base.heap,
                                                base.plan));
    //

    Embedding q2 = q;
    for (auto& x : q2) x += static_cast<float>(rng.normal() * 0.05);
    auto unseeded = ivf::make_cursor(fx.index, q2, 6, 5);
    auto seeded = ivf::make_cursor(fx.index, q2, 6, 5);
    const auto probe = probe_cache(cache, 9, seeded.query, 5,
                                   std::numeric_limits<double>::infinity(),
                                   seeded.plan);
    REQUIRE(probe.has_value());
    seeded.heap = ivf::merge_topk(seeded.heap, probe->seed, 5);
    while (!unseeded.done()) ivf::search_step(fx.index, unseeded, 2);
    while (!seeded.done()) ivf::search_step(fx.index, seeded, 2);
    CHECK(seeded.heap == unseeded.heap);
  }
}

TEST_CASE("reorder_clusters applies the three-group priority rule") {
  const std::vector<ClusterId> c_prime = {5, 3, 8, 1};
  const std::set<ClusterId> h_v = {3};
  const std::set<ClusterId> c_v = {3, 8};
  CHECK(reorder_clusters(c_prime, h_v, c_v) ==
        std::vector<ClusterId>{3, 8, 5, 1});
  // Empty hints: unchanged.
  CHECK(reorder_clusters(c_prime, {}, {}) == c_prime);
}

TEST_CASE("reorder_clusters outputs a permutation and keeps group-relative order") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ClusterId> c_prime;
    for (int i = 0; i < 20; ++i)
      c_prime.push_back(static_cast<ClusterId>(rng.uniform_index(1000)));
    std::sort(c_prime.begin(), c_prime.end());
    c_prime.erase(std::unique(c_prime.begin(), c_prime.end()), c_prime.end());
    std::set<ClusterId> h_v, c_v;
    for (ClusterId c : c_prime) {
      const double u = rng.uniform();
      if (u < 0.2) {
        h_v.insert(c);
        c_v.insert(c);
      } else if (u < 0.5) {
        c_v.insert(c);
      }
    }
    const auto out = reorder_clusters(c_prime, h_v, c_v);
    auto sorted_in = c_prime;
    auto sorted_out = out;
    std::sort(sorted_in.begin(), sorted_in.end());
    std::sort(sorted_out.begin(), sorted_out.end());
    CHECK(sorted_in == sorted_out);
    // Group boundaries are monotone: H, then C\H, then rest.
    int phase = 0;
    for (ClusterId c : out) {
      const int g = h_v.count(c) ? 0 : (c_v.count(c) ? 1 : 2);
      CHECK(g >= phase);
      phase = std::max(phase, g);
    }
  }
}

TEST_CASE("reordering the plan never changes the final result (termination off)") {
  Fixture fx;
  Rng rng(8);
  for (int trial = 0; trial < 15; ++trial) {
    const auto q = hedra::test::random_query(rng, 8);
    auto plain = ivf::make_cursor(fx.index, q, 8, 5);
    auto reordered = plain;
    std::set<ClusterId> h_v, c_v;
    for (ClusterId c : plain.plan) {
      if (rng.uniform() < 0.3) h_v.insert(c);
      if (rng.uniform() < 0.5) c_v.insert(c);
    }
    reordered.plan = reorder_clusters(reordered.plan, h_v, c_v);
    while (!plain.done()) ivf::search_step(fx.index, plain, 3);
    while (!reordered.done()) ivf::search_step(fx.index, reordered, 3);
    CHECK(plain.heap == reordered.heap);
  }
}

TEST_CASE("should_terminate fires on the unchanged streak only") {
  ivf::SearchCursor cursor;
  cursor.unchanged_streak = 3;
  CHECK_FALSE(should_terminate(cursor, 4));
  cursor.unchanged_streak = 4;
  CHECK(should_terminate(cursor, 4));
  // Heap changed last cluster: streak is 0.
  cursor.unchanged_streak = 0;
  CHECK_FALSE(should_terminate(cursor, 4));
  CHECK_FALSE(should_terminate(cursor, std::numeric_limits<std::size_t>::max()));
}

TEST_CASE("validate_speculation requires identical id sequences") {
  ivf::TopKResult a(3), b(3), c(3);
  a.insert(1, 0.1);
  a.insert(2, 0.2);
  a.insert(3, 0.3);
  b.insert(1, 0.1);
  b.insert(2, 0.2);
  b.insert(3, 0.3);
  CHECK(validate_speculation(a, b, 3).kind == SpecKind::Valid);
  // Same ids, different order: strict rule says mismatch.
  c.insert(2, 0.1);
  c.insert(1, 0.2);
  c.insert(3, 0.3);
  CHECK(validate_speculation(a, c, 3).kind == SpecKind::Mismatch);
  // Distances may differ; only the id sequence is compared.
  ivf::TopKResult d(3);
  d.insert(1, 0.15);
  d.insert(2, 0.25);
  d.insert(3, 0.35);
  CHECK(validate_speculation(a, d, 3).kind == SpecKind::Valid);
  CHECK(validate_speculation(a, b, 2).compared_k == 2);
}

TEST_CASE("semantic drift is a symmetric distance, zero at identity") {
  const Embedding a = {1.0f, 2.0f, 3.0f};
  const Embedding b = {1.5f, 1.0f, 3.0f};
  CHECK(semantic_drift(a, a) == 0.0);
  CHECK(semantic_drift(a, b) == semantic_drift(b, a));
  CHECK(semantic_drift(a, b) > 0.0);
  CHECK_THROWS_AS(semantic_drift(a, {1.0f}), std::invalid_argument);
}
