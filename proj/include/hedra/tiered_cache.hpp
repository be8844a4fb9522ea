#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hedra/common.hpp"
#include "hedra/vector_index.hpp"

namespace hedra::cache {

struct CacheConfig {
  std::size_t capacity_gc = 0;  // 0 disables the fast tier
  int update_interval = 50;     // sub-stages between cache updates
  double transfer_bandwidth_gb_s = 16.0;
  double decay = 0.5;  // counter aging applied at each update
  std::size_t min_fast_clusters = 2;
};

struct SwapOp {
  ClusterId cluster = 0;
  bool inbound = false;
  double completes_at_ms = 0.0;
};

struct LanePartition {
  std::vector<ClusterId> fast;
  std::vector<ClusterId> slow;
};

// Fast-tier residency set with frequency tracking and interval-based
// asynchronous swaps. Swaps ride a separate transfer timeline and never
// block a search step; a cluster mid-swap counts as non-resident.
class ClusterCacheState {
 public:
  explicit ClusterCacheState(CacheConfig cfg) : cfg_(cfg) {}

  const CacheConfig& config() const { return cfg_; }

  // One sub-stage worth of accesses; duplicate ids within the call count once.
  void record_access(std::span<const ClusterId> cluster_ids);

  // No-op until update_interval sub-stages have accumulated. Emits the swap
  // plan toward the top-gc target set (frequency desc, then ascending id).
  // Deferred while earlier swaps are still in flight.
  std::vector<SwapOp> maybe_update(double now_ms, const ivf::IvfIndex& index);

  // Publishes inbound swaps that completed by now; call at step boundaries.
  void complete_swaps(double now_ms);

  // fast = resident clusters (in-flight excluded); the fast lane only engages
  // when it would receive at least min_fast_clusters distinct clusters.
  LanePartition partition_batch(std::span<const ClusterId> clusters) const;

  bool resident(ClusterId c) const { return resident_.count(c) > 0; }
  std::size_t resident_count() const { return resident_.size(); }
  const std::map<ClusterId, double>& frequencies() const { return freq_; }
  int substages_since_update() const { return substages_since_update_; }

  // Residency hit accounting (independent of the lane-engagement threshold).
  void count_access_hits(std::span<const ClusterId> clusters);
  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  void reset_hit_stats() { hits_ = misses_ = 0; }
  std::uint64_t swap_count() const { return swap_count_; }

 private:
  CacheConfig cfg_;
  std::set<ClusterId> resident_;
  std::vector<SwapOp> in_flight_;
  std::map<ClusterId, double> freq_;
  int substages_since_update_ = 0;
  double transfer_free_at_ms_ = 0.0;
  std::uint64_t hits_ = 0, misses_ = 0, swap_count_ = 0;
};

// Offline throughput characterization used by the memory-budget solver.
struct ThroughputProfile {
  struct GenPoint {
    double kv_bytes = 0.0;
    double rps = 0.0;
    double throughput = 0.0;
  };
  struct RetPoint {
    double rps = 0.0;
    double throughput = 0.0;
  };
  std::vector<GenPoint> gen;
  std::vector<RetPoint> ret;
  double cluster_bytes = 0.0;

  void save_csv(const std::string& path) const;
  static ThroughputProfile load_csv(const std::string& path);
};

struct BudgetResult {
  double kv_size_bytes = 0.0;
  double cache_bytes = 0.0;
  std::size_t capacity_gc = 0;
};

// Picks the KV allocation maximizing min(T_G(kv, rps_G), T_R(rps_R)) over the
// profiled kv grid (nearest-neighbor rps lookup). Among maximizers the
// smallest kv wins: the freed memory only helps the retrieval cache.
BudgetResult solve_memory_budget(const ThroughputProfile& profile, double rps_g,
                                 double rps_r, double total_mem_bytes,
                                 double model_bytes);

}  // namespace hedra::cache
