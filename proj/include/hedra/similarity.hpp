#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "hedra/common.hpp"
#include "hedra/embedding.hpp"
#include "hedra/vector_index.hpp"

namespace hedra::sim {

inline constexpr std::size_t kExtendedTopK = 20;  // K_cache

struct CachedCandidate {
  DocId doc_id = 0;
  ClusterId cluster = 0;
  Embedding vec;
};

// Per-request memory of the most recent retrieval: the extended top-k with
// vectors, the clusters holding those results (H_v) and the searched set (C_v).
struct LocalityRecord {
  Embedding query;
  std::vector<CachedCandidate> candidates;
  std::set<ClusterId> result_clusters;  // H_v
  std::set<ClusterId> searched;         // C_v
};

class LocalityCache {
 public:
  // Replaces any prior record for the request (per-request lifetime).
  void record_search(RequestId request_id, LocalityRecord record);
  const LocalityRecord* find(RequestId request_id) const;
  void evict(RequestId request_id);
  std::size_t size() const { return records_.size(); }

 private:
  std::map<RequestId, LocalityRecord> records_;
};

// Builds a locality record from a finished cursor; candidate vectors are
// copied out of the index so later re-scoring needs no doc lookups.
LocalityRecord make_locality_record(const ivf::IvfIndex& index,
                                    const Embedding& query,
                                    const ivf::TopKResult& extended_topk,
                                    std::span<const ClusterId> searched_plan);

struct ProbeResult {
  ivf::TopKResult seed;                 // exact distances of v' to cached docs
  std::set<ClusterId> result_clusters;  // H_v hint
  std::set<ClusterId> searched;         // C_v hint
};

// Returns a seed heap plus reorder hints when the new query sits within
// delta of the cached one. Seeds are restricted to docs whose cluster is in
// the new search plan, so they warm the heap without ever changing the final
// result.
std::optional<ProbeResult> probe_cache(const LocalityCache& cache,
                                       RequestId request_id,
                                       const Embedding& v_prime, std::size_t k,
                                       double delta,
                                       std::span<const ClusterId> plan);

// Stable three-group partition: H_v first, then C_v \ H_v, then the rest;
// original relative order preserved within each group.
std::vector<ClusterId> reorder_clusters(std::span<const ClusterId> c_prime,
                                        const std::set<ClusterId>& h_v,
                                        const std::set<ClusterId>& c_v);

// Early termination is opt-in; exactness holds only when it stays off.
bool should_terminate(const ivf::SearchCursor& cursor, std::size_t streak_threshold);

enum class SpecKind { Valid, Mismatch };

struct SpeculationOutcome {
  SpecKind kind = SpecKind::Mismatch;
  std::size_t compared_k = 0;
};

// Valid only when the id sequences are identical (same ids, same order).
SpeculationOutcome validate_speculation(const ivf::TopKResult& partial,
                                        const ivf::TopKResult& final_result,
                                        std::size_t k);

// delta_s between consecutive partial-generation embeddings.
double semantic_drift(const Embedding& prev_partial, const Embedding& curr_partial);

}  // namespace hedra::sim
