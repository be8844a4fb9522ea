#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hedra/common.hpp"
#include "hedra/embedding.hpp"

namespace hedra::ivf {

// In-memory corpus: row-major single-width vectors plus document ids.
struct Corpus {
  std::uint32_t dim = 0;
  Metric metric = Metric::L2;
  std::vector<float> data;     // count * dim, row-major
  std::vector<DocId> doc_ids;  // count

  std::size_t size() const { return doc_ids.size(); }
  const float* row(std::size_t i) const { return data.data() + i * dim; }
  Embedding embedding(std::size_t i) const {
    return Embedding(row(i), row(i) + dim);
  }
};

struct Centroids {
  std::uint32_t dim = 0;
  std::vector<std::vector<float>> rows;

  std::size_t k_clusters() const { return rows.size(); }
};

struct TopKEntry {
  DocId doc_id = 0;
  double distance = 0.0;
};

inline bool topk_less(const TopKEntry& a, const TopKEntry& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.doc_id < b.doc_id;
}

// Bounded result set ordered by (distance, doc_id) ascending. Duplicate doc
// ids collapse to the minimum distance.
class TopKResult {
 public:
  TopKResult() = default;
  explicit TopKResult(std::size_t k) : k_(k) {}

  std::size_t k() const { return k_; }
  void set_k(std::size_t k);

  // Returns true when the entry set changed.
  bool insert(DocId doc_id, double distance);

  const std::vector<TopKEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  TopKResult truncated(std::size_t k) const;
  std::vector<DocId> doc_ids() const;

  bool operator==(const TopKResult& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].doc_id != other.entries_[i].doc_id ||
          entries_[i].distance != other.entries_[i].distance)
        return false;
    }
    return true;
  }

 private:
  std::size_t k_ = 0;
  std::vector<TopKEntry> entries_;  // sorted, size <= k_
};

TopKResult merge_topk(const TopKResult& a, const TopKResult& b, std::size_t k);

struct IvfIndex {
  Centroids centroids;
  Metric metric = Metric::L2;
  std::uint32_t dim = 0;
  // Inverted lists, one per cluster.
  std::vector<std::vector<DocId>> list_ids;
  std::vector<std::vector<float>> list_vectors;  // flat, dim-major per cluster

  std::size_t k_clusters() const { return list_ids.size(); }
  std::size_t cluster_size(ClusterId c) const { return list_ids[c].size(); }
  std::size_t total_vectors() const;
  // Mean distance of corpus vectors to their assigned centroid; basis for the
  // locality-cache admission threshold.
  double mean_assigned_distance = 0.0;

  struct DocLocation {
    ClusterId cluster = 0;
    std::uint32_t offset = 0;  // position within the inverted list
  };
  std::unordered_map<DocId, DocLocation> locator;

  std::optional<DocLocation> locate(DocId id) const {
    auto it = locator.find(id);
    if (it == locator.end()) return std::nullopt;
    return it->second;
  }
  Embedding doc_embedding(DocLocation loc) const {
    const float* base = list_vectors[loc.cluster].data() + std::size_t(loc.offset) * dim;
    return Embedding(base, base + dim);
  }
};

// Resumable per-query search state. Single-owner; the plan never changes
// length, only order (reordering happens before or between steps on the
// not-yet-searched suffix).
struct SearchCursor {
  Embedding query;
  std::vector<ClusterId> plan;  // duplicate-free, length nprobe
  std::size_t next_pos = 0;
  TopKResult heap;
  std::size_t k = 0;
  std::size_t clusters_searched = 0;
  std::size_t unchanged_streak = 0;

  bool done() const { return next_pos >= plan.size(); }
  std::size_t remaining() const { return plan.size() - next_pos; }
};

struct SearchStepReport {
  std::vector<ClusterId> searched;
  bool heap_changed = false;
};

Centroids train_kmeans(const Corpus& corpus, std::size_t k_clusters,
                       std::size_t max_iters, std::uint64_t seed);

IvfIndex build_index(const Corpus& corpus, const Centroids& centroids,
                     Metric metric);

std::vector<ClusterId> select_clusters(const IvfIndex& index,
                                       const Embedding& query,
                                       std::size_t nprobe);

SearchCursor make_cursor(const IvfIndex& index, const Embedding& query,
                         std::size_t nprobe, std::size_t k);

// Scans up to cluster_budget clusters from the cursor plan, exact distances
// against every vector in them. An exhausted cursor is a no-op.
SearchStepReport search_step(const IvfIndex& index, SearchCursor& cursor,
                             std::size_t cluster_budget);

// Scans exactly the given clusters, which must be the next entries of the
// cursor plan in order. Scheduler-facing variant of search_step.
SearchStepReport search_clusters(const IvfIndex& index, SearchCursor& cursor,
                                 std::span<const ClusterId> clusters);

TopKResult brute_force_search(const Corpus& corpus, const Embedding& query,
                              std::size_t k);

// --- Persistence -----------------------------------------------------------
// Vector file: magic "HVEC", version u32, dim u32, count u64, metric u8,
// then count*dim float32 row-major, then count u64 doc ids (when with_ids).
// An index on disk is corpus file + centroid file (same layout, no ids) +
// assignment file (count u32 cluster ids). Little-endian throughout.

void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);
void save_centroids(const std::string& path, const Centroids& centroids,
                    Metric metric);
Centroids load_centroids(const std::string& path);
void save_assignments(const std::string& path,
                      const std::vector<ClusterId>& assign);
std::vector<ClusterId> load_assignments(const std::string& path);

std::vector<ClusterId> compute_assignments(const Corpus& corpus,
                                           const Centroids& centroids);
IvfIndex index_from_assignments(const Corpus& corpus,
                                const Centroids& centroids, Metric metric,
                                const std::vector<ClusterId>& assign);

}  // namespace hedra::ivf
