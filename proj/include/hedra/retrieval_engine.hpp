#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "hedra/common.hpp"
#include "hedra/tiered_cache.hpp"
#include "hedra/vector_index.hpp"

namespace hedra::ret {

enum class TaskOrigin { Normal, SpeculativeRetrieval };

struct RetrievalTask {
  RequestId request_id = 0;
  NodeId node_id = 0;
  ivf::SearchCursor cursor;
  TaskOrigin origin = TaskOrigin::Normal;
};

struct RetrievalCostModel {
  double per_vector_ns = 2000.0;  // slow lane
  double fast_speedup = 8.0;
  double fixed_call_us = 50.0;
};

enum class Lane { Slow, Fast };

// Size-proportional per-cluster estimate including the per-call floor; an
// empty cluster costs the fixed-call share alone.
double estimate_cluster_cost_ms(const ivf::IvfIndex& index, ClusterId cluster,
                                Lane lane, const RetrievalCostModel& model);
// Variable part only, for incremental budget filling.
double cluster_variable_ms(const ivf::IvfIndex& index, ClusterId cluster,
                           Lane lane, const RetrievalCostModel& model);
inline double fixed_call_ms(const RetrievalCostModel& model) {
  return model.fixed_call_us / 1000.0;
}

// One sub-stage of batched cluster search across requests.
struct BatchItem {
  RequestId request_id = 0;
  NodeId node_id = 0;
  std::vector<ClusterId> clusters;  // next entries of the task's plan, in order
  // Filled at execution from cache residency; fast ∪ slow = clusters.
  std::vector<ClusterId> fast;
  std::vector<ClusterId> slow;
};

struct SubStageBatch {
  std::vector<BatchItem> items;
  double planned_cost_ms = 0.0;
};

struct TaskDelta {
  RequestId request_id = 0;
  NodeId node_id = 0;
  std::size_t clusters_searched = 0;
  bool heap_changed = false;
  bool completed = false;
};

struct RetStepReport {
  double modeled_ms = 0.0;  // max(slow lane, fast lane) + fixed call
  double wall_ms = 0.0;     // live mode only
  double slow_lane_ms = 0.0;
  double fast_lane_ms = 0.0;
  std::size_t fast_clusters = 0;
  std::size_t slow_clusters = 0;
  std::vector<TaskDelta> deltas;
  std::vector<cache::SwapOp> swaps_started;
};

// Step-wise retrieval worker: owns the live cursors and the fast-tier cache
// state. One live task per (request, parent node). Single worker context;
// within a live-mode step the items may fan out to helper threads, but the
// report order is fixed by batch order.
class RetrievalEngine {
 public:
  RetrievalEngine(const ivf::IvfIndex* index, RetrievalCostModel model,
                  cache::CacheConfig cache_cfg)
      : index_(index), model_(model), cache_(cache_cfg) {}

  void submit(RetrievalTask task);
  bool has_task(RequestId request_id, NodeId node_id) const;
  const RetrievalTask* find(RequestId request_id, NodeId node_id) const;
  std::size_t task_count() const { return tasks_.size(); }

  // Removes and returns the task (for completion or early termination).
  RetrievalTask extract(RequestId request_id, NodeId node_id);
  bool cancel(RequestId request_id, NodeId node_id);

  // Executes one sub-stage. Cache residency partitions each item's clusters;
  // the math is identical on both lanes. live_math toggles parallel real
  // execution and wallclock measurement.
  RetStepReport execute(SubStageBatch& batch, double now_ms, bool live_math);

  cache::ClusterCacheState& cache_state() { return cache_; }
  const cache::ClusterCacheState& cache_state() const { return cache_; }
  const RetrievalCostModel& cost_model() const { return model_; }
  const ivf::IvfIndex& index() const { return *index_; }

 private:
  const ivf::IvfIndex* index_;
  RetrievalCostModel model_;
  cache::ClusterCacheState cache_;
  std::map<std::pair<RequestId, NodeId>, RetrievalTask> tasks_;
};

}  // namespace hedra::ret
