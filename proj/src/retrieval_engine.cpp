#include "hedra/retrieval_engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <set>
#include <thread>

namespace hedra::ret {

double cluster_variable_ms(const ivf::IvfIndex& index, ClusterId cluster,
                           Lane lane, const RetrievalCostModel& model) {
  if (cluster >= index.k_clusters())
    throw std::invalid_argument("cluster_variable_ms: unknown cluster");
  double ns = static_cast<double>(index.cluster_size(cluster)) * model.per_vector_ns;
  if (lane == Lane::Fast) ns /= model.fast_speedup;
  return ns / 1e6;
}

double estimate_cluster_cost_ms(const ivf::IvfIndex& index, ClusterId cluster,
                                Lane lane, const RetrievalCostModel& model) {
  return cluster_variable_ms(index, cluster, lane, model) + fixed_call_ms(model);
}

void RetrievalEngine::submit(RetrievalTask task) {
  const auto key = std::make_pair(task.request_id, task.node_id);
  if (tasks_.count(key))
    throw std::invalid_argument("submit: duplicate live task for this stage");
  tasks_.emplace(key, std::move(task));
}

bool RetrievalEngine::has_task(RequestId request_id, NodeId node_id) const {
  return tasks_.count({request_id, node_id}) > 0;
}

const RetrievalTask* RetrievalEngine::find(RequestId request_id,
                                           NodeId node_id) const {
  auto it = tasks_.find({request_id, node_id});
  return it == tasks_.end() ? nullptr : &it->second;
}

RetrievalTask RetrievalEngine::extract(RequestId request_id, NodeId node_id) {
  auto it = tasks_.find({request_id, node_id});
  if (it == tasks_.end())
    throw std::invalid_argument("extract: no live task for this stage");
  RetrievalTask task = std::move(it->second);
  tasks_.erase(it);
  return task;
}

bool RetrievalEngine::cancel(RequestId request_id, NodeId node_id) {
  return tasks_.erase({request_id, node_id}) > 0;
}

RetStepReport RetrievalEngine::execute(SubStageBatch& batch, double now_ms,
                                       bool live_math) {
  RetStepReport report;
  if (batch.items.empty()) return report;

  cache_.complete_swaps(now_ms);

  // Lane partition is decided once per sub-stage over all target clusters.
  std::vector<ClusterId> all_clusters;
  for (const auto& item : batch.items)
    all_clusters.insert(all_clusters.end(), item.clusters.begin(),
                        item.clusters.end());
  const auto partition = cache_.partition_batch(all_clusters);
  std::set<ClusterId> fast_set(partition.fast.begin(), partition.fast.end());
  cache_.count_access_hits(all_clusters);

  double slow_ns = 0.0, fast_ns = 0.0;
  for (auto& item : batch.items) {
    item.fast.clear();
    item.slow.clear();
    for (ClusterId c : item.clusters) {
      const double ns =
          static_cast<double>(index_->cluster_size(c)) * model_.per_vector_ns;
      if (fast_set.count(c)) {
        item.fast.push_back(c);
        fast_ns += ns / model_.fast_speedup;
        ++report.fast_clusters;
      } else {
        item.slow.push_back(c);
        slow_ns += ns;
        ++report.slow_clusters;
      }
    }
  }
  report.slow_lane_ms = slow_ns / 1e6;
  report.fast_lane_ms = fast_ns / 1e6;
  report.modeled_ms =
      std::max(report.slow_lane_ms, report.fast_lane_ms) + fixed_call_ms(model_);

  std::vector<char> item_changed(batch.items.size(), 0);
  const auto run_item = [&](std::size_t idx) {
    auto& item = batch.items[idx];
    auto it = tasks_.find({item.request_id, item.node_id});
    if (it == tasks_.end())
      throw std::runtime_error("execute: batch references unknown task");
    // Exact same math on both lanes; only billed time differs.
    const auto step = ivf::search_clusters(*index_, it->second.cursor, item.clusters);
    item_changed[idx] = step.heap_changed ? 1 : 0;
  };

  const auto wall_start = std::chrono::steady_clock::now();
  if (live_math && batch.items.size() > 1) {
    const std::size_t workers =
        std::min<std::size_t>(batch.items.size(),
                              std::max(1u, std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next.fetch_add(1); i < batch.items.size();
               i = next.fetch_add(1))
            run_item(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t i = 0; i < batch.items.size(); ++i) run_item(i);
  }
  report.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - wall_start)
                       .count();

  // Deltas in batch order; deterministic because the batch is.
  std::set<ClusterId> accessed;
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    const auto& item = batch.items[i];
    const auto& task = tasks_.at({item.request_id, item.node_id});
    TaskDelta delta;
    delta.request_id = item.request_id;
    delta.node_id = item.node_id;
    delta.clusters_searched = item.clusters.size();
    delta.heap_changed = item_changed[i] != 0;
    delta.completed = task.cursor.done();
    report.deltas.push_back(delta);
    accessed.insert(item.clusters.begin(), item.clusters.end());
  }
  std::vector<ClusterId> accessed_list(accessed.begin(), accessed.end());
  cache_.record_access(accessed_list);
  report.swaps_started = cache_.maybe_update(now_ms, *index_);
  return report;
}

}  // namespace hedra::ret
