#include "hedra/similarity.hpp"

#include <algorithm>

namespace hedra::sim {

void LocalityCache::record_search(RequestId request_id, LocalityRecord record) {
  records_[request_id] = std::move(record);
}

const LocalityRecord* LocalityCache::find(RequestId request_id) const {
  auto it = records_.find(request_id);
  return it == records_.end() ? nullptr : &it->second;
}

void LocalityCache::evict(RequestId request_id) { records_.erase(request_id); }

LocalityRecord make_locality_record(const ivf::IvfIndex& index,
                                    const Embedding& query,
                                    const ivf::TopKResult& extended_topk,
                                    std::span<const ClusterId> searched_plan) {
  LocalityRecord record;
  record.query = query;
  record.searched.insert(searched_plan.begin(), searched_plan.end());
  for (const auto& entry : extended_topk.entries()) {
    const auto loc = index.locate(entry.doc_id);
    if (!loc) throw std::invalid_argument("make_locality_record: unknown doc id");
    record.candidates.push_back(
        CachedCandidate{entry.doc_id, loc->cluster, index.doc_embedding(*loc)});
    record.result_clusters.insert(loc->cluster);
  }
  return record;
}

std::optional<ProbeResult> probe_cache(const LocalityCache& cache,
                                       RequestId request_id,
                                       const Embedding& v_prime, std::size_t k,
                                       double delta,
                                       std::span<const ClusterId> plan) {
  const LocalityRecord* record = cache.find(request_id);
  if (!record) return std::nullopt;
  if (record->query.size() != v_prime.size()) return std::nullopt;
  if (embedding_distance(record->query, v_prime) > delta) return std::nullopt;

  std::set<ClusterId> plan_set(plan.begin(), plan.end());
  ProbeResult out;
  out.seed.set_k(k);
  for (const auto& cand : record->candidates) {
    if (!plan_set.count(cand.cluster)) continue;  // keep seeds result-neutral
    out.seed.insert(cand.doc_id, embedding_distance(v_prime, cand.vec));
  }
  out.result_clusters = record->result_clusters;
  out.searched = record->searched;
  return out;
}

std::vector<ClusterId> reorder_clusters(std::span<const ClusterId> c_prime,
                                        const std::set<ClusterId>& h_v,
                                        const std::set<ClusterId>& c_v) {
  std::vector<ClusterId> first, second, rest;
  for (ClusterId c : c_prime) {
    if (h_v.count(c))
      first.push_back(c);
    else if (c_v.count(c))
      second.push_back(c);
    else
      rest.push_back(c);
  }
  first.insert(first.end(), second.begin(), second.end());
  first.insert(first.end(), rest.begin(), rest.end());
  return first;
}

bool should_terminate(const ivf::SearchCursor& cursor,
                      std::size_t streak_threshold) {
  return cursor.unchanged_streak >= streak_threshold;
}

SpeculationOutcome validate_speculation(const ivf::TopKResult& partial,
                                        const ivf::TopKResult& final_result,
                                        std::size_t k) {
  SpeculationOutcome outcome;
  outcome.compared_k = k;
  const auto a = partial.truncated(k).doc_ids();
  const auto b = final_result.truncated(k).doc_ids();
  outcome.kind = a == b ? SpecKind::Valid : SpecKind::Mismatch;
  return outcome;
}

double semantic_drift(const Embedding& prev_partial,
                      const Embedding& curr_partial) {
  return embedding_distance(prev_partial, curr_partial);
}

}  // namespace hedra::sim
