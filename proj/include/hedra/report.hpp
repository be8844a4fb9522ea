#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hedra/common.hpp"

namespace hedra::harness {

struct RequestOutcome {
  RequestId id = 0;
  bool completed = false;  // false: SLO timeout
  double latency_ms = 0.0;
  std::string workflow;
  std::map<std::string, std::string> final_bindings;  // text values at END
};

struct StageBreakdown {
  std::uint64_t count = 0;
  double total_ms = 0.0;
};

struct ExperimentReport {
  std::string strategy;
  std::string clock;
  std::uint64_t seed = 0;

  std::size_t requests_admitted = 0;
  std::size_t requests_completed = 0;
  std::size_t requests_failed = 0;
  double makespan_ms = 0.0;
  double throughput_rps = 0.0;

  double latency_mean_ms = 0.0;
  double latency_p50_ms = 0.0;
  double latency_p95_ms = 0.0;
  double latency_p99_ms = 0.0;
  std::vector<RequestOutcome> per_request;

  std::uint64_t spec_gen_launched = 0;
  std::uint64_t spec_retr_launched = 0;
  std::uint64_t spec_valid = 0;
  std::uint64_t spec_mismatch = 0;
  std::uint64_t rollbacks = 0;
  std::optional<double> speculation_accuracy;  // valid / (valid + mismatch)

  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t cache_swaps = 0;
  std::optional<double> cache_hit_rate;

  double slow_lane_ms = 0.0;
  double fast_lane_ms = 0.0;
  double gen_busy_ms = 0.0;
  double ret_busy_ms = 0.0;
  double gen_idle_fraction = 0.0;
  double ret_idle_fraction = 0.0;

  std::uint64_t retrieval_stages = 0;
  double mean_clusters_searched = 0.0;
  std::uint64_t probe_hits = 0;
  std::uint64_t probe_attempts = 0;

  // Intra-request locality observation rates over consecutive retrieval
  // pairs (result containment in the extended top-k / H_v / C ∩ C').
  std::uint64_t observation_pairs = 0;
  double obs1_rate = 0.0;
  double obs2_rate = 0.0;
  double obs3_rate = 0.0;

  std::map<std::string, StageBreakdown> stage_breakdown;

  std::string to_json() const;
  static ExperimentReport from_json(const std::string& text);
  void save(const std::string& path) const;
  static ExperimentReport load(const std::string& path);
};

// Computes mean/percentile fields from per_request and busy/makespan ratios.
void finalize_report(ExperimentReport& report);

struct TraceEvent {
  double t_ms = 0.0;
  std::string worker;  // "gen", "ret", "sched"
  RequestId request_id = 0;
  NodeId node_id = 0;
  std::int64_t subnode = -1;
  std::string event;
  double duration_ms = 0.0;
};

// Per-event JSON-lines sink for external timeline plotting.
class TraceSink {
 public:
  void emit(TraceEvent event) { events_.push_back(std::move(event)); }
  const std::vector<TraceEvent>& events() const { return events_; }
  void save_jsonl(const std::string& path) const;
  static std::vector<TraceEvent> load_jsonl(const std::string& path);

 private:
  std::vector<TraceEvent> events_;
};

}  // namespace hedra::harness
