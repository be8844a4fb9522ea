#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hedra/common.hpp"
#include "hedra/generation_engine.hpp"
#include "hedra/raggraph.hpp"
#include "hedra/report.hpp"
#include "hedra/retrieval_engine.hpp"
#include "hedra/similarity.hpp"
#include "hedra/tiered_cache.hpp"
#include "hedra/vector_index.hpp"
#include "hedra/workload.hpp"

namespace hedra::sched {

enum class Strategy { CoarseSequential, NaiveAsync, Hedra };
enum class ClockMode { Live, Virtual };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

// Fitted linear throughput model from the bench subcommand.
struct Calibration {
  double a_per_request = 0.0;
  double b_per_prefill_token = 0.0;
  double t_max = 0.0;

  bool valid() const { return t_max > 0.0; }
  void save(const std::string& path) const;
  static Calibration load(const std::string& path);
};

struct ThroughputEstimate {
  double t_curr = 0.0;
  double t_max = 0.0;
  double ratio() const { return t_curr / t_max; }
};

struct SchedulerConfig {
  Strategy strategy = Strategy::Hedra;
  ClockMode clock = ClockMode::Virtual;
  double beta_ms = 1.0;
  double tau = 0.8;
  std::optional<double> mb_override_ms;
  double min_budget_ms = 1.0;
  std::size_t nprobe = 32;
  std::optional<int> topk_override;
  bool speculation = true;
  bool cache_enabled = true;
  bool approx_termination = false;
  std::size_t termination_streak = 4;
  double slo_ms = 10000.0;
  std::uint64_t seed = 0;
  double locality_delta_scale = 0.8;  // delta = scale * mean assigned distance
  std::size_t k_cache = sim::kExtendedTopK;
  bool locality_reuse = true;         // probe/seed/reorder from the locality cache
  bool collect_observations = false;  // exact side-measurement, costs extra math
  bool eq1_printed_form = false;      // budget from the uncorrected formula
  gen::GenLatencyModel gen_latency;
  ret::RetrievalCostModel ret_cost;
  cache::CacheConfig cache_cfg;
  Calibration calibration;
  double ewma_alpha = 0.2;
};

// Sub-stage time budget: the interior argmax of the expected latency
// improvement (t_R - mb)/2 - (t_R/mb)·beta, i.e. sqrt(2·beta·t_R), clamped to
// (min_budget, t_R]. The uncorrected published form keeps the overhead term
// additive, which degenerates to the smallest budget; it is available behind
// printed_form for comparison runs.
double compute_time_budget(double t_retrieval_ms, double beta_ms,
                           double min_budget_ms = 1.0,
                           bool printed_form = false);

ThroughputEstimate throughput_estimate(std::size_t active_requests,
                                       std::uint64_t prefill_tokens,
                                       const Calibration& calibration);

// Strict inequality: equality at the threshold does not trigger.
bool trigger_speculation(const ThroughputEstimate& estimate, double tau);

struct WavefrontEntry {
  double arrival_ms = 0.0;
  RequestId request_id = 0;
  NodeId node_id = 0;
  bool is_retrieval = false;

  bool operator==(const WavefrontEntry&) const = default;
};

// Deterministic order: (arrival_time, request_id, node_id).
std::vector<WavefrontEntry> select_wavefront(std::vector<WavefrontEntry> ready);

struct PlanEntry {
  RequestId request_id = 0;
  NodeId node_id = 0;
  std::span<const ClusterId> remaining;
};

// Round-robin budget fill over the wavefront's retrieval entries. Each entry
// always receives its first cluster; further clusters are admitted while the
// planned cost (slow-lane variable estimates) stays within mb.
ret::SubStageBatch plan_substages(std::span<const PlanEntry> entries,
                                  double mb_ms, const ivf::IvfIndex& index,
                                  const ret::RetrievalCostModel& model);

struct SpecGenCandidate {
  RequestId request_id = 0;
  NodeId retrieval_node = 0;
  NodeId gen_node = 0;
  double mean_heap_distance = 0.0;
  std::uint32_t prompt_tokens = 0;
};

struct SpecRetrCandidate {
  RequestId request_id = 0;
  NodeId gen_node = 0;
  NodeId retrieval_node = 0;
  double drift = 0.0;  // delta_s
};

struct SpecPick {
  bool is_gen = false;
  std::size_t index = 0;  // into the respective candidate list
};

// Greedy fill: repeatedly take the best candidate (spec-gen by minimal mean
// heap distance, spec-retr by minimal drift; spec-gen wins metric ties) and
// charge its load onto the estimate until the ratio reaches tau.
std::vector<SpecPick> choose_speculative_candidates(
    std::span<const SpecGenCandidate> gen_candidates,
    std::span<const SpecRetrCandidate> retr_candidates,
    ThroughputEstimate estimate, double tau, const Calibration& calibration);

// Executes the workload to completion (or SLO timeout) under the configured
// strategy and clock. Workflows resolve per request from its template name.
harness::ExperimentReport run(const SchedulerConfig& config,
                              const harness::RequestTrace& trace,
                              const ivf::IvfIndex& index,
                              harness::TraceSink* trace_sink = nullptr);

}  // namespace hedra::sched
