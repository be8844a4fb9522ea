#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hedra/bench.hpp"
#include "hedra/scheduler.hpp"
#include "test_support.hpp"

using namespace hedra;
using namespace hedra::sched;

namespace {

// Index with hand-picked uniform cluster sizes on a line; cluster i sits at
// x = 10*i so plans are fully predictable.
ivf::IvfIndex line_index(std::size_t clusters, std::size_t per_cluster) {
  ivf::Corpus corpus;
  corpus.dim = 2;
  ivf::Centroids centroids;
  centroids.dim = 2;
  DocId id = 0;
  for (std::size_t c = 0; c < clusters; ++c) {
    centroids.rows.push_back({static_cast<float>(10.0 * c), 0.0f});
    for (std::size_t i = 0; i < per_cluster; ++i) {
      corpus.data.push_back(static_cast<float>(10.0 * c));
      corpus.data.push_back(static_cast<float>(0.01 * (i + 1)));
      corpus.doc_ids.push_back(id++);
    }
  }
  return ivf::build_index(corpus, centroids, Metric::L2);
}

gen::GenerationScript script_with_tokens(std::uint32_t tokens,
                                         const std::string& text,
                                         Embedding final_embedding) {
  gen::GenerationScript s;
  s.total_tokens = tokens;
  s.output_text = text;
  s.final_embedding = std::move(final_embedding);
  s.prefix_checkpoints = {{0.5, s.final_embedding}, {1.0, s.final_embedding}};
  return s;
}

SchedulerConfig quiet_config(Strategy strategy) {
  SchedulerConfig cfg;
  cfg.strategy = strategy;
  cfg.clock = ClockMode::Virtual;
  cfg.beta_ms = 1.0;
  cfg.gen_latency.base_ms = 2.0;
  cfg.gen_latency.per_seq_ms = 1.0;
  cfg.gen_latency.jitter_sigma = 0.0;
  cfg.ret_cost.per_vector_ns = 10000.0;  // 100-vector cluster = 1 ms
  cfg.ret_cost.fixed_call_us = 500.0;
  cfg.speculation = false;
  cfg.cache_enabled = false;
  return cfg;
}

harness::RequestTrace oneshot_trace(const ivf::IvfIndex& index) {
  harness::RequestTrace trace;
  trace.dim = index.dim;
  harness::TraceRequest r;
  r.id = 0;
  r.arrival_ms = 0.0;
  r.workflow = "oneshot";
  r.input_text = "q-0";
  r.input_embedding = {0.0f, 0.0f};
  r.scripts.push_back(script_with_tokens(10, "a-0", {0.0f, 0.0f}));
  trace.requests.push_back(std::move(r));
  return trace;
}

struct SyntheticSystem {
  ivf::Corpus corpus;
  ivf::IvfIndex index;
  harness::RequestTrace trace;
};

SyntheticSystem synthetic_system(std::size_t n_requests, const std::string& mix) {
  harness::WorkloadSpec spec;
  spec.corpus.n_vectors = 4000;
  spec.corpus.dim = 16;
  spec.corpus.n_topics = 16;
  spec.corpus.topic_spread = 0.25;
  spec.corpus.seed = 11;
  spec.queries.n_requests = n_requests;
  spec.queries.arrival = "poisson";
  spec.queries.rate_per_s = 50.0;
  spec.queries.zipf_s = 1.0;
  spec.queries.drift_delta = 0.3;
  spec.queries.min_tokens = 4;
  spec.queries.max_tokens = 12;
  spec.queries.seed = 17;
  if (mix == "multistep_irg")
    spec.queries.workflow_mix = {{"multistep", 0.5}, {"irg", 0.5}};
  else
    spec.queries.workflow_mix = {{mix, 1.0}};
  SyntheticSystem sys;
  sys.corpus = harness::generate_corpus(spec.corpus);
  const auto centroids = ivf::train_kmeans(sys.corpus, 32, 12, 5);
  sys.index = ivf::build_index(sys.corpus, centroids, Metric::L2);
  sys.trace = harness::generate_workload(spec, sys.corpus);
  return sys;
}

}  // namespace

TEST_CASE("compute_time_budget matches the closed form and its clamps") {
  CHECK(compute_time_budget(100.0, 2.0) == doctest::Approx(20.0));
  // Tiny beta clamps at the minimum budget.
  CHECK(compute_time_budget(100.0, 1e-9, 1.0) == doctest::Approx(1.0));
  // Huge beta clamps at the whole stage.
  CHECK(compute_time_budget(10.0, 1000.0, 1.0) == doctest::Approx(10.0));
  CHECK_THROWS_AS(compute_time_budget(0.0, 1.0), std::invalid_argument);
  // Uncorrected published form degenerates to the smallest budget.
  CHECK(compute_time_budget(100.0, 2.0, 1.0, true) == doctest::Approx(1.0));
}

TEST_CASE("budget closed form agrees with a numeric grid argmax") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const double t_r = rng.uniform(5.0, 500.0);
    const double beta = rng.uniform(0.05, 10.0);
    const double closed = compute_time_budget(t_r, beta, 1e-6);
    // Independent oracle: argmax of (t_r - mb)/2 - (t_r/mb)*beta on a grid.
    double best_mb = 0.0, best_val = -1e300;
    const int grid = 1000;
    for (int i = 1; i <= grid; ++i) {
      const double mb = t_r * i / grid;
      const double val = (t_r - mb) / 2.0 - (t_r / mb) * beta;
      if (val > best_val) {
        best_val = val;
        best_mb = mb;
      }
    }
    CHECK(std::abs(closed - best_mb) <= t_r / grid + 1e-9);
  }
}

TEST_CASE("select_wavefront orders by arrival, request, node") {
  std::vector<WavefrontEntry> ready = {
      {5.0, 2, 1, true}, {1.0, 3, 0, false}, {1.0, 1, 2, true}, {1.0, 1, 0, false}};
  const auto sorted = select_wavefront(ready);
  CHECK(sorted[0].request_id == 1);
  CHECK(sorted[0].node_id == 0);
  CHECK(sorted[1].request_id == 1);
  CHECK(sorted[1].node_id == 2);
  CHECK(sorted[2].request_id == 3);
  CHECK(sorted[3].request_id == 2);
  CHECK(select_wavefront({}).empty());
}

TEST_CASE("plan_substages round-robin fill: 2 requests, 1ms clusters, mb=4") {
  auto index = line_index(8, 100);  // 1 ms per cluster at 10us/vector
  ret::RetrievalCostModel model;
  model.per_vector_ns = 10000.0;
  model.fixed_call_us = 500.0;
  const std::vector<ClusterId> plan_a = {0, 1, 2, 3};
  const std::vector<ClusterId> plan_b = {4, 5, 6, 7};
  std::vector<PlanEntry> entries = {{1, 0, plan_a}, {2, 0, plan_b}};
  const auto batch = plan_substages(entries, 4.0, index, model);
  REQUIRE(batch.items.size() == 2);
  CHECK(batch.items[0].clusters == std::vector<ClusterId>{0, 1});
  CHECK(batch.items[1].clusters == std::vector<ClusterId>{4, 5});
  CHECK(batch.planned_cost_ms == doctest::Approx(4.0));
}

TEST_CASE("plan_substages always admits the first cluster, even oversized") {
  auto index = line_index(2, 1000);  // 10 ms clusters
  ret::RetrievalCostModel model;
  model.per_vector_ns = 10000.0;
  const std::vector<ClusterId> plan = {0, 1};
  std::vector<PlanEntry> entries = {{1, 0, plan}};
  const auto batch = plan_substages(entries, 2.0, index, model);
  REQUIRE(batch.items.size() == 1);
  CHECK(batch.items[0].clusters == std::vector<ClusterId>{0});
  CHECK(batch.planned_cost_ms > 2.0);  // soft bound
}

TEST_CASE("plan_substages cost stays within mb plus one cluster overshoot") {
  Rng rng(9);
  auto index = line_index(16, 50);
  ret::RetrievalCostModel model;
  model.per_vector_ns = 10000.0;  // 0.5 ms per cluster
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<ClusterId>> plans;
    std::vector<PlanEntry> entries;
    const std::size_t n = 1 + rng.uniform_index(4);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<ClusterId> p;
      const std::size_t len = 1 + rng.uniform_index(16);
      for (std::size_t j = 0; j < len; ++j)
        p.push_back(static_cast<ClusterId>(rng.uniform_index(16)));
      plans.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < n; ++i)
      entries.push_back(PlanEntry{static_cast<RequestId>(i), 0, plans[i]});
    // Budget at least covers one cluster per entry.
    const double mb = 0.5 * static_cast<double>(n) + rng.uniform() * 4.0;
    const auto batch = plan_substages(entries, mb, index, model);
    CHECK(batch.planned_cost_ms <= mb + 0.5 + 1e-9);
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(batch.items.size() > i);
      CHECK(batch.items[i].clusters.size() >= 1);
      // Admitted clusters are a prefix of the entry's remaining plan.
      for (std::size_t j = 0; j < batch.items[i].clusters.size(); ++j)
        CHECK(batch.items[i].clusters[j] == plans[i][j]);
    }
  }
}

TEST_CASE("throughput estimate is linear and rejects missing calibration") {
  Calibration calib;
  calib.a_per_request = 100.0;
  calib.b_per_prefill_token = 2.0;
  calib.t_max = 1000.0;
  CHECK(throughput_estimate(0, 0, calib).t_curr == 0.0);
  const auto one = throughput_estimate(3, 50, calib);
  CHECK(one.t_curr == doctest::Approx(3 * 100.0 + 50 * 2.0));
  const auto two = throughput_estimate(6, 50, calib);
  CHECK(two.t_curr - 100.0 * 6 == doctest::Approx(one.t_curr - 100.0 * 3));
  Calibration missing;
  CHECK_THROWS_AS(throughput_estimate(1, 0, missing), std::logic_error);
}

TEST_CASE("calibrated estimate tracks measured step throughput within 30%") {
  gen::GenLatencyModel model;
  model.base_ms = 2.0;
  model.per_seq_ms = 0.2;
  model.jitter_sigma = 0.0;
  const auto calib = bench::calibrate_generation(model);
  CHECK(calib.t_max > 0.0);
  // Serving-range batch sizes; measured = tokens/s of one decode step.
  std::vector<double> errors;
  for (std::size_t n : {6, 8, 10, 12}) {
    gen::GenerationEngine engine(model, 0);
    for (std::size_t i = 0; i < n; ++i)
      engine.submit(static_cast<RequestId>(i), 0, rag::Span{0, 8}, 8, 0, false);
    const auto step = engine.step();
    const double measured = 1000.0 * step.tokens_advanced / step.latency_ms;
    const double estimated = throughput_estimate(n, 0, calib).t_curr;
    errors.push_back(std::abs(estimated - measured) / measured);
  }
  std::sort(errors.begin(), errors.end());
  CHECK(errors[errors.size() / 2] <= 0.30);
}

TEST_CASE("speculation trigger uses strict inequality") {
  ThroughputEstimate est;
  est.t_max = 100.0;
  est.t_curr = 100.0;
  CHECK_FALSE(trigger_speculation(est, 0.8));
  est.t_curr = 0.0;
  CHECK(trigger_speculation(est, 0.8));
  est.t_curr = 80.0;  // ratio exactly tau
  CHECK_FALSE(trigger_speculation(est, 0.8));
  est.t_curr = 79.999;
  CHECK(trigger_speculation(est, 0.8));
}

TEST_CASE("speculative candidate choice is argmin-first and fills to tau") {
  Calibration calib;
  calib.a_per_request = 30.0;
  calib.b_per_prefill_token = 0.0;
  calib.t_max = 100.0;
  std::vector<SpecGenCandidate> gens(2);
  gens[0].request_id = 1;
  gens[0].mean_heap_distance = 0.5;
  gens[1].request_id = 2;
  gens[1].mean_heap_distance = 0.1;
  std::vector<SpecRetrCandidate> retrs(1);
  retrs[0].request_id = 3;
  retrs[0].drift = 0.3;

  ThroughputEstimate est;
  est.t_curr = 10.0;
  est.t_max = 100.0;
  const auto picks = choose_speculative_candidates(gens, retrs, est, 0.8, calib);
  // 10 -> 40 -> 70 -> 100; three picks reach tau.
  REQUIRE(picks.size() == 3);
  CHECK(picks[0].is_gen);
  CHECK(picks[0].index == 1);  // distance 0.1 first
  CHECK_FALSE(picks[1].is_gen);  // drift 0.3 beats distance 0.5
  CHECK(picks[2].is_gen);
  CHECK(picks[2].index == 0);

  // No candidates: empty.
  CHECK(choose_speculative_candidates({}, {}, est, 0.8, calib).empty());

  // Ratio already at tau: nothing picked.
  est.t_curr = 80.0;
  CHECK(choose_speculative_candidates(gens, retrs, est, 0.8, calib).empty());
}

TEST_CASE("single one-shot request: makespan matches the hand schedule") {
  auto index = line_index(4, 100);
  auto trace = oneshot_trace(index);
  auto cfg = quiet_config(Strategy::CoarseSequential);
  cfg.nprobe = 4;
  cfg.topk_override = 3;
  const auto report = run(cfg, trace, index);
  REQUIRE(report.requests_completed == 1);
  // beta + retrieval(4 clusters x 1ms + 0.5 fixed) + beta + prefill(4 tokens
  // x 1ms) + 10 steps x (2 + 1) ms:
  // 1 + 4.5 + 1 + 4 + 30 = 40.5
  CHECK(report.makespan_ms == doctest::Approx(40.5).epsilon(1e-9));
  CHECK(report.per_request[0].latency_ms == doctest::Approx(40.5).epsilon(1e-9));
  // The answer cites the three nearest docs of cluster 0.
  CHECK(report.per_request[0].final_bindings.at("docs") == "[0,1,2]");
  CHECK(report.per_request[0].final_bindings.at("answer") == "a-0");
}

TEST_CASE("virtual-clock runs are bitwise deterministic per seed") {
  auto sys = synthetic_system(12, "multistep_irg");
  auto cfg = quiet_config(Strategy::Hedra);
  cfg.gen_latency.jitter_sigma = 0.3;
  cfg.speculation = true;
  cfg.cache_enabled = true;
  cfg.cache_cfg.capacity_gc = 6;
  cfg.cache_cfg.update_interval = 10;
  cfg.nprobe = 8;
  cfg.seed = 99;
  cfg.calibration = bench::calibrate_generation(cfg.gen_latency);
  const auto a = run(cfg, sys.trace, sys.index);
  const auto b = run(cfg, sys.trace, sys.index);
  CHECK(a.to_json() == b.to_json());
  const auto c = [&] {
    auto cfg2 = cfg;
    cfg2.seed = 100;
    return run(cfg2, sys.trace, sys.index);
  }();
  CHECK(c.to_json() != a.to_json());  // jitter stream moved
}

TEST_CASE("hedra with speculation and cache matches coarse bindings exactly") {
  auto sys = synthetic_system(16, "multistep_irg");

  auto coarse_cfg = quiet_config(Strategy::CoarseSequential);
  coarse_cfg.nprobe = 8;
  const auto coarse = run(coarse_cfg, sys.trace, sys.index);

  auto hedra_cfg = quiet_config(Strategy::Hedra);
  hedra_cfg.nprobe = 8;
  hedra_cfg.speculation = true;
  hedra_cfg.cache_enabled = true;
  hedra_cfg.cache_cfg.capacity_gc = 6;
  hedra_cfg.cache_cfg.update_interval = 5;
  hedra_cfg.tau = 1.0;  // maximally eager speculation
  hedra_cfg.calibration = bench::calibrate_generation(hedra_cfg.gen_latency);
  const auto hedra = run(hedra_cfg, sys.trace, sys.index);

  REQUIRE(coarse.per_request.size() == hedra.per_request.size());
  for (std::size_t i = 0; i < coarse.per_request.size(); ++i) {
    CHECK(coarse.per_request[i].id == hedra.per_request[i].id);
    CHECK(coarse.per_request[i].completed);
    CHECK(hedra.per_request[i].completed);
    CHECK(coarse.per_request[i].final_bindings == hedra.per_request[i].final_bindings);
  }
  CHECK(hedra.spec_gen_launched + hedra.spec_retr_launched > 0);
}

TEST_CASE("naive overlaps workers; coarse never does") {
  auto sys = synthetic_system(10, "hyde");
  auto coarse_cfg = quiet_config(Strategy::CoarseSequential);
  coarse_cfg.nprobe = 8;
  const auto coarse = run(coarse_cfg, sys.trace, sys.index);
  auto naive_cfg = quiet_config(Strategy::NaiveAsync);
  naive_cfg.nprobe = 8;
  const auto naive = run(naive_cfg, sys.trace, sys.index);
  CHECK(naive.makespan_ms < coarse.makespan_ms);
  for (std::size_t i = 0; i < coarse.per_request.size(); ++i)
    CHECK(coarse.per_request[i].final_bindings == naive.per_request[i].final_bindings);
  // Coarse serializes: total busy time never exceeds the makespan.
  CHECK(coarse.gen_busy_ms + coarse.ret_busy_ms <= coarse.makespan_ms + 1e-6);
}

TEST_CASE("early termination reduces clusters searched and is flagged inexact") {
  auto sys = synthetic_system(12, "irg");
  auto exact_cfg = quiet_config(Strategy::Hedra);
  exact_cfg.nprobe = 16;
  const auto exact = run(exact_cfg, sys.trace, sys.index);
  auto approx_cfg = exact_cfg;
  approx_cfg.approx_termination = true;
  approx_cfg.termination_streak = 2;
  const auto approx = run(approx_cfg, sys.trace, sys.index);
  CHECK(approx.mean_clusters_searched < exact.mean_clusters_searched);
}

TEST_CASE("SLO timeouts mark requests failed while the run continues") {
  auto index = line_index(4, 100);
  harness::RequestTrace trace;
  trace.dim = 2;
  for (int i = 0; i < 3; ++i) {
    harness::TraceRequest r;
    r.id = i;
    r.arrival_ms = 0.0;
    r.workflow = "oneshot";
    r.input_text = "q";
    r.input_embedding = {0.0f, 0.0f};
    r.scripts.push_back(script_with_tokens(10, "a", {0.0f, 0.0f}));
    trace.requests.push_back(std::move(r));
  }
  auto cfg = quiet_config(Strategy::CoarseSequential);
  cfg.nprobe = 4;
  cfg.slo_ms = 60.0;  // the third request cannot make it
  const auto report = run(cfg, trace, index);
  CHECK(report.requests_failed >= 1);
  CHECK(report.requests_completed + report.requests_failed == 3);
}

TEST_CASE("live clock smoke run produces a coherent report") {
  auto sys = synthetic_system(4, "oneshot");
  auto cfg = quiet_config(Strategy::Hedra);
  cfg.clock = ClockMode::Live;
  cfg.nprobe = 4;
  cfg.gen_latency.base_ms = 0.5;
  cfg.gen_latency.per_seq_ms = 0.05;
  const auto report = run(cfg, sys.trace, sys.index);
  CHECK(report.clock == "live");
  CHECK(report.requests_completed == 4);
  CHECK(report.makespan_ms > 0.0);
  for (const auto& r : report.per_request) CHECK(r.latency_ms > 0.0);
}
