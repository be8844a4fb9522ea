#include "hedra/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace hedra::bench {

sched::Calibration calibrate_generation(const gen::GenLatencyModel& model,
                                        std::size_t max_batch) {
  gen::GenLatencyModel quiet = model;
  quiet.jitter_sigma = 0.0;  // calibrate on the expectation

  struct Sample {
    double n, p, y;
  };
  std::vector<Sample> samples;
  const std::vector<std::uint32_t> prefills = {0, 32, 128};
  for (std::size_t n = 1; n <= max_batch; n = n < 4 ? n + 1 : n * 2) {
    for (std::uint32_t prefill : prefills) {
      gen::GenerationEngine engine(quiet, 0);
      for (std::size_t i = 0; i < n; ++i)
        engine.submit(static_cast<RequestId>(i), 0, rag::Span{0, 64}, 64,
                      i == 0 ? prefill : 0, false);
      // Steady-state step throughput: tokens processed per second, counting
      // prefill work on the joining step.
      const auto first = engine.step();
      const double tokens = static_cast<double>(first.tokens_advanced + prefill);
      samples.push_back(Sample{static_cast<double>(n),
                               static_cast<double>(prefill),
                               1000.0 * tokens / first.latency_ms});
    }
  }
  // Two-stage fit through the origin: the request coefficient comes from the
  // pure-decode rows, the prefill coefficient from the residuals of the rest.
  double snn = 0, sny = 0;
  for (const auto& s : samples) {
    if (s.p != 0.0) continue;
    snn += s.n * s.n;
    sny += s.n * s.y;
  }
  sched::Calibration calib;
  calib.a_per_request = snn > 0.0 ? sny / snn : 0.0;
  double spp = 0, spr = 0;
  for (const auto& s : samples) {
    if (s.p == 0.0) continue;
    spp += s.p * s.p;
    spr += s.p * (s.y - calib.a_per_request * s.n);
  }
  calib.b_per_prefill_token = spp > 0.0 ? spr / spp : 0.0;
  // Peak throughput at the largest profiled batch.
  {
    gen::GenerationEngine engine(quiet, 0);
    for (std::size_t i = 0; i < max_batch * 4; ++i)
      engine.submit(static_cast<RequestId>(i), 0, rag::Span{0, 64}, 64, 0, false);
    const auto step = engine.step();
    calib.t_max = 1000.0 * static_cast<double>(step.tokens_advanced) / step.latency_ms;
  }
  return calib;
}

cache::ThroughputProfile build_profile(const gen::GenLatencyModel& gen_model,
                                       const ret::RetrievalCostModel& ret_model,
                                       const ivf::IvfIndex& index,
                                       const ProfileOptions& options) {
  ProfileOptions opts = options;
  if (opts.kv_bytes_grid.empty())
    opts.kv_bytes_grid = {1e6, 2e6, 4e6, 8e6, 16e6};
  if (opts.rps_grid.empty()) opts.rps_grid = {2.0, 5.0, 10.0, 20.0, 50.0};

  gen::GenLatencyModel quiet = gen_model;
  quiet.jitter_sigma = 0.0;

  cache::ThroughputProfile profile;
  double total_bytes = 0.0;
  for (std::size_t c = 0; c < index.k_clusters(); ++c)
    total_bytes += static_cast<double>(index.cluster_size(c)) * index.dim * sizeof(float);
  profile.cluster_bytes =
      index.k_clusters() ? total_bytes / static_cast<double>(index.k_clusters()) : 0.0;

  // T_G: closed-loop decode with the batch capped by the KV allocation.
  for (double kv : opts.kv_bytes_grid) {
    const std::size_t cap = std::max<std::size_t>(
        1, static_cast<std::size_t>(kv / opts.kv_bytes_per_seq));
    for (double rps : opts.rps_grid) {
      gen::GenerationEngine engine(quiet, 0);
      const double interval_ms = 1000.0 / rps;
      double now = 0.0;
      std::size_t arrived = 0, completed = 0, active = 0;
      std::size_t queued = 0, submitted = 0;
      double completion_time = 0.0;
      while (completed < opts.sim_requests) {
        while (arrived < opts.sim_requests && arrived * interval_ms <= now) {
          ++queued;
          ++arrived;
        }
        while (queued > 0 && active < cap) {
          engine.submit(static_cast<RequestId>(submitted++), 0,
                        rag::Span{0, opts.tokens_per_request},
                        opts.tokens_per_request, 0, false);
          --queued;
          ++active;
        }
        if (!engine.has_work()) {
          now = static_cast<double>(arrived) * interval_ms;
          continue;
        }
        const auto step = engine.step();
        now += step.latency_ms;
        completed += step.completed.size();
        active -= step.completed.size();
        completion_time = now;
      }
      profile.gen.push_back(cache::ThroughputProfile::GenPoint{
          kv, rps, 1000.0 * static_cast<double>(completed) / completion_time});
    }
  }

  // T_R: single retrieval worker saturates at the mean whole-plan cost.
  double mean_plan_ms = ret::fixed_call_ms(ret_model);
  {
    double mean_cluster = 0.0;
    for (std::size_t c = 0; c < index.k_clusters(); ++c)
      mean_cluster +=
          ret::cluster_variable_ms(index, static_cast<ClusterId>(c), ret::Lane::Slow, ret_model);
    mean_cluster /= std::max<std::size_t>(1, index.k_clusters());
    mean_plan_ms += mean_cluster * static_cast<double>(
                        std::min(opts.nprobe, index.k_clusters()));
  }
  for (double rps : opts.rps_grid) {
    const double capacity = 1000.0 / mean_plan_ms;
    profile.ret.push_back(
        cache::ThroughputProfile::RetPoint{rps, std::min(rps, capacity)});
  }
  return profile;
}

double measure_per_vector_ns(const ivf::IvfIndex& index, std::size_t repeats) {
  if (index.total_vectors() == 0)
    throw std::invalid_argument("measure_per_vector_ns: empty index");
  Embedding query(index.dim, 0.25f);
  std::vector<double> runs;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    double sink = 0.0;
    std::size_t scanned = 0;
    for (std::size_t c = 0; c < index.k_clusters(); ++c) {
      const auto& vecs = index.list_vectors[c];
      const std::size_t n = index.cluster_size(static_cast<ClusterId>(c));
      for (std::size_t i = 0; i < n; ++i)
        sink += squared_l2(query.data(), vecs.data() + i * index.dim, index.dim);
      scanned += n;
    }
    const double ns = std::chrono::duration<double, std::nano>(
                          std::chrono::steady_clock::now() - start)
                          .count();
    if (sink < -1.0) throw std::logic_error("unreachable");
    runs.push_back(ns / static_cast<double>(scanned));
  }
  std::sort(runs.begin(), runs.end());
  return runs[runs.size() / 2];
}

double measure_beta_ms(const ivf::IvfIndex& index,
                       const ret::RetrievalCostModel& model,
                       std::size_t wavefront, std::size_t repeats) {
  std::vector<std::vector<ClusterId>> plans(wavefront);
  for (std::size_t i = 0; i < wavefront; ++i)
    for (std::size_t c = 0; c < std::min<std::size_t>(32, index.k_clusters()); ++c)
      plans[i].push_back(static_cast<ClusterId>((c + i) % index.k_clusters()));
  const auto start = std::chrono::steady_clock::now();
  double sink = 0.0;
  for (std::size_t r = 0; r < repeats; ++r) {
    std::vector<sched::PlanEntry> entries;
    for (std::size_t i = 0; i < wavefront; ++i)
      entries.push_back(sched::PlanEntry{static_cast<RequestId>(i), 0, plans[i]});
    const auto batch = sched::plan_substages(entries, 5.0, index, model);
    sink += batch.planned_cost_ms;
  }
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start)
                        .count();
  if (sink < -1.0) throw std::logic_error("unreachable");
  return ms / static_cast<double>(repeats);
}

}  // namespace hedra::bench
