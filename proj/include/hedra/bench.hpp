#pragma once

#include "hedra/generation_engine.hpp"
#include "hedra/retrieval_engine.hpp"
#include "hedra/scheduler.hpp"
#include "hedra/tiered_cache.hpp"
#include "hedra/vector_index.hpp"

namespace hedra::bench {

// Fits the linear throughput model T_curr = a*requests + b*prefill_tokens on
// steady-state step measurements of the generation engine over a batch/prefill
// grid. t_max is the measured peak at the largest profiled batch.
sched::Calibration calibrate_generation(const gen::GenLatencyModel& model,
                                        std::size_t max_batch = 16);

struct ProfileOptions {
  std::vector<double> kv_bytes_grid;   // defaults filled when empty
  std::vector<double> rps_grid;        // requests per second
  double kv_bytes_per_seq = 256.0 * 1024.0;
  std::uint32_t tokens_per_request = 32;
  std::size_t sim_requests = 64;       // per grid point
  std::size_t nprobe = 32;
};

// Characterizes T_G(kv_size, rps) with closed-loop micro-simulations of the
// generation engine (kv size caps the concurrent batch) and T_R(rps) from the
// retrieval cost model against the built index.
cache::ThroughputProfile build_profile(const gen::GenLatencyModel& gen_model,
                                       const ret::RetrievalCostModel& ret_model,
                                       const ivf::IvfIndex& index,
                                       const ProfileOptions& options);

// Wall-clock per-vector scan cost of this machine, for live-mode cost models.
double measure_per_vector_ns(const ivf::IvfIndex& index, std::size_t repeats = 3);

// Wall-clock cost of one sub-stage planning pass, a stand-in for the
// scheduling overhead term.
double measure_beta_ms(const ivf::IvfIndex& index,
                       const ret::RetrievalCostModel& model,
                       std::size_t wavefront = 8, std::size_t repeats = 200);

}  // namespace hedra::bench
