// hedra: desk-scale serving runtime and simulator for heterogeneous RAG
// workflows over an IVF vector index.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "hedra/bench.hpp"
#include "hedra/raggraph.hpp"
#include "hedra/report.hpp"
#include "hedra/scheduler.hpp"
#include "hedra/vector_index.hpp"
#include "hedra/workload.hpp"

namespace {

using namespace hedra;

std::optional<std::uint64_t> env_seed_override() {
  const char* env = std::getenv("HEDRA_SEED");
  if (!env || !*env) return std::nullopt;
  return std::stoull(env);
}

ivf::IvfIndex load_index_files(const std::string& corpus_path,
                               const std::string& index_prefix) {
  auto corpus = ivf::load_corpus(corpus_path);
  if (corpus.metric == Metric::Cosine) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto e = normalized(corpus.embedding(i));
      std::copy(e.begin(), e.end(), corpus.data.begin() + i * corpus.dim);
    }
  }
  const auto centroids = ivf::load_centroids(index_prefix + ".centroids.hvec");
  const auto assign = ivf::load_assignments(index_prefix + ".assign.u32");
  return ivf::index_from_assignments(corpus, centroids, corpus.metric, assign);
}

int cmd_gen_corpus(const std::string& config_path, const std::string& out) {
  const auto spec = harness::load_workload_spec(config_path);
  auto corpus_spec = spec.corpus;
  if (const auto seed = env_seed_override()) corpus_spec.seed = *seed;
  const auto corpus = harness::generate_corpus(corpus_spec);
  ivf::save_corpus(out, corpus);
  std::cout << "corpus: " << corpus.size() << " vectors, dim " << corpus.dim
            << " -> " << out << "\n";
  return 0;
}

int cmd_build_index(const std::string& corpus_path, const std::string& prefix,
                    std::size_t clusters, std::size_t iters,
                    std::uint64_t seed) {
  if (const auto s = env_seed_override()) seed = *s;
  auto corpus = ivf::load_corpus(corpus_path);
  if (corpus.metric == Metric::Cosine) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto e = normalized(corpus.embedding(i));
      std::copy(e.begin(), e.end(), corpus.data.begin() + i * corpus.dim);
    }
  }
  const auto centroids = ivf::train_kmeans(corpus, clusters, iters, seed);
  const auto assign = ivf::compute_assignments(corpus, centroids);
  ivf::save_centroids(prefix + ".centroids.hvec", centroids, corpus.metric);
  ivf::save_assignments(prefix + ".assign.u32", assign);
  std::cout << "index: " << clusters << " clusters over " << corpus.size()
            << " vectors -> " << prefix << ".{centroids.hvec,assign.u32}\n";
  return 0;
}

int cmd_gen_workload(const std::string& config_path,
                     const std::string& corpus_path, const std::string& out) {
  auto spec = harness::load_workload_spec(config_path);
  if (const auto seed = env_seed_override()) {
    spec.corpus.seed = *seed;
    spec.queries.seed = *seed + 1;
  }
  const auto corpus = ivf::load_corpus(corpus_path);
  const auto trace = harness::generate_workload(spec, corpus);
  trace.save(out);
  std::cout << "workload: " << trace.requests.size() << " requests -> " << out
            << "\n";
  return 0;
}

int cmd_bench(const std::string& corpus_path, const std::string& index_prefix,
              const std::string& profile_out, const std::string& calib_out) {
  const auto index = load_index_files(corpus_path, index_prefix);
  gen::GenLatencyModel gen_model;
  ret::RetrievalCostModel ret_model;
  const auto calib = bench::calibrate_generation(gen_model);
  calib.save(calib_out);
  const auto profile =
      bench::build_profile(gen_model, ret_model, index, bench::ProfileOptions{});
  profile.save_csv(profile_out);
  const double per_vec = bench::measure_per_vector_ns(index);
  const double beta = bench::measure_beta_ms(index, ret_model);
  std::cout << "calibration: a=" << calib.a_per_request
            << " b=" << calib.b_per_prefill_token << " t_max=" << calib.t_max
            << "\nmeasured per_vector_ns=" << per_vec
            << " beta_ms=" << beta << "\nprofile -> " << profile_out
            << "\ncalibration -> " << calib_out << "\n";
  return 0;
}

int cmd_run(const std::string& corpus_path, const std::string& index_prefix,
            const std::string& trace_path, const std::string& workflow,
            sched::SchedulerConfig cfg, const std::string& report_path,
            const std::string& trace_out, const std::string& calib_path) {
  const auto index = load_index_files(corpus_path, index_prefix);
  auto trace = harness::RequestTrace::load(trace_path);
  if (!workflow.empty()) {
    // Force every request onto one template (file path or template name).
    rag::RAGraph graph;
    if (std::filesystem::exists(workflow))
      graph = rag::load_workflow_file(workflow);
    else
      graph = rag::workflow_template(workflow);
    for (auto& r : trace.requests) r.workflow = graph.name;
  }
  if (!calib_path.empty())
    cfg.calibration = sched::Calibration::load(calib_path);
  else if (cfg.speculation)
    cfg.calibration = bench::calibrate_generation(cfg.gen_latency);
  if (const auto seed = env_seed_override()) cfg.seed = *seed;

  if (cfg.cache_enabled && cfg.cache_cfg.capacity_gc == 0)
    cfg.cache_cfg.capacity_gc = std::max<std::size_t>(1, index.k_clusters() / 5);

  harness::TraceSink sink;
  const auto report =
      sched::run(cfg, trace, index, trace_out.empty() ? nullptr : &sink);
  if (!report_path.empty()) report.save(report_path);
  if (!trace_out.empty()) sink.save_jsonl(trace_out);
  std::cout << report.to_json() << "\n";
  return 0;
}

int cmd_report(const std::string& report_path, const std::string& trace_path) {
  if (!report_path.empty()) {
    const auto report = harness::ExperimentReport::load(report_path);
    std::cout << "strategy=" << report.strategy << " clock=" << report.clock
              << " completed=" << report.requests_completed << "/"
              << report.requests_admitted
              << " makespan_ms=" << report.makespan_ms
              << " p50=" << report.latency_p50_ms
              << " p95=" << report.latency_p95_ms
              << " p99=" << report.latency_p99_ms
              << " throughput_rps=" << report.throughput_rps << "\n";
    if (report.speculation_accuracy)
      std::cout << "speculation accuracy=" << *report.speculation_accuracy
                << " rollbacks=" << report.rollbacks << "\n";
    if (report.cache_hit_rate)
      std::cout << "cache hit rate=" << *report.cache_hit_rate
                << " swaps=" << report.cache_swaps << "\n";
  }
  if (!trace_path.empty()) {
    const auto events = harness::TraceSink::load_jsonl(trace_path);
    std::map<std::string, std::pair<std::uint64_t, double>> by_worker;
    for (const auto& e : events) {
      auto& [count, total] = by_worker[e.worker];
      ++count;
      total += e.duration_ms;
    }
    for (const auto& [worker, agg] : by_worker)
      std::cout << worker << ": " << agg.first << " events, "
                << agg.second << " ms total\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hedra: graph-transforming RAG serving runtime and simulator"};
  app.require_subcommand(1);

  // gen-corpus
  std::string config_path, out_path;
  auto* gen_corpus = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  gen_corpus->add_option("--config", config_path, "workload TOML")->required();
  gen_corpus->add_option("--out", out_path, "output corpus file")->required();

  // build-index
  std::string corpus_path, index_prefix;
  std::size_t clusters = 256, kmeans_iters = 25;
  std::uint64_t kmeans_seed = 1;
  auto* build_index = app.add_subcommand("build-index", "train and persist an IVF index");
  build_index->add_option("--corpus", corpus_path, "corpus file")->required();
  build_index->add_option("--out-prefix", index_prefix, "index file prefix")->required();
  build_index->add_option("--clusters", clusters, "number of clusters");
  build_index->add_option("--iters", kmeans_iters, "k-means iterations");
  build_index->add_option("--seed", kmeans_seed, "k-means seed");

  // gen-workload
  std::string trace_out;
  auto* gen_workload = app.add_subcommand("gen-workload", "generate a request trace");
  gen_workload->add_option("--config", config_path, "workload TOML")->required();
  gen_workload->add_option("--corpus", corpus_path, "corpus file")->required();
  gen_workload->add_option("--out", trace_out, "output trace file")->required();

  // bench
  std::string profile_out = "profile.csv", calib_out = "calibration.json";
  auto* bench_cmd = app.add_subcommand("bench", "profile throughput and calibrate");
  bench_cmd->add_option("--corpus", corpus_path, "corpus file")->required();
  bench_cmd->add_option("--index", index_prefix, "index file prefix")->required();
  bench_cmd->add_option("--out-profile", profile_out, "profile CSV output");
  bench_cmd->add_option("--out-calibration", calib_out, "calibration JSON output");

  // run
  sched::SchedulerConfig cfg;
  std::string strategy = "hedra", clock = "virtual", workflow, report_out,
              run_trace_out, calib_path, speculation = "on", cache = "on";
  std::size_t gc_override = 0;
  auto* run_cmd = app.add_subcommand("run", "serve a workload trace");
  run_cmd->add_option("--corpus", corpus_path, "corpus file")->required();
  run_cmd->add_option("--index", index_prefix, "index file prefix")->required();
  run_cmd->add_option("--trace", trace_out, "request trace file")->required();
  run_cmd->add_option("--workflow", workflow, "force template name or workflow file");
  run_cmd->add_option("--strategy", strategy, "coarse|naive|hedra");
  run_cmd->add_option("--clock", clock, "live|virtual");
  run_cmd->add_option("--nprobe", cfg.nprobe, "clusters searched per query");
  run_cmd->add_option("--topk",
                      [&cfg](const CLI::results_t& res) {
                        cfg.topk_override = std::stoi(res[0]);
                        return true;
                      },
                      "override retrieval top-k");
  run_cmd->add_option("--tau", cfg.tau, "speculation trigger threshold");
  run_cmd->add_option("--beta-ms", cfg.beta_ms, "scheduling overhead");
  run_cmd->add_flag("--approx", cfg.approx_termination,
                    "enable early termination (inexact)");
  run_cmd->add_option("--speculation", speculation, "on|off");
  run_cmd->add_option("--cache", cache, "on|off");
  run_cmd->add_option("--gc", gc_override, "fast-tier capacity in clusters");
  run_cmd->add_option("--slo-ms", cfg.slo_ms, "per-request latency bound");
  run_cmd->add_option("--seed", cfg.seed, "run seed");
  run_cmd->add_option("--mb-ms",
                      [&cfg](const CLI::results_t& res) {
                        cfg.mb_override_ms = std::stod(res[0]);
                        return true;
                      },
                      "override the sub-stage budget");
  run_cmd->add_option("--calibration", calib_path, "calibration JSON from bench");
  run_cmd->add_option("--report", report_out, "write the run report JSON here");
  run_cmd->add_option("--trace-out", run_trace_out, "write the event trace JSONL here");

  // report
  std::string report_in, trace_in;
  auto* report_cmd = app.add_subcommand("report", "summarize run artifacts");
  report_cmd->add_option("--report", report_in, "run report JSON");
  report_cmd->add_option("--trace", trace_in, "event trace JSONL");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_corpus->parsed()) return cmd_gen_corpus(config_path, out_path);
    if (build_index->parsed())
      return cmd_build_index(corpus_path, index_prefix, clusters, kmeans_iters,
                             kmeans_seed);
    if (gen_workload->parsed())
      return cmd_gen_workload(config_path, corpus_path, trace_out);
    if (bench_cmd->parsed())
      return cmd_bench(corpus_path, index_prefix, profile_out, calib_out);
    if (run_cmd->parsed()) {
      cfg.strategy = sched::parse_strategy(strategy);
      if (clock == "live")
        cfg.clock = sched::ClockMode::Live;
      else if (clock == "virtual")
        cfg.clock = sched::ClockMode::Virtual;
      else
        throw std::invalid_argument("unknown clock: " + clock);
      cfg.speculation = speculation == "on";
      cfg.cache_enabled = cache == "on";
      if (gc_override > 0) cfg.cache_cfg.capacity_gc = gc_override;
      return cmd_run(corpus_path, index_prefix, trace_out, workflow, cfg,
                     report_out, run_trace_out, calib_path);
    }
    if (report_cmd->parsed()) return cmd_report(report_in, trace_in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
