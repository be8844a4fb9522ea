#include "hedra/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace hedra::harness {

namespace {

using ordered_json = nlohmann::ordered_json;

double percentile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  // Nearest-rank on the sorted sample.
  const auto rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
}

}  // namespace

void finalize_report(ExperimentReport& report) {
  std::vector<double> latencies;
  report.requests_completed = 0;
  report.requests_failed = 0;
  for (const auto& r : report.per_request) {
    if (r.completed) {
      ++report.requests_completed;
      latencies.push_back(r.latency_ms);
    } else {
      ++report.requests_failed;
    }
  }
  report.requests_admitted = report.per_request.size();
  std::sort(latencies.begin(), latencies.end());
  double sum = 0.0;
  for (double v : latencies) sum += v;
  report.latency_mean_ms = latencies.empty() ? 0.0 : sum / latencies.size();
  report.latency_p50_ms = percentile(latencies, 50.0);
  report.latency_p95_ms = percentile(latencies, 95.0);
  report.latency_p99_ms = percentile(latencies, 99.0);
  report.throughput_rps = report.makespan_ms > 0.0
                              ? 1000.0 * report.requests_completed / report.makespan_ms
                              : 0.0;
  if (report.spec_valid + report.spec_mismatch > 0)
    report.speculation_accuracy =
        static_cast<double>(report.spec_valid) /
        static_cast<double>(report.spec_valid + report.spec_mismatch);
  if (report.cache_hits + report.cache_misses > 0)
    report.cache_hit_rate =
        static_cast<double>(report.cache_hits) /
        static_cast<double>(report.cache_hits + report.cache_misses);
  if (report.makespan_ms > 0.0) {
    report.gen_idle_fraction = 1.0 - report.gen_busy_ms / report.makespan_ms;
    report.ret_idle_fraction = 1.0 - report.ret_busy_ms / report.makespan_ms;
  }
}

std::string ExperimentReport::to_json() const {
  ordered_json doc;
  doc["strategy"] = strategy;
  doc["clock"] = clock;
  doc["seed"] = seed;
  doc["requests"] = {{"admitted", requests_admitted},
                     {"completed", requests_completed},
                     {"failed", requests_failed}};
  doc["makespan_ms"] = makespan_ms;
  doc["throughput_rps"] = throughput_rps;
  doc["latency_ms"] = {{"mean", latency_mean_ms},
                       {"p50", latency_p50_ms},
                       {"p95", latency_p95_ms},
                       {"p99", latency_p99_ms}};
  doc["per_request"] = ordered_json::array();
  for (const auto& r : per_request) {
    ordered_json jr = {{"id", r.id},
                       {"completed", r.completed},
                       {"latency_ms", r.latency_ms},
                       {"workflow", r.workflow}};
    jr["bindings"] = ordered_json::object();
    for (const auto& [k, v] : r.final_bindings) jr["bindings"][k] = v;
    doc["per_request"].push_back(std::move(jr));
  }
  doc["speculation"] = {{"gen_launched", spec_gen_launched},
                        {"retr_launched", spec_retr_launched},
                        {"valid", spec_valid},
                        {"mismatch", spec_mismatch},
                        {"rollbacks", rollbacks}};
  if (speculation_accuracy)
    doc["speculation"]["accuracy"] = *speculation_accuracy;
  doc["cache"] = {{"hits", cache_hits},
                  {"misses", cache_misses},
                  {"swaps", cache_swaps}};
  if (cache_hit_rate) doc["cache"]["hit_rate"] = *cache_hit_rate;
  doc["lanes"] = {{"slow_ms", slow_lane_ms}, {"fast_ms", fast_lane_ms}};
  doc["pipeline"] = {{"gen_busy_ms", gen_busy_ms},
                     {"ret_busy_ms", ret_busy_ms},
                     {"gen_idle_fraction", gen_idle_fraction},
                     {"ret_idle_fraction", ret_idle_fraction}};
  doc["retrieval"] = {{"stages", retrieval_stages},
                      {"mean_clusters_searched", mean_clusters_searched},
                      {"probe_hits", probe_hits},
                      {"probe_attempts", probe_attempts}};
  doc["locality_observations"] = {{"pairs", observation_pairs},
                                  {"obs1_rate", obs1_rate},
                                  {"obs2_rate", obs2_rate},
                                  {"obs3_rate", obs3_rate}};
  doc["stage_breakdown"] = ordered_json::object();
  for (const auto& [name, b] : stage_breakdown)
    doc["stage_breakdown"][name] = {{"count", b.count}, {"total_ms", b.total_ms}};
  return doc.dump(2);
}

ExperimentReport ExperimentReport::from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  ExperimentReport r;
  r.strategy = doc.at("strategy").get<std::string>();
  r.clock = doc.at("clock").get<std::string>();
  r.seed = doc.at("seed").get<std::uint64_t>();
  r.requests_admitted = doc.at("requests").at("admitted").get<std::size_t>();
  r.requests_completed = doc.at("requests").at("completed").get<std::size_t>();
  r.requests_failed = doc.at("requests").at("failed").get<std::size_t>();
  r.makespan_ms = doc.at("makespan_ms").get<double>();
  r.throughput_rps = doc.at("throughput_rps").get<double>();
  r.latency_mean_ms = doc.at("latency_ms").at("mean").get<double>();
  r.latency_p50_ms = doc.at("latency_ms").at("p50").get<double>();
  r.latency_p95_ms = doc.at("latency_ms").at("p95").get<double>();
  r.latency_p99_ms = doc.at("latency_ms").at("p99").get<double>();
  for (const auto& jr : doc.at("per_request")) {
    RequestOutcome o;
    o.id = jr.at("id").get<RequestId>();
    o.completed = jr.at("completed").get<bool>();
    o.latency_ms = jr.at("latency_ms").get<double>();
    o.workflow = jr.at("workflow").get<std::string>();
    if (jr.contains("bindings"))
      for (const auto& [k, v] : jr.at("bindings").items())
        o.final_bindings[k] = v.get<std::string>();
    r.per_request.push_back(std::move(o));
  }
  const auto& spec = doc.at("speculation");
  r.spec_gen_launched = spec.at("gen_launched").get<std::uint64_t>();
  r.spec_retr_launched = spec.at("retr_launched").get<std::uint64_t>();
  r.spec_valid = spec.at("valid").get<std::uint64_t>();
  r.spec_mismatch = spec.at("mismatch").get<std::uint64_t>();
  r.rollbacks = spec.at("rollbacks").get<std::uint64_t>();
  if (spec.contains("accuracy")) r.speculation_accuracy = spec.at("accuracy").get<double>();
  const auto& cache = doc.at("cache");
  r.cache_hits = cache.at("hits").get<std::uint64_t>();
  r.cache_misses = cache.at("misses").get<std::uint64_t>();
  r.cache_swaps = cache.at("swaps").get<std::uint64_t>();
  if (cache.contains("hit_rate")) r.cache_hit_rate = cache.at("hit_rate").get<double>();
  r.slow_lane_ms = doc.at("lanes").at("slow_ms").get<double>();
  r.fast_lane_ms = doc.at("lanes").at("fast_ms").get<double>();
  r.gen_busy_ms = doc.at("pipeline").at("gen_busy_ms").get<double>();
  r.ret_busy_ms = doc.at("pipeline").at("ret_busy_ms").get<double>();
  r.gen_idle_fraction = doc.at("pipeline").at("gen_idle_fraction").get<double>();
  r.ret_idle_fraction = doc.at("pipeline").at("ret_idle_fraction").get<double>();
  r.retrieval_stages = doc.at("retrieval").at("stages").get<std::uint64_t>();
  r.mean_clusters_searched =
      doc.at("retrieval").at("mean_clusters_searched").get<double>();
  r.probe_hits = doc.at("retrieval").at("probe_hits").get<std::uint64_t>();
  r.probe_attempts = doc.at("retrieval").at("probe_attempts").get<std::uint64_t>();
  const auto& obs = doc.at("locality_observations");
  r.observation_pairs = obs.at("pairs").get<std::uint64_t>();
  r.obs1_rate = obs.at("obs1_rate").get<double>();
  r.obs2_rate = obs.at("obs2_rate").get<double>();
  r.obs3_rate = obs.at("obs3_rate").get<double>();
  for (const auto& [name, b] : doc.at("stage_breakdown").items())
    r.stage_breakdown[name] = {b.at("count").get<std::uint64_t>(),
                               b.at("total_ms").get<double>()};
  return r;
}

void ExperimentReport::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << to_json() << "\n";
  if (!out) throw std::runtime_error(path + ": write failed");
}

ExperimentReport ExperimentReport::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open report file");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json(text);
}

void TraceSink::save_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  for (const auto& e : events_) {
    ordered_json j;
    j["t_ms"] = e.t_ms;
    j["worker"] = e.worker;
    j["request"] = e.request_id;
    j["node"] = e.node_id;
    j["subnode"] = e.subnode;
    j["event"] = e.event;
    j["duration_ms"] = e.duration_ms;
    out << j.dump() << "\n";
  }
}

std::vector<TraceEvent> TraceSink::load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open trace file");
  std::vector<TraceEvent> events;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TraceEvent e;
    e.t_ms = j.at("t_ms").get<double>();
    e.worker = j.at("worker").get<std::string>();
    e.request_id = j.at("request").get<RequestId>();
    e.node_id = j.at("node").get<NodeId>();
    e.subnode = j.at("subnode").get<std::int64_t>();
    e.event = j.at("event").get<std::string>();
    e.duration_ms = j.at("duration_ms").get<double>();
    events.push_back(std::move(e));
  }
  return events;
}

}  // namespace hedra::harness
