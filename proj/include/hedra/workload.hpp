#pragma once

#include <map>
#include <string>
#include <vector>

#include "hedra/common.hpp"
#include "hedra/generation_engine.hpp"
#include "hedra/vector_index.hpp"

namespace hedra::harness {

struct CorpusSpec {
  std::size_t n_vectors = 100000;
  std::uint32_t dim = 64;
  std::size_t n_topics = 64;
  double topic_spread = 0.25;
  std::uint64_t seed = 1;
  std::string metric = "l2";
};

struct QuerySpec {
  std::size_t n_requests = 100;
  std::string arrival = "poisson";  // or "fixed"
  double rate_per_s = 20.0;
  double fixed_interval_ms = 50.0;
  std::map<std::string, double> workflow_mix = {{"oneshot", 1.0}};
  double zipf_s = 1.0;
  double drift_delta = 0.5;
  std::uint32_t min_tokens = 8;
  std::uint32_t max_tokens = 48;
  int checkpoints = 4;
  std::uint64_t seed = 2;
};

struct WorkloadSpec {
  CorpusSpec corpus;
  QuerySpec queries;

  void validate() const;
};

// Minimal TOML subset: [section] / [section.sub] headers and scalar
// key = value lines (int, float, bool, "string"); comments with '#'.
WorkloadSpec load_workload_spec(const std::string& path);
WorkloadSpec parse_workload_spec(const std::string& text);

// Gaussian-mixture corpus: topic centers on a seeded random unit sphere,
// isotropic per-topic spread, topics assigned round-robin.
ivf::Corpus generate_corpus(const CorpusSpec& spec);
// Topic centers used by the generator (for query synthesis and tests).
std::vector<Embedding> corpus_topic_centers(const CorpusSpec& spec);

struct TraceRequest {
  RequestId id = 0;
  double arrival_ms = 0.0;
  std::string workflow;
  std::string input_text;
  Embedding input_embedding;
  std::vector<gen::GenerationScript> scripts;  // consumed per generation execution
};

struct RequestTrace {
  std::uint32_t dim = 0;
  std::vector<TraceRequest> requests;

  void save(const std::string& path) const;
  static RequestTrace load(const std::string& path);
};

// Per-request scripts: topic sampled by Zipf, queries drifting by drift_delta
// between retrieval stages, checkpoint embeddings converging onto the final
// embedding as the prefix ratio grows.
RequestTrace generate_workload(const WorkloadSpec& spec,
                               const ivf::Corpus& corpus);

// Zipf(s) sampler over [0, n); weight(i) proportional to 1/(i+1)^s.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s);
  std::size_t sample(Rng& rng) const;

 private:
  std::vector<double> cumulative_;
};

}  // namespace hedra::harness
