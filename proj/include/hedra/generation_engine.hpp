#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "hedra/common.hpp"
#include "hedra/embedding.hpp"
#include "hedra/raggraph.hpp"

namespace hedra::gen {

struct PrefixCheckpoint {
  double ratio = 1.0;  // fraction of total tokens, in (0, 1]
  Embedding embedding;
};

// Trace-driven stand-in for one LLM generation: the artifacts the runtime
// consumes (token count, output handle, emitted embeddings) without inference.
struct GenerationScript {
  std::uint32_t total_tokens = 1;
  std::string output_text;
  Embedding final_embedding;
  std::vector<PrefixCheckpoint> prefix_checkpoints;  // strictly increasing ratios, last = 1.0

  void validate() const;
};

// Embedding of the latest checkpoint at or below the given prefix ratio;
// the first checkpoint when none qualifies yet.
Embedding partial_embedding(const GenerationScript& script, double ratio);

struct GenLatencyModel {
  double base_ms = 2.0;
  double per_seq_ms = 0.2;
  double jitter_sigma = 0.3;  // lognormal; 0 disables the draw entirely
};

struct GenCompletion {
  RequestId request_id = 0;
  NodeId node_id = 0;
  bool speculative = false;
};

struct GenSeqProgress {
  RequestId request_id = 0;
  NodeId node_id = 0;
  std::uint64_t tokens_done = 0;
  std::uint64_t span_end = 0;
};

struct GenStepReport {
  double latency_ms = 0.0;
  std::uint64_t tokens_advanced = 0;
  std::size_t joined = 0;  // pending sequences that entered this step
  std::vector<GenCompletion> completed;
  std::vector<GenSeqProgress> progress;  // still-active sequences
  std::size_t active_after = 0;
};

// Continuous-batching decode loop. Sequences submitted mid-flight join at the
// next step boundary; every step advances all active sequences one token.
// Owned by a single worker context; not thread-safe by design.
class GenerationEngine {
 public:
  GenerationEngine(GenLatencyModel model, std::uint64_t seed)
      : model_(model), rng_(seed) {}

  // Prefill cost (prompt_tokens * per_seq_ms) lands on the joining step,
  // un-jittered.
  void submit(RequestId request_id, NodeId node_id, rag::Span token_span,
              std::uint32_t total_tokens, std::uint32_t prompt_tokens,
              bool speculative);
  bool cancel(RequestId request_id, NodeId node_id);

  bool has_work() const { return !active_.empty() || !pending_.empty(); }
  std::size_t active_count() const { return active_.size() + pending_.size(); }
  std::uint64_t step_count() const { return step_count_; }

  // Jitter-free per-step latency at the current batch size.
  double expected_step_ms() const;

  GenStepReport step();

 private:
  struct Sequence {
    RequestId request_id = 0;
    NodeId node_id = 0;
    std::uint64_t tokens_done = 0;
    std::uint64_t span_end = 0;
    std::uint32_t prompt_tokens = 0;
    bool speculative = false;
    bool prefill_pending = true;
  };

  GenLatencyModel model_;
  Rng rng_;
  std::vector<Sequence> active_;   // insertion order
  std::vector<Sequence> pending_;  // joins at next step boundary
  std::uint64_t step_count_ = 0;
};

}  // namespace hedra::gen
