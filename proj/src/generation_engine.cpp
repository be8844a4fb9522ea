#include "hedra/generation_engine.hpp"

#include <algorithm>

namespace hedra::gen {

void GenerationScript::validate() const {
  if (total_tokens < 1)
    throw std::invalid_argument("script: total_tokens must be >= 1");
  if (prefix_checkpoints.empty())
    throw std::invalid_argument("script: at least one prefix checkpoint required");
  double prev = 0.0;
  for (const auto& cp : prefix_checkpoints) {
    if (cp.ratio <= prev || cp.ratio > 1.0)
      throw std::invalid_argument("script: checkpoint ratios must be strictly increasing in (0,1]");
    if (cp.embedding.size() != final_embedding.size())
      throw std::invalid_argument("script: checkpoint dimension mismatch");
    prev = cp.ratio;
  }
  if (prefix_checkpoints.back().ratio != 1.0 ||
      prefix_checkpoints.back().embedding != final_embedding)
    throw std::invalid_argument("script: last checkpoint must be the final embedding at ratio 1");
}

Embedding partial_embedding(const GenerationScript& script, double ratio) {
  if (script.prefix_checkpoints.empty())
    throw std::invalid_argument("partial_embedding: no checkpoints");
  if (ratio <= 0.0 || ratio > 1.0)
    throw std::invalid_argument("partial_embedding: ratio must be in (0, 1]");
  const PrefixCheckpoint* best = nullptr;
  for (const auto& cp : script.prefix_checkpoints) {
    if (cp.ratio <= ratio) best = &cp;
  }
  return best ? best->embedding : script.prefix_checkpoints.front().embedding;
}

void GenerationEngine::submit(RequestId request_id, NodeId node_id,
                              rag::Span token_span, std::uint32_t total_tokens,
                              std::uint32_t prompt_tokens, bool speculative) {
  if (token_span.hi > total_tokens || token_span.lo >= token_span.hi)
    throw std::invalid_argument("submit: span outside script token range");
  const auto overlaps = [&](const Sequence& s) {
    return s.request_id == request_id && s.node_id == node_id;
  };
  if (std::any_of(active_.begin(), active_.end(), overlaps) ||
      std::any_of(pending_.begin(), pending_.end(), overlaps))
    throw std::invalid_argument("submit: overlapping active sub-node for request");
  Sequence seq;
  seq.request_id = request_id;
  seq.node_id = node_id;
  seq.tokens_done = token_span.lo;
  seq.span_end = token_span.hi;
  seq.prompt_tokens = prompt_tokens;
  seq.speculative = speculative;
  pending_.push_back(std::move(seq));
}

bool GenerationEngine::cancel(RequestId request_id, NodeId node_id) {
  const auto match = [&](const Sequence& s) {
    return s.request_id == request_id && s.node_id == node_id;
  };
  auto before = active_.size() + pending_.size();
  active_.erase(std::remove_if(active_.begin(), active_.end(), match), active_.end());
  pending_.erase(std::remove_if(pending_.begin(), pending_.end(), match), pending_.end());
  return active_.size() + pending_.size() != before;
}

double GenerationEngine::expected_step_ms() const {
  const std::size_t n = active_.size() + pending_.size();
  return model_.base_ms + model_.per_seq_ms * static_cast<double>(n);
}

GenStepReport GenerationEngine::step() {
  GenStepReport report;
  if (active_.empty() && pending_.empty()) return report;

  double prefill_ms = 0.0;
  report.joined = pending_.size();
  for (auto& seq : pending_) {
    prefill_ms += model_.per_seq_ms * static_cast<double>(seq.prompt_tokens);
    seq.prefill_pending = false;
    active_.push_back(std::move(seq));
  }
  pending_.clear();

  const double jitter =
      model_.jitter_sigma > 0.0 ? rng_.lognormal(model_.jitter_sigma) : 1.0;
  report.latency_ms =
      (model_.base_ms + model_.per_seq_ms * static_cast<double>(active_.size())) * jitter +
      prefill_ms;

  std::vector<Sequence> still_active;
  still_active.reserve(active_.size());
  for (auto& seq : active_) {
    ++seq.tokens_done;
    ++report.tokens_advanced;
    if (seq.tokens_done >= seq.span_end) {
      report.completed.push_back(GenCompletion{seq.request_id, seq.node_id, seq.speculative});
    } else {
      report.progress.push_back(GenSeqProgress{seq.request_id, seq.node_id,
                                               seq.tokens_done, seq.span_end});
      still_active.push_back(std::move(seq));
    }
  }
  active_ = std::move(still_active);
  report.active_after = active_.size();
  ++step_count_;
  return report;
}

}  // namespace hedra::gen
