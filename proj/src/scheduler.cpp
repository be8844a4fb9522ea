#include "hedra/scheduler.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <limits>
#include <mutex>
#include <queue>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace hedra::sched {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::CoarseSequential:
      return "coarse";
    case Strategy::NaiveAsync:
      return "naive";
    case Strategy::Hedra:
      return "hedra";
  }
  return "hedra";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "coarse") return Strategy::CoarseSequential;
  if (name == "naive") return Strategy::NaiveAsync;
  if (name == "hedra") return Strategy::Hedra;
  throw std::invalid_argument("unknown strategy: " + name);
}

void Calibration::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["a_per_request"] = a_per_request;
  j["b_per_prefill_token"] = b_per_prefill_token;
  j["t_max"] = t_max;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

Calibration Calibration::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open calibration file");
  const auto j = nlohmann::json::parse(in);
  Calibration c;
  c.a_per_request = j.at("a_per_request").get<double>();
  c.b_per_prefill_token = j.at("b_per_prefill_token").get<double>();
  c.t_max = j.at("t_max").get<double>();
  return c;
}

double compute_time_budget(double t_retrieval_ms, double beta_ms,
                           double min_budget_ms, bool printed_form) {
  if (t_retrieval_ms <= 0.0 || beta_ms <= 0.0)
    throw std::invalid_argument("compute_time_budget: inputs must be positive");
  if (printed_form) {
    // Additive overhead term grows without bound as mb shrinks; the grid
    // argmax sits at the lower clamp.
    return std::min(min_budget_ms, t_retrieval_ms);
  }
  const double mb = std::sqrt(2.0 * beta_ms * t_retrieval_ms);
  return std::min(std::max(mb, min_budget_ms), t_retrieval_ms);
}

ThroughputEstimate throughput_estimate(std::size_t active_requests,
                                       std::uint64_t prefill_tokens,
                                       const Calibration& calibration) {
  if (!calibration.valid())
    throw std::logic_error("throughput_estimate: missing calibration");
  ThroughputEstimate est;
  est.t_curr = calibration.a_per_request * static_cast<double>(active_requests) +
               calibration.b_per_prefill_token * static_cast<double>(prefill_tokens);
  est.t_max = calibration.t_max;
  return est;
}

bool trigger_speculation(const ThroughputEstimate& estimate, double tau) {
  if (estimate.t_max <= 0.0)
    throw std::invalid_argument("trigger_speculation: t_max must be positive");
  return estimate.t_curr / estimate.t_max < tau;
}

std::vector<WavefrontEntry> select_wavefront(std::vector<WavefrontEntry> ready) {
  std::sort(ready.begin(), ready.end(),
            [](const WavefrontEntry& a, const WavefrontEntry& b) {
              if (a.arrival_ms != b.arrival_ms) return a.arrival_ms < b.arrival_ms;
              if (a.request_id != b.request_id) return a.request_id < b.request_id;
              return a.node_id < b.node_id;
            });
  return ready;
}

ret::SubStageBatch plan_substages(std::span<const PlanEntry> entries,
                                  double mb_ms, const ivf::IvfIndex& index,
                                  const ret::RetrievalCostModel& model) {
  if (mb_ms <= 0.0) throw std::invalid_argument("plan_substages: mb must be positive");
  ret::SubStageBatch batch;
  if (entries.empty()) return batch;

  struct Fill {
    std::size_t taken = 0;
    bool closed = false;
  };
  std::vector<Fill> fills(entries.size());
  double planned = 0.0;

  // Every entry always receives its first cluster (progress guarantee).
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].remaining.empty()) {
      fills[i].closed = true;
      continue;
    }
    planned += ret::cluster_variable_ms(index, entries[i].remaining[0],
                                        ret::Lane::Slow, model);
    fills[i].taken = 1;
    if (fills[i].taken == entries[i].remaining.size()) fills[i].closed = true;
  }
  // Round-robin fill until each entry's next cluster would exceed the budget.
  bool progressed = true;
  while (progressed) {
    progressed = false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (fills[i].closed) continue;
      const ClusterId next = entries[i].remaining[fills[i].taken];
      const double cost = ret::cluster_variable_ms(index, next, ret::Lane::Slow, model);
      if (planned + cost > mb_ms) {
        fills[i].closed = true;
        continue;
      }
      planned += cost;
      ++fills[i].taken;
      progressed = true;
      if (fills[i].taken == entries[i].remaining.size()) fills[i].closed = true;
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (fills[i].taken == 0) continue;
    ret::BatchItem item;
    item.request_id = entries[i].request_id;
    item.node_id = entries[i].node_id;
    item.clusters.assign(entries[i].remaining.begin(),
                         entries[i].remaining.begin() + fills[i].taken);
    batch.items.push_back(std::move(item));
  }
  batch.planned_cost_ms = planned;
  return batch;
}

std::vector<SpecPick> choose_speculative_candidates(
    std::span<const SpecGenCandidate> gen_candidates,
    std::span<const SpecRetrCandidate> retr_candidates,
    ThroughputEstimate estimate, double tau, const Calibration& calibration) {
  std::vector<SpecPick> picks;
  std::vector<bool> gen_used(gen_candidates.size(), false);
  std::vector<bool> retr_used(retr_candidates.size(), false);
  while (trigger_speculation(estimate, tau)) {
    // Best remaining candidate of each family by its own metric.
    std::optional<std::size_t> best_gen, best_retr;
    for (std::size_t i = 0; i < gen_candidates.size(); ++i) {
      if (gen_used[i]) continue;
      if (!best_gen || gen_candidates[i].mean_heap_distance <
                           gen_candidates[*best_gen].mean_heap_distance)
        best_gen = i;
    }
    for (std::size_t i = 0; i < retr_candidates.size(); ++i) {
      if (retr_used[i]) continue;
      if (!best_retr ||
          retr_candidates[i].drift < retr_candidates[*best_retr].drift)
        best_retr = i;
    }
    if (!best_gen && !best_retr) break;
    bool take_gen;
    if (best_gen && best_retr)
      take_gen = gen_candidates[*best_gen].mean_heap_distance <=
                 retr_candidates[*best_retr].drift;
    else
      take_gen = best_gen.has_value();
    if (take_gen) {
      gen_used[*best_gen] = true;
      picks.push_back(SpecPick{true, *best_gen});
      estimate.t_curr +=
          calibration.a_per_request +
          calibration.b_per_prefill_token *
              static_cast<double>(gen_candidates[*best_gen].prompt_tokens);
    } else {
      retr_used[*best_retr] = true;
      picks.push_back(SpecPick{false, *best_retr});
      estimate.t_curr += calibration.a_per_request;
    }
  }
  return picks;
}

// ===========================================================================
// Transport: one scheduler code path over two clocks. Work is dispatched as
// single engine steps / sub-stage batches; completions come back as events in
// time order. Virtual mode computes durations from the cost models; live mode
// runs worker threads against the wall clock.
// ===========================================================================

namespace {

struct Event {
  enum class Kind { GenStep, RetBatch, Timer };
  Kind kind = Kind::Timer;
  double start_ms = 0.0;
  double end_ms = 0.0;
  gen::GenStepReport gen_report;
  ret::RetStepReport ret_report;
  ret::SubStageBatch batch;  // echoed back with lane assignments filled
};

struct GenSubmit {
  double effective_at_ms = 0.0;
  RequestId request_id = 0;
  NodeId node_id = 0;
  rag::Span span;
  std::uint32_t total_tokens = 0;
  std::uint32_t prompt_tokens = 0;
  bool speculative = false;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual double now_ms() = 0;
  virtual void gen_submit(const GenSubmit& submit) = 0;
  virtual void gen_cancel(RequestId request_id, NodeId node_id) = 0;
  virtual void start_gen_step(double not_before_ms) = 0;
  virtual void ret_submit(ret::RetrievalTask task) = 0;
  virtual void ret_cancel(RequestId request_id, NodeId node_id) = 0;
  virtual void start_ret_batch(ret::SubStageBatch batch, double not_before_ms) = 0;
  virtual Event wait_next(std::optional<double> timer_at_ms) = 0;
  // Engine access is only legal while the engine has no outstanding work;
  // the scheduler guarantees that via its busy flags.
  virtual ret::RetrievalEngine& ret_engine() = 0;
  virtual void shutdown() {}
};

class VirtualTransport : public Transport {
 public:
  VirtualTransport(const SchedulerConfig& cfg, const ivf::IvfIndex& index)
      : gen_engine_(cfg.gen_latency, cfg.seed ^ 0x67656e5f73656564ull),
        ret_engine_(&index, cfg.ret_cost,
                    cfg.cache_enabled ? cfg.cache_cfg : cache::CacheConfig{}) {}

  double now_ms() override { return now_; }

  void gen_submit(const GenSubmit& submit) override {
    pending_submits_.push_back(submit);
  }

  void gen_cancel(RequestId request_id, NodeId node_id) override {
    pending_submits_.erase(
        std::remove_if(pending_submits_.begin(), pending_submits_.end(),
                       [&](const GenSubmit& s) {
                         return s.request_id == request_id && s.node_id == node_id;
                       }),
        pending_submits_.end());
    gen_engine_.cancel(request_id, node_id);
  }

  void start_gen_step(double not_before_ms) override {
    double start = std::max(not_before_ms, gen_free_at_);
    // A step makes sense only once some sequence is joinable. A cancelled
    // sequence can leave the scheduler's shadow count stale; an empty engine
    // then yields a zero-duration no-op report that corrects it.
    if (!gen_engine_.has_work()) {
      double earliest = std::numeric_limits<double>::infinity();
      for (const auto& s : pending_submits_)
        earliest = std::min(earliest, s.effective_at_ms);
      if (std::isfinite(earliest)) start = std::max(start, earliest);
    }
    apply_due_submits(start);
    Event ev;
    ev.kind = Event::Kind::GenStep;
    ev.start_ms = start;
    ev.gen_report = gen_engine_.step();
    ev.end_ms = start + ev.gen_report.latency_ms;
    gen_free_at_ = ev.end_ms;
    push(std::move(ev));
  }

  void ret_submit(ret::RetrievalTask task) override {
    ret_engine_.submit(std::move(task));
  }

  void ret_cancel(RequestId request_id, NodeId node_id) override {
    ret_engine_.cancel(request_id, node_id);
  }

  void start_ret_batch(ret::SubStageBatch batch, double not_before_ms) override {
    const double start = std::max(not_before_ms, ret_free_at_);
    Event ev;
    ev.kind = Event::Kind::RetBatch;
    ev.start_ms = start;
    ev.ret_report = ret_engine_.execute(batch, start, /*live_math=*/false);
    ev.end_ms = start + ev.ret_report.modeled_ms;
    ev.batch = std::move(batch);
    ret_free_at_ = ev.end_ms;
    push(std::move(ev));
  }

  Event wait_next(std::optional<double> timer_at_ms) override {
    if (queue_.empty()) {
      if (!timer_at_ms)
        throw std::logic_error("wait_next: no pending events and no timer");
      now_ = std::max(now_, *timer_at_ms);
      Event ev;
      ev.kind = Event::Kind::Timer;
      ev.start_ms = ev.end_ms = now_;
      return ev;
    }
    if (timer_at_ms && *timer_at_ms < queue_.top().second.end_ms) {
      now_ = std::max(now_, *timer_at_ms);
      Event ev;
      ev.kind = Event::Kind::Timer;
      ev.start_ms = ev.end_ms = now_;
      return ev;
    }
    Event ev = queue_.top().second;
    queue_.pop();
    now_ = std::max(now_, ev.end_ms);
    return ev;
  }

  ret::RetrievalEngine& ret_engine() override { return ret_engine_; }

 private:
  void apply_due_submits(double step_start) {
    auto it = pending_submits_.begin();
    while (it != pending_submits_.end()) {
      if (it->effective_at_ms <= step_start) {
        gen_engine_.submit(it->request_id, it->node_id, it->span,
                           it->total_tokens, it->prompt_tokens, it->speculative);
        it = pending_submits_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void push(Event ev) {
    queue_.emplace(std::make_pair(seq_++, std::move(ev)));
  }

  struct Order {
    bool operator()(const std::pair<std::uint64_t, Event>& a,
                    const std::pair<std::uint64_t, Event>& b) const {
      if (a.second.end_ms != b.second.end_ms)
        return a.second.end_ms > b.second.end_ms;
      return a.first > b.first;  // FIFO for equal times
    }
  };

  gen::GenerationEngine gen_engine_;
  ret::RetrievalEngine ret_engine_;
  double now_ = 0.0;
  double gen_free_at_ = 0.0;
  double ret_free_at_ = 0.0;
  std::uint64_t seq_ = 0;
  std::priority_queue<std::pair<std::uint64_t, Event>,
                      std::vector<std::pair<std::uint64_t, Event>>, Order>
      queue_;
  std::vector<GenSubmit> pending_submits_;
};

// Live transport: two worker threads around the same engines. Generation
// sleeps its modeled step latency (the lane is modeled); retrieval runs the
// real distance math on a pool and reports measured wallclock.
class LiveTransport : public Transport {
 public:
  LiveTransport(const SchedulerConfig& cfg, const ivf::IvfIndex& index)
      : gen_engine_(cfg.gen_latency, cfg.seed ^ 0x67656e5f73656564ull),
        ret_engine_(&index, cfg.ret_cost,
                    cfg.cache_enabled ? cfg.cache_cfg : cache::CacheConfig{}),
        epoch_(std::chrono::steady_clock::now()) {
    gen_thread_ = std::thread([this] { gen_loop(); });
    ret_thread_ = std::thread([this] { ret_loop(); });
  }

  ~LiveTransport() override { shutdown(); }

  void shutdown() override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    gen_cv_.notify_all();
    ret_cv_.notify_all();
    if (gen_thread_.joinable()) gen_thread_.join();
    if (ret_thread_.joinable()) ret_thread_.join();
  }

  double now_ms() override {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - epoch_)
        .count();
  }

  void gen_submit(const GenSubmit& submit) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      gen_cmds_.push_back(GenCmd{GenCmd::Kind::Submit, submit, {}, 0.0});
    }
    gen_cv_.notify_all();
  }

  void gen_cancel(RequestId request_id, NodeId node_id) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      gen_cmds_.push_back(
          GenCmd{GenCmd::Kind::Cancel, {}, {request_id, node_id}, 0.0});
    }
    gen_cv_.notify_all();
  }

  void start_gen_step(double not_before_ms) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      gen_cmds_.push_back(GenCmd{GenCmd::Kind::Step, {}, {}, not_before_ms});
    }
    gen_cv_.notify_all();
  }

  void ret_submit(ret::RetrievalTask task) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ret_cmds_.push_back(RetCmd{RetCmd::Kind::Submit, std::move(task), {}, 0.0, {}});
    }
    ret_cv_.notify_all();
  }

  void ret_cancel(RequestId request_id, NodeId node_id) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ret_cmds_.push_back(
          RetCmd{RetCmd::Kind::Cancel, {}, {request_id, node_id}, 0.0, {}});
    }
    ret_cv_.notify_all();
  }

  void start_ret_batch(ret::SubStageBatch batch, double not_before_ms) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ret_cmds_.push_back(
          RetCmd{RetCmd::Kind::Exec, {}, {}, not_before_ms, std::move(batch)});
    }
    ret_cv_.notify_all();
  }

  Event wait_next(std::optional<double> timer_at_ms) override {
    std::unique_lock<std::mutex> lock(mu_);
    const auto ready = [&] { return !events_.empty(); };
    if (timer_at_ms) {
      const auto deadline =
          epoch_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                       std::chrono::duration<double, std::milli>(*timer_at_ms));
      if (!event_cv_.wait_until(lock, deadline, ready)) {
        Event ev;
        ev.kind = Event::Kind::Timer;
        ev.start_ms = ev.end_ms = *timer_at_ms;
        return ev;
      }
    } else {
      event_cv_.wait(lock, ready);
    }
    Event ev = std::move(events_.front());
    events_.pop_front();
    return ev;
  }

  ret::RetrievalEngine& ret_engine() override { return ret_engine_; }

 private:
  struct GenCmd {
    enum class Kind { Submit, Cancel, Step };
    Kind kind;
    GenSubmit submit;
    std::pair<RequestId, NodeId> target;
    double not_before_ms;
  };
  struct RetCmd {
    enum class Kind { Submit, Cancel, Exec };
    Kind kind;
    ret::RetrievalTask task;
    std::pair<RequestId, NodeId> target;
    double not_before_ms;
    ret::SubStageBatch batch;
  };

  void sleep_until_ms(double t_ms) {
    const auto deadline =
        epoch_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                     std::chrono::duration<double, std::milli>(t_ms));
    std::this_thread::sleep_until(deadline);
  }

  void gen_loop() {
    std::vector<GenSubmit> queued;
    while (true) {
      GenCmd cmd;
      {
        std::unique_lock<std::mutex> lock(mu_);
        gen_cv_.wait(lock, [&] { return stopping_ || !gen_cmds_.empty(); });
        if (stopping_ && gen_cmds_.empty()) return;
        cmd = std::move(gen_cmds_.front());
        gen_cmds_.pop_front();
      }
      switch (cmd.kind) {
        case GenCmd::Kind::Submit:
          queued.push_back(cmd.submit);
          break;
        case GenCmd::Kind::Cancel:
          queued.erase(std::remove_if(queued.begin(), queued.end(),
                                      [&](const GenSubmit& s) {
                                        return s.request_id == cmd.target.first &&
                                               s.node_id == cmd.target.second;
                                      }),
                       queued.end());
          gen_engine_.cancel(cmd.target.first, cmd.target.second);
          break;
        case GenCmd::Kind::Step: {
          double start = std::max(now_ms(), cmd.not_before_ms);
          if (!gen_engine_.has_work()) {
            double earliest = std::numeric_limits<double>::infinity();
            for (const auto& s : queued)
              earliest = std::min(earliest, s.effective_at_ms);
            if (std::isfinite(earliest)) start = std::max(start, earliest);
          }
          sleep_until_ms(start);
          start = std::max(start, now_ms());
          auto it = queued.begin();
          while (it != queued.end()) {
            if (it->effective_at_ms <= start) {
              gen_engine_.submit(it->request_id, it->node_id, it->span,
                                 it->total_tokens, it->prompt_tokens,
                                 it->speculative);
              it = queued.erase(it);
            } else {
              ++it;
            }
          }
          Event ev;
          ev.kind = Event::Kind::GenStep;
          ev.start_ms = start;
          ev.gen_report = gen_engine_.step();
          sleep_until_ms(start + ev.gen_report.latency_ms);
          ev.end_ms = now_ms();
          {
            std::lock_guard<std::mutex> lock(mu_);
            events_.push_back(std::move(ev));
          }
          event_cv_.notify_all();
          break;
        }
      }
    }
  }

  void ret_loop() {
    while (true) {
      RetCmd cmd;
      {
        std::unique_lock<std::mutex> lock(mu_);
        ret_cv_.wait(lock, [&] { return stopping_ || !ret_cmds_.empty(); });
        if (stopping_ && ret_cmds_.empty()) return;
        cmd = std::move(ret_cmds_.front());
        ret_cmds_.pop_front();
      }
      switch (cmd.kind) {
        case RetCmd::Kind::Submit:
          ret_engine_.submit(std::move(cmd.task));
          break;
        case RetCmd::Kind::Cancel:
          ret_engine_.cancel(cmd.target.first, cmd.target.second);
          break;
        case RetCmd::Kind::Exec: {
          sleep_until_ms(cmd.not_before_ms);
          Event ev;
          ev.kind = Event::Kind::RetBatch;
          ev.start_ms = std::max(cmd.not_before_ms, now_ms());
          ev.ret_report = ret_engine_.execute(cmd.batch, ev.start_ms,
                                              /*live_math=*/true);
          ev.end_ms = now_ms();
          ev.batch = std::move(cmd.batch);
          {
            std::lock_guard<std::mutex> lock(mu_);
            events_.push_back(std::move(ev));
          }
          event_cv_.notify_all();
          break;
        }
      }
    }
  }

  gen::GenerationEngine gen_engine_;
  ret::RetrievalEngine ret_engine_;
  std::chrono::steady_clock::time_point epoch_;
  std::thread gen_thread_, ret_thread_;
  std::mutex mu_;
  std::condition_variable gen_cv_, ret_cv_, event_cv_;
  std::deque<GenCmd> gen_cmds_;
  std::deque<RetCmd> ret_cmds_;
  std::deque<Event> events_;
  bool stopping_ = false;
};

}  // namespace

// ===========================================================================
// Runtime: request lifecycle, graph transformations, speculation, metrics.
// ===========================================================================

namespace {

std::string format_doc_ids(const ivf::TopKResult& topk) {
  std::string out = "[";
  for (std::size_t i = 0; i < topk.entries().size(); ++i) {
    if (i) out += ",";
    out += std::to_string(topk.entries()[i].doc_id);
  }
  out += "]";
  return out;
}

std::string render_prompt(const std::string& tmpl, const rag::VarStore& vars,
                          const std::string& staged_var,
                          const std::string& staged_text) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out += tmpl.substr(pos);
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string::npos) {
      out += tmpl.substr(pos);
      break;
    }
    out += tmpl.substr(pos, open - pos);
    const std::string var = tmpl.substr(open + 1, close - open - 1);
    if (!staged_var.empty() && var == staged_var) {
      out += staged_text;
    } else {
      auto it = vars.find(var);
      out += it == vars.end() ? "" : it->second.text;
    }
    pos = close + 1;
  }
  return out;
}

std::uint32_t count_tokens(const std::string& text) {
  std::uint32_t n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool ws = c == ' ' || c == '\t' || c == '\n';
    if (!ws && !in_token) ++n;
    in_token = !ws;
  }
  return n;
}

struct StageState {
  NodeId node = 0;
  bool is_retrieval = false;
  double started_ms = -1.0;  // first dispatch
  // Retrieval.
  std::vector<ClusterId> plan;
  std::size_t submitted_pos = 0;
  std::size_t effective_topk = 1;
  std::vector<std::uint64_t> carve_bounds;  // cumulative sub-node boundaries
  bool reordered = false;
  bool seeded = false;
  // Generation.
  const gen::GenerationScript* script = nullptr;
  std::uint32_t prompt_tokens = 0;
  bool gen_submitted = false;
  bool spec_retr_launched = false;
  NodeId spec_retr_node = 0;
  Embedding last_partial;
  bool has_last_partial = false;
  std::uint64_t tokens_done = 0;
};

struct SpecGenState {
  NodeId retrieval_node = 0;
  NodeId gen_node = 0;
  ivf::TopKResult partial;
  rag::VarStore snapshot;
  const gen::GenerationScript* script = nullptr;
  bool gen_completed = false;
  bool validated = false;
};

struct RequestRuntime {
  RequestId id = 0;
  const harness::TraceRequest* trace = nullptr;
  const rag::RAGraph* graph = nullptr;
  rag::VarStore vars;
  std::map<NodeId, int> entry_count;
  std::size_t scripts_committed = 0;

  enum class Phase { Pending, Ready, GenRunning, RetRunning, Done, Failed };
  Phase phase = Phase::Pending;
  NodeId current = rag::kStart;
  StageState stage;
  std::optional<SpecGenState> spec_gen;
  rag::GraphInstance instance;
  std::size_t next_anchor = 0;

  double done_at_ms = 0.0;
  std::map<NodeId, double> stage_started_ms;
};

class Runtime {
 public:
  Runtime(const SchedulerConfig& cfg, const harness::RequestTrace& trace,
          const ivf::IvfIndex& index, harness::TraceSink* sink)
      : cfg_(cfg), trace_(trace), index_(index), sink_(sink) {
    if (cfg_.clock == ClockMode::Virtual)
      transport_ = std::make_unique<VirtualTransport>(cfg_, index_);
    else
      transport_ = std::make_unique<LiveTransport>(cfg_, index_);
    delta_threshold_ =
        cfg_.locality_delta_scale * std::max(index_.mean_assigned_distance, 1e-12);
    for (const auto& name : rag::workflow_template_names())
      workflows_[name] = rag::workflow_template(name);
    for (auto& [name, graph] : workflows_) {
      const auto diags = graph.validate();
      if (!diags.empty())
        throw std::logic_error("workflow template " + name + ": " + diags[0]);
    }
  }

  harness::ExperimentReport run() {
    std::vector<const harness::TraceRequest*> order;
    for (const auto& r : trace_.requests) order.push_back(&r);
    std::sort(order.begin(), order.end(),
              [](const harness::TraceRequest* a, const harness::TraceRequest* b) {
                if (a->arrival_ms != b->arrival_ms) return a->arrival_ms < b->arrival_ms;
                return a->id < b->id;
              });
    arrivals_ = std::move(order);

    while (true) {
      const double now = transport_->now_ms();
      admit_arrivals(now);
      plan(now);
      if (all_done()) break;
      std::optional<double> timer;
      if (!gen_busy_ && !ret_busy_ && next_arrival_ < arrivals_.size())
        timer = arrivals_[next_arrival_]->arrival_ms;
      if (!gen_busy_ && !ret_busy_ && !timer)
        throw std::logic_error("scheduler stalled with pending requests");
      const Event ev = transport_->wait_next(timer);
      integrate(ev);
    }
    transport_->shutdown();
    finalize();
    return report_;
  }

 private:
  // --- admission & bookkeeping ------------------------------------------

  void admit_arrivals(double now) {
    while (next_arrival_ < arrivals_.size() &&
           arrivals_[next_arrival_]->arrival_ms <= now) {
      const auto* tr = arrivals_[next_arrival_++];
      RequestRuntime rr;
      rr.id = tr->id;
      rr.trace = tr;
      auto it = workflows_.find(tr->workflow);
      if (it == workflows_.end())
        throw std::invalid_argument("trace references unknown workflow " + tr->workflow);
      rr.graph = &it->second;
      rr.vars["input"] = rag::VarValue{tr->input_text, tr->input_embedding};
      requests_.emplace(tr->id, std::move(rr));
      auto& req = requests_.at(tr->id);
      trace_event(now, "sched", req.id, rag::kStart, -1, "arrival", 0.0);
      advance_request(req, rag::kStart, now);
    }
  }

  bool all_done() const {
    if (next_arrival_ < arrivals_.size()) return false;
    for (const auto& [id, req] : requests_) {
      (void)id;
      if (req.phase != RequestRuntime::Phase::Done &&
          req.phase != RequestRuntime::Phase::Failed)
        return false;
    }
    return true;
  }

  void advance_request(RequestRuntime& req, NodeId completed, double now) {
    NodeId next;
    try {
      next = rag::advance(*req.graph, completed, req.vars, req.entry_count);
    } catch (const std::exception& e) {
      fail_request(req, now, e.what());
      return;
    }
    if (next == rag::kEnd) {
      req.phase = RequestRuntime::Phase::Done;
      req.current = rag::kEnd;
      req.done_at_ms = now;
      locality_.evict(req.id);
      makespan_ = std::max(makespan_, now);
      trace_event(now, "sched", req.id, rag::kEnd, -1, "complete",
                  now - req.trace->arrival_ms);
      return;
    }
    req.current = next;
    req.phase = RequestRuntime::Phase::Ready;
    if (now - req.trace->arrival_ms > cfg_.slo_ms) {
      fail_request(req, now, "slo timeout");
      return;
    }
  }

  void fail_request(RequestRuntime& req, double now, const std::string& why) {
    if (req.phase == RequestRuntime::Phase::GenRunning)
      transport_->gen_cancel(req.id, req.stage.node);
    if (req.phase == RequestRuntime::Phase::RetRunning &&
        transport_->ret_engine().has_task(req.id, req.stage.node))
      transport_->ret_cancel(req.id, req.stage.node);
    if (req.stage.spec_retr_launched) finish_spec_retrieval(req, now, false);
    if (req.spec_gen && !req.spec_gen->gen_completed)
      transport_->gen_cancel(req.id, req.spec_gen->gen_node);
    req.spec_gen.reset();
    req.phase = RequestRuntime::Phase::Failed;
    req.done_at_ms = now;
    locality_.evict(req.id);
    makespan_ = std::max(makespan_, now);
    trace_event(now, "sched", req.id, req.current, -1, "failed: " + why, 0.0);
  }

  // --- stage startup ------------------------------------------------------

  const gen::GenerationScript& next_script(RequestRuntime& req) const {
    if (req.scripts_committed >= req.trace->scripts.size())
      throw std::runtime_error("trace underprovisioned: request " +
                               std::to_string(req.id) + " needs another script");
    return req.trace->scripts[req.scripts_committed];
  }

  int effective_topk(const rag::RetrievalSpec& spec) const {
    return cfg_.topk_override ? *cfg_.topk_override : spec.topk;
  }

  void start_generation_stage(RequestRuntime& req, double dispatch_at,
                              double now) {
    const auto& spec = req.graph->node(req.current).generation();
    req.stage = StageState{};
    req.stage.node = req.current;
    req.stage.is_retrieval = false;
    req.stage.script = &next_script(req);
    const std::string prompt = render_prompt(spec.prompt_template, req.vars, "", "");
    req.stage.prompt_tokens = count_tokens(prompt);
    req.stage.started_ms = dispatch_at;
    req.stage_started_ms[req.current] = now;
    req.phase = RequestRuntime::Phase::GenRunning;
    req.instance.set_subnodes(
        req.current,
        rag::split_node(req.current, req.stage.script->total_tokens,
                        std::vector<std::uint64_t>{0, req.stage.script->total_tokens}));

    GenSubmit submit;
    submit.effective_at_ms = dispatch_at;
    submit.request_id = req.id;
    submit.node_id = req.current;
    submit.span = rag::Span{0, req.stage.script->total_tokens};
    submit.total_tokens = req.stage.script->total_tokens;
    submit.prompt_tokens = req.stage.prompt_tokens;
    submit.speculative = false;
    transport_->gen_submit(submit);
    ++gen_pending_joins_;
    pending_prefill_tokens_ += req.stage.prompt_tokens;
    earliest_pending_join_ = std::min(earliest_pending_join_, dispatch_at);
    trace_event(now, "sched", req.id, req.current, 0, "gen_stage_start", 0.0);
  }

  void start_retrieval_stage(RequestRuntime& req, double now) {
    const auto& spec = req.graph->node(req.current).retrieval();
    auto it = req.vars.find(spec.query_var);
    if (it == req.vars.end() || !it->second.embedding) {
      fail_request(req, now, "query variable lacks an embedding");
      return;
    }
    const Embedding& query = *it->second.embedding;
    req.stage = StageState{};
    req.stage.node = req.current;
    req.stage.is_retrieval = true;
    req.stage.effective_topk = static_cast<std::size_t>(effective_topk(spec));
    req.stage_started_ms[req.current] = now;
    // Speculative edges are per stage instance; loop iterations start clean.
    req.instance.clear_spec_edges();

    const bool hedra = cfg_.strategy == Strategy::Hedra;
    const std::size_t nprobe = std::min(cfg_.nprobe, index_.k_clusters());
    const std::size_t heap_k =
        hedra ? std::max(req.stage.effective_topk, cfg_.k_cache)
              : req.stage.effective_topk;
    auto cursor = ivf::make_cursor(index_, query, nprobe, heap_k);

    if (hedra && cfg_.locality_reuse) {
      ++report_.probe_attempts;
      const auto probe = sim::probe_cache(locality_, req.id, cursor.query, heap_k,
                                          delta_threshold_, cursor.plan);
      if (probe) {
        ++report_.probe_hits;
        cursor.plan = sim::reorder_clusters(cursor.plan, probe->result_clusters,
                                            probe->searched);
        cursor.heap = ivf::merge_topk(cursor.heap, probe->seed, heap_k);
        req.stage.reordered = true;
        req.stage.seeded = !probe->seed.empty();
        trace_event(now, "sched", req.id, req.current, -1, "reorder_seed", 0.0);
      }
    }
    req.stage.plan = cursor.plan;
    req.stage.carve_bounds = {0};

    ret::RetrievalTask task;
    task.request_id = req.id;
    task.node_id = req.current;
    task.cursor = std::move(cursor);
    task.origin = ret::TaskOrigin::Normal;
    transport_->ret_submit(std::move(task));
    req.phase = RequestRuntime::Phase::RetRunning;
    if (t_ret_ewma_ < 0.0) {
      double est = ret::fixed_call_ms(cfg_.ret_cost);
      for (ClusterId c : req.stage.plan)
        est += ret::cluster_variable_ms(index_, c, ret::Lane::Slow, cfg_.ret_cost);
      t_ret_ewma_ = est;
    }
    trace_event(now, "sched", req.id, req.current, -1, "ret_stage_start", 0.0);
  }

  // --- strategy planning ----------------------------------------------------

  void plan(double now) {
    switch (cfg_.strategy) {
      case Strategy::CoarseSequential:
        plan_coarse(now);
        break;
      case Strategy::NaiveAsync:
        plan_naive(now);
        break;
      case Strategy::Hedra:
        plan_hedra(now);
        break;
    }
  }

  std::vector<WavefrontEntry> ready_entries() const {
    std::vector<WavefrontEntry> ready;
    for (const auto& [id, req] : requests_) {
      (void)id;
      if (req.phase != RequestRuntime::Phase::Ready) continue;
      WavefrontEntry e;
      e.arrival_ms = req.trace->arrival_ms;
      e.request_id = req.id;
      e.node_id = req.current;
      e.is_retrieval = !req.graph->node(req.current).is_generation();
      ready.push_back(e);
    }
    return ready;
  }

  void plan_coarse(double now) {
    if (gen_busy_ || ret_busy_) return;
    auto ready = select_wavefront(ready_entries());
    if (ready.empty()) return;
    const auto& e = ready.front();  // one stage at a time, FIFO
    auto& req = requests_.at(e.request_id);
    const double work_start = now + cfg_.beta_ms;
    if (e.is_retrieval) {
      start_retrieval_stage(req, now);
      if (req.phase != RequestRuntime::Phase::RetRunning) return;
      req.stage.started_ms = work_start;
      ret::SubStageBatch batch;
      ret::BatchItem item;
      item.request_id = req.id;
      item.node_id = req.current;
      item.clusters = req.stage.plan;
      batch.items.push_back(std::move(item));
      req.stage.submitted_pos = req.stage.plan.size();
      req.stage.carve_bounds.push_back(req.stage.plan.size());
      transport_->start_ret_batch(std::move(batch), work_start);
      ret_busy_ = true;
    } else {
      start_generation_stage(req, work_start, now);
      if (req.phase != RequestRuntime::Phase::GenRunning) return;
      transport_->start_gen_step(work_start);
      gen_busy_ = true;
    }
  }

  void plan_naive(double now) {
    auto ready = select_wavefront(ready_entries());
    for (const auto& e : ready) {
      auto& req = requests_.at(e.request_id);
      const double work_start = now + cfg_.beta_ms;
      if (e.is_retrieval) {
        start_retrieval_stage(req, now);
        if (req.phase == RequestRuntime::Phase::RetRunning)
          naive_ret_queue_.push_back(req.id);
      } else {
        start_generation_stage(req, work_start, now);
      }
    }
    // Retrieval worker: batch-on-arrival, whole remaining plans.
    if (!ret_busy_ && !naive_ret_queue_.empty()) {
      ret::SubStageBatch batch;
      for (RequestId id : naive_ret_queue_) {
        auto& req = requests_.at(id);
        if (req.phase != RequestRuntime::Phase::RetRunning) continue;
        ret::BatchItem item;
        item.request_id = id;
        item.node_id = req.stage.node;
        item.clusters = req.stage.plan;
        req.stage.started_ms = now + cfg_.beta_ms;
        req.stage.submitted_pos = req.stage.plan.size();
        req.stage.carve_bounds.push_back(req.stage.plan.size());
        batch.items.push_back(std::move(item));
      }
      naive_ret_queue_.clear();
      transport_->start_ret_batch(std::move(batch), now + cfg_.beta_ms);
      ret_busy_ = true;
    }
    // Generation worker: continuous stepping while anything is active.
    if (!gen_busy_ && (gen_active_shadow_ > 0 || gen_pending_joins_ > 0)) {
      double not_before = now;
      if (gen_active_shadow_ == 0) not_before = earliest_pending_join_;
      transport_->start_gen_step(not_before);
      gen_busy_ = true;
    }
  }

  void plan_hedra(double now) {
    if (gen_busy_ || ret_busy_) return;  // cycle in flight
    auto ready = select_wavefront(ready_entries());
    const bool have_running = anything_running();
    if (ready.empty() && !have_running && gen_active_shadow_ == 0 &&
        gen_pending_joins_ == 0)
      return;

    const double work_start = now + cfg_.beta_ms;
    for (const auto& e : ready) {
      auto& req = requests_.at(e.request_id);
      if (e.is_retrieval) {
        start_retrieval_stage(req, now);
        if (req.phase == RequestRuntime::Phase::RetRunning &&
            req.stage.started_ms < 0.0)
          req.stage.started_ms = work_start;
      } else {
        start_generation_stage(req, work_start, now);
      }
    }

    const double mb = cfg_.mb_override_ms
                          ? *cfg_.mb_override_ms
                          : compute_time_budget(std::max(t_ret_ewma_, 1e-6),
                                                cfg_.beta_ms, cfg_.min_budget_ms,
                                                cfg_.eq1_printed_form);

    if (cfg_.speculation && cfg_.calibration.valid())
      plan_speculation(work_start, now);

    // Sub-stage batch over every live retrieval task, wavefront order.
    std::vector<PlanEntry> entries;
    std::vector<std::pair<RequestId, NodeId>> entry_keys;
    {
      std::vector<WavefrontEntry> live;
      for (const auto& [id, req] : requests_) {
        (void)id;
        if (req.phase == RequestRuntime::Phase::RetRunning &&
            req.stage.submitted_pos < req.stage.plan.size()) {
          WavefrontEntry e;
          e.arrival_ms = req.trace->arrival_ms;
          e.request_id = req.id;
          e.node_id = req.stage.node;
          e.is_retrieval = true;
          live.push_back(e);
        }
        if (req.stage.spec_retr_launched &&
            spec_retr_remaining_.count({req.id, req.stage.spec_retr_node})) {
          WavefrontEntry e;
          e.arrival_ms = req.trace->arrival_ms;
          e.request_id = req.id;
          e.node_id = req.stage.spec_retr_node;
          e.is_retrieval = true;
          live.push_back(e);
        }
      }
      live = select_wavefront(std::move(live));
      for (const auto& e : live) {
        auto& req = requests_.at(e.request_id);
        PlanEntry pe;
        pe.request_id = e.request_id;
        pe.node_id = e.node_id;
        if (req.phase == RequestRuntime::Phase::RetRunning &&
            e.node_id == req.stage.node) {
          pe.remaining = std::span<const ClusterId>(req.stage.plan).subspan(
              req.stage.submitted_pos);
        } else {
          const auto& rem = spec_retr_remaining_.at({e.request_id, e.node_id});
          pe.remaining = std::span<const ClusterId>(rem.plan).subspan(rem.pos);
        }
        if (pe.remaining.empty()) continue;
        entries.push_back(pe);
        entry_keys.emplace_back(e.request_id, e.node_id);
      }
    }
    bool dispatched_ret = false;
    if (!entries.empty()) {
      auto batch = plan_substages(entries, mb, index_, cfg_.ret_cost);
      for (const auto& item : batch.items) {
        auto& req = requests_.at(item.request_id);
        if (req.phase == RequestRuntime::Phase::RetRunning &&
            item.node_id == req.stage.node) {
          req.stage.submitted_pos += item.clusters.size();
          req.stage.carve_bounds.push_back(req.stage.submitted_pos);
          carve_subnodes(req);
        } else {
          spec_retr_remaining_.at({item.request_id, item.node_id}).pos +=
              item.clusters.size();
        }
      }
      transport_->start_ret_batch(std::move(batch), work_start);
      ret_busy_ = true;
      dispatched_ret = true;
    }

    // Generation window sized to the same budget.
    if (gen_active_shadow_ > 0 || gen_pending_joins_ > 0) {
      const double step_ms =
          cfg_.gen_latency.base_ms +
          cfg_.gen_latency.per_seq_ms *
              static_cast<double>(gen_active_shadow_ + gen_pending_joins_);
      window_steps_left_ = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::ceil(mb / std::max(step_ms, 1e-9))));
      double not_before = work_start;
      if (gen_active_shadow_ == 0)
        not_before = std::max(not_before, earliest_pending_join_);
      transport_->start_gen_step(not_before);
      gen_busy_ = true;
    } else {
      window_steps_left_ = 0;
    }
    (void)dispatched_ret;
  }

  bool anything_running() const {
    for (const auto& [id, req] : requests_) {
      (void)id;
      if (req.phase == RequestRuntime::Phase::GenRunning ||
          req.phase == RequestRuntime::Phase::RetRunning)
        return true;
    }
    return false;
  }

  void carve_subnodes(RequestRuntime& req) {
    // Live view: carved blocks plus the uncarved tail as the final sub-node.
    auto bounds = req.stage.carve_bounds;
    const std::uint64_t total = req.stage.plan.size();
    if (bounds.back() != total) bounds.push_back(total);
    if (bounds.size() < 2) return;
    req.instance.set_subnodes(req.stage.node,
                              rag::split_node(req.stage.node, total, bounds));
  }

  // --- speculation -----------------------------------------------------------

  void plan_speculation(double work_start, double now) {
    const auto estimate = throughput_estimate(
        gen_active_shadow_ + gen_pending_joins_, pending_prefill_tokens_,
        cfg_.calibration);
    if (!trigger_speculation(estimate, cfg_.tau)) return;

    std::vector<SpecGenCandidate> gen_cands;
    std::vector<SpecRetrCandidate> retr_cands;
    for (auto& [id, req] : requests_) {
      (void)id;
      // Speculative generation off partial retrieval results.
      if (req.phase == RequestRuntime::Phase::RetRunning && !req.spec_gen &&
          req.stage.submitted_pos > 0 &&
          req.stage.submitted_pos < req.stage.plan.size() &&
          req.scripts_committed < req.trace->scripts.size()) {
        const NodeId successor = unique_unconditional_successor(req, req.stage.node);
        if (successor != rag::kEnd && successor != rag::kStart &&
            req.graph->has_node(successor) &&
            req.graph->node(successor).is_generation()) {
          const auto* task = transport_->ret_engine().find(req.id, req.stage.node);
          if (task && !task->cursor.heap.empty()) {
            const auto heap_view = task->cursor.heap.truncated(req.stage.effective_topk);
            double mean = 0.0;
            for (const auto& e : heap_view.entries()) mean += e.distance;
            mean /= static_cast<double>(heap_view.size());
            SpecGenCandidate c;
            c.request_id = req.id;
            c.retrieval_node = req.stage.node;
            c.gen_node = successor;
            c.mean_heap_distance = mean;
            const auto& gspec = req.graph->node(successor).generation();
            const auto staged = format_doc_ids(heap_view);
            c.prompt_tokens = count_tokens(
                render_prompt(gspec.prompt_template, req.vars,
                              req.graph->node(req.stage.node).retrieval().output_var,
                              staged));
            gen_cands.push_back(std::move(c));
          }
        }
      }
      // Speculative retrieval off partial-generation embeddings.
      if (req.phase == RequestRuntime::Phase::GenRunning &&
          !req.stage.spec_retr_launched && req.stage.script &&
          req.stage.tokens_done > 0) {
        const NodeId successor = first_retrieval_successor(req, req.stage.node);
        if (successor != rag::kEnd && req.graph->has_node(successor) &&
            !req.graph->node(successor).is_generation()) {
          const double ratio =
              static_cast<double>(req.stage.tokens_done) /
              static_cast<double>(req.stage.script->total_tokens);
          const Embedding current = gen::partial_embedding(*req.stage.script, ratio);
          if (req.stage.has_last_partial) {
            SpecRetrCandidate c;
            c.request_id = req.id;
            c.gen_node = req.stage.node;
            c.retrieval_node = successor;
            c.drift = sim::semantic_drift(req.stage.last_partial, current);
            retr_cands.push_back(std::move(c));
          }
          req.stage.last_partial = current;
          req.stage.has_last_partial = true;
        }
      }
    }

    const auto picks = choose_speculative_candidates(gen_cands, retr_cands,
                                                     estimate, cfg_.tau,
                                                     cfg_.calibration);
    for (const auto& pick : picks) {
      if (pick.is_gen)
        launch_spec_generation(gen_cands[pick.index], work_start, now);
      else
        launch_spec_retrieval(retr_cands[pick.index], now);
    }
  }

  NodeId unique_unconditional_successor(const RequestRuntime& req,
                                        NodeId node) const {
    NodeId target = rag::kStart;
    int count = 0;
    for (const auto& e : req.graph->edges()) {
      if (e.from != node) continue;
      ++count;
      if (e.cond) return rag::kStart;  // conditional successors stay sequential
      target = e.to;
    }
    return count == 1 ? target : rag::kStart;
  }

  NodeId first_retrieval_successor(const RequestRuntime& req, NodeId node) const {
    for (const auto& e : req.graph->edges()) {
      if (e.from != node) continue;
      if (e.to != rag::kEnd && req.graph->has_node(e.to) &&
          !req.graph->node(e.to).is_generation())
        return e.to;
    }
    return rag::kEnd;
  }

  void launch_spec_generation(const SpecGenCandidate& cand, double work_start,
                              double now) {
    auto& req = requests_.at(cand.request_id);
    const auto* task = transport_->ret_engine().find(req.id, cand.retrieval_node);
    if (!task) return;
    SpecGenState spec;
    spec.retrieval_node = cand.retrieval_node;
    spec.gen_node = cand.gen_node;
    spec.partial = task->cursor.heap.truncated(req.stage.effective_topk);
    spec.snapshot = req.vars;
    spec.script = &next_script(req);

    // Graph surgery: speculative edge from the last completed sub-node, then
    // the successor's dependency is rewired onto it.
    carve_subnodes(req);
    const std::size_t from_index = req.stage.carve_bounds.size() >= 2
                                       ? req.stage.carve_bounds.size() - 2
                                       : 0;
    const rag::SubNodeRef from_ref{cand.retrieval_node, from_index};
    req.instance.insert_speculative_edge(from_ref, cand.gen_node,
                                         req.next_anchor++);
    auto gen_subs = rag::split_node(
        cand.gen_node, spec.script->total_tokens,
        std::vector<std::uint64_t>{0, spec.script->total_tokens});
    gen_subs[0].speculative = true;
    gen_subs[0].rollback_anchor = req.next_anchor - 1;
    gen_subs[0].deps = {rag::SubNodeRef{cand.retrieval_node,
                                        req.instance.subnodes(cand.retrieval_node).size() - 1}};
    req.instance.set_subnodes(cand.gen_node, std::move(gen_subs));
    req.instance.rewire_dependency(rag::SubNodeRef{cand.gen_node, 0}, {from_ref});

    GenSubmit submit;
    submit.effective_at_ms = work_start;
    submit.request_id = req.id;
    submit.node_id = cand.gen_node;
    submit.span = rag::Span{0, spec.script->total_tokens};
    submit.total_tokens = spec.script->total_tokens;
    submit.prompt_tokens = cand.prompt_tokens;
    submit.speculative = true;
    transport_->gen_submit(submit);
    ++gen_pending_joins_;
    pending_prefill_tokens_ += cand.prompt_tokens;
    earliest_pending_join_ = std::min(earliest_pending_join_, work_start);

    req.spec_gen = std::move(spec);
    ++report_.spec_gen_launched;
    trace_event(now, "sched", req.id, cand.gen_node,
                static_cast<std::int64_t>(from_index), "speculate_gen", 0.0);
  }

  void launch_spec_retrieval(const SpecRetrCandidate& cand, double now) {
    auto& req = requests_.at(cand.request_id);
    if (transport_->ret_engine().has_task(req.id, cand.retrieval_node)) return;
    if (!req.stage.has_last_partial) return;
    const std::size_t nprobe = std::min(cfg_.nprobe, index_.k_clusters());
    auto cursor = ivf::make_cursor(index_, req.stage.last_partial, nprobe,
                                   cfg_.k_cache);
    SpecRetrRemaining rem;
    rem.plan = cursor.plan;
    rem.pos = 0;
    rem.query = cursor.query;
    spec_retr_remaining_[{req.id, cand.retrieval_node}] = std::move(rem);

    ret::RetrievalTask task;
    task.request_id = req.id;
    task.node_id = cand.retrieval_node;
    task.cursor = std::move(cursor);
    task.origin = ret::TaskOrigin::SpeculativeRetrieval;
    transport_->ret_submit(std::move(task));
    req.stage.spec_retr_launched = true;
    req.stage.spec_retr_node = cand.retrieval_node;
    ++report_.spec_retr_launched;
    trace_event(now, "sched", req.id, cand.retrieval_node, -1, "speculate_retr",
                0.0);
  }

  // --- event integration ------------------------------------------------------

  void integrate(const Event& ev) {
    switch (ev.kind) {
      case Event::Kind::Timer:
        break;
      case Event::Kind::GenStep:
        integrate_gen_step(ev);
        break;
      case Event::Kind::RetBatch:
        integrate_ret_batch(ev);
        break;
    }
  }

  void integrate_gen_step(const Event& ev) {
    const auto& r = ev.gen_report;
    gen_busy_ = false;
    report_.gen_busy_ms += ev.end_ms - ev.start_ms;
    makespan_ = std::max(makespan_, ev.end_ms);
    gen_active_shadow_ = r.active_after;
    gen_pending_joins_ -= std::min<std::size_t>(gen_pending_joins_, r.joined);
    if (gen_pending_joins_ == 0) {
      pending_prefill_tokens_ = 0;
      earliest_pending_join_ = std::numeric_limits<double>::infinity();
    }
    if (r.tokens_advanced > 0)
      trace_event(ev.start_ms, "gen", -1, -1, -1, "step", ev.end_ms - ev.start_ms);

    for (const auto& p : r.progress) {
      auto it = requests_.find(p.request_id);
      if (it == requests_.end()) continue;
      auto& req = it->second;
      if (req.phase == RequestRuntime::Phase::GenRunning &&
          req.stage.node == p.node_id)
        req.stage.tokens_done = p.tokens_done;
    }

    for (const auto& done : r.completed) {
      auto it = requests_.find(done.request_id);
      if (it == requests_.end()) continue;
      auto& req = it->second;
      if (req.spec_gen && done.node_id == req.spec_gen->gen_node &&
          !req.spec_gen->validated) {
        // Speculative output is held until the retrieval validates it.
        req.spec_gen->gen_completed = true;
        trace_event(ev.end_ms, "gen", req.id, done.node_id, 0, "spec_gen_done",
                    0.0);
        continue;
      }
      commit_generation(req, done.node_id, ev.end_ms);
    }

    // Chain the decode loop according to strategy.
    const bool work_left = gen_active_shadow_ > 0 || gen_pending_joins_ > 0;
    if (cfg_.strategy == Strategy::Hedra) {
      --window_steps_left_;
      if (window_steps_left_ > 0 && work_left) {
        transport_->start_gen_step(ev.end_ms);
        gen_busy_ = true;
      }
    } else if (cfg_.strategy == Strategy::NaiveAsync) {
      if (work_left) {
        double not_before = ev.end_ms;
        if (gen_active_shadow_ == 0) not_before = earliest_pending_join_;
        transport_->start_gen_step(not_before);
        gen_busy_ = true;
      }
    } else {
      if (work_left) {
        transport_->start_gen_step(ev.end_ms);
        gen_busy_ = true;
      }
    }
  }

  void commit_generation(RequestRuntime& req, NodeId node, double now) {
    const gen::GenerationScript* script = nullptr;
    if (req.spec_gen && node == req.spec_gen->gen_node) {
      script = req.spec_gen->script;  // validated speculation commits here
      req.spec_gen.reset();
    } else if (req.phase == RequestRuntime::Phase::GenRunning &&
               req.stage.node == node) {
      script = req.stage.script;
    } else {
      return;  // stale completion (cancelled request)
    }
    req.vars[req.graph->node(node).generation().output_var] =
        rag::VarValue{script->output_text, script->final_embedding};
    ++req.scripts_committed;
    report_.stage_breakdown["generation"].count += 1;
    const auto started = req.stage_started_ms.find(node);
    if (started != req.stage_started_ms.end())
      report_.stage_breakdown["generation"].total_ms += now - started->second;
    trace_event(now, "gen", req.id, node, 0, "gen_stage_done", 0.0);
    // An abandoned speculative retrieval for the successor stays live only
    // while its generation stage runs.
    if (req.stage.spec_retr_launched) finish_spec_retrieval(req, now, false);
    advance_request(req, node, now);
  }

  void integrate_ret_batch(const Event& ev) {
    const auto& r = ev.ret_report;
    ret_busy_ = false;
    const double busy = cfg_.clock == ClockMode::Virtual ? r.modeled_ms : r.wall_ms;
    report_.ret_busy_ms += ev.end_ms - ev.start_ms;
    (void)busy;
    report_.slow_lane_ms += r.slow_lane_ms;
    report_.fast_lane_ms += r.fast_lane_ms;
    makespan_ = std::max(makespan_, ev.end_ms);
    for (const auto& swap : r.swaps_started)
      trace_event(ev.start_ms, "ret", -1, -1, swap.cluster,
                  swap.inbound ? "swap_in" : "swap_out",
                  swap.completes_at_ms - ev.start_ms);

    for (const auto& item : ev.batch.items)
      trace_event(ev.start_ms, "ret", item.request_id, item.node_id,
                  static_cast<std::int64_t>(item.clusters.size()), "substage",
                  ev.end_ms - ev.start_ms);

    for (const auto& delta : r.deltas) {
      auto it = requests_.find(delta.request_id);
      if (it == requests_.end()) continue;
      auto& req = it->second;
      const bool is_spec_task =
          req.stage.spec_retr_launched && delta.node_id == req.stage.spec_retr_node &&
          !(req.phase == RequestRuntime::Phase::RetRunning &&
            delta.node_id == req.stage.node);
      if (delta.completed) {
        if (is_spec_task)
          finish_spec_retrieval(req, ev.end_ms, true);
        else
          finish_retrieval_stage(req, ev.end_ms);
      } else if (!is_spec_task && cfg_.approx_termination &&
                 req.phase == RequestRuntime::Phase::RetRunning &&
                 delta.node_id == req.stage.node) {
        const auto* task = transport_->ret_engine().find(req.id, req.stage.node);
        if (task && sim::should_terminate(task->cursor, cfg_.termination_streak)) {
          trace_event(ev.end_ms, "sched", req.id, req.stage.node, -1,
                      "early_terminate", 0.0);
          finish_retrieval_stage(req, ev.end_ms);
        }
      }
    }
  }

  void finish_spec_retrieval(RequestRuntime& req, double now, bool completed) {
    const NodeId node = req.stage.spec_retr_node;
    if (completed && transport_->ret_engine().has_task(req.id, node)) {
      auto task = transport_->ret_engine().extract(req.id, node);
      const auto& rem = spec_retr_remaining_.at({req.id, node});
      std::vector<ClusterId> searched(rem.plan.begin(), rem.plan.begin() + rem.pos);
      locality_.record_search(req.id,
                              sim::make_locality_record(index_, task.cursor.query,
                                                        task.cursor.heap, searched));
      trace_event(now, "ret", req.id, node, -1, "spec_retr_done", 0.0);
    } else if (transport_->ret_engine().has_task(req.id, node)) {
      transport_->ret_cancel(req.id, node);
      trace_event(now, "sched", req.id, node, -1, "spec_retr_abandoned", 0.0);
    }
    spec_retr_remaining_.erase({req.id, node});
    req.stage.spec_retr_launched = false;
    req.stage.spec_retr_node = 0;
  }

  void finish_retrieval_stage(RequestRuntime& req, double now) {
    if (req.phase != RequestRuntime::Phase::RetRunning) return;
    const NodeId node = req.stage.node;
    auto task = transport_->ret_engine().extract(req.id, node);
    const auto final_topk = task.cursor.heap.truncated(req.stage.effective_topk);

    // Side measurement: locality observations over consecutive retrievals.
    if (cfg_.collect_observations && !cfg_.approx_termination) {
      if (const auto* prev = locality_.find(req.id); prev != nullptr)
        measure_observations(*prev, task, final_topk);
    }

    if (cfg_.strategy == Strategy::Hedra) {
      std::vector<ClusterId> searched(
          task.cursor.plan.begin(),
          task.cursor.plan.begin() + task.cursor.next_pos);
      locality_.record_search(
          req.id, sim::make_locality_record(index_, task.cursor.query,
                                            task.cursor.heap, searched));
    }

    report_.retrieval_stages += 1;
    clusters_searched_total_ += task.cursor.clusters_searched;
    report_.stage_breakdown["retrieval"].count += 1;
    const auto started = req.stage_started_ms.find(node);
    if (started != req.stage_started_ms.end())
      report_.stage_breakdown["retrieval"].total_ms += now - started->second;

    const double stage_latency = now - req.stage.started_ms;
    t_ret_ewma_ = t_ret_ewma_ < 0.0
                      ? stage_latency
                      : cfg_.ewma_alpha * stage_latency +
                            (1.0 - cfg_.ewma_alpha) * t_ret_ewma_;

    // Any speculative retrieval attached to a *previous* generation stage is
    // gone by now; write the real result and validate pending speculation.
    const auto& spec = req.graph->node(node).retrieval();
    req.vars[spec.output_var] = rag::VarValue{format_doc_ids(final_topk), std::nullopt};
    trace_event(now, "ret", req.id, node, -1, "ret_stage_done", 0.0);

    if (req.spec_gen && req.spec_gen->retrieval_node == node) {
      auto& sg = *req.spec_gen;
      const auto outcome =
          sim::validate_speculation(sg.partial, final_topk, req.stage.effective_topk);
      if (outcome.kind == sim::SpecKind::Valid) {
        ++report_.spec_valid;
        sg.validated = true;
        trace_event(now, "sched", req.id, sg.gen_node, -1, "spec_valid", 0.0);
        NodeId next;
        try {
          next = rag::advance(*req.graph, node, req.vars, req.entry_count);
        } catch (const std::exception& e) {
          transport_->gen_cancel(req.id, sg.gen_node);
          req.spec_gen.reset();
          fail_request(req, now, e.what());
          return;
        }
        if (next != sg.gen_node) {
          // The workflow branched away from the speculated stage; discard.
          transport_->gen_cancel(req.id, sg.gen_node);
          req.spec_gen.reset();
          ++report_.rollbacks;
          after_advance(req, next, now);
          return;
        }
        req.current = next;
        req.stage_started_ms[next] = now;
        if (sg.gen_completed) {
          req.phase = RequestRuntime::Phase::GenRunning;  // commit path expects it
          req.stage = StageState{};
          req.stage.node = next;
          req.stage.script = sg.script;
          commit_generation(req, next, now);
        } else {
          req.phase = RequestRuntime::Phase::GenRunning;
          req.stage = StageState{};
          req.stage.node = next;
          req.stage.is_retrieval = false;
          req.stage.script = sg.script;
          req.stage.started_ms = now;
        }
        return;
      }
      // Mismatch: roll back to the anchor and re-execute non-speculatively.
      ++report_.spec_mismatch;
      ++report_.rollbacks;
      trace_event(now, "sched", req.id, sg.gen_node, -1, "spec_rollback", 0.0);
      if (!sg.gen_completed) transport_->gen_cancel(req.id, sg.gen_node);
      req.vars = sg.snapshot;
      req.vars[spec.output_var] =
          rag::VarValue{format_doc_ids(final_topk), std::nullopt};
      req.spec_gen.reset();
    }
    advance_request(req, node, now);
  }

  void after_advance(RequestRuntime& req, NodeId next, double now) {
    if (next == rag::kEnd) {
      req.phase = RequestRuntime::Phase::Done;
      req.current = rag::kEnd;
      req.done_at_ms = now;
      locality_.evict(req.id);
      makespan_ = std::max(makespan_, now);
      trace_event(now, "sched", req.id, rag::kEnd, -1, "complete",
                  now - req.trace->arrival_ms);
    } else {
      req.current = next;
      req.phase = RequestRuntime::Phase::Ready;
    }
  }

  void measure_observations(const sim::LocalityRecord& prev,
                            const ret::RetrievalTask& task,
                            const ivf::TopKResult& final_topk) {
    ++report_.observation_pairs;
    std::set<DocId> prev_ids;
    for (const auto& c : prev.candidates) prev_ids.insert(c.doc_id);
    bool obs1 = true, obs2 = true, obs3 = true;
    std::set<ClusterId> searched_now(task.cursor.plan.begin(),
                                     task.cursor.plan.begin() + task.cursor.next_pos);
    for (const auto& e : final_topk.entries()) {
      if (!prev_ids.count(e.doc_id)) obs1 = false;
      const auto loc = index_.locate(e.doc_id);
      if (!loc) continue;
      if (!prev.result_clusters.count(loc->cluster)) obs2 = false;
      if (!prev.searched.count(loc->cluster) || !searched_now.count(loc->cluster))
        obs3 = false;
    }
    obs1_hits_ += obs1 ? 1 : 0;
    obs2_hits_ += obs2 ? 1 : 0;
    obs3_hits_ += obs3 ? 1 : 0;
  }

  // --- finalization ---------------------------------------------------------

  void finalize() {
    report_.strategy = strategy_name(cfg_.strategy);
    report_.clock = cfg_.clock == ClockMode::Virtual ? "virtual" : "live";
    report_.seed = cfg_.seed;
    report_.makespan_ms = makespan_;
    for (const auto& [id, req] : requests_) {
      (void)id;
      harness::RequestOutcome out;
      out.id = req.id;
      out.completed = req.phase == RequestRuntime::Phase::Done;
      out.latency_ms = req.done_at_ms - req.trace->arrival_ms;
      out.workflow = req.trace->workflow;
      for (const auto& [name, value] : req.vars)
        out.final_bindings[name] = value.text;
      report_.per_request.push_back(std::move(out));
    }
    const auto& cache = transport_->ret_engine().cache_state();
    report_.cache_hits = cache.hits();
    report_.cache_misses = cache.misses();
    report_.cache_swaps = cache.swap_count();
    if (report_.retrieval_stages > 0)
      report_.mean_clusters_searched =
          static_cast<double>(clusters_searched_total_) /
          static_cast<double>(report_.retrieval_stages);
    if (report_.observation_pairs > 0) {
      report_.obs1_rate = static_cast<double>(obs1_hits_) / report_.observation_pairs;
      report_.obs2_rate = static_cast<double>(obs2_hits_) / report_.observation_pairs;
      report_.obs3_rate = static_cast<double>(obs3_hits_) / report_.observation_pairs;
    }
    harness::finalize_report(report_);
  }

  void trace_event(double t, const std::string& worker, RequestId req,
                   NodeId node, std::int64_t subnode, const std::string& event,
                   double duration) {
    if (!sink_) return;
    harness::TraceEvent e;
    e.t_ms = t;
    e.worker = worker;
    e.request_id = req;
    e.node_id = node;
    e.subnode = subnode;
    e.event = event;
    e.duration_ms = duration;
    sink_->emit(std::move(e));
  }

  const SchedulerConfig& cfg_;
  const harness::RequestTrace& trace_;
  const ivf::IvfIndex& index_;
  harness::TraceSink* sink_;
  std::unique_ptr<Transport> transport_;
  std::map<std::string, rag::RAGraph> workflows_;
  std::map<RequestId, RequestRuntime> requests_;
  std::vector<const harness::TraceRequest*> arrivals_;
  std::size_t next_arrival_ = 0;
  sim::LocalityCache locality_;
  double delta_threshold_ = 0.0;
  double t_ret_ewma_ = -1.0;

  struct SpecRetrRemaining {
    std::vector<ClusterId> plan;
    std::size_t pos = 0;
    Embedding query;
  };
  std::map<std::pair<RequestId, NodeId>, SpecRetrRemaining> spec_retr_remaining_;

  bool gen_busy_ = false;
  bool ret_busy_ = false;
  std::size_t gen_active_shadow_ = 0;
  std::size_t gen_pending_joins_ = 0;
  std::uint64_t pending_prefill_tokens_ = 0;
  double earliest_pending_join_ = std::numeric_limits<double>::infinity();
  std::int64_t window_steps_left_ = 0;
  std::vector<RequestId> naive_ret_queue_;

  double makespan_ = 0.0;
  std::uint64_t clusters_searched_total_ = 0;
  std::uint64_t obs1_hits_ = 0, obs2_hits_ = 0, obs3_hits_ = 0;
  harness::ExperimentReport report_;
};

}  // namespace

harness::ExperimentReport run(const SchedulerConfig& config,
                              const harness::RequestTrace& trace,
                              const ivf::IvfIndex& index,
                              harness::TraceSink* trace_sink) {
  Runtime runtime(config, trace, index, trace_sink);
  return runtime.run();
}

}  // namespace hedra::sched
