#include "hedra/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hedra::harness {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

Embedding unit_direction(Rng& rng, std::uint32_t dim) {
  Embedding v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    const double g = rng.normal();
    x = static_cast<float>(g);
    norm += g * g;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) norm = 1.0;
  for (auto& x : v) x = static_cast<float>(x / norm);
  return v;
}

}  // namespace

void WorkloadSpec::validate() const {
  if (corpus.n_vectors == 0 || corpus.dim == 0 || corpus.n_topics == 0)
    throw std::invalid_argument("workload: corpus dimensions must be positive");
  if (queries.n_requests == 0)
    throw std::invalid_argument("workload: n_requests must be positive");
  if (queries.arrival != "poisson" && queries.arrival != "fixed")
    throw std::invalid_argument("workload: arrival must be poisson or fixed");
  if (queries.arrival == "poisson" && queries.rate_per_s <= 0.0)
    throw std::invalid_argument("workload: poisson rate must be positive");
  if (queries.min_tokens < 1 || queries.max_tokens < queries.min_tokens)
    throw std::invalid_argument("workload: bad token range");
  if (queries.checkpoints < 1)
    throw std::invalid_argument("workload: checkpoints must be >= 1");
  double mix = 0.0;
  for (const auto& [name, w] : queries.workflow_mix) {
    (void)name;
    if (w < 0.0) throw std::invalid_argument("workload: negative mix weight");
    mix += w;
  }
  if (std::abs(mix - 1.0) > 1e-9)
    throw std::invalid_argument("workload: workflow mix weights must sum to 1");
}

// --- TOML subset ---------------------------------------------------------------

WorkloadSpec parse_workload_spec(const std::string& text) {
  WorkloadSpec spec;
  std::istringstream in(text);
  std::string line, section;
  spec.queries.workflow_mix.clear();
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config: malformed section header: " + line);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value: " + line);
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    const auto as_string = [&]() -> std::string {
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
        return value.substr(1, value.size() - 2);
      return value;
    };
    const auto as_double = [&]() { return std::stod(value); };
    const auto as_u64 = [&]() { return static_cast<std::uint64_t>(std::stoull(value)); };

    if (section == "corpus") {
      if (key == "n_vectors") spec.corpus.n_vectors = as_u64();
      else if (key == "dim") spec.corpus.dim = static_cast<std::uint32_t>(as_u64());
      else if (key == "n_topics") spec.corpus.n_topics = as_u64();
      else if (key == "topic_spread") spec.corpus.topic_spread = as_double();
      else if (key == "seed") spec.corpus.seed = as_u64();
      else if (key == "metric") spec.corpus.metric = as_string();
      else throw std::invalid_argument("config: unknown corpus key: " + key);
    } else if (section == "queries") {
      if (key == "n_requests") spec.queries.n_requests = as_u64();
      else if (key == "arrival") spec.queries.arrival = as_string();
      else if (key == "rate_per_s") spec.queries.rate_per_s = as_double();
      else if (key == "fixed_interval_ms") spec.queries.fixed_interval_ms = as_double();
      else if (key == "zipf_s") spec.queries.zipf_s = as_double();
      else if (key == "drift_delta") spec.queries.drift_delta = as_double();
      else if (key == "min_tokens") spec.queries.min_tokens = static_cast<std::uint32_t>(as_u64());
      else if (key == "max_tokens") spec.queries.max_tokens = static_cast<std::uint32_t>(as_u64());
      else if (key == "checkpoints") spec.queries.checkpoints = static_cast<int>(as_u64());
      else if (key == "seed") spec.queries.seed = as_u64();
      else throw std::invalid_argument("config: unknown queries key: " + key);
    } else if (section == "queries.workflow_mix") {
      spec.queries.workflow_mix[key] = as_double();
    } else {
      throw std::invalid_argument("config: unknown section: " + section);
    }
  }
  if (spec.queries.workflow_mix.empty())
    spec.queries.workflow_mix = {{"oneshot", 1.0}};
  spec.validate();
  return spec;
}

WorkloadSpec load_workload_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_workload_spec(buf.str());
}

// --- Corpus ---------------------------------------------------------------------

std::vector<Embedding> corpus_topic_centers(const CorpusSpec& spec) {
  Rng rng(spec.seed);
  std::vector<Embedding> centers;
  centers.reserve(spec.n_topics);
  for (std::size_t t = 0; t < spec.n_topics; ++t)
    centers.push_back(unit_direction(rng, spec.dim));
  return centers;
}

ivf::Corpus generate_corpus(const CorpusSpec& spec) {
  const auto centers = corpus_topic_centers(spec);
  // Centers consumed the first draws of the stream; points continue it.
  Rng rng(spec.seed);
  for (std::size_t t = 0; t < spec.n_topics; ++t)
    (void)unit_direction(rng, spec.dim);

  ivf::Corpus corpus;
  corpus.dim = spec.dim;
  corpus.metric = spec.metric == "cosine" ? Metric::Cosine : Metric::L2;
  corpus.data.reserve(spec.n_vectors * spec.dim);
  corpus.doc_ids.reserve(spec.n_vectors);
  for (std::size_t i = 0; i < spec.n_vectors; ++i) {
    const auto& c = centers[i % spec.n_topics];
    for (std::uint32_t d = 0; d < spec.dim; ++d)
      corpus.data.push_back(
          c[d] + static_cast<float>(rng.normal() * spec.topic_spread));
    corpus.doc_ids.push_back(static_cast<DocId>(i));
  }
  return corpus;
}

// --- Workload -------------------------------------------------------------------

ZipfSampler::ZipfSampler(std::size_t n, double s) {
  if (n == 0) throw std::invalid_argument("zipf: empty support");
  double total = 0.0;
  cumulative_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    total += 1.0 / std::pow(static_cast<double>(i + 1), s);
    cumulative_.push_back(total);
  }
}

std::size_t ZipfSampler::sample(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  return static_cast<std::size_t>(
      std::lower_bound(cumulative_.begin(), cumulative_.end(), u) -
      cumulative_.begin());
}

namespace {

// Which generation executions a template performs, in order, and whether each
// one's output becomes the next retrieval query.
struct ScriptSlot {
  bool feeds_retrieval = false;
  bool last_loop_output_empty = false;  // emits "" to close a nonempty() loop
};

std::vector<ScriptSlot> script_plan(const std::string& workflow, Rng& rng) {
  if (workflow == "oneshot") return {{false, false}};
  if (workflow == "hyde") return {{true, false}, {false, false}};
  if (workflow == "recomp") return {{false, false}, {false, false}};
  if (workflow == "irg")
    return {{true, false}, {true, false}, {true, false}, {false, false}};
  if (workflow == "multistep") {
    // node 0 plus 2..3 loop iterations; the last answer emits an empty
    // subquestion to end the loop.
    const std::size_t loops = 2 + rng.uniform_index(2);
    std::vector<ScriptSlot> plan{{true, false}};
    for (std::size_t i = 0; i < loops; ++i)
      plan.push_back({i + 1 < loops, i + 1 == loops});
    return plan;
  }
  throw std::invalid_argument("generate_workload: unknown workflow " + workflow);
}

gen::GenerationScript make_script(Rng& rng, const Embedding& final_embedding,
                                  std::uint32_t tokens, int checkpoints,
                                  double drift_delta, const std::string& text) {
  gen::GenerationScript script;
  script.total_tokens = tokens;
  script.output_text = text;
  script.final_embedding = final_embedding;
  const Embedding dir = unit_direction(rng, static_cast<std::uint32_t>(final_embedding.size()));
  for (int i = 1; i <= checkpoints; ++i) {
    const double ratio = static_cast<double>(i) / checkpoints;
    gen::PrefixCheckpoint cp;
    cp.ratio = ratio;
    if (i == checkpoints) {
      cp.embedding = final_embedding;
    } else {
      // Decelerating drift: partials converge onto the final embedding.
      const double off = (1.0 - ratio) * (1.0 - ratio) * drift_delta;
      cp.embedding = final_embedding;
      for (std::size_t d = 0; d < cp.embedding.size(); ++d)
        cp.embedding[d] += static_cast<float>(off * dir[d]);
    }
    script.prefix_checkpoints.push_back(std::move(cp));
  }
  script.validate();
  return script;
}

}  // namespace

RequestTrace generate_workload(const WorkloadSpec& spec,
                               const ivf::Corpus& corpus) {
  spec.validate();
  if (corpus.dim != spec.corpus.dim)
    throw std::invalid_argument("generate_workload: corpus dimension mismatch");
  Rng rng(spec.queries.seed);
  const auto centers = corpus_topic_centers(spec.corpus);
  ZipfSampler topic_sampler(centers.size(), spec.queries.zipf_s);

  std::vector<std::pair<std::string, double>> mix_cdf;
  double acc = 0.0;
  for (const auto& [name, w] : spec.queries.workflow_mix) {
    acc += w;
    mix_cdf.emplace_back(name, acc);
  }

  RequestTrace trace;
  trace.dim = spec.corpus.dim;
  double arrival = 0.0;
  for (std::size_t r = 0; r < spec.queries.n_requests; ++r) {
    TraceRequest req;
    req.id = static_cast<RequestId>(r);
    if (spec.queries.arrival == "poisson")
      arrival += spec.queries.rate_per_s > 0.0
                     ? rng.exponential(spec.queries.rate_per_s / 1000.0)
                     : 0.0;
    else
      arrival = static_cast<double>(r) * spec.queries.fixed_interval_ms;
    req.arrival_ms = arrival;

    const double u = rng.uniform() * acc;
    req.workflow = mix_cdf.back().first;
    for (const auto& [name, edge] : mix_cdf) {
      if (u < edge) {
        req.workflow = name;
        break;
      }
    }

    const std::size_t topic = topic_sampler.sample(rng);
    req.input_text = "q-" + std::to_string(r);
    req.input_embedding = centers[topic];
    for (auto& x : req.input_embedding)
      x += static_cast<float>(rng.normal() * spec.corpus.topic_spread);

    Embedding current_query = req.input_embedding;
    const auto plan = script_plan(req.workflow, rng);
    for (std::size_t k = 0; k < plan.size(); ++k) {
      const std::uint32_t tokens =
          spec.queries.min_tokens +
          static_cast<std::uint32_t>(rng.uniform_index(
              spec.queries.max_tokens - spec.queries.min_tokens + 1));
      Embedding final_embedding = current_query;
      const Embedding dir = unit_direction(rng, spec.corpus.dim);
      for (std::uint32_t d = 0; d < spec.corpus.dim; ++d)
        final_embedding[d] +=
            static_cast<float>(spec.queries.drift_delta * dir[d]);
      const std::string text =
          plan[k].last_loop_output_empty ? "" : "g-" + std::to_string(r) + "-" +
                                                    std::to_string(k);
      req.scripts.push_back(make_script(rng, final_embedding, tokens,
                                        spec.queries.checkpoints,
                                        spec.queries.drift_delta, text));
      if (plan[k].feeds_retrieval) current_query = final_embedding;
    }
    trace.requests.push_back(std::move(req));
  }
  return trace;
}

// --- Trace persistence -----------------------------------------------------------

void RequestTrace::save(const std::string& path) const {
  json doc;
  doc["dim"] = dim;
  doc["requests"] = json::array();
  for (const auto& r : requests) {
    json jr;
    jr["id"] = r.id;
    jr["arrival_ms"] = r.arrival_ms;
    jr["workflow"] = r.workflow;
    jr["input_text"] = r.input_text;
    jr["input_embedding"] = r.input_embedding;
    jr["scripts"] = json::array();
    for (const auto& s : r.scripts) {
      json js;
      js["total_tokens"] = s.total_tokens;
      js["output_text"] = s.output_text;
      js["final_embedding"] = s.final_embedding;
      js["checkpoints"] = json::array();
      for (const auto& cp : s.prefix_checkpoints)
        js["checkpoints"].push_back({{"ratio", cp.ratio}, {"embedding", cp.embedding}});
      jr["scripts"].push_back(std::move(js));
    }
    doc["requests"].push_back(std::move(jr));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << doc.dump();
  out << "\n";
}

RequestTrace RequestTrace::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open trace file");
  json doc = json::parse(in);
  RequestTrace trace;
  trace.dim = doc.at("dim").get<std::uint32_t>();
  for (const auto& jr : doc.at("requests")) {
    TraceRequest r;
    r.id = jr.at("id").get<RequestId>();
    r.arrival_ms = jr.at("arrival_ms").get<double>();
    r.workflow = jr.at("workflow").get<std::string>();
    r.input_text = jr.at("input_text").get<std::string>();
    r.input_embedding = jr.at("input_embedding").get<Embedding>();
    for (const auto& js : jr.at("scripts")) {
      gen::GenerationScript s;
      s.total_tokens = js.at("total_tokens").get<std::uint32_t>();
      s.output_text = js.at("output_text").get<std::string>();
      s.final_embedding = js.at("final_embedding").get<Embedding>();
      for (const auto& jc : js.at("checkpoints")) {
        gen::PrefixCheckpoint cp;
        cp.ratio = jc.at("ratio").get<double>();
        cp.embedding = jc.at("embedding").get<Embedding>();
        s.prefix_checkpoints.push_back(std::move(cp));
      }
      s.validate();
      r.scripts.push_back(std::move(s));
    }
    trace.requests.push_back(std::move(r));
  }
  return trace;
}

}  // namespace hedra::harness
