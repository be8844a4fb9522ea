#include "hedra/raggraph.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace hedra::rag {

namespace {

std::string node_name(NodeId id) {
  if (id == kStart) return "START";
  if (id == kEnd) return "END";
  return std::to_string(id);
}

// Extracts "{var}" slot names from a prompt template.
std::vector<std::string> template_slots(const std::string& tmpl) {
  std::vector<std::string> slots;
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    const std::size_t end = tmpl.find('}', pos);
    if (end == std::string::npos) break;
    slots.push_back(tmpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return slots;
}

}  // namespace

Condition Condition::parse(const std::string& text) {
  Condition c;
  if (text == "always") {
    c.kind = Kind::Always;
    return c;
  }
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw std::invalid_argument("unknown condition: " + text);
  const std::string head = text.substr(0, open);
  const std::string arg = text.substr(open + 1, close - open - 1);
  if (head == "nonempty") {
    c.kind = Kind::NonEmpty;
    c.var = arg;
  } else if (head == "iter_lt") {
    c.kind = Kind::IterLt;
    c.bound = std::stoi(arg);
  } else {
    throw std::invalid_argument("unknown condition: " + text);
  }
  return c;
}

std::string Condition::to_string() const {
  switch (kind) {
    case Kind::Always:
      return "always";
    case Kind::NonEmpty:
      return "nonempty(" + var + ")";
    case Kind::IterLt:
      return "iter_lt(" + std::to_string(bound) + ")";
  }
  return "always";
}

RAGraph& RAGraph::add_generation(NodeId id, std::string prompt_template,
                                 std::string output_var) {
  if (id == kStart || id == kEnd)
    throw std::invalid_argument("node id is reserved");
  if (nodes_.count(id)) throw std::invalid_argument("duplicate node id " + node_name(id));
  NodeSpec spec;
  spec.id = id;
  spec.kind = GenerationSpec{std::move(prompt_template), std::move(output_var)};
  nodes_.emplace(id, std::move(spec));
  return *this;
}

RAGraph& RAGraph::add_retrieval(NodeId id, int topk, std::string query_var,
                                std::string output_var) {
  if (id == kStart || id == kEnd)
    throw std::invalid_argument("node id is reserved");
  if (nodes_.count(id)) throw std::invalid_argument("duplicate node id " + node_name(id));
  if (topk < 1) throw std::invalid_argument("topk must be >= 1");
  NodeSpec spec;
  spec.id = id;
  spec.kind = RetrievalSpec{topk, std::move(query_var), std::move(output_var)};
  nodes_.emplace(id, std::move(spec));
  return *this;
}

RAGraph& RAGraph::add_edge(NodeId from, NodeId to) {
  edges_.push_back(Edge{from, to, std::nullopt});
  return *this;
}

RAGraph& RAGraph::add_edge(NodeId from, Condition cond, NodeId to) {
  edges_.push_back(Edge{from, to, std::move(cond)});
  return *this;
}

const NodeSpec& RAGraph::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end())
    throw std::invalid_argument("unknown node " + node_name(id));
  return it->second;
}

std::vector<std::string> RAGraph::validate() const {
  std::vector<std::string> diags;
  const auto known = [&](NodeId id) {
    return id == kStart || id == kEnd || nodes_.count(id) > 0;
  };
  for (const auto& e : edges_) {
    if (!known(e.from)) diags.push_back("unknown edge endpoint " + node_name(e.from));
    if (!known(e.to)) diags.push_back("unknown edge endpoint " + node_name(e.to));
  }
  if (!diags.empty()) return diags;

  // Reachability from START treating every edge as traversable.
  std::set<NodeId> reached{kStart};
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& e : edges_) {
      if (reached.count(e.from) && !reached.count(e.to)) {
        reached.insert(e.to);
        grew = true;
      }
    }
  }
  if (!reached.count(kEnd)) diags.push_back("END unreachable");
  for (const auto& [id, spec] : nodes_) {
    (void)spec;
    if (!reached.count(id)) diags.push_back("node " + node_name(id) + " unreachable");
  }

  // Definite-assignment fixpoint: a variable read must be written on every
  // path from START. "input" is bound at request admission.
  std::set<std::string> universe{"input"};
  for (const auto& [id, spec] : nodes_) {
    (void)id;
    if (spec.is_generation()) {
      universe.insert(spec.generation().output_var);
      for (const auto& slot : template_slots(spec.generation().prompt_template))
        universe.insert(slot);
    } else {
      universe.insert(spec.retrieval().output_var);
      universe.insert(spec.retrieval().query_var);
    }
  }
  std::map<NodeId, std::set<std::string>> defs_out;
  for (const auto& [id, spec] : nodes_) {
    (void)spec;
    defs_out[id] = universe;
  }
  defs_out[kStart] = {"input"};
  defs_out[kEnd] = universe;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [id, spec] : nodes_) {
      std::set<std::string> in;
      bool first = true;
      for (const auto& e : edges_) {
        if (e.to != id) continue;
        if (first) {
          in = defs_out[e.from];
          first = false;
        } else {
          std::set<std::string> tmp;
          std::set_intersection(in.begin(), in.end(), defs_out[e.from].begin(),
                                defs_out[e.from].end(),
                                std::inserter(tmp, tmp.begin()));
          in = std::move(tmp);
        }
      }
      if (first) in = {};  // no predecessors
      auto out = in;
      out.insert(spec.is_generation() ? spec.generation().output_var
                                      : spec.retrieval().output_var);
      if (out != defs_out[id]) {
        defs_out[id] = std::move(out);
        changed = true;
      }
      // Store the incoming set for read checks below via recomputation.
    }
  }
  const auto defs_in = [&](NodeId id) {
    std::set<std::string> in;
    bool first = true;
    for (const auto& e : edges_) {
      if (e.to != id) continue;
      if (first) {
        in = defs_out[e.from];
        first = false;
      } else {
        std::set<std::string> tmp;
        std::set_intersection(in.begin(), in.end(), defs_out[e.from].begin(),
                              defs_out[e.from].end(),
                              std::inserter(tmp, tmp.begin()));
        in = std::move(tmp);
      }
    }
    return in;
  };
  for (const auto& [id, spec] : nodes_) {
    if (!reached.count(id)) continue;
    const auto in = defs_in(id);
    const auto check_read = [&](const std::string& var) {
      if (!in.count(var))
        diags.push_back("unbound variable '" + var + "' read by node " + node_name(id));
    };
    if (spec.is_generation()) {
      for (const auto& slot : template_slots(spec.generation().prompt_template))
        check_read(slot);
    } else {
      check_read(spec.retrieval().query_var);
    }
  }
  for (const auto& e : edges_) {
    if (!e.cond || e.cond->kind != Condition::Kind::NonEmpty) continue;
    if (e.from == kStart) continue;
    if (!defs_out[e.from].count(e.cond->var))
      diags.push_back("unbound variable '" + e.cond->var + "' read by condition on edge from " +
                      node_name(e.from));
  }
  return diags;
}

NodeId advance(const RAGraph& graph, NodeId completed_node, const VarStore& vars,
               std::map<NodeId, int>& entry_count) {
  for (const auto& e : graph.edges()) {
    if (e.from != completed_node) continue;
    bool satisfied = true;
    if (e.cond) {
      switch (e.cond->kind) {
        case Condition::Kind::Always:
          satisfied = true;
          break;
        case Condition::Kind::NonEmpty: {
          auto it = vars.find(e.cond->var);
          satisfied = it != vars.end() && !it->second.text.empty();
          break;
        }
        case Condition::Kind::IterLt:
          satisfied = entry_count[e.to] < e.cond->bound;
          break;
      }
    }
    if (!satisfied) continue;
    if (e.to != kEnd) {
      if (++entry_count[e.to] > graph.max_loop_iters)
        throw LoopGuardError("loop guard: node " + node_name(e.to) + " entered more than " +
                             std::to_string(graph.max_loop_iters) + " times");
    }
    return e.to;
  }
  throw MalformedWorkflowError("no satisfied out-edge from node " +
                               node_name(completed_node));
}

// --- Sub-node transformations -------------------------------------------------

std::vector<SubNode> split_node(NodeId parent, std::uint64_t total_work,
                                std::span<const std::uint64_t> boundaries) {
  if (boundaries.size() < 2 || boundaries.front() != 0 ||
      boundaries.back() != total_work)
    throw std::invalid_argument("split_node: boundaries must cover [0, total_work)");
  for (std::size_t i = 1; i < boundaries.size(); ++i)
    if (boundaries[i] <= boundaries[i - 1])
      throw std::invalid_argument("split_node: boundaries must be strictly increasing");
  std::vector<SubNode> subs;
  subs.reserve(boundaries.size() - 1);
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    SubNode s;
    s.parent = parent;
    s.index = i - 1;
    s.span = Span{boundaries[i - 1], boundaries[i]};
    if (i > 1) s.deps.push_back(SubNodeRef{parent, i - 2});
    subs.push_back(std::move(s));
  }
  return subs;
}

void reorder_subnodes(std::vector<SubNode>& subs,
                      std::span<const std::size_t> new_order) {
  const std::size_t n = subs.size();
  if (new_order.size() != n)
    throw std::invalid_argument("reorder_subnodes: order size mismatch");
  std::vector<bool> seen(n, false);
  for (std::size_t i : new_order) {
    if (i >= n || seen[i])
      throw std::invalid_argument("reorder_subnodes: not a permutation");
    seen[i] = true;
  }
  for (const auto& s : subs) {
    if (s.speculative)
      throw std::invalid_argument("reorder_subnodes: speculative sub-node in chain");
    if (s.parent != subs.front().parent)
      throw std::invalid_argument("reorder_subnodes: mixed parents");
  }
  std::vector<SubNode> out;
  out.reserve(n);
  std::uint64_t cursor = subs.empty() ? 0 : subs.front().span.lo;
  for (std::size_t i = 0; i < n; ++i) {
    SubNode s = subs[new_order[i]];
    const std::uint64_t len = s.span.length();
    s.index = i;
    s.span = Span{cursor, cursor + len};
    s.deps.clear();
    if (i > 0) s.deps.push_back(SubNodeRef{s.parent, i - 1});
    cursor += len;
    out.push_back(std::move(s));
  }
  subs = std::move(out);
}

void GraphInstance::set_subnodes(NodeId parent, std::vector<SubNode> subs) {
  subnodes_[parent] = std::move(subs);
}

const std::vector<SubNode>& GraphInstance::subnodes(NodeId parent) const {
  auto it = subnodes_.find(parent);
  if (it == subnodes_.end())
    throw std::invalid_argument("no sub-nodes for node " + node_name(parent));
  return it->second;
}

std::vector<SubNode>& GraphInstance::subnodes_mut(NodeId parent) {
  auto it = subnodes_.find(parent);
  if (it == subnodes_.end())
    throw std::invalid_argument("no sub-nodes for node " + node_name(parent));
  return it->second;
}

const SubNode& GraphInstance::resolve(SubNodeRef ref) const {
  const auto& subs = subnodes(ref.parent);
  if (ref.index >= subs.size())
    throw std::invalid_argument("sub-node index out of range");
  return subs[ref.index];
}

void GraphInstance::insert_speculative_edge(SubNodeRef from, NodeId to_node,
                                            std::size_t anchor) {
  const auto& subs = subnodes(from.parent);
  if (from.index + 1 >= subs.size())
    throw std::invalid_argument(
        "speculative edge must leave a non-final sub-node");
  for (const auto& e : spec_edges_)
    if (e.from == from && e.to_node == to_node)
      throw std::invalid_argument("duplicate speculative edge");
  spec_edges_.push_back(SpecEdge{from, to_node, anchor});
}

void GraphInstance::rewire_dependency(SubNodeRef target,
                                      std::vector<SubNodeRef> new_deps) {
  for (const auto& d : new_deps) {
    if (d == target)
      throw std::invalid_argument("rewire_dependency: self-dependency");
    resolve(d);  // existence check
  }
  auto& subs = subnodes_mut(target.parent);
  if (target.index >= subs.size())
    throw std::invalid_argument("sub-node index out of range");
  auto saved = subs[target.index].deps;
  subs[target.index].deps = std::move(new_deps);
  if (!acyclic()) {
    subs[target.index].deps = std::move(saved);
    throw std::invalid_argument("rewire_dependency: cycle introduced");
  }
}

bool GraphInstance::acyclic() const {
  // Kahn over all sub-nodes keyed by (parent, index).
  std::map<SubNodeRef, std::size_t> indegree;
  for (const auto& [parent, subs] : subnodes_) {
    for (const auto& s : subs) indegree[SubNodeRef{parent, s.index}] = 0;
  }
  for (const auto& [parent, subs] : subnodes_) {
    (void)parent;
    for (const auto& s : subs)
      for (const auto& d : s.deps)
        if (indegree.count(d)) ++indegree[SubNodeRef{s.parent, s.index}];
  }
  std::vector<SubNodeRef> ready;
  for (const auto& [ref, deg] : indegree)
    if (deg == 0) ready.push_back(ref);
  std::size_t visited = 0;
  while (!ready.empty()) {
    const SubNodeRef ref = ready.back();
    ready.pop_back();
    ++visited;
    for (const auto& [parent, subs] : subnodes_) {
      (void)parent;
      for (const auto& s : subs) {
        const SubNodeRef sr{s.parent, s.index};
        for (const auto& d : s.deps) {
          if (d == ref && indegree.count(sr) && --indegree[sr] == 0)
            ready.push_back(sr);
        }
      }
    }
  }
  return visited == indegree.size();
}

// --- Workflow files and shipped templates ------------------------------------

namespace {

using nlohmann::json;

NodeId parse_endpoint(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "START") return kStart;
    if (s == "END") return kEnd;
    throw std::invalid_argument("unknown endpoint name: " + s);
  }
  return j.get<NodeId>();
}

json endpoint_to_json(NodeId id) {
  if (id == kStart) return "START";
  if (id == kEnd) return "END";
  return id;
}

}  // namespace

RAGraph workflow_from_json(const std::string& json_text) {
  const json doc = json::parse(json_text);
  RAGraph graph;
  graph.name = doc.value("name", "");
  graph.max_loop_iters = doc.value("max_loop_iters", 8);
  for (const auto& n : doc.at("nodes")) {
    const NodeId id = n.at("id").get<NodeId>();
    const std::string kind = n.at("kind").get<std::string>();
    if (kind == "generation") {
      graph.add_generation(id, n.at("prompt").get<std::string>(),
                           n.at("output_var").get<std::string>());
    } else if (kind == "retrieval") {
      graph.add_retrieval(id, n.at("topk").get<int>(),
                          n.at("query_var").get<std::string>(),
                          n.at("output_var").get<std::string>());
    } else {
      throw std::invalid_argument("unknown node kind: " + kind);
    }
  }
  for (const auto& e : doc.at("edges")) {
    const NodeId from = parse_endpoint(e.at("from"));
    const NodeId to = parse_endpoint(e.at("to"));
    if (e.contains("cond"))
      graph.add_edge(from, Condition::parse(e.at("cond").get<std::string>()), to);
    else
      graph.add_edge(from, to);
  }
  return graph;
}

std::string workflow_to_json(const RAGraph& graph) {
  json doc;
  doc["name"] = graph.name;
  doc["max_loop_iters"] = graph.max_loop_iters;
  doc["nodes"] = json::array();
  for (const auto& [id, spec] : graph.nodes()) {
    json n;
    n["id"] = id;
    if (spec.is_generation()) {
      n["kind"] = "generation";
      n["prompt"] = spec.generation().prompt_template;
      n["output_var"] = spec.generation().output_var;
    } else {
      n["kind"] = "retrieval";
      n["topk"] = spec.retrieval().topk;
      n["query_var"] = spec.retrieval().query_var;
      n["output_var"] = spec.retrieval().output_var;
    }
    doc["nodes"].push_back(std::move(n));
  }
  doc["edges"] = json::array();
  for (const auto& e : graph.edges()) {
    json je;
    je["from"] = endpoint_to_json(e.from);
    je["to"] = endpoint_to_json(e.to);
    if (e.cond) je["cond"] = e.cond->to_string();
    doc["edges"].push_back(std::move(je));
  }
  return doc.dump(2);
}

RAGraph load_workflow_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open workflow file");
  std::stringstream buf;
  buf << in.rdbuf();
  return workflow_from_json(buf.str());
}

RAGraph workflow_template(const std::string& name) {
  RAGraph g;
  g.name = name;
  if (name == "oneshot") {
    g.add_retrieval(0, 5, "input", "docs");
    g.add_generation(1, "Answer {input} using {docs}.", "answer");
    g.add_edge(kStart, 0).add_edge(0, 1).add_edge(1, kEnd);
  } else if (name == "hyde") {
    g.add_generation(0, "Generate a hypothesis for {input}.", "hypopara");
    g.add_retrieval(1, 5, "hypopara", "docs");
    g.add_generation(2, "Answer {input} using {docs}.", "answer");
    g.add_edge(kStart, 0).add_edge(0, 1).add_edge(1, 2).add_edge(2, kEnd);
  } else if (name == "multistep") {
    g.add_generation(0, "Decompose {input} into subquestions.", "subquestion");
    g.add_retrieval(1, 2, "subquestion", "docs");
    g.add_generation(2, "Answer {subquestion} using {docs}.", "subquestion");
    g.add_edge(kStart, 0).add_edge(0, 1).add_edge(1, 2);
    g.add_edge(2, Condition::parse("nonempty(subquestion)"), 1);
    g.add_edge(2, kEnd);
  } else if (name == "irg") {
    g.add_generation(0, "Draft an answer for {input}.", "draft");
    g.add_retrieval(1, 5, "draft", "docs");
    g.add_generation(2, "Revise {draft} using {docs}.", "draft");
    g.add_edge(kStart, 0).add_edge(0, 1).add_edge(1, 2);
    g.add_edge(2, Condition::parse("iter_lt(3)"), 1);
    g.add_edge(2, kEnd);
  } else if (name == "recomp") {
    g.add_retrieval(0, 5, "input", "docs");
    g.add_generation(1, "Compress {docs}.", "summary");
    g.add_generation(2, "Answer {input} using {summary}.", "answer");
    g.add_edge(kStart, 0).add_edge(0, 1).add_edge(1, 2).add_edge(2, kEnd);
  } else {
    throw std::invalid_argument("unknown workflow template: " + name);
  }
  return g;
}

std::vector<std::string> workflow_template_names() {
  return {"oneshot", "multistep", "irg", "hyde", "recomp"};
}

}  // namespace hedra::rag
