#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hedra/common.hpp"
#include "hedra/embedding.hpp"

namespace hedra::rag {

inline constexpr NodeId kStart = -1;
inline constexpr NodeId kEnd = -2;

struct GenerationSpec {
  std::string prompt_template;  // "{var}" slots
  std::string output_var;
};

struct RetrievalSpec {
  int topk = 1;
  std::string query_var;
  std::string output_var;
};

struct NodeSpec {
  NodeId id = 0;
  std::variant<GenerationSpec, RetrievalSpec> kind;

  bool is_generation() const { return std::holds_alternative<GenerationSpec>(kind); }
  const GenerationSpec& generation() const { return std::get<GenerationSpec>(kind); }
  const RetrievalSpec& retrieval() const { return std::get<RetrievalSpec>(kind); }
};

// Named condition library for workflow files; ordered first-match at advance.
struct Condition {
  enum class Kind { Always, NonEmpty, IterLt };
  Kind kind = Kind::Always;
  std::string var;  // NonEmpty
  int bound = 0;    // IterLt

  static Condition parse(const std::string& text);
  std::string to_string() const;
};

struct Edge {
  NodeId from = kStart;
  NodeId to = kEnd;
  std::optional<Condition> cond;
};

struct VarValue {
  std::string text;
  std::optional<Embedding> embedding;
};
using VarStore = std::map<std::string, VarValue>;

class LoopGuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MalformedWorkflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RAGraph {
 public:
  std::string name;
  int max_loop_iters = 8;

  RAGraph& add_generation(NodeId id, std::string prompt_template,
                          std::string output_var);
  RAGraph& add_retrieval(NodeId id, int topk, std::string query_var,
                         std::string output_var);
  RAGraph& add_edge(NodeId from, NodeId to);
  RAGraph& add_edge(NodeId from, Condition cond, NodeId to);

  const NodeSpec& node(NodeId id) const;
  bool has_node(NodeId id) const { return nodes_.count(id) > 0; }
  const std::map<NodeId, NodeSpec>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }

  // Pure structural checks; diagnostics returned, never thrown.
  std::vector<std::string> validate() const;

 private:
  std::map<NodeId, NodeSpec> nodes_;
  std::vector<Edge> edges_;  // insertion order is evaluation order
};

// Evaluates out-edges of completed_node in insertion order and returns the
// first satisfied target, bumping its entry count. Throws LoopGuardError when
// a node would exceed max_loop_iters entries and MalformedWorkflowError when
// no edge is satisfied.
NodeId advance(const RAGraph& graph, NodeId completed_node, const VarStore& vars,
               std::map<NodeId, int>& entry_count);

// --- Sub-node transformations ----------------------------------------------

struct Span {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;  // [lo, hi)
  std::uint64_t length() const { return hi - lo; }
  bool operator==(const Span&) const = default;
};

struct SubNodeRef {
  NodeId parent = 0;
  std::size_t index = 0;
  auto operator<=>(const SubNodeRef&) const = default;
};

struct SubNode {
  NodeId parent = 0;
  std::size_t index = 0;
  Span span;
  std::vector<SubNodeRef> deps;
  bool speculative = false;
  std::optional<std::size_t> rollback_anchor;
};

// Splits [0, total_work) at the given boundaries (strictly increasing, first 0,
// last total_work) into chained sub-nodes.
std::vector<SubNode> split_node(NodeId parent, std::uint64_t total_work,
                                std::span<const std::uint64_t> boundaries);

// Permutes the blocks of one parent's chain; spans are re-mapped onto the
// permuted work sequence and the dependency chain re-installed in new order.
void reorder_subnodes(std::vector<SubNode>& subs,
                      std::span<const std::size_t> new_order);

// Applies the same block permutation to the underlying work sequence.
template <typename T>
std::vector<T> permute_blocks(const std::vector<T>& items,
                              const std::vector<Span>& old_spans,
                              std::span<const std::size_t> new_order) {
  std::vector<T> out;
  out.reserve(items.size());
  for (std::size_t block : new_order)
    for (std::uint64_t i = old_spans[block].lo; i < old_spans[block].hi; ++i)
      out.push_back(items[i]);
  return out;
}

// Per-request runtime view: sub-node chains per stage plus speculative edges.
class GraphInstance {
 public:
  struct SpecEdge {
    SubNodeRef from;
    NodeId to_node = 0;
    std::size_t anchor = 0;
  };

  void set_subnodes(NodeId parent, std::vector<SubNode> subs);
  bool has_subnodes(NodeId parent) const { return subnodes_.count(parent) > 0; }
  const std::vector<SubNode>& subnodes(NodeId parent) const;
  std::vector<SubNode>& subnodes_mut(NodeId parent);

  void insert_speculative_edge(SubNodeRef from, NodeId to_node,
                               std::size_t anchor);
  void rewire_dependency(SubNodeRef target, std::vector<SubNodeRef> new_deps);
  bool acyclic() const;

  const std::vector<SpecEdge>& spec_edges() const { return spec_edges_; }
  void clear_spec_edges() { spec_edges_.clear(); }

 private:
  const SubNode& resolve(SubNodeRef ref) const;
  std::map<NodeId, std::vector<SubNode>> subnodes_;
  std::vector<SpecEdge> spec_edges_;
};

// --- Workflow files and shipped templates -----------------------------------

RAGraph workflow_from_json(const std::string& json_text);
std::string workflow_to_json(const RAGraph& graph);
RAGraph load_workflow_file(const std::string& path);

// oneshot, multistep, irg, hyde, recomp
RAGraph workflow_template(const std::string& name);
std::vector<std::string> workflow_template_names();

}  // namespace hedra::rag
