#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pipevc/exec.hpp"
#include "pipevc/vcs.hpp"

namespace pipevc {

// ---------------------------------------------------------------------------
// Component search spaces
// ---------------------------------------------------------------------------

// Per-slot candidate versions, slot order = the spec's stored topological
// order, versions ordered by (schema_ordinal, increment, branch).
struct SearchSpace {
  std::vector<std::string> slots;
  std::vector<std::vector<ComponentVersion>> versions;

  std::size_t slot_index(const std::string& slot) const;
  std::vector<std::size_t> sizes() const;
};

// Union of the slot's versions over all commits between the common
// ancestor (inclusive) and each branch tip.
std::vector<ComponentVersion> component_search_space(
    const Repository& repo, const std::string& slot,
    const std::string& head_id, const std::string& merge_head_id);

SearchSpace component_search_spaces(const Repository& repo,
                                    const std::string& head_id,
                                    const std::string& merge_head_id);

// ---------------------------------------------------------------------------
// Pipeline search tree
// ---------------------------------------------------------------------------

struct TreeNode {
  const ComponentVersion* component = nullptr;  // null on the virtual root
  int level = 0;                                // root 0, slots 1..N_f
  bool executed = false;
  bool run_failed = false;
  std::optional<ArtifactRef> output;
  std::optional<double> score;
  std::string metric = "score";
  TreeNode* parent = nullptr;
  std::vector<std::unique_ptr<TreeNode>> children;
};

// Owns the cross-product tree and the spaces its nodes point into. Level i
// puts one child per version of slot i under every level-(i-1) node;
// leaf count before pruning is the product of the space sizes.
class SearchTree {
 public:
  SearchTree(const PipelineSpec& spec, SearchSpace spaces);

  TreeNode& root() { return *root_; }
  const TreeNode& root() const { return *root_; }
  const SearchSpace& spaces() const { return spaces_; }
  const PipelineSpec& spec() const { return *spec_; }

  std::vector<TreeNode*> level(int i);
  std::size_t node_count() const;  // non-root nodes currently in the tree
  std::size_t leaf_count() const;

 private:
  const PipelineSpec* spec_;
  SearchSpace spaces_;
  std::unique_ptr<TreeNode> root_;
};

SearchTree build_search_tree(const PipelineSpec& spec, SearchSpace spaces);

// ---------------------------------------------------------------------------
// Compatibility LUT
// ---------------------------------------------------------------------------

// (upstream version key, downstream version key) pairs admitted to compose,
// evaluated per DAG edge over the search spaces.
class CompatibilityLut {
 public:
  static CompatibilityLut build(const PipelineSpec& spec,
                                const SearchSpace& spaces);

  bool allows(const std::string& upstream_key,
              const std::string& downstream_key) const {
    return pairs_.count({upstream_key, downstream_key}) > 0;
  }
  std::size_t size() const { return pairs_.size(); }

 private:
  std::set<std::pair<std::string, std::string>> pairs_;
};

// ---------------------------------------------------------------------------
// Merge reports
// ---------------------------------------------------------------------------

constexpr double kFailedScore = -std::numeric_limits<double>::infinity();

struct CandidateResult {
  std::vector<std::string> binding_keys;  // per slot, topo order
  std::vector<std::size_t> pick;          // per-slot index into the spaces
  double score = kFailedScore;
  bool failed = false;
  int reused_slots = 0;
  double wall_ms = 0.0;  // pipeline time newly spent on this candidate
  std::map<std::string, ArtifactRef> outputs;
  RunStats stats;
};

struct MergeReport {
  std::string strategy;
  std::string metric = "score";
  std::size_t candidates_total = 0;          // upper bound (product)
  std::size_t candidates_after_pruning = 0;  // compatible candidates
  int nodes_executed = 0;                    // executor invocations
  std::vector<CandidateResult> candidates;
  std::optional<std::size_t> winner_index;
  MetricsLedger::Snapshot ledger;

  const CandidateResult& winner() const;
  // `candidate,bindings,score,reused_slots,wall_ms` rows plus a summary row.
  std::string csv() const;
};

// ---------------------------------------------------------------------------
// Tree execution (Alg. 2) and merge strategies
// ---------------------------------------------------------------------------

// Marks tree paths that match historical commits as executed, recording
// archived outputs (and the commit's `metric` score on fully matched
// leaves). Returns the number of nodes newly marked.
int mark_executed_from_history(SearchTree& tree,
                               const std::vector<const Commit*>& commits,
                               const std::string& metric = "score");

// Depth-first traversal with LUT pruning and executed-node reuse. Children
// incompatible with the path are removed before descent; each surviving
// leaf's walking path runs with already-executed nodes skipped; afterwards
// path nodes are marked executed. A component failure marks the node and
// scores the candidate -inf without stopping the traversal.
MergeReport execute_tree(const CompatibilityLut& lut, SearchTree& tree,
                         Executor& ex, MetricsLedger* ledger = nullptr,
                         const std::string& metric = "score");

enum class MergeStrategy {
  naive,         // bind latest versions, no search
  full_enum,     // run every candidate from scratch until it fails
  compat_only,   // prune by LUT, then run survivors from scratch
  pruned_reuse,  // tree + LUT pruning + output reuse
};

MergeStrategy strategy_from_name(const std::string& name);
const char* strategy_name(MergeStrategy s);

struct MergeOutcome {
  const Commit* commit = nullptr;
  MergeReport report;
};

// The metric-driven merge: evaluates pre-merge candidates per strategy,
// picks the argmax (ties: fewer slots changed against the ancestor, then
// lexicographic version tuple) and creates a two-parent merge commit on the
// head branch binding the winner.
MergeOutcome metric_merge(Repository& repo, const std::string& head_branch,
                          const std::string& merge_branch,
                          const std::string& metric, MergeStrategy strategy,
                          Executor& ex, MetricsLedger* ledger = nullptr);

// ---------------------------------------------------------------------------
// Candidate-count analytics
// ---------------------------------------------------------------------------

// Upper bound on the candidate count: product of the space sizes.
std::uint64_t count_candidates_upper(const SearchSpace& spaces);

struct PrunedCountBounds {
  std::uint64_t formula_value = 0;  // product with N_{j+1} set to n_compat
  std::uint64_t lower = 0;          // N_{j+1} = 1
  std::uint64_t upper_removed = 0;  // most candidates pruning may remove
};

// Closed-form candidate counts after compatibility pruning when the output
// schema changed at slot `j` (1-based) and the next slot keeps `n_compat`
// compatible versions. The scalar formula is exact only when every version
// of slot j has the same number of compatible successors; the enumerated
// count always lies within [lower, product].
PrunedCountBounds pruned_count_bounds(const SearchSpace& spaces,
                                      std::size_t schema_change_slot,
                                      std::size_t n_compat);

// Exact surviving-candidate count under a LUT, by enumeration.
std::uint64_t pruned_candidate_count(const PipelineSpec& spec,
                                     const SearchSpace& spaces,
                                     const CompatibilityLut& lut);

struct ExecutionCounts {
  std::uint64_t without_reuse = 0;  // product * N_f
  std::uint64_t with_reuse = 0;     // sum of level products
};

ExecutionCounts execution_counts(const SearchSpace& spaces);

// Enumerates all index tuples over the spaces.
void for_each_candidate(
    const SearchSpace& spaces,
    const std::function<void(const std::vector<std::size_t>&)>& fn);

// All-edge compatibility of one candidate tuple.
bool candidate_compatible(const PipelineSpec& spec, const SearchSpace& spaces,
                          const std::vector<std::size_t>& pick);

// Topo index of each slot's data predecessor, -1 for roots. Rejects slots
// with more than one inbound edge.
std::vector<int> data_input_indices(const PipelineSpec& spec,
                                    const std::vector<std::string>& slots);

// Topo indices of every DAG predecessor per slot.
std::vector<std::vector<int>> edge_predecessor_indices(
    const PipelineSpec& spec, const std::vector<std::string>& slots);

// PathSteps for a root-to-leaf node walk (shared by merge and search).
std::vector<PathStep> path_steps(const std::vector<TreeNode*>& path,
                                 const std::vector<int>& inputs);

}  // namespace pipevc
