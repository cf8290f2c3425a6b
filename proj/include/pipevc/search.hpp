#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pipevc/mergex.hpp"
#include "pipevc/rng.hpp"

namespace pipevc {

// ---------------------------------------------------------------------------
// Score state
// ---------------------------------------------------------------------------
//
// Per-node search bookkeeping, separate from the tree's execution flags: a
// leaf's score is set once its candidate has been run (or seeded from
// history); an internal node's score is the mean of its scored children;
// the unrun counter tracks how many leaves of the subtree this trial has
// not visited yet.

struct ScoreState {
  std::map<const TreeNode*, double> score;
  std::map<const TreeNode*, int> unrun;

  std::optional<double> score_of(const TreeNode* n) const {
    auto it = score.find(n);
    if (it == score.end()) return std::nullopt;
    return it->second;
  }
};

// Removes subtrees that fail an edge-compatibility check against their
// path, without executing anything. Returns the number of nodes removed.
int prune_tree(SearchTree& tree, const CompatibilityLut& lut);

// Initial state: leaves matching historical commits get the commit's
// `metric` score (MissingMetric when a matching commit lacks it); internal
// scores follow bottom-up averaging; all leaves count as unrun.
ScoreState seed_scores(const SearchTree& tree,
                       const std::vector<const Commit*>& history,
                       const std::string& metric);

// Greedy descent: among children whose subtree still has unrun leaves,
// follow the highest-scored one (unscored children rank below all scored
// ones, ties by version order) down to an unrun leaf. Exhausted when every
// leaf has been run.
std::vector<TreeNode*> prioritized_next(SearchTree& tree,
                                        const ScoreState& state);

// ---------------------------------------------------------------------------
// Search runs
// ---------------------------------------------------------------------------

enum class SearchMethod { prioritized, random };

SearchMethod search_method_from_name(const std::string& name);
const char* search_method_name(SearchMethod m);

struct SearchResultRow {
  std::vector<std::string> binding_keys;
  double score = 0.0;
  double end_time_s = 0.0;  // cumulative virtual time when this run ended
  int invoked = 0;
};

struct SearchBudget {
  std::optional<std::size_t> count;
  std::optional<double> max_seconds;  // virtual-time cap
};

// Runs candidates in the method's order until the budget is exhausted or
// all leaves are visited; each run updates the leaf score and re-propagates
// averages along its path. Node outputs are reused exactly as in the merge
// traversal. `rng` drives the random order (unused for prioritized).
std::vector<SearchResultRow> run_search(SearchTree& tree, ScoreState& state,
                                        SearchMethod method, Executor& ex,
                                        const SearchBudget& budget,
                                        const std::string& metric, Rng* rng);

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

struct TrialResult {
  std::string method;
  int trials = 0;
  std::uint64_t seed = 0;
  // Indexed by search position (0-based): aggregates over all trials.
  std::vector<double> avg_end_time_s;
  std::vector<double> avg_score;
  std::vector<double> score_variance;

  // `candidate_id,method,avg_end_time_s,avg_score,score_variance`
  std::string csv() const;
};

// Repeats full searches on freshly built trees; per-trial RNG streams are
// derived from `seed` so results are reproducible.
TrialResult run_trials(const std::function<SearchTree()>& tree_factory,
                       const std::vector<const Commit*>& history,
                       SearchMethod method, int trials, std::uint64_t seed,
                       Executor& ex, const std::string& metric);

}  // namespace pipevc
