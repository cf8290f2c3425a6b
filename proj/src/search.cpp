#include "pipevc/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pipevc/errors.hpp"

namespace pipevc {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void collect_leaf_paths(TreeNode& node, std::vector<TreeNode*>& path,
                        std::vector<std::vector<TreeNode*>>& out,
                        std::size_t depth) {
  if (node.children.empty()) {
    if (path.size() == depth) out.push_back(path);
    return;
  }
  for (auto& child : node.children) {
    path.push_back(child.get());
    collect_leaf_paths(*child, path, out, depth);
    path.pop_back();
  }
}

std::vector<std::vector<TreeNode*>> leaf_paths(SearchTree& tree) {
  std::vector<std::vector<TreeNode*>> out;
  std::vector<TreeNode*> path;
  collect_leaf_paths(tree.root(), path, out, tree.spaces().slots.size());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pruning without execution
// ---------------------------------------------------------------------------

namespace {

int prune_walk(TreeNode& node, std::vector<TreeNode*>& path,
               const CompatibilityLut& lut,
               const std::vector<std::vector<int>>& edge_preds) {
  int removed = 0;
  std::size_t slot_idx = static_cast<std::size_t>(node.level);
  auto& children = node.children;
  for (std::size_t i = 0; i < children.size();) {
    TreeNode* child = children[i].get();
    bool ok = true;
    for (int pred : edge_preds[slot_idx]) {
      if (!lut.allows(path[static_cast<std::size_t>(pred)]->component->key(),
                      child->component->key())) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      removed += 1;  // count the subtree root; descendants go with it
      children.erase(children.begin() + static_cast<std::ptrdiff_t>(i));
      continue;
    }
    path.push_back(child);
    removed += prune_walk(*child, path, lut, edge_preds);
    path.pop_back();
    ++i;
  }
  return removed;
}

}  // namespace

int prune_tree(SearchTree& tree, const CompatibilityLut& lut) {
  auto edge_preds =
      edge_predecessor_indices(tree.spec(), tree.spaces().slots);
  std::vector<TreeNode*> path;
  return prune_walk(tree.root(), path, lut, edge_preds);
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

namespace {

struct SeedAccum {
  int leaves = 0;
};

SeedAccum seed_walk(const TreeNode& node, ScoreState& state) {
  SeedAccum acc;
  if (node.children.empty()) {
    acc.leaves = 1;
    state.unrun[&node] = 1;
    return acc;
  }
  double sum = 0;
  int scored = 0;
  for (const auto& child : node.children) {
    SeedAccum sub = seed_walk(*child, state);
    acc.leaves += sub.leaves;
    if (auto s = state.score_of(child.get())) {
      sum += *s;
      ++scored;
    }
  }
  state.unrun[&node] = acc.leaves;
  if (scored > 0) state.score[&node] = sum / scored;
  return acc;
}

}  // namespace

ScoreState seed_scores(const SearchTree& tree,
                       const std::vector<const Commit*>& history,
                       const std::string& metric) {
  ScoreState state;
  const auto& slots = tree.spaces().slots;

  for (const Commit* c : history) {
    const TreeNode* cur = &tree.root();
    bool matched = true;
    for (const auto& slot : slots) {
      auto bind = c->pipeline.bindings.find(slot);
      if (bind == c->pipeline.bindings.end()) {
        matched = false;
        break;
      }
      const std::string key = bind->second.key();
      const TreeNode* next = nullptr;
      for (const auto& child : cur->children) {
        if (child->component->key() == key) {
          next = child.get();
          break;
        }
      }
      if (!next) {
        matched = false;
        break;
      }
      cur = next;
    }
    if (!matched) continue;
    auto it = c->scores.find(metric);
    if (it == c->scores.end())
      fail(Errc::missing_metric,
           "commit " + c->id + " has no metric '" + metric + "'");
    state.score[cur] = it->second;
  }

  seed_walk(tree.root(), state);
  return state;
}

// ---------------------------------------------------------------------------
// Prioritized descent
// ---------------------------------------------------------------------------

std::vector<TreeNode*> prioritized_next(SearchTree& tree,
                                        const ScoreState& state) {
  const TreeNode* root = &tree.root();
  auto unrun_of = [&](const TreeNode* n) {
    auto it = state.unrun.find(n);
    return it == state.unrun.end() ? 0 : it->second;
  };
  if (unrun_of(root) == 0)
    fail(Errc::exhausted, "every pipeline candidate has been run");

  std::vector<TreeNode*> path;
  TreeNode* cur = &tree.root();
  while (!cur->children.empty()) {
    TreeNode* best = nullptr;
    std::optional<double> best_score;
    for (auto& child : cur->children) {
      if (unrun_of(child.get()) == 0) continue;
      auto s = state.score_of(child.get());
      if (!best) {
        best = child.get();
        best_score = s;
        continue;
      }
      // Scored beats unscored; higher score wins; ties keep version order.
      if (s && (!best_score || *s > *best_score)) {
        best = child.get();
        best_score = s;
      }
    }
    if (!best)
      fail(Errc::exhausted, "subtree bookkeeping is out of sync");
    path.push_back(best);
    cur = best;
  }
  return path;
}

// ---------------------------------------------------------------------------
// Search runs
// ---------------------------------------------------------------------------

SearchMethod search_method_from_name(const std::string& name) {
  if (name == "prioritized") return SearchMethod::prioritized;
  if (name == "random") return SearchMethod::random;
  fail(Errc::bad_config, "unknown search method '" + name + "'");
}

const char* search_method_name(SearchMethod m) {
  return m == SearchMethod::prioritized ? "prioritized" : "random";
}

std::vector<SearchResultRow> run_search(SearchTree& tree, ScoreState& state,
                                        SearchMethod method, Executor& ex,
                                        const SearchBudget& budget,
                                        const std::string& metric, Rng* rng) {
  auto inputs = data_input_indices(tree.spec(), tree.spaces().slots);

  std::vector<std::vector<TreeNode*>> random_order;
  std::size_t random_idx = 0;
  if (method == SearchMethod::random) {
    random_order = leaf_paths(tree);
    if (!rng) fail(Errc::bad_config, "random search needs an rng");
    rng->shuffle(random_order);
  }

  std::vector<SearchResultRow> rows;
  double clock = 0.0;

  auto unrun_root = [&] {
    auto it = state.unrun.find(&tree.root());
    return it == state.unrun.end() ? 0 : it->second;
  };

  while (true) {
    if (budget.count && rows.size() >= *budget.count) break;
    if (budget.max_seconds && clock >= *budget.max_seconds) break;
    if (unrun_root() == 0) break;

    std::vector<TreeNode*> path;
    if (method == SearchMethod::prioritized) {
      path = prioritized_next(tree, state);
    } else {
      if (random_idx >= random_order.size()) break;
      path = random_order[random_idx++];
    }

    auto steps = path_steps(path, inputs);
    SearchResultRow row;
    for (TreeNode* n : path) row.binding_keys.push_back(n->component->key());

    try {
      PathRunResult run = execute_node_list(steps, ex, nullptr);
      for (std::size_t i = 0; i < steps.size(); ++i) {
        TreeNode* n = path[i];
        n->executed = steps[i].executed;
        n->output = steps[i].output;
        if (steps[i].score) {
          n->score = steps[i].score;
          n->metric = steps[i].metric;
        }
      }
      const PathStep& leaf = steps.back();
      if (!leaf.score || leaf.metric != metric)
        fail(Errc::missing_metric,
             "candidate produced no score for metric '" + metric + "'");
      row.score = *leaf.score;
      row.invoked = run.invoked;
      clock += run.stats.pipeline_s();
      state.score[path.back()] = row.score;
    } catch (const Error& e) {
      if (e.code() == Errc::missing_metric) throw;
      row.score = kFailedScore;  // failed candidates do not join averages
    }
    row.end_time_s = clock;
    rows.push_back(row);

    // Mark run and re-propagate averages bottom-up along this path.
    state.unrun[&tree.root()] -= 1;
    for (TreeNode* n : path) state.unrun[n] -= 1;
    for (TreeNode* n = path.back()->parent; n; n = n->parent) {
      double sum = 0;
      int scored = 0;
      for (const auto& child : n->children) {
        if (auto s = state.score_of(child.get())) {
          sum += *s;
          ++scored;
        }
      }
      if (scored > 0) state.score[n] = sum / scored;
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

TrialResult run_trials(const std::function<SearchTree()>& tree_factory,
                       const std::vector<const Commit*>& history,
                       SearchMethod method, int trials, std::uint64_t seed,
                       Executor& ex, const std::string& metric) {
  TrialResult result;
  result.method = search_method_name(method);
  result.trials = trials;
  result.seed = seed;

  std::vector<std::vector<double>> scores;  // [position][trial]
  std::vector<std::vector<double>> ends;

  for (int t = 0; t < trials; ++t) {
    SearchTree tree = tree_factory();
    ScoreState state = seed_scores(tree, history, metric);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(t)));
    auto rows = run_search(tree, state, method, ex, SearchBudget{}, metric,
                           &rng);
    if (scores.empty()) {
      scores.resize(rows.size());
      ends.resize(rows.size());
    }
    if (rows.size() != scores.size())
      fail(Errc::bad_config, "trials visited different candidate counts");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      scores[i].push_back(rows[i].score);
      ends[i].push_back(rows[i].end_time_s);
    }
  }

  for (std::size_t i = 0; i < scores.size(); ++i) {
    double mean = 0;
    for (double s : scores[i]) mean += s;
    mean /= static_cast<double>(scores[i].size());
    double var = 0;
    for (double s : scores[i]) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores[i].size());
    double end_mean = 0;
    for (double e : ends[i]) end_mean += e;
    end_mean /= static_cast<double>(ends[i].size());

    result.avg_score.push_back(mean);
    result.score_variance.push_back(var);
    result.avg_end_time_s.push_back(end_mean);
  }
  return result;
}

std::string TrialResult::csv() const {
  std::ostringstream out;
  out << "candidate_id,method,avg_end_time_s,avg_score,score_variance\n";
  for (std::size_t i = 0; i < avg_score.size(); ++i) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.6f,%.6f,%.9f\n", i,
                  method.c_str(), avg_end_time_s[i], avg_score[i],
                  score_variance[i]);
    out << buf;
  }
  return out.str();
}

}  // namespace pipevc
