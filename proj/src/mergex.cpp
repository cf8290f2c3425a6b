#include "pipevc/mergex.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "pipevc/errors.hpp"
#include "pipevc/text.hpp"

namespace pipevc {

// ---------------------------------------------------------------------------
// Search spaces
// ---------------------------------------------------------------------------

std::size_t SearchSpace::slot_index(const std::string& slot) const {
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (slots[i] == slot) return i;
  fail(Errc::unknown_slot, "no slot '" + slot + "' in the search space");
}

std::vector<std::size_t> SearchSpace::sizes() const {
  std::vector<std::size_t> s;
  s.reserve(versions.size());
  for (const auto& v : versions) s.push_back(v.size());
  return s;
}

namespace {

void add_version(std::vector<ComponentVersion>& list,
                 const ComponentVersion& cv) {
  for (const auto& v : list)
    if (v.key() == cv.key()) return;
  list.push_back(cv);
}

}  // namespace

std::vector<ComponentVersion> component_search_space(
    const Repository& repo, const std::string& slot,
    const std::string& head_id, const std::string& merge_head_id) {
  if (!repo.spec().has_slot(slot))
    fail(Errc::unknown_slot, "no slot '" + slot + "'");
  const Commit& anc = repo.common_ancestor(head_id, merge_head_id);

  std::vector<ComponentVersion> out;
  for (const std::string& tip : {head_id, merge_head_id}) {
    for (const Commit* c : repo.commits_between(anc.id, tip)) {
      auto it = c->pipeline.bindings.find(slot);
      if (it != c->pipeline.bindings.end()) add_version(out, it->second);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const ComponentVersion& a, const ComponentVersion& b) {
              return version_less(a.version, b.version);
            });
  return out;
}

SearchSpace component_search_spaces(const Repository& repo,
                                    const std::string& head_id,
                                    const std::string& merge_head_id) {
  SearchSpace s;
  for (const std::string& slot : repo.spec().topo_order()) {
    s.slots.push_back(slot);
    s.versions.push_back(
        component_search_space(repo, slot, head_id, merge_head_id));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Search tree
// ---------------------------------------------------------------------------

SearchTree::SearchTree(const PipelineSpec& spec, SearchSpace spaces)
    : spec_(&spec), spaces_(std::move(spaces)) {
  if (spaces_.slots.size() != spec.topo_order().size() ||
      spaces_.slots != spec.topo_order())
    fail(Errc::bad_config, "search space does not match the pipeline spec");
  for (std::size_t i = 0; i < spaces_.versions.size(); ++i)
    if (spaces_.versions[i].empty())
      fail(Errc::empty_space, "slot '" + spaces_.slots[i] + "' has no versions");

  root_ = std::make_unique<TreeNode>();
  root_->executed = true;
  std::vector<TreeNode*> frontier{root_.get()};
  for (std::size_t i = 0; i < spaces_.slots.size(); ++i) {
    std::vector<TreeNode*> next;
    for (TreeNode* parent : frontier) {
      for (const ComponentVersion& cv : spaces_.versions[i]) {
        auto child = std::make_unique<TreeNode>();
        child->component = &cv;
        child->level = static_cast<int>(i) + 1;
        child->parent = parent;
        next.push_back(child.get());
        parent->children.push_back(std::move(child));
      }
    }
    frontier = std::move(next);
  }
}

std::vector<TreeNode*> SearchTree::level(int i) {
  std::vector<TreeNode*> out;
  std::vector<TreeNode*> work{root_.get()};
  while (!work.empty()) {
    TreeNode* n = work.back();
    work.pop_back();
    if (n->level == i) {
      out.push_back(n);
      continue;
    }
    for (auto& c : n->children) work.push_back(c.get());
  }
  return out;
}

std::size_t SearchTree::node_count() const {
  std::size_t count = 0;
  std::vector<const TreeNode*> work{root_.get()};
  while (!work.empty()) {
    const TreeNode* n = work.back();
    work.pop_back();
    if (n != root_.get()) ++count;
    for (const auto& c : n->children) work.push_back(c.get());
  }
  return count;
}

std::size_t SearchTree::leaf_count() const {
  std::size_t count = 0;
  std::vector<const TreeNode*> work{root_.get()};
  while (!work.empty()) {
    const TreeNode* n = work.back();
    work.pop_back();
    if (n->children.empty() && n != root_.get()) ++count;
    for (const auto& c : n->children) work.push_back(c.get());
  }
  return count;
}

SearchTree build_search_tree(const PipelineSpec& spec, SearchSpace spaces) {
  return SearchTree(spec, std::move(spaces));
}

// ---------------------------------------------------------------------------
// Compatibility LUT
// ---------------------------------------------------------------------------

CompatibilityLut CompatibilityLut::build(const PipelineSpec& spec,
                                         const SearchSpace& spaces) {
  CompatibilityLut lut;
  for (const auto& [from, to] : spec.edges()) {
    const auto& ups = spaces.versions[spaces.slot_index(from)];
    const auto& downs = spaces.versions[spaces.slot_index(to)];
    for (const auto& up : ups)
      for (const auto& down : downs)
        if (is_compatible(up, down)) lut.pairs_.insert({up.key(), down.key()});
  }
  return lut;
}

// ---------------------------------------------------------------------------
// Merge report
// ---------------------------------------------------------------------------

const CandidateResult& MergeReport::winner() const {
  if (!winner_index) fail(Errc::not_mergeable, "merge produced no winner");
  return candidates[*winner_index];
}

std::string MergeReport::csv() const {
  std::ostringstream out;
  out << "candidate,bindings,score,reused_slots,wall_ms\n";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const CandidateResult& c = candidates[i];
    out << i << "," << join(c.binding_keys, "|") << ",";
    if (c.failed) {
      out << "-inf";
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.12f", c.score);
      out << buf;
    }
    char wall[32];
    std::snprintf(wall, sizeof(wall), "%.3f", c.wall_ms);
    out << "," << c.reused_slots << "," << wall << "\n";
  }
  out << "summary," << strategy << ",total=" << candidates_total
      << ",pruned=" << candidates_after_pruning
      << ",executed=" << nodes_executed << ",winner="
      << (winner_index ? std::to_string(*winner_index) : std::string("none"))
      << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// History seeding
// ---------------------------------------------------------------------------

int mark_executed_from_history(SearchTree& tree,
                               const std::vector<const Commit*>& commits,
                               const std::string& metric) {
  const auto& slots = tree.spaces().slots;
  int marked = 0;
  for (const Commit* c : commits) {
    TreeNode* cur = &tree.root();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      auto bind = c->pipeline.bindings.find(slots[i]);
      if (bind == c->pipeline.bindings.end()) break;
      std::string key = bind->second.key();
      TreeNode* next = nullptr;
      for (auto& child : cur->children) {
        if (child->component->key() == key) {
          next = child.get();
          break;
        }
      }
      if (!next) break;
      if (!c->outputs.count(slots[i])) break;
      cur = next;
      if (!cur->executed) {
        cur->executed = true;
        cur->output = c->output_ref(slots[i]);
        ++marked;
      }
      if (i + 1 == slots.size() && c->scores.count(metric)) {
        cur->score = c->scores.at(metric);
        cur->metric = metric;
      }
    }
  }
  return marked;
}

// ---------------------------------------------------------------------------
// Tree execution (Alg. 2)
// ---------------------------------------------------------------------------

std::vector<int> data_input_indices(const PipelineSpec& spec,
                                    const std::vector<std::string>& slots) {
  std::vector<int> idx(slots.size(), -1);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto preds = spec.predecessors(slots[i]);
    if (preds.size() > 1)
      fail(Errc::unsupported_topology,
           "slot '" + slots[i] + "' has multiple data inputs");
    if (preds.empty()) continue;
    for (std::size_t j = 0; j < i; ++j)
      if (slots[j] == *preds.begin()) idx[i] = static_cast<int>(j);
  }
  return idx;
}

std::vector<std::vector<int>> edge_predecessor_indices(
    const PipelineSpec& spec, const std::vector<std::string>& slots) {
  std::vector<std::vector<int>> preds(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (const auto& p : spec.predecessors(slots[i]))
      for (std::size_t j = 0; j < i; ++j)
        if (slots[j] == p) preds[i].push_back(static_cast<int>(j));
  }
  return preds;
}

std::vector<PathStep> path_steps(const std::vector<TreeNode*>& path,
                                 const std::vector<int>& inputs) {
  std::vector<PathStep> steps(path.size());
  for (std::size_t i = 0; i < path.size(); ++i) {
    steps[i].component = path[i]->component;
    steps[i].input_index = inputs[i];
    steps[i].executed = path[i]->executed;
    steps[i].output = path[i]->output;
    steps[i].score = path[i]->score;
    steps[i].metric = path[i]->metric;
  }
  return steps;
}

namespace {

struct TreeWalkContext {
  const CompatibilityLut* lut;
  SearchTree* tree;
  Executor* ex;
  MetricsLedger* ledger;
  std::string metric;
  std::vector<int> inputs;
  // edge predecessors (topo indices) per slot
  std::vector<std::vector<int>> edge_preds;
  std::vector<TreeNode*> path;
  std::vector<std::size_t> pick;
  MergeReport* report;
};

void record_candidate(TreeWalkContext& ctx) {
  const auto& slots = ctx.tree->spaces().slots;
  CandidateResult cand;
  for (TreeNode* n : ctx.path) cand.binding_keys.push_back(n->component->key());
  cand.pick = ctx.pick;

  bool path_failed = std::any_of(ctx.path.begin(), ctx.path.end(),
                                 [](TreeNode* n) { return n->run_failed; });
  if (path_failed) {
    cand.failed = true;
    ctx.report->candidates.push_back(std::move(cand));
    return;
  }

  auto steps = path_steps(ctx.path, ctx.inputs);

  auto write_back = [&](bool executed_only) {
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (executed_only && !steps[i].executed) continue;
      TreeNode* n = ctx.path[i];
      n->executed = steps[i].executed;
      n->output = steps[i].output;
      if (steps[i].score) {
        n->score = steps[i].score;
        n->metric = steps[i].metric;
      }
    }
  };

  int calls_before = ctx.ex->calls();
  try {
    PathRunResult run = execute_node_list(steps, *ctx.ex, ctx.ledger);
    write_back(false);
    ctx.report->nodes_executed += ctx.ex->calls() - calls_before;

    const PathStep& leaf = steps.back();
    if (!leaf.score)
      fail(Errc::missing_metric, "candidate produced no score for metric '" +
                                     ctx.metric + "'");
    if (leaf.metric != ctx.metric)
      fail(Errc::missing_metric, "candidate emits metric '" + leaf.metric +
                                     "', merge wants '" + ctx.metric + "'");
    cand.score = *leaf.score;
    cand.reused_slots = run.reused;
    cand.wall_ms = run.stats.pipeline_s() * 1000.0;
    cand.stats = run.stats;
    for (std::size_t i = 0; i < steps.size(); ++i)
      cand.outputs[slots[i]] = *steps[i].output;
  } catch (const Error& e) {
    if (e.code() == Errc::missing_metric) throw;
    // Keep whatever did run; pin the failure on the first step that was
    // attempted but never finished.
    write_back(true);
    ctx.report->nodes_executed += ctx.ex->calls() - calls_before;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (!steps[i].executed) {
        ctx.path[i]->run_failed = true;
        break;
      }
    }
    cand.failed = true;
  }
  ctx.report->candidates.push_back(std::move(cand));
}

void walk(TreeWalkContext& ctx, TreeNode& node) {
  if (node.children.empty()) {
    if (node.level == static_cast<int>(ctx.tree->spaces().slots.size()))
      record_candidate(ctx);
    return;
  }
  std::size_t slot_idx = static_cast<std::size_t>(node.level);  // child's slot
  auto& children = node.children;
  for (std::size_t i = 0; i < children.size();) {
    TreeNode* child = children[i].get();
    bool ok = true;
    for (int pred : ctx.edge_preds[slot_idx]) {
      const std::string& up = ctx.path[static_cast<std::size_t>(pred)]
                                  ->component->key();
      if (!ctx.lut->allows(up, child->component->key())) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      children.erase(children.begin() + static_cast<std::ptrdiff_t>(i));
      continue;
    }
    ctx.path.push_back(child);
    // Space index for tie-breaking: children keep space order, but earlier
    // removals shift positions, so recover it from the component pointer.
    const auto& space = ctx.tree->spaces().versions[slot_idx];
    ctx.pick.push_back(static_cast<std::size_t>(child->component - space.data()));
    walk(ctx, *child);
    ctx.pick.pop_back();
    ctx.path.pop_back();
    ++i;
  }
}

}  // namespace

MergeReport execute_tree(const CompatibilityLut& lut, SearchTree& tree,
                         Executor& ex, MetricsLedger* ledger,
                         const std::string& metric) {
  MergeReport report;
  report.strategy = "pcpr";
  report.metric = metric;
  report.candidates_total = count_candidates_upper(tree.spaces());

  TreeWalkContext ctx;
  ctx.lut = &lut;
  ctx.tree = &tree;
  ctx.ex = &ex;
  ctx.ledger = ledger;
  ctx.metric = metric;
  ctx.inputs = data_input_indices(tree.spec(), tree.spaces().slots);
  ctx.edge_preds = edge_predecessor_indices(tree.spec(), tree.spaces().slots);
  ctx.report = &report;

  walk(ctx, tree.root());
  report.candidates_after_pruning = report.candidates.size();
  if (ledger) report.ledger = ledger->snapshot();
  return report;
}

// ---------------------------------------------------------------------------
// Candidate enumeration helpers
// ---------------------------------------------------------------------------

void for_each_candidate(
    const SearchSpace& spaces,
    const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> pick(spaces.versions.size(), 0);
  while (true) {
    fn(pick);
    std::size_t i = pick.size();
    while (true) {
      if (i == 0) return;
      --i;
      if (++pick[i] < spaces.versions[i].size()) break;
      pick[i] = 0;
    }
  }
}

bool candidate_compatible(const PipelineSpec& spec, const SearchSpace& spaces,
                          const std::vector<std::size_t>& pick) {
  for (const auto& [from, to] : spec.edges()) {
    std::size_t f = spaces.slot_index(from);
    std::size_t t = spaces.slot_index(to);
    if (!is_compatible(spaces.versions[f][pick[f]], spaces.versions[t][pick[t]]))
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Counting
// ---------------------------------------------------------------------------

std::uint64_t count_candidates_upper(const SearchSpace& spaces) {
  std::uint64_t n = 1;
  for (const auto& v : spaces.versions) n *= v.size();
  return n;
}

PrunedCountBounds pruned_count_bounds(const SearchSpace& spaces,
                                      std::size_t schema_change_slot,
                                      std::size_t n_compat) {
  std::size_t n_f = spaces.versions.size();
  std::size_t j = schema_change_slot;  // 1-based
  if (j < 1 || j >= n_f)
    fail(Errc::out_of_range, "schema change slot must be in [1, N_f)");
  std::size_t succ_size = spaces.versions[j].size();  // slot j+1, 0-based j
  if (n_compat < 1 || n_compat + 1 > succ_size)
    fail(Errc::out_of_range, "n_compat out of range for the successor slot");

  auto product = [&](std::size_t lo, std::size_t hi) {  // 1-based inclusive
    std::uint64_t p = 1;
    for (std::size_t i = lo; i <= hi && i >= 1; ++i)
      p *= spaces.versions[i - 1].size();
    return p;
  };

  std::uint64_t prefix = product(1, j);
  std::uint64_t suffix = product(j + 2, n_f);
  std::uint64_t total = product(1, n_f);

  PrunedCountBounds b;
  b.formula_value = prefix * n_compat * suffix;
  b.lower = prefix * suffix;
  b.upper_removed = total - b.lower;
  return b;
}

std::uint64_t pruned_candidate_count(const PipelineSpec& spec,
                                     const SearchSpace& spaces,
                                     const CompatibilityLut& lut) {
  std::uint64_t count = 0;
  for_each_candidate(spaces, [&](const std::vector<std::size_t>& pick) {
    for (const auto& [from, to] : spec.edges()) {
      std::size_t f = spaces.slot_index(from);
      std::size_t t = spaces.slot_index(to);
      if (!lut.allows(spaces.versions[f][pick[f]].key(),
                      spaces.versions[t][pick[t]].key()))
        return;
    }
    ++count;
  });
  return count;
}

ExecutionCounts execution_counts(const SearchSpace& spaces) {
  ExecutionCounts c;
  std::uint64_t product = 1;
  for (const auto& v : spaces.versions) {
    product *= v.size();
    c.with_reuse += product;
  }
  c.without_reuse = product * spaces.versions.size();
  return c;
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

MergeStrategy strategy_from_name(const std::string& name) {
  if (name == "naive") return MergeStrategy::naive;
  if (name == "full" || name == "full_enum") return MergeStrategy::full_enum;
  if (name == "pc" || name == "compat_only") return MergeStrategy::compat_only;
  if (name == "pcpr" || name == "pruned_reuse")
    return MergeStrategy::pruned_reuse;
  fail(Errc::bad_config, "unknown merge strategy '" + name + "'");
}

const char* strategy_name(MergeStrategy s) {
  switch (s) {
    case MergeStrategy::naive: return "naive";
    case MergeStrategy::full_enum: return "full";
    case MergeStrategy::compat_only: return "pc";
    case MergeStrategy::pruned_reuse: return "pcpr";
  }
  return "?";
}

namespace {

// Runs one candidate from scratch (no reuse across candidates). Counts the
// failing invocation when the pipeline dies mid-way.
CandidateResult run_candidate_from_scratch(const SearchSpace& spaces,
                                           const std::vector<std::size_t>& pick,
                                           const std::vector<int>& inputs,
                                           Executor& ex, MetricsLedger* ledger,
                                           const std::string& metric,
                                           int& invocations) {
  CandidateResult cand;
  cand.pick = pick;
  std::vector<PathStep> steps(pick.size());
  for (std::size_t i = 0; i < pick.size(); ++i) {
    steps[i].component = &spaces.versions[i][pick[i]];
    steps[i].input_index = inputs[i];
    cand.binding_keys.push_back(steps[i].component->key());
  }
  int before = ex.calls();
  try {
    PathRunResult run = execute_node_list(steps, ex, ledger);
    invocations += ex.calls() - before;
    const PathStep& leaf = steps.back();
    if (!leaf.score || leaf.metric != metric)
      fail(Errc::missing_metric,
           "candidate produced no score for metric '" + metric + "'");
    cand.score = *leaf.score;
    cand.wall_ms = run.stats.pipeline_s() * 1000.0;
    cand.stats = run.stats;
    for (std::size_t i = 0; i < steps.size(); ++i)
      cand.outputs[spaces.slots[i]] = *steps[i].output;
  } catch (const Error& e) {
    if (e.code() == Errc::missing_metric) throw;
    invocations += ex.calls() - before;
    cand.failed = true;
  }
  return cand;
}

std::optional<std::size_t> pick_winner(
    const std::vector<CandidateResult>& cands,
    const std::map<std::string, std::string>& ancestor_keys,
    const std::vector<std::string>& slots) {
  std::optional<std::size_t> best;
  auto changed = [&](std::size_t i) {
    int n = 0;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      auto it = ancestor_keys.find(slots[s]);
      if (it == ancestor_keys.end() || it->second != cands[i].binding_keys[s])
        ++n;
    }
    return n;
  };
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (cands[i].failed) continue;
    if (!best) {
      best = i;
      continue;
    }
    const CandidateResult& a = cands[i];
    const CandidateResult& b = cands[*best];
    if (a.score != b.score) {
      if (a.score > b.score) best = i;
      continue;
    }
    int ca = changed(i), cb = changed(*best);
    if (ca != cb) {
      if (ca < cb) best = i;
      continue;
    }
    if (a.pick < b.pick) best = i;
  }
  return best;
}

}  // namespace

MergeOutcome metric_merge(Repository& repo, const std::string& head_branch,
                          const std::string& merge_branch,
                          const std::string& metric, MergeStrategy strategy,
                          Executor& ex, MetricsLedger* ledger) {
  auto head_id = repo.head(head_branch);
  auto merge_id = repo.head(merge_branch);
  if (!head_id || !merge_id)
    fail(Errc::unknown_commit, "both branches need commits to merge");
  const PipelineSpec& spec = repo.spec();
  const Commit& ancestor = repo.common_ancestor(*head_id, *merge_id);
  SearchSpace spaces = component_search_spaces(repo, *head_id, *merge_id);
  std::vector<int> inputs = data_input_indices(spec, spaces.slots);

  MergeOutcome out;

  if (strategy == MergeStrategy::naive) {
    // Latest version per slot, no search; conflicts surface as errors.
    PipelineVersion pv;
    pv.spec_name = spec.name();
    std::vector<std::string> keys;
    for (std::size_t i = 0; i < spaces.slots.size(); ++i) {
      pv.bindings[spaces.slots[i]] = spaces.versions[i].back();
      keys.push_back(spaces.versions[i].back().key());
    }
    if (auto edge = first_incompatible_edge(spec, pv))
      fail(Errc::incompatible_pipeline,
           "latest versions conflict on edge " + edge->first + "->" +
               edge->second);

    int before = ex.calls();
    PipelineRunOutcome run = run_pipeline(spec, pv, ex, ledger);
    if (!run.scores.count(metric))
      fail(Errc::missing_metric, "pipeline emits no metric '" + metric + "'");

    CandidateResult cand;
    cand.binding_keys = keys;
    for (std::size_t i = 0; i < spaces.versions.size(); ++i)
      cand.pick.push_back(spaces.versions[i].size() - 1);
    cand.score = run.scores.at(metric);
    cand.wall_ms = run.stats.pipeline_s() * 1000.0;
    cand.outputs = run.outputs;
    cand.stats = run.stats;

    out.report.strategy = "naive";
    out.report.metric = metric;
    out.report.candidates_total = count_candidates_upper(spaces);
    out.report.candidates_after_pruning = 1;
    out.report.nodes_executed = ex.calls() - before;
    out.report.candidates.push_back(cand);
    out.report.winner_index = 0;

    RunRecord rr{run.outputs, {{metric, cand.score}}, run.stats};
    out.commit = &repo.create_merge_commit(head_branch, pv, rr, *head_id,
                                           *merge_id);
    if (ledger) out.report.ledger = ledger->snapshot();
    return out;
  }

  std::vector<CandidateResult> cands;
  MergeReport report;
  report.metric = metric;
  report.candidates_total = count_candidates_upper(spaces);

  if (strategy == MergeStrategy::pruned_reuse) {
    SearchTree tree = build_search_tree(spec, spaces);
    CompatibilityLut lut = CompatibilityLut::build(spec, spaces);
    auto history = repo.commits_between(ancestor.id, *head_id);
    for (const Commit* c : repo.commits_between(ancestor.id, *merge_id))
      history.push_back(c);
    mark_executed_from_history(tree, history, metric);
    report = execute_tree(lut, tree, ex, ledger, metric);
    cands = report.candidates;
  } else {
    CompatibilityLut lut = CompatibilityLut::build(spec, spaces);
    int invocations = 0;
    for_each_candidate(spaces, [&](const std::vector<std::size_t>& pick) {
      if (strategy == MergeStrategy::compat_only) {
        bool ok = true;
        for (const auto& [from, to] : spec.edges()) {
          std::size_t f = spaces.slot_index(from);
          std::size_t t = spaces.slot_index(to);
          if (!lut.allows(spaces.versions[f][pick[f]].key(),
                          spaces.versions[t][pick[t]].key())) {
            ok = false;
            break;
          }
        }
        if (!ok) return;  // pruned before execution
      }
      cands.push_back(run_candidate_from_scratch(spaces, pick, inputs, ex,
                                                 ledger, metric, invocations));
    });
    report.strategy = strategy_name(strategy);
    report.nodes_executed = invocations;
    report.candidates = cands;
    report.candidates_after_pruning = 0;
    for (const auto& c : cands)
      if (!c.failed) ++report.candidates_after_pruning;
  }

  auto winner = pick_winner(cands, ancestor.binding_keys(), spaces.slots);
  if (!winner)
    fail(Errc::not_mergeable,
         "no compatible candidate between " + head_branch + " and " +
             merge_branch);
  report.winner_index = winner;

  const CandidateResult& w = cands[*winner];
  PipelineVersion pv;
  pv.spec_name = spec.name();
  for (std::size_t i = 0; i < spaces.slots.size(); ++i)
    pv.bindings[spaces.slots[i]] = spaces.versions[i][w.pick[i]];

  RunRecord rr{w.outputs, {{metric, w.score}}, w.stats};
  out.commit =
      &repo.create_merge_commit(head_branch, pv, rr, *head_id, *merge_id);
  if (ledger) report.ledger = ledger->snapshot();
  out.report = std::move(report);
  return out;
}

}  // namespace pipevc
