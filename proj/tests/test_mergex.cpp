#include "pipevc/mergex.hpp"

#include <set>

#include "doctest.h"
#include "pipevc/errors.hpp"
#include "pipevc/text.hpp"
#include "support.hpp"

using namespace pipevc;
using testsupport::fresh_dir;

TEST_SUITE_BEGIN("mergex");

namespace {

// Spaces with given sizes, fully compatible (one shared schema).
testsupport::Instance sized_instance(const std::vector<std::size_t>& sizes,
                                     const std::string& tag) {
  // Build through the generator's machinery for real payloads, then trim
  // or grow the version lists is not possible; craft directly instead.
  testsupport::Instance inst;
  inst.store = std::make_unique<Store>(fresh_dir(tag));

  int n = static_cast<int>(sizes.size());
  std::vector<Slot> slots;
  std::vector<std::pair<std::string, std::string>> edges;
  for (int i = 0; i < n; ++i) {
    std::string name = "s" + std::to_string(i);
    slots.push_back({name, i == 0 ? ComponentKind::dataset
                                  : ComponentKind::library});
    if (i > 0) edges.emplace_back("s" + std::to_string(i - 1), name);
  }
  inst.spec = PipelineSpec("sized", slots, edges);

  const std::vector<std::string> headers = {"x", "y"};
  Digest base{};
  for (int i = 0; i < n; ++i) {
    std::string name = "s" + std::to_string(i);
    std::vector<ComponentVersion> versions;
    for (std::size_t v = 0; v < sizes[static_cast<std::size_t>(i)]; ++v) {
      StubSpec s;
      s.name = name;
      s.cost_ms = 1;
      s.param = std::to_string(v);
      if (i == 0) {
        s.kind = ComponentKind::dataset;
        s.dataset_headers = headers;
        s.dataset_rows = 3;
      } else if (i == n - 1) {
        s.transform = "model";
        s.score_mode = "hash";
        s.score_seed = 17;
        s.input_schema = base;
      } else {
        s.transform = "identity";
        s.input_schema = base;
        s.input_headers = headers;
      }
      auto payload = make_stub_component(s);
      ObjectManifest m =
          inst.store->put_object(pack_entries(payload), "payload");
      Metafile meta = parse_metafile(payload.at("metafile"));
      ComponentVersion cv;
      cv.name = name;
      cv.kind = s.kind;
      cv.version = SemanticVersion{"master", 0, static_cast<std::uint32_t>(v),
                                   meta.output_schema};
      cv.payload = m.id;
      cv.input_schema = meta.input_schema;
      cv.output_schema = meta.output_schema;
      versions.push_back(cv);
    }
    if (i == 0) base = versions[0].output_schema;
    inst.spaces.slots.push_back(name);
    inst.spaces.versions.push_back(std::move(versions));
  }
  return inst;
}

}  // namespace

TEST_CASE("component search spaces cover both branch lineages") {
  auto sc = testsupport::build_scenario(fresh_dir("spaces"));
  Repository& repo = sc.repo;

  auto dc = component_search_space(repo, "dc", sc.master_head, sc.dev_head);
  REQUIRE(dc.size() == 2);
  CHECK(dc[0].version.render() == "0.0");
  CHECK(dc[1].version.render() == "dev@0.1");

  auto cnn = component_search_space(repo, "cnn", sc.master_head, sc.dev_head);
  CHECK(cnn.size() == 5);  // five versions of updates since the ancestor

  SearchSpace all = component_search_spaces(repo, sc.master_head, sc.dev_head);
  CHECK(all.sizes() == std::vector<std::size_t>{1, 2, 2, 5});
  CHECK(count_candidates_upper(all) == 20);

  // Before any divergence the spaces are singletons.
  auto trivial =
      component_search_space(repo, "cnn", sc.root_id, sc.root_id);
  CHECK(trivial.size() == 1);
}

TEST_CASE("search tree is the level-by-level cross product") {
  auto inst = sized_instance({1, 2, 2, 5}, "tree1225");
  SearchTree tree = build_search_tree(inst.spec, inst.spaces);
  CHECK(tree.leaf_count() == 20);
  CHECK(tree.node_count() == 1 + 2 + 4 + 20);
  CHECK(tree.root().executed);

  // Level j has the product of the first j space sizes.
  CHECK(tree.level(1).size() == 1);
  CHECK(tree.level(2).size() == 2);
  CHECK(tree.level(3).size() == 4);
  CHECK(tree.level(4).size() == 20);

  auto single = sized_instance({1}, "tree1");
  SearchTree t1 = build_search_tree(single.spec, single.spaces);
  CHECK(t1.node_count() == 1);
  CHECK(t1.leaf_count() == 1);

  auto two = sized_instance({2, 3}, "tree23");
  SearchTree t23 = build_search_tree(two.spec, two.spaces);
  CHECK(t23.level(1).size() == 2);
  for (TreeNode* n : t23.level(1)) CHECK(n->children.size() == 3);

  SearchSpace empty = two.spaces;
  empty.versions[1].clear();
  CHECK_THROWS_AS((void)build_search_tree(two.spec, empty), Error);
}

TEST_CASE("the LUT holds exactly the compatible pairs of the scenario") {
  auto sc = testsupport::build_scenario(fresh_dir("lut"));
  SearchSpace spaces =
      component_search_spaces(sc.repo, sc.master_head, sc.dev_head);
  CompatibilityLut lut = CompatibilityLut::build(sc.repo.spec(), spaces);

  auto key = [&](const std::string& slot, const std::string& render) {
    for (const auto& v : spaces.versions[spaces.slot_index(slot)])
      if (v.version.render() == render) return v.key();
    REQUIRE(false);
    return std::string();
  };

  // fe0.0 feeds cnn 0.0 / 0.1 / 0.4; fe1.0 feeds cnn 0.2 / 0.3.
  CHECK(lut.allows(key("fe", "0.0"), key("cnn", "0.0")));
  CHECK(lut.allows(key("fe", "0.0"), key("cnn", "dev@0.1")));
  CHECK(lut.allows(key("fe", "0.0"), key("cnn", "0.4")));
  CHECK(lut.allows(key("fe", "dev@1.0"), key("cnn", "dev@0.2")));
  CHECK(lut.allows(key("fe", "dev@1.0"), key("cnn", "dev@0.3")));
  CHECK_FALSE(lut.allows(key("fe", "0.0"), key("cnn", "dev@0.2")));
  CHECK_FALSE(lut.allows(key("fe", "0.0"), key("cnn", "dev@0.3")));
  CHECK_FALSE(lut.allows(key("fe", "dev@1.0"), key("cnn", "0.0")));
  CHECK_FALSE(lut.allows(key("fe", "dev@1.0"), key("cnn", "dev@0.1")));
  CHECK_FALSE(lut.allows(key("fe", "dev@1.0"), key("cnn", "0.4")));

  // Both dc versions feed both fe versions.
  for (const char* dcv : {"0.0", "dev@0.1"})
    for (const char* fev : {"0.0", "dev@1.0"})
      CHECK(lut.allows(key("dc", dcv), key("fe", fev)));
}

TEST_CASE("single-schema spaces yield a complete LUT") {
  auto inst = sized_instance({2, 2, 2}, "fulllut");
  CompatibilityLut lut = CompatibilityLut::build(inst.spec, inst.spaces);
  CHECK(lut.size() == 4 + 4);  // full bipartite per edge
  CHECK(pruned_candidate_count(inst.spec, inst.spaces, lut) == 8);
}

TEST_CASE("history marking pins executed prefixes and their outputs") {
  auto sc = testsupport::build_scenario(fresh_dir("mark"));
  Repository& repo = sc.repo;
  SearchSpace spaces =
      component_search_spaces(repo, sc.master_head, sc.dev_head);
  SearchTree tree = build_search_tree(repo.spec(), spaces);

  CHECK(mark_executed_from_history(tree, {}) == 0);

  std::vector<const Commit*> anc{&repo.commit(sc.root_id)};
  int marked = mark_executed_from_history(tree, anc, "score");
  CHECK(marked == 4);  // the ancestor's full path

  // The marked path carries the archived outputs and the leaf score.
  TreeNode* cur = &tree.root();
  for (std::size_t level = 0; level < 4; ++level) {
    TreeNode* next = nullptr;
    for (auto& c : cur->children)
      if (c->executed) next = c.get();
    REQUIRE(next != nullptr);
    CHECK(next->output.has_value());
    cur = next;
  }
  CHECK(cur->score.has_value());

  // Marking the same history again changes nothing.
  CHECK(mark_executed_from_history(tree, anc, "score") == 0);
}

TEST_CASE("tree execution prunes to the compatible half and reuses nodes") {
  auto sc = testsupport::build_scenario(fresh_dir("exec"));
  Repository& repo = sc.repo;
  SearchSpace spaces =
      component_search_spaces(repo, sc.master_head, sc.dev_head);
  SearchTree tree = build_search_tree(repo.spec(), spaces);
  CompatibilityLut lut = CompatibilityLut::build(repo.spec(), spaces);

  const Commit& anc = repo.common_ancestor(sc.master_head, sc.dev_head);
  auto history = repo.commits_between(anc.id, sc.master_head);
  for (const Commit* c : repo.commits_between(anc.id, sc.dev_head))
    history.push_back(c);

  // Brute-force oracle for the required executions: unique compatible
  // prefixes minus those already marked from history.
  std::vector<std::vector<std::size_t>> executed_prefixes;
  for (const Commit* c : history) {
    std::vector<std::size_t> pick;
    bool ok = true;
    for (std::size_t i = 0; i < spaces.slots.size() && ok; ++i) {
      const auto& versions = spaces.versions[i];
      auto bind = c->pipeline.bindings.find(spaces.slots[i]);
      ok = bind != c->pipeline.bindings.end();
      if (!ok) break;
      bool found = false;
      for (std::size_t v = 0; v < versions.size(); ++v) {
        if (versions[v].key() == bind->second.key()) {
          pick.push_back(v);
          found = true;
          break;
        }
      }
      ok = found;
    }
    if (!ok) continue;
    for (std::size_t d = 1; d <= pick.size(); ++d)
      executed_prefixes.emplace_back(pick.begin(),
                                     pick.begin() + static_cast<long>(d));
  }
  std::uint64_t oracle = testsupport::oracle_required_executions(
      repo.spec(), spaces, executed_prefixes);

  mark_executed_from_history(tree, history, "score");
  testsupport::CountingExecutor ex(repo.store(), repo.store());
  MetricsLedger ledger;
  MergeReport report = execute_tree(lut, tree, ex, &ledger, "score");

  CHECK(report.candidates_total == 20);
  CHECK(report.candidates_after_pruning == 10);  // half of the upper bound
  CHECK(report.nodes_executed == static_cast<int>(oracle));
  CHECK(ex.calls() == static_cast<int>(oracle));

  // Execute-once: no component ran twice.
  for (const auto& [key, count] : ex.per_key) CHECK(count <= 1);

  // Every surviving candidate has a score and pruning was sound.
  for (const auto& cand : report.candidates) {
    CHECK_FALSE(cand.failed);
    CHECK(cand.score >= 0.0);
  }
}

TEST_CASE("fresh trees with complete LUTs cost the reuse closed form") {
  auto inst = sized_instance({1, 2, 2, 5}, "cost1225");
  SearchTree tree = build_search_tree(inst.spec, inst.spaces);
  CompatibilityLut lut = CompatibilityLut::build(inst.spec, inst.spaces);
  VirtualExecutor ex(*inst.store, *inst.store);
  MergeReport report = execute_tree(lut, tree, ex, nullptr, "score");
  CHECK(report.candidates_after_pruning == 20);
  CHECK(ex.calls() == 1 + 2 + 4 + 20);  // not 20 * 4

  auto ones = sized_instance({1, 1, 1}, "costones");
  SearchTree t1 = build_search_tree(ones.spec, ones.spaces);
  CompatibilityLut l1 = CompatibilityLut::build(ones.spec, ones.spaces);
  VirtualExecutor e1(*ones.store, *ones.store);
  execute_tree(l1, t1, e1, nullptr, "score");
  CHECK(e1.calls() == 3);  // exactly one run per slot
}

TEST_CASE("component failures poison only their subtree") {
  auto inst = sized_instance({1, 2, 2}, "failing");
  // Break one middle version: its payload loses the executable config.
  ComponentVersion& broken = inst.spaces.versions[1][1];
  std::map<std::string, std::string> bad;
  bad["metafile"] = render_metafile(Metafile{
      broken.name, ComponentKind::library, false, broken.output_schema,
      std::nullopt, broken.input_schema});
  broken.payload = inst.store->put_object(pack_entries(bad), "payload").id;

  SearchTree tree = build_search_tree(inst.spec, inst.spaces);
  CompatibilityLut lut = CompatibilityLut::build(inst.spec, inst.spaces);
  VirtualExecutor ex(*inst.store, *inst.store);
  MergeReport report = execute_tree(lut, tree, ex, nullptr, "score");

  int failed = 0;
  for (const auto& cand : report.candidates) failed += cand.failed ? 1 : 0;
  CHECK(failed == 2);  // both candidates through the broken version
  CHECK(report.candidates.size() == 4);
  // The traversal still found scores for the healthy half.
  int scored = 0;
  for (const auto& cand : report.candidates) scored += cand.failed ? 0 : 1;
  CHECK(scored == 2);
}

TEST_CASE("metric merge agrees with the brute-force argmax on the scenario") {
  auto dir = fresh_dir("argmax");
  auto sc = testsupport::build_scenario(dir);
  Repository& repo = sc.repo;
  SearchSpace spaces =
      component_search_spaces(repo, sc.master_head, sc.dev_head);

  // Oracle: enumerate the compatible candidates, score each through the
  // stub score function over its lineage, take the max.
  double best_score = -1.0;
  std::vector<std::string> best_keys;
  std::size_t compatible = 0;
  for_each_candidate(spaces, [&](const std::vector<std::size_t>& pick) {
    if (!candidate_compatible(repo.spec(), spaces, pick)) return;
    ++compatible;
    std::vector<std::string> lineage;
    for (std::size_t i = 0; i < pick.size(); ++i)
      lineage.push_back(spaces.versions[i][pick[i]].key());
    double s = stub_score("hash", 42, lineage);
    if (s > best_score) {
      best_score = s;
      best_keys = lineage;
    }
  });
  CHECK(compatible == 10);

  VirtualExecutor ex(repo.store(), repo.store());
  MergeOutcome out = metric_merge(repo, "master", "dev", "score",
                                  MergeStrategy::pruned_reuse, ex);
  CHECK(out.report.winner().binding_keys == best_keys);
  CHECK(out.report.winner().score == doctest::Approx(best_score));

  // The merge commit binds the winner with both parents.
  REQUIRE(out.commit != nullptr);
  CHECK(out.commit->parents ==
        std::vector<std::string>{sc.master_head, sc.dev_head});
  CHECK(out.commit->branch == "master");
  CHECK(repo.head("master") == out.commit->id);
  CHECK(out.commit->scores.at("score") == doctest::Approx(best_score));
}

TEST_CASE("merging works the same on a reopened repository") {
  auto dir = fresh_dir("reopen-merge");
  std::vector<std::string> expected;
  {
    auto sc = testsupport::build_scenario(dir);
    VirtualExecutor ex(sc.repo.store(), sc.repo.store());
    MergeOutcome out = metric_merge(sc.repo, "master", "dev", "score",
                                    MergeStrategy::pruned_reuse, ex);
    expected = out.report.winner().binding_keys;
  }
  // A second, independent history in a fresh directory, merged after a
  // full reload from disk.
  auto dir2 = fresh_dir("reopen-merge2");
  { auto sc = testsupport::build_scenario(dir2); }
  Repository repo = Repository::open(dir2);
  VirtualExecutor ex(repo.store(), repo.store());
  MergeOutcome out = metric_merge(repo, "master", "dev", "score",
                                  MergeStrategy::pruned_reuse, ex);
  CHECK(out.report.winner().binding_keys == expected);
  CHECK(out.report.candidates_after_pruning == 10);
}

TEST_CASE("the naive strategy takes the latest versions or fails") {
  auto sc = testsupport::build_scenario(fresh_dir("naive"));
  Repository& repo = sc.repo;
  VirtualExecutor ex(repo.store(), repo.store());
  // Latest are dc0.1, fe1.0, cnn0.4 and cnn0.4 needs fe0.0 output.
  CHECK_THROWS_AS((void)metric_merge(repo, "master", "dev", "score",
                                     MergeStrategy::naive, ex),
                  Error);
}

TEST_CASE("single-candidate spaces make every strategy pick it") {
  auto dir = fresh_dir("single");
  auto sc = testsupport::build_ff_scenario(dir);
  Repository& repo = sc.repo;
  repo.create_branch("dev", sc.root_id);

  for (MergeStrategy strategy :
       {MergeStrategy::naive, MergeStrategy::full_enum,
        MergeStrategy::compat_only, MergeStrategy::pruned_reuse}) {
    VirtualExecutor ex(repo.store(), repo.store());
    MergeOutcome out =
        metric_merge(repo, "master", "dev", "score", strategy, ex);
    CHECK(out.report.winner().binding_keys ==
          std::vector<std::string>{"data@master@0.0", "prep@master@0.0",
                                   "model@master@0.0"});
  }
}

TEST_CASE("strategies rank by cost and agree on the winner") {
  Rng rng(2024);
  for (int round = 0; round < 25; ++round) {
    auto dir = fresh_dir("rank" + std::to_string(round));
    auto inst = testsupport::make_instance(dir, rng);

    auto run_strategy = [&](MergeStrategy strategy, int& calls) {
      SearchTree tree = build_search_tree(inst.spec, inst.spaces);
      CompatibilityLut lut = CompatibilityLut::build(inst.spec, inst.spaces);
      VirtualExecutor ex(*inst.store, *inst.store);

      std::vector<CandidateResult> cands;
      if (strategy == MergeStrategy::pruned_reuse) {
        MergeReport r = execute_tree(lut, tree, ex, nullptr, "score");
        cands = r.candidates;
      } else {
        auto inputs = data_input_indices(inst.spec, inst.spaces.slots);
        for_each_candidate(inst.spaces, [&](const std::vector<std::size_t>& pick) {
          if (strategy == MergeStrategy::compat_only &&
              !candidate_compatible(inst.spec, inst.spaces, pick))
            return;
          std::vector<PathStep> steps(pick.size());
          CandidateResult cand;
          cand.pick = pick;
          for (std::size_t i = 0; i < pick.size(); ++i) {
            steps[i].component = &inst.spaces.versions[i][pick[i]];
            steps[i].input_index = inputs[i];
            cand.binding_keys.push_back(steps[i].component->key());
          }
          try {
            PathRunResult run = execute_node_list(steps, ex, nullptr);
            cand.score = *steps.back().score;
            (void)run;
          } catch (const Error&) {
            cand.failed = true;
          }
          cands.push_back(cand);
        });
      }
      calls = ex.calls();

      double best = -1.0;
      std::vector<std::string> keys;
      for (const auto& c : cands) {
        if (c.failed) continue;
        if (c.score > best) {
          best = c.score;
          keys = c.binding_keys;
        }
      }
      return keys;
    };

    int calls_pcpr = 0, calls_pc = 0, calls_full = 0;
    auto w_pcpr = run_strategy(MergeStrategy::pruned_reuse, calls_pcpr);
    auto w_pc = run_strategy(MergeStrategy::compat_only, calls_pc);
    auto w_full = run_strategy(MergeStrategy::full_enum, calls_full);

    CHECK(w_pcpr == w_pc);
    CHECK(w_pc == w_full);
    CHECK(calls_pcpr <= calls_pc);
    CHECK(calls_pc <= calls_full);
    bool any_multi = false;
    for (auto s : inst.spaces.sizes()) any_multi |= s > 1;
    if (any_multi) CHECK(calls_pcpr < calls_full);
  }
}

TEST_CASE("LUT pruning removes exactly the incompatible candidates") {
  Rng rng(606);
  for (int round = 0; round < 20; ++round) {
    auto inst = testsupport::make_instance(
        fresh_dir("sound" + std::to_string(round)), rng);
    CompatibilityLut lut = CompatibilityLut::build(inst.spec, inst.spaces);

    // Cross-check the LUT path against exhaustive is_compatible checks.
    for_each_candidate(inst.spaces, [&](const std::vector<std::size_t>& pick) {
      bool by_lut = true;
      for (const auto& [from, to] : inst.spec.edges()) {
        std::size_t f = inst.spaces.slot_index(from);
        std::size_t t = inst.spaces.slot_index(to);
        if (!lut.allows(inst.spaces.versions[f][pick[f]].key(),
                        inst.spaces.versions[t][pick[t]].key()))
          by_lut = false;
      }
      CHECK(by_lut == candidate_compatible(inst.spec, inst.spaces, pick));
    });
  }
}

TEST_CASE("counting formulas") {
  auto i1225 = sized_instance({1, 2, 2, 5}, "cnt1225");
  CHECK(count_candidates_upper(i1225.spaces) == 20);
  auto ones = sized_instance({1, 1}, "cntones");
  CHECK(count_candidates_upper(ones.spaces) == 1);
  auto i33 = sized_instance({3, 3}, "cnt33");
  CHECK(count_candidates_upper(i33.spaces) == 9);

  ExecutionCounts e = execution_counts(i1225.spaces);
  CHECK(e.without_reuse == 80);
  CHECK(e.with_reuse == 27);
  auto single = sized_instance({1}, "cnt1");
  ExecutionCounts e1 = execution_counts(single.spaces);
  CHECK(e1.without_reuse == 1);
  CHECK(e1.with_reuse == 1);
  auto i22 = sized_instance({2, 2}, "cnt22");
  ExecutionCounts e22 = execution_counts(i22.spaces);
  CHECK(e22.without_reuse == 8);
  CHECK(e22.with_reuse == 6);
}

TEST_CASE("pruned-count bounds bracket the enumerated count") {
  // The scenario: change at slot 3 (fe), successor cnn with per-parent
  // compatible counts 3 and 2.
  auto sc = testsupport::build_scenario(fresh_dir("bounds"));
  SearchSpace spaces =
      component_search_spaces(sc.repo, sc.master_head, sc.dev_head);
  CompatibilityLut lut = CompatibilityLut::build(sc.repo.spec(), spaces);

  std::uint64_t exact = pruned_candidate_count(sc.repo.spec(), spaces, lut);
  CHECK(exact == 10);

  PrunedCountBounds b = pruned_count_bounds(spaces, 3, 2);
  CHECK(b.formula_value == 1 * 2 * 2 * 2);  // prefix * n_compat * suffix
  CHECK(b.lower == 4);
  CHECK(b.upper_removed == 16);
  CHECK(exact >= b.lower);
  CHECK(20 - exact <= b.upper_removed);

  // Boundary: n_compat = N(S)-1 collapses the formula onto the lower bound
  // when the successor has two versions.
  auto i22 = sized_instance({1, 2, 2}, "bnd22");
  PrunedCountBounds b2 = pruned_count_bounds(i22.spaces, 2, 1);
  CHECK(b2.formula_value == b2.lower);

  CHECK_THROWS_AS((void)pruned_count_bounds(spaces, 0, 1), Error);
  CHECK_THROWS_AS((void)pruned_count_bounds(spaces, 4, 1), Error);
  CHECK_THROWS_AS((void)pruned_count_bounds(spaces, 3, 5), Error);

  // No schema change anywhere: the LUT keeps the full product.
  auto full = sized_instance({2, 3, 2}, "bndfull");
  CompatibilityLut fl = CompatibilityLut::build(full.spec, full.spaces);
  CHECK(pruned_candidate_count(full.spec, full.spaces, fl) == 12);
}

TEST_CASE("merge reports serialize as CSV") {
  auto sc = testsupport::build_scenario(fresh_dir("csv"));
  VirtualExecutor ex(sc.repo.store(), sc.repo.store());
  MergeOutcome out = metric_merge(sc.repo, "master", "dev", "score",
                                  MergeStrategy::pruned_reuse, ex);
  std::string csv = out.report.csv();
  CHECK(csv.find("candidate,bindings,score,reused_slots,wall_ms\n") == 0);
  CHECK(csv.find("summary,pcpr,total=20,pruned=10") != std::string::npos);
  // one row per candidate plus header and summary
  CHECK(split_lines(csv).size() == 10 + 2);
}

TEST_SUITE_END();
