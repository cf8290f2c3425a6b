#include "pipevc/bench.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "pipevc/errors.hpp"
#include "pipevc/text.hpp"

namespace fs = std::filesystem;

namespace pipevc {

namespace {

const std::vector<std::string> kDataHeaders = {"age", "sex", "bmi", "bp",
                                               "chol"};

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[40];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

void HistoryConfig::validate() const {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(p_update_preproc) || !in_unit(p_update_model) ||
      !in_unit(p_schema_change))
    fail(Errc::bad_config, "probabilities must be in [0,1]");
  if (std::abs(p_update_preproc + p_update_model - 1.0) > 1e-9)
    fail(Errc::bad_config, "update probabilities must sum to 1");
  if (iterations < 0 || head_updates < 0 || dev_updates < 0)
    fail(Errc::bad_config, "iteration counts must be non-negative");
}

HistoryConfig history_config_from_kv(const std::string& text) {
  HistoryConfig cfg;
  auto kv = parse_kv(text);
  auto geti = [&](const char* k, int& out) {
    if (kv.count(k)) out = std::stoi(kv.at(k));
  };
  auto getd = [&](const char* k, double& out) {
    if (kv.count(k)) out = std::stod(kv.at(k));
  };
  auto getu = [&](const char* k, std::uint64_t& out) {
    if (kv.count(k)) out = std::stoull(kv.at(k));
  };
  auto getz = [&](const char* k, std::size_t& out) {
    if (kv.count(k)) out = std::stoull(kv.at(k));
  };
  geti("iterations", cfg.iterations);
  getd("p_update_preproc", cfg.p_update_preproc);
  getd("p_update_model", cfg.p_update_model);
  getd("p_schema_change", cfg.p_schema_change);
  getu("seed", cfg.seed);
  getd("dataset_cost_ms", cfg.dataset_cost_ms);
  getd("preproc_cost_ms", cfg.preproc_cost_ms);
  getd("model_cost_ms", cfg.model_cost_ms);
  getz("dataset_payload_bytes", cfg.dataset_payload_bytes);
  getz("model_payload_bytes", cfg.model_payload_bytes);
  geti("head_updates", cfg.head_updates);
  geti("dev_updates", cfg.dev_updates);
  if (kv.count("metric")) cfg.metric = kv.at("metric");
  if (kv.count("score_mode")) cfg.score_mode = kv.at("score_mode");
  getu("score_seed", cfg.score_seed);
  cfg.validate();
  return cfg;
}

std::vector<UpdatePlan> plan_updates(const HistoryConfig& cfg, int count,
                                     Rng& rng) {
  std::vector<UpdatePlan> plan;
  plan.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    UpdatePlan u;
    u.slot = rng.unit() < cfg.p_update_preproc ? "prep" : "model";
    u.schema_change = u.slot == "prep" && rng.unit() < cfg.p_schema_change;
    plan.push_back(u);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Harness pieces
// ---------------------------------------------------------------------------

PipelineSpec bench_pipeline_spec() {
  return PipelineSpec(
      "bench",
      {{"data", ComponentKind::dataset},
       {"prep", ComponentKind::library},
       {"model", ComponentKind::library}},
      {{"data", "prep"}, {"prep", "model"}});
}

const ComponentVersion& register_stub_component(Repository& repo,
                                                const StubSpec& spec,
                                                const std::string& branch) {
  auto payload = make_stub_component(spec);
  ObjectManifest m = repo.store().put_object(pack_entries(payload), "payload");
  Metafile meta = parse_metafile(payload.at("metafile"));
  return repo.register_component(meta, m.id, branch);
}

std::map<std::string, std::string> stub_config_of(const Repository& repo,
                                                  const ComponentVersion& cv) {
  auto entries = unpack_entries(repo.store().get_object(cv.payload));
  auto it = entries.find("stub.cfg");
  if (it == entries.end())
    fail(Errc::bad_config, cv.key() + " carries no stub config");
  return parse_kv(it->second);
}

namespace {

StubSpec base_dataset_spec(const HistoryConfig& cfg) {
  StubSpec s;
  s.name = "data";
  s.kind = ComponentKind::dataset;
  s.cost_ms = cfg.dataset_cost_ms;
  s.dataset_headers = kDataHeaders;
  // ~20 bytes per row (5 short values, commas, newline).
  s.dataset_rows = cfg.dataset_payload_bytes / 20;
  return s;
}

StubSpec base_prep_spec(const HistoryConfig& cfg, const Digest& input_schema) {
  StubSpec s;
  s.name = "prep";
  s.cost_ms = cfg.preproc_cost_ms;
  s.transform = "append_column";
  s.column = "feat0";
  s.input_schema = input_schema;
  s.input_headers = kDataHeaders;
  return s;
}

StubSpec base_model_spec(const HistoryConfig& cfg, const Digest& input_schema,
                         const std::vector<std::string>& input_headers) {
  StubSpec s;
  s.name = "model";
  s.cost_ms = cfg.model_cost_ms;
  s.transform = "model";
  s.score_mode = cfg.score_mode;
  s.score_seed = cfg.score_seed;
  s.metric = cfg.metric;
  s.input_schema = input_schema;
  s.input_headers = input_headers;
  s.payload_pad = cfg.model_payload_bytes;
  return s;
}

PipelineVersion bind_all(const PipelineSpec& spec,
                         const std::map<std::string, ComponentVersion>& b) {
  PipelineVersion pv;
  pv.spec_name = spec.name();
  pv.bindings = b;
  return pv;
}

}  // namespace

const Commit& seed_initial_commit(Repository& repo, const HistoryConfig& cfg,
                                  Executor& ex, MetricsLedger* ledger) {
  if (!repo.has_spec()) repo.register_spec(bench_pipeline_spec());
  const PipelineSpec& spec = repo.spec();

  StubSpec data = base_dataset_spec(cfg);
  const ComponentVersion& data_v = register_stub_component(repo, data, "master");

  StubSpec prep = base_prep_spec(cfg, data_v.output_schema);
  const ComponentVersion& prep_v = register_stub_component(repo, prep, "master");

  StubSpec model = base_model_spec(cfg, prep_v.output_schema,
                                   stub_output_headers(prep));
  const ComponentVersion& model_v =
      register_stub_component(repo, model, "master");

  PipelineVersion pv = bind_all(
      spec, {{"data", data_v}, {"prep", prep_v}, {"model", model_v}});
  PipelineRunOutcome run = run_pipeline(spec, pv, ex, ledger);
  return repo.commit_pipeline("master", pv,
                              {run.outputs, run.scores, run.stats});
}

HistoryEvent apply_update(Repository& repo, const HistoryConfig& cfg,
                          const std::string& branch, const UpdatePlan& plan,
                          Executor& ex, MetricsLedger* ledger, int iteration,
                          bool reuse) {
  auto head_id = repo.head(branch);
  if (!head_id) fail(Errc::unknown_commit, "branch has no commits to update");
  const Commit& head = repo.commit(*head_id);

  std::map<std::string, ComponentVersion> bindings = head.pipeline.bindings;
  const ComponentVersion& old_prep = bindings.at("prep");
  const ComponentVersion& old_model = bindings.at("model");

  if (plan.slot == "prep") {
    auto old_cfg = stub_config_of(repo, old_prep);
    StubSpec prep = base_prep_spec(cfg, *old_prep.input_schema);
    prep.param = std::to_string(std::stoi(old_cfg.at("param")) + 1);
    if (plan.schema_change) {
      prep.column = "feat" + std::to_string(old_prep.version.schema_ordinal + 1);
      prep.schema_changed = true;
    } else {
      prep.column = old_cfg.at("column");
    }
    const ComponentVersion& new_prep =
        register_stub_component(repo, prep, branch);
    bindings["prep"] = new_prep;

    if (plan.schema_change) {
      // Commit-time compatibility: the model follows the new schema.
      auto old_mcfg = stub_config_of(repo, old_model);
      StubSpec model = base_model_spec(cfg, new_prep.output_schema,
                                       stub_output_headers(prep));
      model.param = std::to_string(std::stoi(old_mcfg.at("param")) + 1);
      bindings["model"] = register_stub_component(repo, model, branch);
    }
  } else if (plan.slot == "model") {
    auto old_cfg = stub_config_of(repo, old_model);
    StubSpec model = base_model_spec(cfg, *old_model.input_schema, {});
    model.param = std::to_string(std::stoi(old_cfg.at("param")) + 1);
    bindings["model"] = register_stub_component(repo, model, branch);
  } else {
    fail(Errc::bad_config, "unknown update slot '" + plan.slot + "'");
  }

  PipelineVersion pv = bind_all(repo.spec(), bindings);
  auto prev_outputs = head.output_refs();
  auto prev_keys = head.binding_keys();
  PipelineRunOutcome run =
      reuse ? run_pipeline(repo.spec(), pv, ex, ledger, &prev_outputs,
                           &prev_keys)
            : run_pipeline(repo.spec(), pv, ex, ledger);
  const Commit& c = repo.commit_pipeline(branch, pv,
                                         {run.outputs, run.scores, run.stats});

  HistoryEvent ev;
  ev.iteration = iteration;
  ev.slot = plan.slot;
  ev.schema_change = plan.schema_change;
  ev.commit_id = c.id;
  return ev;
}

std::vector<HistoryEvent> generate_history(Repository& repo,
                                           const HistoryConfig& cfg,
                                           const std::string& branch,
                                           Executor& ex, Rng& rng,
                                           MetricsLedger* ledger) {
  auto plan = plan_updates(cfg, cfg.iterations, rng);
  std::vector<HistoryEvent> events;
  for (int i = 0; i < cfg.iterations; ++i)
    events.push_back(apply_update(repo, cfg, branch, plan[static_cast<std::size_t>(i)],
                                  ex, ledger, i + 1));
  return events;
}

// ---------------------------------------------------------------------------
// Linear experiment
// ---------------------------------------------------------------------------

std::string curves_csv(const std::vector<CurvePoint>& points) {
  std::ostringstream out;
  out << "system,iteration,cet_s,cst_s,cpt_s,css_bytes\n";
  for (const auto& p : points) {
    out << p.system << "," << p.iteration << "," << fmt(p.cet_s) << ","
        << fmt(p.cst_s) << "," << fmt(p.cpt_s) << "," << p.css_bytes << "\n";
  }
  return out.str();
}

LinearResult linear_experiment(const HistoryConfig& cfg,
                               const fs::path& workdir) {
  cfg.validate();
  LinearResult result;
  Rng rng(cfg.seed);
  result.plan = plan_updates(cfg, cfg.iterations, rng);

  // Reuse mode: dedup store, unchanged slots skipped.
  Repository reuse_repo = Repository::init(workdir / "reuse");
  reuse_repo.register_spec(bench_pipeline_spec());
  VirtualExecutor reuse_ex(reuse_repo.store(), reuse_repo.store());
  MetricsLedger reuse_ledger;

  // Baseline: every iteration re-executes all slots and archives payloads
  // and outputs into fresh folders.
  Repository base_repo = Repository::init(workdir / "baseline");
  base_repo.register_spec(bench_pipeline_spec());
  FolderStore folder(workdir / "baseline-folders");
  VirtualExecutor base_ex(base_repo.store(), folder);
  MetricsLedger base_ledger;

  auto archive_payloads = [&](Repository& repo, const Commit& c) {
    for (const auto& [_, cv] : c.pipeline.bindings)
      folder.put_object(repo.store().get_object(cv.payload), "payload");
  };

  auto snap = [&](const std::string& system, int iter,
                  const MetricsLedger& ledger, std::uint64_t css) {
    auto s = ledger.snapshot();
    result.points.push_back(
        CurvePoint{system, iter, s.cet_s, s.cst_s, s.cpt_s, css});
  };

  const Commit& reuse_root =
      seed_initial_commit(reuse_repo, cfg, reuse_ex, &reuse_ledger);
  (void)reuse_root;
  snap("reuse", 0, reuse_ledger, reuse_repo.store().stats().physical_bytes);

  const Commit& base_root =
      seed_initial_commit(base_repo, cfg, base_ex, &base_ledger);
  archive_payloads(base_repo, base_root);
  snap("baseline", 0, base_ledger, folder.stats().physical_bytes);

  for (int i = 0; i < cfg.iterations; ++i) {
    const UpdatePlan& plan = result.plan[static_cast<std::size_t>(i)];
    apply_update(reuse_repo, cfg, "master", plan, reuse_ex, &reuse_ledger,
                 i + 1, /*reuse=*/true);
    snap("reuse", i + 1, reuse_ledger,
         reuse_repo.store().stats().physical_bytes);

    HistoryEvent ev = apply_update(base_repo, cfg, "master", plan, base_ex,
                                   &base_ledger, i + 1, /*reuse=*/false);
    archive_payloads(base_repo, base_repo.commit(ev.commit_id));
    snap("baseline", i + 1, base_ledger, folder.stats().physical_bytes);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Nonlinear experiment
// ---------------------------------------------------------------------------

NonlinearResult nonlinear_experiment(const HistoryConfig& cfg,
                                     const fs::path& workdir) {
  cfg.validate();
  NonlinearResult result;

  const MergeStrategy strategies[] = {MergeStrategy::full_enum,
                                      MergeStrategy::compat_only,
                                      MergeStrategy::pruned_reuse};

  for (MergeStrategy strategy : strategies) {
    const char* name = strategy_name(strategy);
    fs::path dir = workdir / name;

    // Identical two-branch history per strategy, rebuilt from the seed.
    Repository repo = Repository::init(dir / "repo");
    repo.register_spec(bench_pipeline_spec());
    VirtualExecutor history_ex(repo.store(), repo.store());
    const Commit& root = seed_initial_commit(repo, cfg, history_ex, nullptr);
    repo.create_branch("dev", root.id);

    Rng head_rng(cfg.seed * 2654435761u + 1);
    for (int i = 0; i < cfg.head_updates; ++i)
      apply_update(repo, cfg, "master",
                   plan_updates(cfg, 1, head_rng).front(), history_ex, nullptr,
                   i + 1);
    Rng dev_rng(cfg.seed * 2654435761u + 2);
    for (int i = 0; i < cfg.dev_updates; ++i)
      apply_update(repo, cfg, "dev", plan_updates(cfg, 1, dev_rng).front(),
                   history_ex, nullptr, i + 1);

    StrategyOutcome outcome;
    outcome.strategy = name;
    MetricsLedger merge_ledger;

    if (strategy == MergeStrategy::pruned_reuse) {
      VirtualExecutor merge_ex(repo.store(), repo.store());
      std::uint64_t before = repo.store().stats().physical_bytes;
      MergeOutcome m = metric_merge(repo, "master", "dev", cfg.metric,
                                    strategy, merge_ex, &merge_ledger);
      outcome.report = std::move(m.report);
      outcome.executor_calls = merge_ex.calls();
      outcome.archive_css_bytes =
          repo.store().stats().physical_bytes - before;
    } else {
      FolderStore folder(dir / "folders");
      VirtualExecutor merge_ex(repo.store(), folder);
      MergeOutcome m = metric_merge(repo, "master", "dev", cfg.metric,
                                    strategy, merge_ex, &merge_ledger);
      outcome.report = std::move(m.report);
      outcome.executor_calls = merge_ex.calls();
      outcome.archive_css_bytes = folder.stats().physical_bytes;
    }
    outcome.ledger = merge_ledger.snapshot();
    result.outcomes.push_back(std::move(outcome));
  }

  result.winner_bindings =
      join(result.outcomes.front().report.winner().binding_keys, "|");
  return result;
}

std::string nonlinear_csv(const NonlinearResult& r) {
  std::ostringstream out;
  out << "strategy,executor_calls,cet_s,cst_s,cpt_s,css_bytes,candidates,"
         "pruned,winner\n";
  for (const auto& o : r.outcomes) {
    out << o.strategy << "," << o.executor_calls << "," << fmt(o.ledger.cet_s)
        << "," << fmt(o.ledger.cst_s) << "," << fmt(o.ledger.cpt_s) << ","
        << o.archive_css_bytes << "," << o.report.candidates_total << ","
        << o.report.candidates_after_pruning << ","
        << join(o.report.winner().binding_keys, "|") << "\n";
  }
  return out.str();
}

}  // namespace pipevc
