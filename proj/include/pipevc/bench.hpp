#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pipevc/mergex.hpp"
#include "pipevc/rng.hpp"
#include "pipevc/vcs.hpp"

namespace pipevc {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct HistoryConfig {
  int iterations = 10;
  double p_update_preproc = 0.4;
  double p_update_model = 0.6;
  double p_schema_change = 0.1;
  std::uint64_t seed = 1;

  double dataset_cost_ms = 100.0;
  double preproc_cost_ms = 200.0;
  double model_cost_ms = 50.0;

  std::size_t dataset_payload_bytes = 1 << 20;
  std::size_t model_payload_bytes = 10 * 1024;

  // Branch lengths for the two-branch merge scenario.
  int head_updates = 1;
  int dev_updates = 4;

  std::string metric = "score";
  std::string score_mode = "additive";
  std::uint64_t score_seed = 7;

  void validate() const;
};

HistoryConfig history_config_from_kv(const std::string& text);

// One sampled update: the slot that changes and whether its output schema
// changes with it.
struct UpdatePlan {
  std::string slot;  // "prep" or "model"
  bool schema_change = false;
};

std::vector<UpdatePlan> plan_updates(const HistoryConfig& cfg, int count,
                                     Rng& rng);

struct HistoryEvent {
  int iteration = 0;
  std::string slot;
  bool schema_change = false;
  std::string commit_id;
};

// ---------------------------------------------------------------------------
// Harness pieces
// ---------------------------------------------------------------------------

// The benchmark pipeline: data (dataset) -> prep (library) -> model.
PipelineSpec bench_pipeline_spec();

// Packs a stub payload, archives it and registers the next component
// version on `branch`.
const ComponentVersion& register_stub_component(Repository& repo,
                                                const StubSpec& spec,
                                                const std::string& branch);

// The stub config shipped inside a registered component's payload.
std::map<std::string, std::string> stub_config_of(const Repository& repo,
                                                  const ComponentVersion& cv);

// Registers the initial data/prep/model stubs and creates the root commit.
const Commit& seed_initial_commit(Repository& repo, const HistoryConfig& cfg,
                                  Executor& ex, MetricsLedger* ledger);

// Applies one planned update on `branch`: registers the new component
// version (a prep schema change also refreshes the model to stay
// compatible), runs the pipeline and commits. With `reuse`, unchanged
// slots are skipped against the branch head's archived outputs.
HistoryEvent apply_update(Repository& repo, const HistoryConfig& cfg,
                          const std::string& branch, const UpdatePlan& plan,
                          Executor& ex, MetricsLedger* ledger, int iteration,
                          bool reuse = true);

// Seeded update series on one branch.
std::vector<HistoryEvent> generate_history(Repository& repo,
                                           const HistoryConfig& cfg,
                                           const std::string& branch,
                                           Executor& ex, Rng& rng,
                                           MetricsLedger* ledger = nullptr);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct CurvePoint {
  std::string system;
  int iteration = 0;
  double cet_s = 0;
  double cst_s = 0;
  double cpt_s = 0;
  std::uint64_t css_bytes = 0;
};

// `system,iteration,cet_s,cst_s,cpt_s,css_bytes`
std::string curves_csv(const std::vector<CurvePoint>& points);

struct LinearResult {
  std::vector<UpdatePlan> plan;
  std::vector<CurvePoint> points;
};

// Replays one seeded update series under (a) the archive-folders baseline
// that re-executes every slot each iteration and copies all payloads and
// outputs, and (b) the reuse mode that skips unchanged slots over the
// dedup store. Emits per-iteration cumulative curves for both systems.
LinearResult linear_experiment(const HistoryConfig& cfg,
                               const std::filesystem::path& workdir);

struct StrategyOutcome {
  std::string strategy;
  MergeReport report;
  int executor_calls = 0;
  MetricsLedger::Snapshot ledger;
  std::uint64_t archive_css_bytes = 0;  // storage the merge itself wrote
};

struct NonlinearResult {
  std::vector<StrategyOutcome> outcomes;  // full, pc, pcpr
  std::string winner_bindings;
};

// Two branches diverge from a common root and merge under each searching
// strategy; identical histories are rebuilt per strategy from the seed.
// Baseline strategies materialize candidate outputs copy-per-candidate;
// the pruned-reuse strategy archives into the repository's dedup store.
NonlinearResult nonlinear_experiment(const HistoryConfig& cfg,
                                     const std::filesystem::path& workdir);

std::string nonlinear_csv(const NonlinearResult& r);

}  // namespace pipevc
