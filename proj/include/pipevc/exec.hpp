#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pipevc/model.hpp"
#include "pipevc/store.hpp"

namespace pipevc {

// ---------------------------------------------------------------------------
// Run accounting
// ---------------------------------------------------------------------------

struct RunStats {
  double execution_s = 0.0;
  double storage_s = 0.0;
  std::uint64_t storage_bytes = 0;  // physical store growth caused by the run

  double pipeline_s() const { return execution_s + storage_s; }

  RunStats& operator+=(const RunStats& o) {
    execution_s += o.execution_s;
    storage_s += o.storage_s;
    storage_bytes += o.storage_bytes;
    return *this;
  }
};

// Cumulative execution / storage / pipeline time and storage size.
class MetricsLedger {
 public:
  struct Snapshot {
    double cet_s = 0.0;
    double cst_s = 0.0;
    double cpt_s = 0.0;
    std::uint64_t css_bytes = 0;
  };

  void add(const RunStats& s) {
    std::lock_guard lk(mu_);
    cet_ += s.execution_s;
    cst_ += s.storage_s;
    css_ += s.storage_bytes;
  }

  Snapshot snapshot() const {
    std::lock_guard lk(mu_);
    return {cet_, cst_, cet_ + cst_, css_};
  }

 private:
  mutable std::mutex mu_;
  double cet_ = 0.0;
  double cst_ = 0.0;
  std::uint64_t css_ = 0;
};

// A materialized component output (or input): the packed artifact in the
// store plus the digest of the schema it carries.
struct ArtifactRef {
  std::string manifest;
  Digest schema{};
};

struct RunResult {
  ArtifactRef output;
  RunStats stats;
  std::optional<double> score;
  std::string metric = "score";
};

// ---------------------------------------------------------------------------
// Executors
// ---------------------------------------------------------------------------
//
// `run_component` materializes the payload and input, runs the component,
// checks the produced schema against the declared one and archives the
// packed output artifact. The invocation counter drives the
// strategy-comparison instrumentation.

class Executor {
 public:
  Executor(Store& payload_store, ObjectStore& archive_store)
      : payloads_(payload_store), archive_(archive_store) {}
  virtual ~Executor() = default;

  RunResult run_component(const ComponentVersion& cv,
                          const std::optional<ArtifactRef>& input);

  int calls() const { return calls_.load(); }
  void reset_calls() { calls_.store(0); }

 protected:
  virtual RunResult do_run(const ComponentVersion& cv,
                           const std::optional<ArtifactRef>& input) = 0;

  // Shared helpers for subclasses.
  std::map<std::string, std::string> load_payload(const ComponentVersion& cv);
  RunResult archive_output(const ComponentVersion& cv,
                           std::map<std::string, std::string> entries,
                           double execution_s, double materialized_bytes);

  Store& payloads_;
  ObjectStore& archive_;
  std::atomic<int> calls_{0};
};

// Interprets stub payloads in process, with virtual time: execution time is
// the configured cost, storage time is bytes moved over a fixed virtual
// bandwidth. Byte-identical outputs to the generated stub executables.
class VirtualExecutor : public Executor {
 public:
  using Executor::Executor;

 protected:
  RunResult do_run(const ComponentVersion& cv,
                   const std::optional<ArtifactRef>& input) override;
};

// Spawns the payload's `run` executable under the component protocol:
//   run --input-dir D_in --output-dir D_out --meta M
// The output dir must contain `data.*` and `schema.txt`; `score.txt` is
// optional. With `real_sleep`, stubs actually sleep and wall time is
// reported; otherwise stub costs are taken from the config.
class ProcessExecutor : public Executor {
 public:
  ProcessExecutor(Store& payload_store, ObjectStore& archive_store,
                  std::filesystem::path workroot, bool real_sleep = false)
      : Executor(payload_store, archive_store),
        workroot_(std::move(workroot)),
        real_sleep_(real_sleep) {}

 protected:
  RunResult do_run(const ComponentVersion& cv,
                   const std::optional<ArtifactRef>& input) override;

 private:
  std::filesystem::path workroot_;
  bool real_sleep_ = false;
  std::uint64_t run_seq_ = 0;
};

// ---------------------------------------------------------------------------
// Stub component toolkit
// ---------------------------------------------------------------------------

struct StubSpec {
  std::string name;
  ComponentKind kind = ComponentKind::library;
  double cost_ms = 0.0;
  // identity | append_column | model (libraries); ignored for datasets.
  std::string transform = "identity";
  std::string column;               // append_column: the header to add
  std::string score_mode = "none";  // none | hash | additive
  std::uint64_t score_seed = 0;
  std::string metric = "score";
  std::string param = "0";  // free-form knob distinguishing versions
  std::size_t payload_pad = 0;

  std::vector<std::string> dataset_headers;  // datasets
  std::size_t dataset_rows = 0;

  bool schema_changed = false;
  std::optional<Digest> input_schema;      // declared input; nullopt = any
  std::vector<std::string> input_headers;  // used to derive the output schema
};

// Builds a self-contained payload (metafile, stub config, executable or
// data) honoring the component protocol. Fully deterministic.
std::map<std::string, std::string> make_stub_component(const StubSpec& spec);

// Output headers the stub will produce, given its transform.
std::vector<std::string> stub_output_headers(const StubSpec& spec);

// Deterministic stub score in [0,1] for a candidate lineage (the version
// keys along the pipeline, in order). `hash` mode is an independent draw
// per tuple; `additive` mixes per-component quality with small tuple noise
// so that related candidates have related scores.
double stub_score(const std::string& mode, std::uint64_t seed,
                  const std::vector<std::string>& lineage);

// ---------------------------------------------------------------------------
// Path execution
// ---------------------------------------------------------------------------

struct PathStep {
  const ComponentVersion* component = nullptr;
  int input_index = -1;  // index into the path of the data predecessor
  bool executed = false;
  std::optional<ArtifactRef> output;
  std::optional<double> score;
  std::string metric = "score";
};

struct PathRunResult {
  int invoked = 0;
  int reused = 0;
  RunStats stats;  // newly incurred by this walk
  std::optional<double> leaf_score;
};

// Runs the not-yet-executed steps of a root-to-leaf walk in order, feeding
// each step its predecessor's artifact and reusing recorded outputs.
// Freshly run steps get `executed`, `output` and `score` filled in.
PathRunResult execute_node_list(std::span<PathStep> path, Executor& ex,
                                MetricsLedger* ledger);

// ---------------------------------------------------------------------------
// Whole-pipeline runs
// ---------------------------------------------------------------------------

struct PipelineRunOutcome {
  std::map<std::string, ArtifactRef> outputs;  // per slot
  std::map<std::string, double> scores;        // metric -> value
  RunStats stats;                              // newly incurred
  int executed_slots = 0;
  int reused_slots = 0;
};

// Runs a pipeline version in topological order. When previous outputs and
// bindings are supplied, a slot is reused instead of run iff its binding is
// unchanged and all its ancestors were reused.
PipelineRunOutcome run_pipeline(
    const PipelineSpec& spec, const PipelineVersion& pv, Executor& ex,
    MetricsLedger* ledger = nullptr,
    const std::map<std::string, ArtifactRef>* prev_outputs = nullptr,
    const std::map<std::string, std::string>* prev_bindings = nullptr);

// Pipeline-time speedup from parallelizing the fraction `p` of the work by
// a factor `k`: 1 / ((1-p) + p/k).
double speedup(double p, double k);

}  // namespace pipevc
