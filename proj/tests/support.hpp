#pragma once

// Shared fixtures for the test suites: the branch/merge scenario from the
// running example and a randomized small-instance generator for the
// property and counting checks.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pipevc/bench.hpp"
#include "pipevc/exec.hpp"
#include "pipevc/mergex.hpp"
#include "pipevc/rng.hpp"
#include "pipevc/vcs.hpp"

namespace pipevc::testsupport {

inline std::filesystem::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  auto p = std::filesystem::temp_directory_path() /
           ("pipevc-test-" + std::to_string(::getpid()) + "-" + tag + "-" +
            std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// The running-example scenario
// ---------------------------------------------------------------------------
//
// Pipeline ds -> dc -> fe -> cnn. History:
//   c0 (master):  ds0.0 dc0.0 fe0.0 cnn0.0     <- common ancestor
//   dev:          cnn0.1
//   dev:          fe1.0 + cnn0.2               (schema change, paired)
//   dev:          cnn0.3
//   dev:          dc0.1
//   master:       cnn0.4
// Search spaces per slot: [1, 2, 2, 5], upper bound 20, 10 compatible.

struct Scenario {
  Repository repo;
  std::string root_id;
  std::string master_head;
  std::string dev_head;

  explicit Scenario(Repository r) : repo(std::move(r)) {}
};

inline PipelineSpec scenario_spec() {
  return PipelineSpec("readmit",
                      {{"ds", ComponentKind::dataset},
                       {"dc", ComponentKind::library},
                       {"fe", ComponentKind::library},
                       {"cnn", ComponentKind::library}},
                      {{"ds", "dc"}, {"dc", "fe"}, {"fe", "cnn"}});
}

inline Scenario build_scenario(const std::filesystem::path& dir,
                               const std::string& score_mode = "hash",
                               std::uint64_t score_seed = 42) {
  Scenario sc(Repository::init(dir));
  Repository& repo = sc.repo;
  repo.register_spec(scenario_spec());
  VirtualExecutor ex(repo.store(), repo.store());

  const std::vector<std::string> headers = {"a", "b", "c"};

  StubSpec ds;
  ds.name = "ds";
  ds.kind = ComponentKind::dataset;
  ds.cost_ms = 10;
  ds.dataset_headers = headers;
  ds.dataset_rows = 50;

  StubSpec dc;
  dc.name = "dc";
  dc.cost_ms = 20;
  dc.transform = "identity";
  dc.input_headers = headers;

  StubSpec fe;
  fe.name = "fe";
  fe.cost_ms = 30;
  fe.transform = "append_column";
  fe.column = "f0";
  fe.input_headers = headers;

  StubSpec cnn;
  cnn.name = "cnn";
  cnn.cost_ms = 40;
  cnn.transform = "model";
  cnn.score_mode = score_mode;
  cnn.score_seed = score_seed;

  auto commit_with = [&](const std::string& branch,
                         std::map<std::string, ComponentVersion> bindings) {
    PipelineVersion pv;
    pv.spec_name = repo.spec().name();
    pv.bindings = std::move(bindings);
    auto head = repo.head(branch);
    PipelineRunOutcome run;
    if (head) {
      const Commit& h = repo.commit(*head);
      auto prev_outputs = h.output_refs();
      auto prev_keys = h.binding_keys();
      run = run_pipeline(repo.spec(), pv, ex, nullptr, &prev_outputs,
                         &prev_keys);
    } else {
      run = run_pipeline(repo.spec(), pv, ex, nullptr);
    }
    return repo.commit_pipeline(branch, pv,
                                {run.outputs, run.scores, run.stats}).id;
  };

  // c0: everything at 0.0.
  const ComponentVersion& ds00 = register_stub_component(repo, ds, "master");
  dc.input_schema = ds00.output_schema;
  const ComponentVersion& dc00 = register_stub_component(repo, dc, "master");
  fe.input_schema = dc00.output_schema;
  const ComponentVersion& fe00 = register_stub_component(repo, fe, "master");
  cnn.input_schema = fe00.output_schema;
  const ComponentVersion& cnn00 = register_stub_component(repo, cnn, "master");

  std::map<std::string, ComponentVersion> base = {
      {"ds", ds00}, {"dc", dc00}, {"fe", fe00}, {"cnn", cnn00}};
  sc.root_id = commit_with("master", base);
  repo.create_branch("dev", sc.root_id);

  // dev: cnn0.1 (increment, still fe0.0 input).
  StubSpec cnn1 = cnn;
  cnn1.param = "1";
  const ComponentVersion& cnn01 = register_stub_component(repo, cnn1, "dev");
  auto b = base;
  b["cnn"] = cnn01;
  commit_with("dev", b);

  // dev: fe1.0 (schema change) + cnn0.2 adapted to it.
  StubSpec fe1 = fe;
  fe1.column = "f1";
  fe1.schema_changed = true;
  fe1.param = "1";
  const ComponentVersion& fe10 = register_stub_component(repo, fe1, "dev");
  StubSpec cnn2 = cnn;
  cnn2.param = "2";
  cnn2.input_schema = fe10.output_schema;
  const ComponentVersion& cnn02 = register_stub_component(repo, cnn2, "dev");
  b = base;
  b["fe"] = fe10;
  b["cnn"] = cnn02;
  commit_with("dev", b);

  // dev: cnn0.3 (input fe1.0).
  StubSpec cnn3 = cnn2;
  cnn3.param = "3";
  const ComponentVersion& cnn03 = register_stub_component(repo, cnn3, "dev");
  b["cnn"] = cnn03;
  commit_with("dev", b);

  // dev: dc0.1 (increment).
  StubSpec dc1 = dc;
  dc1.param = "1";
  const ComponentVersion& dc01 = register_stub_component(repo, dc1, "dev");
  b["dc"] = dc01;
  sc.dev_head = commit_with("dev", b);

  // master: cnn0.4 (input fe0.0).
  StubSpec cnn4 = cnn;
  cnn4.param = "4";
  const ComponentVersion& cnn04 = register_stub_component(repo, cnn4, "master");
  auto mb = base;
  mb["cnn"] = cnn04;
  sc.master_head = commit_with("master", mb);

  return sc;
}

// A repo with just the root commit on master, on the three-slot bench
// pipeline (the no-conflict fast-forward topology once a branch diverges).
inline Scenario build_ff_scenario(const std::filesystem::path& dir) {
  Scenario sc(Repository::init(dir));
  Repository& repo = sc.repo;
  VirtualExecutor ex(repo.store(), repo.store());

  HistoryConfig cfg;
  cfg.dataset_payload_bytes = 4096;
  cfg.model_payload_bytes = 512;
  sc.root_id = seed_initial_commit(repo, cfg, ex, nullptr).id;
  return sc;
}

// ---------------------------------------------------------------------------
// Random small instances
// ---------------------------------------------------------------------------
//
// Chain pipelines with <= max_slots slots and <= max_versions versions per
// slot, registered as stub components in a fresh store. Version 0 of every
// slot stays on the base schema so candidate (0,...,0) is always
// compatible; later versions of one randomly chosen slot may switch to an
// alternate schema, with the successor slot holding adapted versions.

struct Instance {
  PipelineSpec spec;
  SearchSpace spaces;
  std::unique_ptr<Store> store;
  std::string metric = "score";
  // 1-based index of the schema-change slot, 0 when none. The change sits
  // at the second-to-last slot so the model slot absorbs the split and no
  // second change point appears downstream.
  std::size_t change_slot = 0;
};

inline Instance make_instance(const std::filesystem::path& dir, Rng& rng,
                              int max_slots = 4, int max_versions = 4,
                              bool allow_schema_change = true) {
  Instance inst;
  inst.store = std::make_unique<Store>(dir);

  int n_slots = 2 + static_cast<int>(rng.below(
                        static_cast<std::uint64_t>(max_slots - 1)));
  std::vector<Slot> slots;
  std::vector<std::pair<std::string, std::string>> edges;
  for (int i = 0; i < n_slots; ++i) {
    std::string name = "s" + std::to_string(i);
    slots.push_back({name, i == 0 ? ComponentKind::dataset
                                  : ComponentKind::library});
    if (i > 0) edges.emplace_back("s" + std::to_string(i - 1), name);
  }
  inst.spec = PipelineSpec("rand", slots, edges);

  std::vector<std::size_t> sizes;
  for (int i = 0; i < n_slots; ++i)
    sizes.push_back(1 + rng.below(static_cast<std::uint64_t>(max_versions)));
  // Keep the model slot interesting whenever any slot is: merges exist
  // because both branches iterate on the model.
  bool any_multi = false;
  for (auto s : sizes) any_multi |= s > 1;
  if (any_multi && sizes.back() < 2) sizes.back() = 2;

  int change = -1;  // 0-based slot whose output schema splits
  std::size_t n_alt = 0;
  if (allow_schema_change && n_slots >= 3 && rng.unit() < 0.5) {
    change = n_slots - 2;
    auto& cs = sizes[static_cast<std::size_t>(change)];
    if (cs < 2) cs = 2;
    if (sizes.back() < 2) sizes.back() = 2;
    n_alt = 1 + rng.below(cs - 1);  // alt versions, at least one base stays
    inst.change_slot = static_cast<std::size_t>(change) + 1;
  }

  const std::vector<std::string> base_headers = {"x", "y"};

  auto register_version = [&](const StubSpec& spec, std::uint32_t ordinal,
                              std::uint32_t increment) {
    auto payload = make_stub_component(spec);
    ObjectManifest m =
        inst.store->put_object(pack_entries(payload), "payload");
    Metafile meta = parse_metafile(payload.at("metafile"));
    ComponentVersion cv;
    cv.name = spec.name;
    cv.kind = spec.kind;
    cv.version =
        SemanticVersion{"master", ordinal, increment, meta.output_schema};
    cv.payload = m.id;
    cv.input_schema = meta.input_schema;
    cv.output_schema = meta.output_schema;
    return cv;
  };

  Digest base_schema{};  // output schema of the base path so far
  Digest alt_schema{};   // alternate schema out of the change slot

  for (int i = 0; i < n_slots; ++i) {
    std::string name = "s" + std::to_string(i);
    std::size_t size = sizes[static_cast<std::size_t>(i)];
    std::vector<ComponentVersion> versions;

    if (i == 0) {
      for (std::size_t v = 0; v < size; ++v) {
        StubSpec s;
        s.name = name;
        s.kind = ComponentKind::dataset;
        s.cost_ms = 1;
        s.param = std::to_string(v);
        s.dataset_headers = base_headers;
        s.dataset_rows = 4;
        versions.push_back(
            register_version(s, 0, static_cast<std::uint32_t>(v)));
      }
      base_schema = versions[0].output_schema;
    } else if (i == n_slots - 1) {
      // Model slot: base-input versions first, adapted ones after.
      std::size_t adapted = 0;
      if (n_alt > 0) adapted = 1 + rng.below(size - 1);
      for (std::size_t v = 0; v < size; ++v) {
        StubSpec s;
        s.name = name;
        s.cost_ms = 1;
        s.param = std::to_string(v);
        s.transform = "model";
        s.score_mode = "hash";
        s.score_seed = 9001;
        s.input_schema = v < size - adapted ? base_schema : alt_schema;
        versions.push_back(
            register_version(s, 0, static_cast<std::uint32_t>(v)));
      }
    } else if (i == change) {
      // Base (identity) versions first, then alt (appended column) ones.
      for (std::size_t v = 0; v < size; ++v) {
        StubSpec s;
        s.name = name;
        s.cost_ms = 1;
        s.param = std::to_string(v);
        s.input_schema = base_schema;
        s.input_headers = base_headers;
        bool alt = v >= size - n_alt;
        if (alt) {
          s.transform = "append_column";
          s.column = "alt";
          s.schema_changed = true;
          versions.push_back(register_version(
              s, 1, static_cast<std::uint32_t>(v - (size - n_alt))));
        } else {
          s.transform = "identity";
          versions.push_back(
              register_version(s, 0, static_cast<std::uint32_t>(v)));
        }
      }
      alt_schema = versions.back().output_schema;
    } else {
      // Plain middle slot: identity, schema passes through.
      for (std::size_t v = 0; v < size; ++v) {
        StubSpec s;
        s.name = name;
        s.cost_ms = 1;
        s.param = std::to_string(v);
        s.transform = "identity";
        s.input_schema = base_schema;
        s.input_headers = base_headers;
        versions.push_back(
            register_version(s, 0, static_cast<std::uint32_t>(v)));
      }
    }

    inst.spaces.slots.push_back(name);
    inst.spaces.versions.push_back(std::move(versions));
  }
  return inst;
}

// Brute-force oracle: unique prefix count over the compatible candidates,
// i.e. how many node executions a shared-prefix traversal needs.
inline std::uint64_t oracle_required_executions(
    const PipelineSpec& spec, const SearchSpace& spaces,
    const std::vector<std::vector<std::size_t>>& executed_prefixes) {
  std::set<std::vector<std::size_t>> need;
  for_each_candidate(spaces, [&](const std::vector<std::size_t>& pick) {
    if (!candidate_compatible(spec, spaces, pick)) return;
    for (std::size_t d = 1; d <= pick.size(); ++d)
      need.insert(std::vector<std::size_t>(pick.begin(),
                                           pick.begin() +
                                               static_cast<std::ptrdiff_t>(d)));
  });
  for (const auto& p : executed_prefixes) need.erase(p);
  return need.size();
}

// Per-node invocation counter on top of the virtual executor. A tree node
// is identified by its component plus its input artifact: equal inputs
// mean equal upstream version prefixes, so the pair pins one node.
class CountingExecutor : public VirtualExecutor {
 public:
  using VirtualExecutor::VirtualExecutor;

  std::map<std::string, int> per_key;

 protected:
  RunResult do_run(const ComponentVersion& cv,
                   const std::optional<ArtifactRef>& input) override {
    ++per_key[cv.key() + "|" + (input ? input->manifest : "none")];
    return VirtualExecutor::do_run(cv, input);
  }
};

}  // namespace pipevc::testsupport
