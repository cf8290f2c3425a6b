#include "pipevc/exec.hpp"

#include <cmath>
#include <thread>

#include "doctest.h"
#include "pipevc/errors.hpp"
#include "pipevc/text.hpp"
#include "support.hpp"

using namespace pipevc;
using testsupport::fresh_dir;

TEST_SUITE_BEGIN("exec");

namespace {

struct MiniPipeline {
  std::unique_ptr<Store> store;
  ComponentVersion data, prep, model;

  explicit MiniPipeline(const std::filesystem::path& dir,
                        const std::string& score_mode = "hash") {
    store = std::make_unique<Store>(dir);

    StubSpec d;
    d.name = "data";
    d.kind = ComponentKind::dataset;
    d.cost_ms = 5;
    d.dataset_headers = {"age", "sex", "bmi"};
    d.dataset_rows = 8;
    data = put(d, 0);

    StubSpec p;
    p.name = "prep";
    p.cost_ms = 7;
    p.transform = "append_column";
    p.column = "feat";
    p.input_schema = data.output_schema;
    p.input_headers = d.dataset_headers;
    prep = put(p, 1);

    StubSpec m;
    m.name = "model";
    m.cost_ms = 3;
    m.transform = "model";
    m.score_mode = score_mode;
    m.score_seed = 99;
    m.input_schema = prep.output_schema;
    model = put(m, 2);
  }

  ComponentVersion put(const StubSpec& spec, std::uint32_t increment) {
    auto payload = make_stub_component(spec);
    ObjectManifest m = store->put_object(pack_entries(payload), "payload");
    Metafile meta = parse_metafile(payload.at("metafile"));
    ComponentVersion cv;
    cv.name = spec.name;
    cv.kind = spec.kind;
    cv.version = SemanticVersion{"master", 0, increment, meta.output_schema};
    cv.payload = m.id;
    cv.input_schema = meta.input_schema;
    cv.output_schema = meta.output_schema;
    return cv;
  }
};

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  REQUIRE(false);
  return Errc::bad_config;
}

}  // namespace

TEST_CASE("stub payloads validate their configuration") {
  StubSpec s;
  CHECK(code_of([&] { (void)make_stub_component(s); }) == Errc::bad_config);
  s.name = "m";
  s.transform = "model";
  CHECK(code_of([&] { (void)make_stub_component(s); }) == Errc::bad_config);
  s.score_mode = "hash";
  CHECK_NOTHROW((void)make_stub_component(s));

  StubSpec ac;
  ac.name = "a";
  ac.transform = "append_column";
  CHECK(code_of([&] { (void)make_stub_component(ac); }) == Errc::bad_config);

  StubSpec ds;
  ds.name = "d";
  ds.kind = ComponentKind::dataset;
  CHECK(code_of([&] { (void)make_stub_component(ds); }) == Errc::bad_config);
}

TEST_CASE("append-column stubs declare the extended schema") {
  StubSpec s;
  s.name = "prep";
  s.transform = "append_column";
  s.column = "feat";
  s.input_headers = {"a", "b"};
  auto payload = make_stub_component(s);
  Metafile meta = parse_metafile(payload.at("metafile"));
  // Oracle: the spec'd schema hash over the extended header list.
  CHECK(meta.output_schema == schema_hash({"a", "b", "feat"}));
}

TEST_CASE("virtual runs honor the stub contract") {
  MiniPipeline mp(fresh_dir("virt"));
  VirtualExecutor ex(*mp.store, *mp.store);

  RunResult d = ex.run_component(mp.data, std::nullopt);
  CHECK(d.output.schema == mp.data.output_schema);
  CHECK(d.stats.execution_s == doctest::Approx(0.005));

  RunResult p = ex.run_component(mp.prep, d.output);
  CHECK(p.output.schema == mp.prep.output_schema);
  CHECK(p.output.schema != d.output.schema);  // appended column
  CHECK(p.stats.execution_s == doctest::Approx(0.007));

  RunResult m = ex.run_component(mp.model, p.output);
  REQUIRE(m.score.has_value());
  CHECK(*m.score >= 0.0);
  CHECK(*m.score <= 1.0);
  CHECK(ex.calls() == 3);

  // Identity stubs keep the schema and the data bytes.
  StubSpec ident;
  ident.name = "dc";
  ident.transform = "identity";
  ident.input_schema = mp.data.output_schema;
  ident.input_headers = {"age", "sex", "bmi"};
  ComponentVersion dc = mp.put(ident, 0);
  RunResult i = ex.run_component(dc, d.output);
  CHECK(i.output.schema == d.output.schema);
  auto in_entries = unpack_entries(mp.store->get_object(d.output.manifest));
  auto out_entries = unpack_entries(mp.store->get_object(i.output.manifest));
  CHECK(out_entries.at("data.csv") == in_entries.at("data.csv"));
  // Lineage extends by one hop.
  CHECK(split_lines(out_entries.at("lineage.txt")).size() ==
        split_lines(in_entries.at("lineage.txt")).size() + 1);
}

TEST_CASE("virtual runs are bit-deterministic") {
  MiniPipeline a(fresh_dir("det-a"));
  MiniPipeline b(fresh_dir("det-b"));
  VirtualExecutor ea(*a.store, *a.store);
  VirtualExecutor eb(*b.store, *b.store);

  auto run_chain = [](VirtualExecutor& ex, MiniPipeline& mp) {
    RunResult d = ex.run_component(mp.data, std::nullopt);
    RunResult p = ex.run_component(mp.prep, d.output);
    RunResult m = ex.run_component(mp.model, p.output);
    return std::make_pair(m.output.manifest, *m.score);
  };
  auto ra = run_chain(ea, a);
  auto rb = run_chain(eb, b);
  CHECK(ra.first == rb.first);  // identical artifact bytes, same digest
  CHECK(ra.second == rb.second);
}

TEST_CASE("declared input schemas are enforced") {
  MiniPipeline mp(fresh_dir("schema"));
  VirtualExecutor ex(*mp.store, *mp.store);
  RunResult d = ex.run_component(mp.data, std::nullopt);
  // The model expects prep output, not raw data.
  CHECK(code_of([&] { (void)ex.run_component(mp.model, d.output); }) ==
        Errc::schema_mismatch);
  CHECK(code_of([&] { (void)ex.run_component(mp.prep, std::nullopt); }) ==
        Errc::component_run_failure);
}

TEST_CASE("process executor matches the virtual executor bit for bit") {
  MiniPipeline mp(fresh_dir("proc"));
  VirtualExecutor virt(*mp.store, *mp.store);
  ProcessExecutor proc(*mp.store, *mp.store, fresh_dir("proc-work"));

  RunResult vd = virt.run_component(mp.data, std::nullopt);
  RunResult pd = proc.run_component(mp.data, std::nullopt);
  CHECK(vd.output.manifest == pd.output.manifest);

  RunResult vp = virt.run_component(mp.prep, vd.output);
  RunResult pp = proc.run_component(mp.prep, pd.output);
  CHECK(vp.output.manifest == pp.output.manifest);

  RunResult vm = virt.run_component(mp.model, vp.output);
  RunResult pm = proc.run_component(mp.model, pp.output);
  CHECK(vm.output.manifest == pm.output.manifest);
  REQUIRE(vm.score.has_value());
  REQUIRE(pm.score.has_value());
  CHECK(*vm.score == *pm.score);
  CHECK(pm.stats.execution_s == doctest::Approx(0.003));  // configured cost
}

TEST_CASE("failing executables surface stderr and exit codes") {
  MiniPipeline mp(fresh_dir("fail"));
  ProcessExecutor proc(*mp.store, *mp.store, fresh_dir("fail-work"));

  auto broken = [&](const std::string& body) {
    std::map<std::string, std::string> payload;
    payload["metafile"] =
        "name=bad\nkind=library\nschema_changed=false\noutput_schema=x\n"
        "input_schema=any\n";
    payload["run"] = body;
    ObjectManifest m = mp.store->put_object(pack_entries(payload), "payload");
    ComponentVersion cv;
    cv.name = "bad";
    cv.payload = m.id;
    cv.output_schema = schema_hash({"x"});
    return cv;
  };

  VirtualExecutor virt(*mp.store, *mp.store);
  RunResult d = virt.run_component(mp.data, std::nullopt);

  ComponentVersion exit1 = broken(
      "#!/usr/bin/env python3\nimport sys\nsys.stderr.write('boom')\n"
      "sys.exit(1)\n");
  try {
    (void)proc.run_component(exit1, d.output);
    REQUIRE(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_zero_exit);
    CHECK(std::string(e.what()).find("boom") != std::string::npos);
  }

  ComponentVersion silent = broken("#!/usr/bin/env python3\npass\n");
  CHECK(code_of([&] { (void)proc.run_component(silent, d.output); }) ==
        Errc::missing_output);
}

TEST_CASE("produced schemas must match the declaration") {
  MiniPipeline mp(fresh_dir("declmismatch"));
  VirtualExecutor ex(*mp.store, *mp.store);
  RunResult d = ex.run_component(mp.data, std::nullopt);

  ComponentVersion lying = mp.prep;
  lying.output_schema = schema_hash({"something", "else"});
  CHECK(code_of([&] { (void)ex.run_component(lying, d.output); }) ==
        Errc::schema_mismatch);
}

TEST_CASE("execute_node_list skips executed prefixes") {
  MiniPipeline mp(fresh_dir("pathrun"));
  VirtualExecutor ex(*mp.store, *mp.store);

  std::vector<PathStep> steps(3);
  steps[0] = {&mp.data, -1, false, std::nullopt, std::nullopt, "score"};
  steps[1] = {&mp.prep, 0, false, std::nullopt, std::nullopt, "score"};
  steps[2] = {&mp.model, 1, false, std::nullopt, std::nullopt, "score"};

  MetricsLedger ledger;
  PathRunResult full = execute_node_list(steps, ex, &ledger);
  CHECK(full.invoked == 3);
  CHECK(full.reused == 0);
  REQUIRE(full.leaf_score.has_value());

  // Re-running the same steps touches nothing.
  PathRunResult again = execute_node_list(steps, ex, &ledger);
  CHECK(again.invoked == 0);
  CHECK(again.reused == 3);
  CHECK(again.leaf_score == full.leaf_score);

  // Only the leaf missing: one invocation.
  steps[2].executed = false;
  steps[2].output.reset();
  PathRunResult leaf_only = execute_node_list(steps, ex, &ledger);
  CHECK(leaf_only.invoked == 1);
  CHECK(leaf_only.reused == 2);

  auto snap = ledger.snapshot();
  CHECK(snap.cpt_s == doctest::Approx(snap.cet_s + snap.cst_s));
}

TEST_CASE("run_pipeline reuses unchanged prefixes") {
  auto sc = testsupport::build_ff_scenario(fresh_dir("runpipe"));
  Repository& repo = sc.repo;
  const Commit& root = repo.commit(sc.root_id);
  VirtualExecutor ex(repo.store(), repo.store());

  // Nothing changed: every slot reused.
  auto prev_outputs = root.output_refs();
  auto prev_keys = root.binding_keys();
  PipelineRunOutcome same = run_pipeline(repo.spec(), root.pipeline, ex,
                                         nullptr, &prev_outputs, &prev_keys);
  CHECK(same.executed_slots == 0);
  CHECK(same.reused_slots == 3);

  // A changed model re-runs just itself.
  HistoryConfig cfg;
  cfg.dataset_payload_bytes = 4096;
  cfg.model_payload_bytes = 512;
  int before = ex.calls();
  HistoryEvent ev =
      apply_update(repo, cfg, "master", {"model", false}, ex, nullptr, 1);
  CHECK(ex.calls() - before == 1);

  // A changed prep re-runs prep and model but not the dataset.
  before = ex.calls();
  apply_update(repo, cfg, "master", {"prep", false}, ex, nullptr, 2);
  CHECK(ex.calls() - before == 2);
  (void)ev;
}

TEST_CASE("reused upstream outputs give identical downstream artifacts") {
  MiniPipeline mp(fresh_dir("reusecorrect"));
  VirtualExecutor ex(*mp.store, *mp.store);

  RunResult d = ex.run_component(mp.data, std::nullopt);
  RunResult p1 = ex.run_component(mp.prep, d.output);
  RunResult m1 = ex.run_component(mp.model, p1.output);

  // From-scratch chain in a different store.
  MiniPipeline fresh(fresh_dir("reusecorrect2"));
  VirtualExecutor ex2(*fresh.store, *fresh.store);
  RunResult d2 = ex2.run_component(fresh.data, std::nullopt);
  RunResult p2 = ex2.run_component(fresh.prep, d2.output);
  RunResult m2 = ex2.run_component(fresh.model, p2.output);

  CHECK(m1.output.manifest == m2.output.manifest);
  CHECK(*m1.score == *m2.score);
}

TEST_CASE("custom metric names flow through") {
  MiniPipeline mp(fresh_dir("metric"));
  StubSpec m;
  m.name = "model";
  m.transform = "model";
  m.score_mode = "hash";
  m.score_seed = 1;
  m.metric = "inv_mse";
  m.input_schema = mp.prep.output_schema;
  ComponentVersion cv = mp.put(m, 9);

  VirtualExecutor ex(*mp.store, *mp.store);
  RunResult d = ex.run_component(mp.data, std::nullopt);
  RunResult p = ex.run_component(mp.prep, d.output);
  RunResult r = ex.run_component(cv, p.output);
  CHECK(r.metric == "inv_mse");
}

TEST_CASE("speedup follows the closed form") {
  CHECK(std::abs(speedup(0.9, 8) - 4.705882352941176) < 1e-12);
  CHECK(1.0 / speedup(0.9, 8) < 0.25);  // under a quarter of the original
  CHECK(speedup(0.0, 8) == 1.0);
  CHECK(speedup(0.5, 1) == 1.0);
  CHECK(speedup(1.0, 4) == 4.0);
  CHECK_THROWS_AS((void)speedup(-0.1, 2), Error);
  CHECK_THROWS_AS((void)speedup(1.1, 2), Error);
  CHECK_THROWS_AS((void)speedup(0.5, 0.5), Error);

  // Monotone in both arguments over a grid.
  for (int pi = 0; pi < 20; ++pi) {
    for (int ki = 0; ki < 20; ++ki) {
      double p = 0.05 * (pi + 1);
      double k = 1.0 + ki;
      if (pi + 1 < 20)
        CHECK(speedup(0.05 * (pi + 2), k) >= speedup(p, k));
      if (ki + 1 < 20) {
        CHECK(speedup(p, k + 1.0) >= speedup(p, k));
        if (p > 0.0) CHECK(speedup(p, k + 1.0) > speedup(p, k));
      }
    }
  }
}

TEST_CASE("ledger accumulation keeps the pipeline identity") {
  MetricsLedger ledger;
  Rng rng(5);
  double cet = 0, cst = 0;
  for (int i = 0; i < 50; ++i) {
    RunStats s;
    s.execution_s = rng.unit();
    s.storage_s = rng.unit() * 0.1;
    s.storage_bytes = rng.below(1000);
    ledger.add(s);
    cet += s.execution_s;
    cst += s.storage_s;
    auto snap = ledger.snapshot();
    CHECK(snap.cpt_s == doctest::Approx(snap.cet_s + snap.cst_s));
    CHECK(snap.cet_s == doctest::Approx(cet));
    CHECK(snap.cst_s == doctest::Approx(cst));
  }
}

TEST_CASE("the ledger tolerates concurrent accumulation") {
  MetricsLedger ledger;
  RunStats unit;
  unit.execution_s = 0.25;
  unit.storage_s = 0.125;
  unit.storage_bytes = 16;

  std::vector<std::thread> workers;
  for (int t = 0; t < 8; ++t)
    workers.emplace_back([&] {
      for (int i = 0; i < 1000; ++i) ledger.add(unit);
    });
  for (auto& w : workers) w.join();

  auto snap = ledger.snapshot();
  CHECK(snap.cet_s == doctest::Approx(8 * 1000 * 0.25));
  CHECK(snap.cst_s == doctest::Approx(8 * 1000 * 0.125));
  CHECK(snap.css_bytes == 8 * 1000 * 16);
  CHECK(snap.cpt_s == doctest::Approx(snap.cet_s + snap.cst_s));
}

TEST_SUITE_END();
