#include "pipevc/exec.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pipevc/errors.hpp"
#include "pipevc/text.hpp"

namespace fs = std::filesystem;

namespace pipevc {

namespace {

// Deterministic storage-time model for virtual runs: bytes moved over a
// fixed bandwidth.
constexpr double kVirtualBytesPerSecond = 256.0 * 1024.0 * 1024.0;

double unit_hash(const std::string& s) {
  return static_cast<double>(digest_prefix_u64(sha256(s))) * 0x1.0p-64;
}

std::string format_score(double s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12f", s);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) fail(Errc::io_failure, "cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::io_failure, "cannot create " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::vector<std::string> headers_of(const std::string& data_csv) {
  auto nl = data_csv.find('\n');
  std::string first =
      nl == std::string::npos ? data_csv : data_csv.substr(0, nl);
  if (first.empty()) return {};
  return split(first, ',');
}

// The stub transform, shared between the in-process interpreter and (by
// mirrored logic) the generated Python executable. Produces the full
// output-entry set for a library stub.
std::map<std::string, std::string> stub_library_entries(
    const std::map<std::string, std::string>& cfg, const std::string& key,
    const std::map<std::string, std::string>& input) {
  auto get = [&](const char* k, const std::string& dflt) {
    auto it = cfg.find(k);
    return it == cfg.end() ? dflt : it->second;
  };

  auto data_it = input.find("data.csv");
  if (data_it == input.end())
    fail(Errc::component_run_failure, "input artifact has no data.csv");
  const std::string& data = data_it->second;
  std::vector<std::string> headers = headers_of(data);

  std::vector<std::string> lineage;
  if (auto it = input.find("lineage.txt"); it != input.end())
    lineage = split_lines(it->second);
  lineage.push_back(key);

  std::string transform = get("transform", "identity");
  std::string out_data;
  std::vector<std::string> out_headers;
  if (transform == "identity") {
    out_data = data;
    out_headers = headers;
  } else if (transform == "append_column") {
    std::string column = get("column", "col");
    std::string value = get("param", "0");
    auto lines = split_lines(data);
    for (std::size_t i = 0; i < lines.size(); ++i)
      lines[i] += "," + (i == 0 ? column : value);
    out_data = join(lines, "\n") + "\n";
    out_headers = headers;
    out_headers.push_back(column);
  } else if (transform == "model") {
    out_headers = {"prediction"};
  } else {
    fail(Errc::bad_config, "unknown stub transform '" + transform + "'");
  }

  std::optional<double> score;
  std::string mode = get("score", "none");
  if (mode != "none") {
    std::uint64_t seed = std::stoull(get("score_seed", "0"));
    score = stub_score(mode, seed, lineage);
  }
  if (transform == "model")
    out_data = "prediction\n" + format_score(score.value_or(0.0)) + "\n";

  std::map<std::string, std::string> out;
  out["data.csv"] = out_data;
  out["schema.txt"] = join(out_headers, "\n") + "\n";
  out["lineage.txt"] = join(lineage, "\n") + "\n";
  if (score) out["score.txt"] = format_score(*score) + "\n";
  return out;
}

// Generated stub executable. Mirrors stub_library_entries exactly; both
// sides format scores as %.12f and hash the same canonical strings, so the
// artifacts are byte-identical.
constexpr const char* kStubScript = R"PY(#!/usr/bin/env python3
import argparse, hashlib, os, sys, time


def kv(path):
    d = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f.read().splitlines():
            line = line.strip()
            if not line or line.startswith('#') or '=' not in line:
                continue
            k, v = line.split('=', 1)
            d[k.strip()] = v.strip()
    return d


def unit(s):
    h = hashlib.sha256(s.encode('utf-8')).digest()
    return int.from_bytes(h[:8], 'big') / 2.0 ** 64


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument('--input-dir', default='')
    ap.add_argument('--output-dir', required=True)
    ap.add_argument('--meta', required=True)
    a = ap.parse_args()

    cfg = kv(os.path.join(a.meta, 'stub.cfg'))
    with open(os.path.join(a.meta, 'version.txt'), 'r', encoding='utf-8') as f:
        key = f.read().strip()

    cost_ms = float(cfg.get('cost_ms', '0'))
    if os.environ.get('PIPEVC_REAL_SLEEP') == '1' and cost_ms > 0:
        time.sleep(cost_ms / 1000.0)

    with open(os.path.join(a.input_dir, 'data.csv'), 'r', encoding='utf-8',
              newline='') as f:
        data = f.read()
    first = data.split('\n', 1)[0]
    headers = first.split(',') if first else []

    lineage = []
    lp = os.path.join(a.input_dir, 'lineage.txt')
    if os.path.exists(lp):
        with open(lp, 'r', encoding='utf-8') as f:
            lineage = [l for l in f.read().split('\n') if l]
    lineage.append(key)

    transform = cfg.get('transform', 'identity')
    if transform == 'identity':
        out_data = data
        out_headers = headers
    elif transform == 'append_column':
        column = cfg.get('column', 'col')
        value = cfg.get('param', '0')
        lines = data.split('\n')
        if lines and lines[-1] == '':
            lines.pop()
        for i in range(len(lines)):
            lines[i] += ',' + (column if i == 0 else value)
        out_data = '\n'.join(lines) + '\n'
        out_headers = headers + [column]
    elif transform == 'model':
        out_headers = ['prediction']
    else:
        sys.stderr.write('unknown stub transform %r\n' % transform)
        return 3

    score = None
    mode = cfg.get('score', 'none')
    if mode != 'none':
        seed = cfg.get('score_seed', '0')
        joined = '|'.join(lineage)
        if mode == 'hash':
            score = unit('score|' + seed + '|' + joined)
        elif mode == 'additive':
            acc = 0.0
            for k in lineage:
                acc += unit('comp|' + seed + '|' + k)
            score = acc / len(lineage) + 0.1 * (
                unit('noise|' + seed + '|' + joined) - 0.5)
            if score < 0.0:
                score = 0.0
            if score > 1.0:
                score = 1.0
        else:
            sys.stderr.write('unknown score mode %r\n' % mode)
            return 3

    if transform == 'model':
        out_data = 'prediction\n' + '%.12f' % (score or 0.0) + '\n'

    os.makedirs(a.output_dir, exist_ok=True)

    def write(name, text):
        p = os.path.join(a.output_dir, name)
        with open(p, 'w', encoding='utf-8', newline='') as f:
            f.write(text)

    write('data.csv', out_data)
    write('schema.txt', '\n'.join(out_headers) + '\n')
    write('lineage.txt', '\n'.join(lineage) + '\n')
    if score is not None:
        write('score.txt', '%.12f' % score + '\n')
    return 0


if __name__ == '__main__':
    sys.exit(main())
)PY";

}  // namespace

double stub_score(const std::string& mode, std::uint64_t seed,
                  const std::vector<std::string>& lineage) {
  std::string seed_s = std::to_string(seed);
  std::string joined = join(lineage, "|");
  if (mode == "hash") return unit_hash("score|" + seed_s + "|" + joined);
  if (mode == "additive") {
    double acc = 0.0;
    for (const auto& k : lineage) acc += unit_hash("comp|" + seed_s + "|" + k);
    double s = acc / static_cast<double>(lineage.size()) +
               0.1 * (unit_hash("noise|" + seed_s + "|" + joined) - 0.5);
    if (s < 0.0) s = 0.0;
    if (s > 1.0) s = 1.0;
    return s;
  }
  fail(Errc::bad_config, "unknown score mode '" + mode + "'");
}

std::vector<std::string> stub_output_headers(const StubSpec& spec) {
  if (spec.kind == ComponentKind::dataset) return spec.dataset_headers;
  if (spec.transform == "identity") return spec.input_headers;
  if (spec.transform == "append_column") {
    auto h = spec.input_headers;
    h.push_back(spec.column);
    return h;
  }
  if (spec.transform == "model") return {"prediction"};
  fail(Errc::bad_config, "unknown stub transform '" + spec.transform + "'");
}

std::map<std::string, std::string> make_stub_component(const StubSpec& spec) {
  if (spec.name.empty()) fail(Errc::bad_config, "stub needs a name");
  if (spec.kind == ComponentKind::dataset) {
    if (spec.dataset_headers.empty())
      fail(Errc::bad_config, "dataset stub needs headers");
  } else {
    if (spec.transform == "append_column" && spec.column.empty())
      fail(Errc::bad_config, "append_column stub needs a column name");
    if (spec.transform == "model" && spec.score_mode == "none")
      fail(Errc::bad_config, "model stub needs a score mode");
  }

  Metafile meta;
  meta.name = spec.name;
  meta.kind = spec.kind;
  meta.schema_changed = spec.schema_changed;
  meta.output_schema = schema_hash(stub_output_headers(spec));
  meta.input_schema = spec.input_schema;

  std::map<std::string, std::string> payload;
  payload["metafile"] = render_metafile(meta);

  std::string cfg;
  {
    char cost[32];
    std::snprintf(cost, sizeof(cost), "%.3f", spec.cost_ms);
    cfg += std::string("cost_ms=") + cost + "\n";
    cfg += "transform=" + spec.transform + "\n";
    if (!spec.column.empty()) cfg += "column=" + spec.column + "\n";
    cfg += "param=" + spec.param + "\n";
    cfg += "score=" + spec.score_mode + "\n";
    cfg += "score_seed=" + std::to_string(spec.score_seed) + "\n";
    cfg += "metric=" + spec.metric + "\n";
  }
  payload["stub.cfg"] = cfg;

  if (spec.kind == ComponentKind::dataset) {
    std::string data = join(spec.dataset_headers, ",") + "\n";
    std::uint64_t salt = digest_prefix_u64(
        sha256("data|" + spec.name + "|" + spec.param));
    for (std::size_t r = 0; r < spec.dataset_rows; ++r) {
      for (std::size_t c = 0; c < spec.dataset_headers.size(); ++c) {
        if (c) data += ",";
        data += std::to_string((salt + r * 131 + c * 17) % 997);
      }
      data += "\n";
    }
    payload["data.csv"] = data;
  } else {
    payload["run"] = kStubScript;
  }

  if (spec.payload_pad > 0) {
    std::string pad;
    pad.reserve(spec.payload_pad + 32);
    std::uint64_t counter = 0;
    while (pad.size() < spec.payload_pad) {
      Digest d = sha256("pad|" + spec.name + "|" + spec.param + "|" +
                        std::to_string(counter++));
      pad.append(reinterpret_cast<const char*>(d.data()), d.size());
    }
    pad.resize(spec.payload_pad);
    payload["pad.bin"] = pad;
  }
  return payload;
}

// ---------------------------------------------------------------------------
// Executor
// ---------------------------------------------------------------------------

RunResult Executor::run_component(const ComponentVersion& cv,
                                  const std::optional<ArtifactRef>& input) {
  calls_.fetch_add(1);
  if (cv.kind == ComponentKind::library) {
    if (!input)
      fail(Errc::component_run_failure,
           "library component " + cv.key() + " has no input artifact");
    if (cv.input_schema && *cv.input_schema != input->schema)
      fail(Errc::schema_mismatch,
           cv.key() + " declares input schema " + to_hex(*cv.input_schema) +
               " but was fed " + to_hex(input->schema));
  }
  return do_run(cv, input);
}

std::map<std::string, std::string> Executor::load_payload(
    const ComponentVersion& cv) {
  return unpack_entries(payloads_.get_object(cv.payload));
}

RunResult Executor::archive_output(const ComponentVersion& cv,
                                   std::map<std::string, std::string> entries,
                                   double execution_s,
                                   double materialized_bytes) {
  auto schema_it = entries.find("schema.txt");
  if (schema_it == entries.end())
    fail(Errc::missing_output, cv.key() + " produced no schema.txt");
  Digest produced = schema_hash(split_lines(schema_it->second));
  if (produced != cv.output_schema)
    fail(Errc::schema_mismatch,
         cv.key() + " decl: " + to_hex(cv.output_schema) +
             " produced: " + to_hex(produced));

  bool has_data = false;
  for (const auto& [name, _] : entries)
    if (name.rfind("data.", 0) == 0) has_data = true;
  if (!has_data) fail(Errc::missing_output, cv.key() + " produced no data.*");

  std::optional<double> score;
  if (auto it = entries.find("score.txt"); it != entries.end()) {
    try {
      score = std::stod(it->second);
    } catch (const std::exception&) {
      fail(Errc::component_run_failure,
           cv.key() + " wrote an unparsable score.txt");
    }
  }

  std::string packed = pack_entries(entries);
  std::uint64_t before = archive_.stats().physical_bytes;
  ObjectManifest m = archive_.put_object(packed, "output");
  std::uint64_t delta = archive_.stats().physical_bytes - before;

  RunResult res;
  res.output.manifest = m.id;
  res.output.schema = produced;
  res.stats.execution_s = execution_s;
  res.stats.storage_bytes = delta;
  res.stats.storage_s = (materialized_bytes + static_cast<double>(packed.size())) /
                        kVirtualBytesPerSecond;
  res.score = score;
  return res;
}

namespace {

std::map<std::string, std::string> dataset_entries(
    const ComponentVersion& cv,
    const std::map<std::string, std::string>& payload) {
  auto it = payload.find("data.csv");
  if (it == payload.end())
    fail(Errc::component_run_failure,
         "dataset " + cv.key() + " payload has no data.csv");
  std::map<std::string, std::string> out;
  out["data.csv"] = it->second;
  out["schema.txt"] = join(headers_of(it->second), "\n") + "\n";
  out["lineage.txt"] = cv.key() + "\n";
  return out;
}

double cfg_cost_ms(const std::map<std::string, std::string>& payload) {
  auto it = payload.find("stub.cfg");
  if (it == payload.end()) return 0.0;
  auto cfg = parse_kv(it->second);
  auto c = cfg.find("cost_ms");
  return c == cfg.end() ? 0.0 : std::stod(c->second);
}

std::string cfg_metric(const std::map<std::string, std::string>& payload) {
  auto it = payload.find("stub.cfg");
  if (it == payload.end()) return "score";
  auto cfg = parse_kv(it->second);
  auto mIt = cfg.find("metric");
  return mIt == cfg.end() ? "score" : mIt->second;
}

}  // namespace

// ---------------------------------------------------------------------------
// VirtualExecutor
// ---------------------------------------------------------------------------

RunResult VirtualExecutor::do_run(const ComponentVersion& cv,
                                  const std::optional<ArtifactRef>& input) {
  auto payload = load_payload(cv);
  double payload_bytes = 0;
  for (const auto& [_, bytes] : payload) payload_bytes += bytes.size();

  std::map<std::string, std::string> out;
  double input_bytes = 0;
  if (cv.kind == ComponentKind::dataset) {
    out = dataset_entries(cv, payload);
  } else {
    auto cfg_it = payload.find("stub.cfg");
    if (cfg_it == payload.end())
      fail(Errc::component_run_failure,
           "virtual executor needs a stub payload for " + cv.key());
    auto in_entries = unpack_entries(archive_.get_object(input->manifest));
    for (const auto& [_, bytes] : in_entries) input_bytes += bytes.size();
    out = stub_library_entries(parse_kv(cfg_it->second), cv.key(), in_entries);
  }

  RunResult res = archive_output(cv, std::move(out), cfg_cost_ms(payload) / 1000.0,
                                 payload_bytes + input_bytes);
  res.metric = cfg_metric(payload);
  return res;
}

// ---------------------------------------------------------------------------
// ProcessExecutor
// ---------------------------------------------------------------------------

RunResult ProcessExecutor::do_run(const ComponentVersion& cv,
                                  const std::optional<ArtifactRef>& input) {
  fs::path dir = workroot_ / ("run-" + std::to_string(run_seq_++));
  fs::path payload_dir = dir / "payload";
  fs::path input_dir = dir / "input";
  fs::path output_dir = dir / "output";
  fs::create_directories(payload_dir);
  fs::create_directories(input_dir);
  fs::create_directories(output_dir);

  auto mat_t0 = std::chrono::steady_clock::now();
  auto payload = load_payload(cv);
  for (const auto& [name, bytes] : payload) write_file(payload_dir / name, bytes);
  write_file(payload_dir / "version.txt", cv.key() + "\n");
  if (input) {
    auto in_entries = unpack_entries(archive_.get_object(input->manifest));
    for (const auto& [name, bytes] : in_entries)
      write_file(input_dir / name, bytes);
  }
  double materialize_s = seconds_since(mat_t0);

  std::map<std::string, std::string> out_entries;
  double execution_s = 0;
  if (cv.kind == ComponentKind::dataset) {
    out_entries = dataset_entries(cv, payload);
    execution_s = cfg_cost_ms(payload) / 1000.0;
  } else {
    fs::path exe = payload_dir / "run";
    if (!fs::exists(exe))
      fail(Errc::component_run_failure,
           "payload of " + cv.key() + " has no executable 'run'");
    fs::permissions(exe,
                    fs::perms::owner_exec | fs::perms::group_exec |
                        fs::perms::others_exec,
                    fs::perm_options::add);

    fs::path errfile = dir / "stderr.txt";
    std::string cmd;
    if (real_sleep_) cmd += "PIPEVC_REAL_SLEEP=1 ";
    cmd += "'" + exe.string() + "' --input-dir '" + input_dir.string() +
           "' --output-dir '" + output_dir.string() + "' --meta '" +
           payload_dir.string() + "' 2> '" + errfile.string() + "'";

    auto run_t0 = std::chrono::steady_clock::now();
    int rc = std::system(cmd.c_str());
    double wall_s = seconds_since(run_t0);
    if (rc == -1) fail(Errc::io_failure, "cannot spawn " + exe.string());
    if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) {
      std::string err;
      if (fs::exists(errfile)) err = read_file(errfile);
      if (err.size() > 400) err = "..." + err.substr(err.size() - 400);
      int code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
      fail(Errc::non_zero_exit, cv.key() + " exited with " +
                                    std::to_string(code) + ": " + err);
    }

    for (const auto& e : fs::directory_iterator(output_dir))
      if (e.is_regular_file())
        out_entries[e.path().filename().string()] = read_file(e.path());

    execution_s = real_sleep_ ? wall_s : cfg_cost_ms(payload) / 1000.0;
    if (!payload.count("stub.cfg") && !real_sleep_) execution_s = wall_s;
  }

  auto arch_t0 = std::chrono::steady_clock::now();
  RunResult res = archive_output(cv, std::move(out_entries), execution_s, 0.0);
  res.stats.storage_s = materialize_s + seconds_since(arch_t0);
  res.metric = cfg_metric(payload);
  return res;
}

// ---------------------------------------------------------------------------
// Path execution
// ---------------------------------------------------------------------------

PathRunResult execute_node_list(std::span<PathStep> path, Executor& ex,
                                MetricsLedger* ledger) {
  PathRunResult r;
  for (std::size_t i = 0; i < path.size(); ++i) {
    PathStep& step = path[i];
    if (step.executed) {
      ++r.reused;
    } else {
      std::optional<ArtifactRef> input;
      if (step.input_index >= 0) {
        const PathStep& parent = path[static_cast<std::size_t>(step.input_index)];
        if (!parent.output)
          fail(Errc::component_run_failure,
               "no upstream output for " + step.component->key());
        input = parent.output;
      }
      RunResult res = ex.run_component(*step.component, input);
      ++r.invoked;
      step.executed = true;
      step.output = res.output;
      step.score = res.score;
      step.metric = res.metric;
      r.stats += res.stats;
      if (ledger) ledger->add(res.stats);
    }
    if (i + 1 == path.size()) r.leaf_score = step.score;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Whole-pipeline runs
// ---------------------------------------------------------------------------

PipelineRunOutcome run_pipeline(
    const PipelineSpec& spec, const PipelineVersion& pv, Executor& ex,
    MetricsLedger* ledger,
    const std::map<std::string, ArtifactRef>* prev_outputs,
    const std::map<std::string, std::string>* prev_bindings) {
  for (const Slot& s : spec.slots())
    if (!pv.bindings.count(s.name))
      fail(Errc::bad_config, "slot '" + s.name + "' is not bound");

  PipelineRunOutcome outcome;
  std::map<std::string, bool> reused;
  for (const std::string& slot : spec.topo_order()) {
    const ComponentVersion& cv = pv.bindings.at(slot);
    auto preds = spec.predecessors(slot);
    if (preds.size() > 1)
      fail(Errc::unsupported_topology,
           "slot '" + slot + "' has multiple data inputs");

    bool can_reuse = prev_outputs && prev_bindings &&
                     prev_bindings->count(slot) &&
                     prev_bindings->at(slot) == cv.key() &&
                     prev_outputs->count(slot) &&
                     (preds.empty() || reused[*preds.begin()]);
    if (can_reuse) {
      outcome.outputs[slot] = prev_outputs->at(slot);
      reused[slot] = true;
      ++outcome.reused_slots;
      continue;
    }

    std::optional<ArtifactRef> input;
    if (!preds.empty()) input = outcome.outputs.at(*preds.begin());
    RunResult res = ex.run_component(cv, input);
    outcome.outputs[slot] = res.output;
    outcome.stats += res.stats;
    if (ledger) ledger->add(res.stats);
    if (res.score) outcome.scores[res.metric] = *res.score;
    ++outcome.executed_slots;
    reused[slot] = false;
  }
  return outcome;
}

double speedup(double p, double k) {
  if (!(p >= 0.0 && p <= 1.0))
    fail(Errc::out_of_domain, "p must be in [0,1]");
  if (!(k >= 1.0)) fail(Errc::out_of_domain, "k must be >= 1");
  return 1.0 / ((1.0 - p) + p / k);
}

}  // namespace pipevc
