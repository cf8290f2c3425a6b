#include "pipevc/vcs.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "pipevc/errors.hpp"
#include "pipevc/text.hpp"

namespace fs = std::filesystem;

namespace pipevc {

namespace {

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

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Serialized commit record; the commit id is the digest of this text.
std::string render_commit(const Commit& c) {
  std::ostringstream out;
  out << "branch=" << c.branch << "\n";
  out << "sequence=" << c.sequence << "\n";
  out << "parents=" << join(c.parents, " ") << "\n";
  for (const auto& [slot, cv] : c.pipeline.bindings)
    out << "bind:" << slot << "=" << render_binding(cv) << "\n";
  for (const auto& [slot, manifest] : c.outputs)
    out << "output:" << slot << "=" << manifest << "\n";
  for (const auto& [metric, value] : c.scores)
    out << "score:" << metric << "=" << format_double(value) << "\n";
  out << "stat:execution_s=" << format_double(c.stats.execution_s) << "\n";
  out << "stat:storage_s=" << format_double(c.stats.storage_s) << "\n";
  out << "stat:storage_bytes=" << c.stats.storage_bytes << "\n";
  return out.str();
}

}  // namespace

ArtifactRef Commit::output_ref(const std::string& slot) const {
  auto o = outputs.find(slot);
  auto b = pipeline.bindings.find(slot);
  if (o == outputs.end() || b == pipeline.bindings.end())
    fail(Errc::unknown_slot, "commit " + id + " has no output for '" + slot + "'");
  return ArtifactRef{o->second, b->second.output_schema};
}

std::map<std::string, ArtifactRef> Commit::output_refs() const {
  std::map<std::string, ArtifactRef> refs;
  for (const auto& [slot, _] : outputs) refs[slot] = output_ref(slot);
  return refs;
}

std::map<std::string, std::string> Commit::binding_keys() const {
  std::map<std::string, std::string> keys;
  for (const auto& [slot, cv] : pipeline.bindings) keys[slot] = cv.key();
  return keys;
}

// ---------------------------------------------------------------------------
// Repository lifecycle
// ---------------------------------------------------------------------------

Repository Repository::init(const fs::path& path) {
  if (fs::exists(path) && !fs::is_empty(path))
    fail(Errc::already_exists, path.string() + " is not empty");
  Repository r;
  r.path_ = path;
  fs::create_directories(path / "refs");
  fs::create_directories(path / "commits");
  fs::create_directories(path / "components");
  r.store_ = std::make_unique<Store>(path / "store");
  write_file(path / "HEAD", "master\n");
  write_file(path / "refs" / "master", "");
  r.heads_["master"] = std::nullopt;
  return r;
}

Repository Repository::open(const fs::path& path) {
  if (!fs::exists(path / "HEAD"))
    fail(Errc::io_failure, path.string() + " is not a repository");
  Repository r;
  r.path_ = path;
  r.store_ = std::make_unique<Store>(path / "store");
  r.load();
  return r;
}

void Repository::load() {
  current_branch_ = trim(read_file(path_ / "HEAD"));

  if (fs::exists(path_ / "pipeline.spec")) {
    std::vector<Slot> slots;
    std::vector<std::pair<std::string, std::string>> edges;
    std::string name;
    for (const auto& line : split_lines(read_file(path_ / "pipeline.spec"))) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string k = line.substr(0, eq), v = line.substr(eq + 1);
      if (k == "name") name = v;
      if (k == "slot") {
        auto parts = split(v, ',');
        slots.push_back({parts.at(0), kind_from_name(parts.at(1))});
      }
      if (k == "edge") {
        auto parts = split(v, ',');
        edges.emplace_back(parts.at(0), parts.at(1));
      }
    }
    spec_ = PipelineSpec(name, slots, edges);
  }

  for (const auto& dir : fs::directory_iterator(path_ / "components")) {
    if (!dir.is_directory()) continue;
    for (const auto& e : fs::directory_iterator(dir.path())) {
      auto kv = parse_kv(read_file(e.path()));
      ComponentVersion cv;
      cv.name = kv.at("name");
      cv.kind = kind_from_name(kv.at("kind"));
      cv.version.branch = kv.at("branch");
      cv.version.schema_ordinal =
          static_cast<std::uint32_t>(std::stoul(kv.at("schema_ordinal")));
      cv.version.increment =
          static_cast<std::uint32_t>(std::stoul(kv.at("increment")));
      cv.payload = kv.at("payload");
      cv.output_schema = *digest_from_hex(kv.at("output_schema"));
      cv.version.schema_digest = cv.output_schema;
      if (kv.at("input_schema") != "any")
        cv.input_schema = *digest_from_hex(kv.at("input_schema"));
      cv.schema_changed = kv.at("schema_changed") == "true";
      components_[cv.name].push_back(cv);
    }
  }
  for (auto& [_, versions] : components_) {
    std::sort(versions.begin(), versions.end(),
              [](const ComponentVersion& a, const ComponentVersion& b) {
                return version_less(a.version, b.version);
              });
  }

  for (const auto& e : fs::directory_iterator(path_ / "commits")) {
    Commit c;
    c.id = e.path().filename().string();
    for (const auto& line : split_lines(read_file(e.path()))) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string k = line.substr(0, eq), v = line.substr(eq + 1);
      if (k == "branch") c.branch = v;
      if (k == "sequence") c.sequence = std::stoull(v);
      if (k == "parents" && !v.empty()) c.parents = split(v, ' ');
      if (k.rfind("bind:", 0) == 0) {
        std::string slot = k.substr(5);
        auto hash_pos = v.find('#');
        std::string key = v.substr(0, hash_pos);
        const ComponentVersion* cv = find_version(key);
        if (!cv)
          fail(Errc::io_failure, "commit " + c.id + " binds unknown " + key);
        c.pipeline.bindings[slot] = *cv;
      }
      if (k.rfind("output:", 0) == 0) c.outputs[k.substr(7)] = v;
      if (k.rfind("score:", 0) == 0) c.scores[k.substr(6)] = std::stod(v);
      if (k == "stat:execution_s") c.stats.execution_s = std::stod(v);
      if (k == "stat:storage_s") c.stats.storage_s = std::stod(v);
      if (k == "stat:storage_bytes") c.stats.storage_bytes = std::stoull(v);
    }
    if (spec_) c.pipeline.spec_name = spec_->name();
    next_sequence_ = std::max(next_sequence_, c.sequence + 1);
    commits_.emplace(c.id, std::move(c));
  }

  for (const auto& e : fs::directory_iterator(path_ / "refs")) {
    std::string name = e.path().filename().string();
    std::string id = trim(read_file(e.path()));
    heads_[name] = id.empty() ? std::nullopt : std::make_optional(id);
  }
}

// ---------------------------------------------------------------------------
// Spec & components
// ---------------------------------------------------------------------------

const PipelineSpec& Repository::spec() const {
  if (!spec_) fail(Errc::bad_config, "repository has no pipeline spec");
  return *spec_;
}

void Repository::register_spec(const PipelineSpec& spec) {
  if (spec_) {
    if (spec_->name() != spec.name())
      fail(Errc::already_exists, "repository already tracks pipeline '" +
                                     spec_->name() + "'");
    return;
  }
  spec_ = spec;
  std::string out = "name=" + spec.name() + "\n";
  for (const auto& s : spec.slots())
    out += "slot=" + s.name + "," + kind_name(s.kind) + "\n";
  for (const auto& [from, to] : spec.edges())
    out += "edge=" + from + "," + to + "\n";
  write_file(path_ / "pipeline.spec", out);
}

std::vector<const ComponentVersion*> Repository::versions_of(
    const std::string& name) const {
  std::vector<const ComponentVersion*> out;
  auto it = components_.find(name);
  if (it == components_.end()) return out;
  for (const auto& v : it->second) out.push_back(&v);
  return out;
}

const ComponentVersion* Repository::find_version(const std::string& key) const {
  auto at = key.find('@');
  if (at == std::string::npos) return nullptr;
  auto it = components_.find(key.substr(0, at));
  if (it == components_.end()) return nullptr;
  for (const auto& v : it->second)
    if (v.key() == key) return &v;
  return nullptr;
}

void Repository::persist_component(const ComponentVersion& cv) {
  fs::path dir = path_ / "components" / cv.name;
  fs::create_directories(dir);
  std::string out;
  out += "name=" + cv.name + "\n";
  out += std::string("kind=") + kind_name(cv.kind) + "\n";
  out += "branch=" + cv.version.branch + "\n";
  out += "schema_ordinal=" + std::to_string(cv.version.schema_ordinal) + "\n";
  out += "increment=" + std::to_string(cv.version.increment) + "\n";
  out += "payload=" + cv.payload + "\n";
  out += "output_schema=" + to_hex(cv.output_schema) + "\n";
  out += "input_schema=" +
         (cv.input_schema ? to_hex(*cv.input_schema) : std::string("any")) + "\n";
  out += std::string("schema_changed=") + (cv.schema_changed ? "true" : "false") +
         "\n";
  std::string fname = cv.version.branch + "@" +
                      std::to_string(cv.version.schema_ordinal) + "." +
                      std::to_string(cv.version.increment);
  write_file(dir / fname, out);
}

const ComponentVersion& Repository::register_component(
    const Metafile& meta, const std::string& payload_manifest,
    const std::string& branch) {
  if (!store_->has_object(payload_manifest))
    fail(Errc::missing_chunk, "payload " + payload_manifest + " not in store");

  ComponentVersion cv;
  cv.name = meta.name;
  cv.kind = meta.kind;
  cv.payload = payload_manifest;
  cv.input_schema = meta.input_schema;
  cv.output_schema = meta.output_schema;
  cv.schema_changed = meta.schema_changed;

  auto& versions = components_[meta.name];
  if (versions.empty()) {
    // Initial committed version is 0.0 regardless of the flag.
    cv.version = SemanticVersion{branch, 0, 0, meta.output_schema};
    cv.schema_changed = false;
  } else {
    // Versions are allocated against the component repo's latest so that
    // ordinals never collide across branches. Libraries declare schema
    // changes in the metafile; for datasets the flag is computed from the
    // schema hash.
    const SemanticVersion& prev = versions.back().version;
    bool changed = meta.kind == ComponentKind::dataset
                       ? meta.output_schema != prev.schema_digest
                       : meta.schema_changed;
    cv.schema_changed = changed;
    cv.version = next_version(prev, changed, meta.output_schema, branch);
  }

  versions.push_back(cv);
  std::sort(versions.begin(), versions.end(),
            [](const ComponentVersion& a, const ComponentVersion& b) {
              return version_less(a.version, b.version);
            });
  persist_component(cv);
  return *find_version(cv.key());
}

void Repository::register_binding_versions(const PipelineVersion& pv) {
  for (const auto& [_, cv] : pv.bindings) {
    if (find_version(cv.key())) continue;
    auto& versions = components_[cv.name];
    versions.push_back(cv);
    std::sort(versions.begin(), versions.end(),
              [](const ComponentVersion& a, const ComponentVersion& b) {
                return version_less(a.version, b.version);
              });
    persist_component(cv);
  }
}

// ---------------------------------------------------------------------------
// Branches
// ---------------------------------------------------------------------------

std::vector<std::string> Repository::branches() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : heads_) out.push_back(name);
  return out;
}

bool Repository::has_branch(const std::string& name) const {
  return heads_.count(name) > 0;
}

std::optional<std::string> Repository::head(const std::string& branch) const {
  auto it = heads_.find(branch);
  if (it == heads_.end()) fail(Errc::unknown_branch, "no branch '" + branch + "'");
  return it->second;
}

void Repository::persist_head(const std::string& branch) {
  const auto& h = heads_.at(branch);
  write_file(path_ / "refs" / branch, h ? *h + "\n" : "");
}

void Repository::create_branch(const std::string& name,
                               const std::string& from_commit) {
  if (heads_.count(name))
    fail(Errc::duplicate_branch, "branch '" + name + "' already exists");
  if (name.empty() || name.find('/') != std::string::npos ||
      name.find('@') != std::string::npos)
    fail(Errc::bad_config, "invalid branch name '" + name + "'");
  if (!commits_.count(from_commit))
    fail(Errc::unknown_commit, "no commit " + from_commit);
  heads_[name] = from_commit;
  persist_head(name);
}

void Repository::checkout(const std::string& branch) {
  if (!heads_.count(branch))
    fail(Errc::unknown_branch, "no branch '" + branch + "'");
  current_branch_ = branch;
  write_file(path_ / "HEAD", branch + "\n");
}

// ---------------------------------------------------------------------------
// Commits
// ---------------------------------------------------------------------------

bool Repository::has_commit(const std::string& id) const {
  return commits_.count(id) > 0;
}

const Commit& Repository::commit(const std::string& id) const {
  auto it = commits_.find(id);
  if (it == commits_.end()) fail(Errc::unknown_commit, "no commit " + id);
  return it->second;
}

void Repository::persist_commit(const Commit& c) {
  fs::path tmp = path_ / "commits" / ("." + c.id + ".tmp");
  write_file(tmp, render_commit(c));
  fs::rename(tmp, path_ / "commits" / c.id);
}

const Commit& Repository::append_commit(Commit c) {
  c.sequence = next_sequence_++;
  c.id = to_hex(sha256(render_commit(c)));
  persist_commit(c);
  heads_[c.branch] = c.id;
  persist_head(c.branch);
  auto [it, _] = commits_.emplace(c.id, std::move(c));
  return it->second;
}

const Commit& Repository::commit_pipeline(const std::string& branch,
                                          const PipelineVersion& pv,
                                          const RunRecord& run) {
  if (!heads_.count(branch))
    fail(Errc::unknown_branch, "no branch '" + branch + "'");
  const PipelineSpec& sp = spec();

  for (const Slot& s : sp.slots()) {
    auto it = pv.bindings.find(s.name);
    if (it == pv.bindings.end())
      fail(Errc::bad_config, "slot '" + s.name + "' is not bound");
    if (it->second.kind != s.kind)
      fail(Errc::bad_config, "slot '" + s.name + "' expects a " +
                                 std::string(kind_name(s.kind)));
    if (!run.outputs.count(s.name))
      fail(Errc::bad_config,
           "run results carry no output for slot '" + s.name + "'");
  }
  if (auto edge = first_incompatible_edge(sp, pv)) {
    fail(Errc::incompatible_pipeline,
         "edge " + edge->first + "->" + edge->second + ": " +
             pv.bindings.at(edge->second).key() + " cannot consume " +
             pv.bindings.at(edge->first).key());
  }

  register_binding_versions(pv);

  Commit c;
  c.branch = branch;
  if (auto h = heads_.at(branch)) c.parents.push_back(*h);
  c.pipeline = pv;
  c.pipeline.spec_name = sp.name();
  for (const auto& [slot, ref] : run.outputs) c.outputs[slot] = ref.manifest;
  c.scores = run.scores;
  c.stats = run.stats;
  return append_commit(std::move(c));
}

const Commit& Repository::create_merge_commit(const std::string& head_branch,
                                              const PipelineVersion& pv,
                                              const RunRecord& run,
                                              const std::string& head_id,
                                              const std::string& merge_head_id) {
  if (!heads_.count(head_branch))
    fail(Errc::unknown_branch, "no branch '" + head_branch + "'");
  if (auto edge = first_incompatible_edge(spec(), pv))
    fail(Errc::incompatible_pipeline,
         "edge " + edge->first + "->" + edge->second + " is incompatible");
  register_binding_versions(pv);

  Commit c;
  c.branch = head_branch;
  c.parents = {head_id, merge_head_id};
  c.pipeline = pv;
  c.pipeline.spec_name = spec().name();
  for (const auto& [slot, ref] : run.outputs) c.outputs[slot] = ref.manifest;
  c.scores = run.scores;
  c.stats = run.stats;
  return append_commit(std::move(c));
}

// ---------------------------------------------------------------------------
// Ancestry
// ---------------------------------------------------------------------------

namespace {
std::set<std::string> ancestors_inclusive(
    const std::map<std::string, Commit>& commits, const std::string& start) {
  std::set<std::string> seen;
  std::deque<std::string> work{start};
  while (!work.empty()) {
    std::string id = work.front();
    work.pop_front();
    if (!seen.insert(id).second) continue;
    auto it = commits.find(id);
    if (it == commits.end()) fail(Errc::unknown_commit, "no commit " + id);
    for (const auto& p : it->second.parents) work.push_back(p);
  }
  return seen;
}
}  // namespace

const Commit& Repository::common_ancestor(const std::string& a,
                                          const std::string& b) const {
  auto sa = ancestors_inclusive(commits_, a);
  auto sb = ancestors_inclusive(commits_, b);
  const Commit* best = nullptr;
  for (const auto& id : sa) {
    if (!sb.count(id)) continue;
    const Commit& c = commits_.at(id);
    if (!best || c.sequence > best->sequence ||
        (c.sequence == best->sequence && c.id < best->id))
      best = &c;
  }
  if (!best)
    fail(Errc::no_common_ancestor, a + " and " + b + " share no history");
  return *best;
}

bool Repository::is_fast_forward(const std::string& head_id,
                                 const std::string& merge_head_id) const {
  return common_ancestor(head_id, merge_head_id).id == head_id;
}

const Commit& Repository::fast_forward_merge(const std::string& head_branch,
                                             const std::string& merge_branch) {
  auto head_id = head(head_branch);
  auto merge_id = head(merge_branch);
  if (!head_id || !merge_id)
    fail(Errc::unknown_commit, "both branches need commits to merge");
  if (!is_fast_forward(*head_id, *merge_id))
    fail(Errc::not_fast_forward,
         head_branch + " has commits past the common ancestor");

  const Commit& src = commit(*merge_id);
  Commit c;
  c.branch = head_branch;
  c.parents = {*head_id, *merge_id};
  c.pipeline = src.pipeline;
  c.outputs = src.outputs;  // reused, not re-executed
  c.scores = src.scores;
  c.stats = RunStats{};
  return append_commit(std::move(c));
}

std::vector<const Commit*> Repository::log(const std::string& branch) const {
  auto h = head(branch);
  std::vector<const Commit*> out;
  std::set<std::string> seen;
  std::deque<std::string> work;
  if (h) work.push_back(*h);
  while (!work.empty()) {
    std::string id = work.front();
    work.pop_front();
    if (!seen.insert(id).second) continue;
    const Commit& c = commit(id);
    out.push_back(&c);
    for (const auto& p : c.parents) work.push_back(p);
  }
  std::sort(out.begin(), out.end(), [](const Commit* a, const Commit* b) {
    return a->sequence > b->sequence;
  });
  return out;
}

std::vector<const Commit*> Repository::commits_between(
    const std::string& ancestor, const std::string& tip) const {
  std::map<std::string, bool> reaches;  // id -> can reach `ancestor`
  std::vector<const Commit*> out;

  std::function<bool(const std::string&)> can_reach =
      [&](const std::string& id) -> bool {
    if (id == ancestor) return true;
    auto memo = reaches.find(id);
    if (memo != reaches.end()) return memo->second;
    reaches[id] = false;  // break cycles defensively; graph is acyclic
    bool r = false;
    for (const auto& p : commit(id).parents)
      if (can_reach(p)) r = true;
    reaches[id] = r;
    return r;
  };

  std::set<std::string> seen;
  std::deque<std::string> work{tip};
  while (!work.empty()) {
    std::string id = work.front();
    work.pop_front();
    if (!seen.insert(id).second) continue;
    if (!can_reach(id)) continue;
    const Commit& c = commit(id);
    out.push_back(&c);
    if (id == ancestor) continue;
    for (const auto& p : c.parents) work.push_back(p);
  }
  std::sort(out.begin(), out.end(), [](const Commit* a, const Commit* b) {
    return a->sequence < b->sequence;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Writer lock
// ---------------------------------------------------------------------------

Repository::WriterLock::WriterLock(const fs::path& repo_root)
    : file_(repo_root / "lock") {
  int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    fail(Errc::io_failure,
         "repository is locked by another writer (" + file_.string() + ")");
  std::string pid = "pid=" + std::to_string(::getpid()) + "\n";
  (void)!::write(fd, pid.data(), pid.size());
  ::close(fd);
}

Repository::WriterLock::~WriterLock() {
  std::error_code ec;
  fs::remove(file_, ec);
}

}  // namespace pipevc
