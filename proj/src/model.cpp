#include "pipevc/model.hpp"

#include <algorithm>
#include <cctype>
#include <deque>

#include "pipevc/errors.hpp"
#include "pipevc/text.hpp"

namespace pipevc {

std::string SemanticVersion::render() const {
  std::string num =
      std::to_string(schema_ordinal) + "." + std::to_string(increment);
  if (branch == "master") return num;
  return branch + "@" + num;
}

SemanticVersion parse_version(const std::string& text) {
  SemanticVersion v;
  std::string num = text;
  auto at = text.rfind('@');
  if (at != std::string::npos) {
    v.branch = text.substr(0, at);
    num = text.substr(at + 1);
    if (v.branch.empty()) fail(Errc::bad_config, "empty branch in '" + text + "'");
  }
  auto dot = num.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == num.size())
    fail(Errc::bad_config, "malformed version '" + text + "'");
  auto parse_u32 = [&](const std::string& s) -> std::uint32_t {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) {
          return std::isdigit(c);
        }))
      fail(Errc::bad_config, "malformed version number '" + text + "'");
    return static_cast<std::uint32_t>(std::stoul(s));
  };
  v.schema_ordinal = parse_u32(num.substr(0, dot));
  v.increment = parse_u32(num.substr(dot + 1));
  return v;
}

bool version_less(const SemanticVersion& a, const SemanticVersion& b) {
  if (a.schema_ordinal != b.schema_ordinal)
    return a.schema_ordinal < b.schema_ordinal;
  if (a.increment != b.increment) return a.increment < b.increment;
  return a.branch < b.branch;
}

const char* kind_name(ComponentKind k) {
  return k == ComponentKind::dataset ? "dataset" : "library";
}

ComponentKind kind_from_name(const std::string& s) {
  if (s == "dataset") return ComponentKind::dataset;
  if (s == "library") return ComponentKind::library;
  fail(Errc::bad_config, "unknown component kind '" + s + "'");
}

std::string ComponentVersion::key() const {
  return name + "@" + version.branch + "@" +
         std::to_string(version.schema_ordinal) + "." +
         std::to_string(version.increment);
}

std::string render_binding(const ComponentVersion& cv) {
  return cv.key() + "#" + to_hex(cv.output_schema);
}

bool is_compatible(const ComponentVersion& upstream,
                   const ComponentVersion& downstream) {
  if (!downstream.input_schema.has_value()) return true;
  return *downstream.input_schema == upstream.output_schema;
}

Digest schema_hash(const std::vector<std::string>& column_headers) {
  std::vector<std::string> canon;
  canon.reserve(column_headers.size());
  for (const auto& h : column_headers) {
    std::size_t b = 0;
    std::size_t e = h.size();
    while (b < e && std::isspace(static_cast<unsigned char>(h[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(h[e - 1]))) --e;
    std::string t = h.substr(b, e - b);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) {
      return static_cast<char>(std::tolower(c));
    });
    canon.push_back(std::move(t));
  }
  std::sort(canon.begin(), canon.end());
  std::string flat;
  for (std::size_t i = 0; i < canon.size(); ++i) {
    if (i) flat.push_back('\x1f');
    flat += canon[i];
  }
  return sha256(flat);
}

SemanticVersion next_version(const SemanticVersion& prev, bool schema_changed,
                             const Digest& new_schema_digest,
                             const std::string& branch) {
  bool digest_changed = new_schema_digest != prev.schema_digest;
  if (schema_changed != digest_changed) {
    fail(Errc::schema_flag_mismatch,
         std::string("schema_changed=") + (schema_changed ? "true" : "false") +
             " but output schema digest " +
             (digest_changed ? "differs" : "is unchanged"));
  }
  SemanticVersion v;
  v.branch = branch;
  if (schema_changed) {
    v.schema_ordinal = prev.schema_ordinal + 1;
    v.increment = 0;
    v.schema_digest = new_schema_digest;
  } else {
    v.schema_ordinal = prev.schema_ordinal;
    v.increment = prev.increment + 1;
    v.schema_digest = prev.schema_digest;
  }
  return v;
}

std::vector<std::string> validate_dag(
    const std::vector<Slot>& slots,
    const std::vector<std::pair<std::string, std::string>>& edges) {
  if (slots.empty()) fail(Errc::empty_spec, "pipeline has no slots");

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!index.emplace(slots[i].name, i).second)
      fail(Errc::duplicate_slot, "slot '" + slots[i].name + "' declared twice");
  }

  std::vector<std::vector<std::size_t>> out(slots.size());
  std::vector<std::size_t> indeg(slots.size(), 0);
  for (const auto& [from, to] : edges) {
    auto f = index.find(from);
    auto t = index.find(to);
    if (f == index.end() || t == index.end())
      fail(Errc::dangling_edge, "edge " + from + "->" + to +
                                    " references an unknown slot");
    out[f->second].push_back(t->second);
    ++indeg[t->second];
  }

  // Kahn's algorithm; ready slots are taken in declaration order, which
  // fixes the one topological order stored with the spec.
  std::vector<std::string> order;
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (indeg[i] == 0) ready.push_back(i);
  while (!ready.empty()) {
    std::size_t i = ready.front();
    ready.pop_front();
    order.push_back(slots[i].name);
    for (std::size_t j : out[i])
      if (--indeg[j] == 0) ready.push_back(j);
  }
  if (order.size() != slots.size())
    fail(Errc::cycle_detected, "pipeline graph contains a cycle");
  return order;
}

PipelineSpec::PipelineSpec(
    std::string name, std::vector<Slot> slots,
    std::vector<std::pair<std::string, std::string>> edges)
    : name_(std::move(name)),
      slots_(std::move(slots)),
      edges_(std::move(edges)) {
  topo_ = validate_dag(slots_, edges_);
}

const Slot& PipelineSpec::slot(const std::string& name) const {
  for (const auto& s : slots_)
    if (s.name == name) return s;
  fail(Errc::unknown_slot, "no slot named '" + name + "'");
}

bool PipelineSpec::has_slot(const std::string& name) const {
  return std::any_of(slots_.begin(), slots_.end(),
                     [&](const Slot& s) { return s.name == name; });
}

std::set<std::string> PipelineSpec::predecessors(const std::string& slot) const {
  if (!has_slot(slot)) fail(Errc::unknown_slot, "no slot named '" + slot + "'");
  std::set<std::string> r;
  for (const auto& [from, to] : edges_)
    if (to == slot) r.insert(from);
  return r;
}

std::set<std::string> PipelineSpec::successors(const std::string& slot) const {
  if (!has_slot(slot)) fail(Errc::unknown_slot, "no slot named '" + slot + "'");
  std::set<std::string> r;
  for (const auto& [from, to] : edges_)
    if (from == slot) r.insert(to);
  return r;
}

std::optional<std::pair<std::string, std::string>> first_incompatible_edge(
    const PipelineSpec& spec, const PipelineVersion& pv) {
  for (const auto& [from, to] : spec.edges()) {
    const auto& up = pv.bindings.at(from);
    const auto& down = pv.bindings.at(to);
    if (!is_compatible(up, down)) return std::make_pair(from, to);
  }
  return std::nullopt;
}

Metafile parse_metafile(std::string_view text) {
  auto kv = parse_kv(text);
  Metafile m;
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end())
      fail(Errc::bad_config, std::string("metafile missing key '") + key + "'");
    return it->second;
  };
  m.name = need("name");
  m.kind = kind_from_name(need("kind"));
  const std::string& flag = need("schema_changed");
  if (flag != "true" && flag != "false")
    fail(Errc::bad_config, "schema_changed must be true or false");
  m.schema_changed = flag == "true";

  const std::string& out = need("output_schema");
  if (auto d = digest_from_hex(out)) {
    m.output_schema = *d;
  } else {
    auto headers = split(out, ',');
    m.output_headers = headers;
    m.output_schema = schema_hash(headers);
  }

  auto in = kv.find("input_schema");
  if (in != kv.end() && in->second != "any") {
    auto d = digest_from_hex(in->second);
    if (!d) fail(Errc::bad_config, "input_schema must be a hex digest or 'any'");
    m.input_schema = *d;
  }
  return m;
}

std::string render_metafile(const Metafile& m) {
  std::string out;
  out += "name=" + m.name + "\n";
  out += std::string("kind=") + kind_name(m.kind) + "\n";
  out += std::string("schema_changed=") + (m.schema_changed ? "true" : "false") +
         "\n";
  if (m.output_headers)
    out += "output_schema=" + join(*m.output_headers, ",") + "\n";
  else
    out += "output_schema=" + to_hex(m.output_schema) + "\n";
  out += "input_schema=" +
         (m.input_schema ? to_hex(*m.input_schema) : std::string("any")) + "\n";
  return out;
}

}  // namespace pipevc
