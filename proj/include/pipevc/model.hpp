#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pipevc/digest.hpp"

namespace pipevc {

// ---------------------------------------------------------------------------
// Semantic versions
// ---------------------------------------------------------------------------
//
// Identifier `branch@schema.increment`. The schema ordinal is a small
// per-component counter used for display and ordering; schema identity
// proper is the 32-byte digest of the output data schema. The increment
// counts updates that leave the output schema untouched.

struct SemanticVersion {
  std::string branch = "master";
  std::uint32_t schema_ordinal = 0;
  std::uint32_t increment = 0;
  Digest schema_digest{};

  // `schema.increment` on master, `branch@schema.increment` elsewhere.
  std::string render() const;

  bool same_number(const SemanticVersion& o) const {
    return branch == o.branch && schema_ordinal == o.schema_ordinal &&
           increment == o.increment;
  }
};

// Parses `branch@schema.increment` or the short `schema.increment` form.
// The schema digest is carried out of band (bindings append `#digest`).
SemanticVersion parse_version(const std::string& text);

// Orders by (schema_ordinal, increment, branch); the digest does not
// participate.
bool version_less(const SemanticVersion& a, const SemanticVersion& b);

enum class ComponentKind { dataset, library };

const char* kind_name(ComponentKind k);
ComponentKind kind_from_name(const std::string& s);

// ---------------------------------------------------------------------------
// Component versions
// ---------------------------------------------------------------------------

struct ComponentVersion {
  std::string name;
  ComponentKind kind = ComponentKind::library;
  SemanticVersion version;
  // Manifest id of the packed payload (metafile + executables/data).
  std::string payload;
  // nullopt = accepts any input schema (datasets / pipeline roots).
  std::optional<Digest> input_schema;
  Digest output_schema{};
  bool schema_changed = false;

  // `name@branch@schema.increment` — the identity used by bindings,
  // compatibility tables and stub lineage.
  std::string key() const;
};

// Formats a binding value `name@branch@schema.increment#digest`.
std::string render_binding(const ComponentVersion& cv);

// Output-schema compatibility: the downstream component must accept the
// upstream's output schema (or accept anything).
bool is_compatible(const ComponentVersion& upstream,
                   const ComponentVersion& downstream);

// Canonical schema hash over column headers: trim surrounding whitespace,
// lowercase, sort bytewise, join with 0x1F, SHA-256.
Digest schema_hash(const std::vector<std::string>& column_headers);

// Derives the successor version. Throws SchemaFlagMismatch when the flag
// disagrees with the digest change.
SemanticVersion next_version(const SemanticVersion& prev, bool schema_changed,
                             const Digest& new_schema_digest,
                             const std::string& branch);

// ---------------------------------------------------------------------------
// Pipeline specs
// ---------------------------------------------------------------------------

struct Slot {
  std::string name;
  ComponentKind kind = ComponentKind::library;
};

// A pipeline is a DAG of named slots. One topological order is fixed at
// construction and reused everywhere a linear order is needed (merge tree
// levels, execution order, report columns).
class PipelineSpec {
 public:
  PipelineSpec() = default;
  PipelineSpec(std::string name, std::vector<Slot> slots,
               std::vector<std::pair<std::string, std::string>> edges);

  const std::string& name() const { return name_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const std::vector<std::pair<std::string, std::string>>& edges() const {
    return edges_;
  }
  const std::vector<std::string>& topo_order() const { return topo_; }

  const Slot& slot(const std::string& name) const;
  bool has_slot(const std::string& name) const;

  std::set<std::string> predecessors(const std::string& slot) const;
  std::set<std::string> successors(const std::string& slot) const;

 private:
  std::string name_;
  std::vector<Slot> slots_;
  std::vector<std::pair<std::string, std::string>> edges_;
  std::vector<std::string> topo_;
};

// Validation behind PipelineSpec's constructor, usable on raw parts.
// Throws EmptySpec, DuplicateSlot, DanglingEdge or CycleDetected; returns
// the topological order it fixed (declaration order among ready slots).
std::vector<std::string> validate_dag(
    const std::vector<Slot>& slots,
    const std::vector<std::pair<std::string, std::string>>& edges);

// ---------------------------------------------------------------------------
// Pipeline versions
// ---------------------------------------------------------------------------

struct PipelineVersion {
  std::string spec_name;
  std::map<std::string, ComponentVersion> bindings;  // slot -> version
};

// Checks every edge of `spec` against `is_compatible`. Returns the first
// failing edge, or nullopt when the binding is fully compatible.
std::optional<std::pair<std::string, std::string>> first_incompatible_edge(
    const PipelineSpec& spec, const PipelineVersion& pv);

// ---------------------------------------------------------------------------
// Component metafile
// ---------------------------------------------------------------------------
//
// Key-value UTF-8 document shipped in every payload. Required keys: `name`,
// `kind`, `schema_changed`, `output_schema` (a hex digest, or a
// comma-separated header list that gets hashed). Optional `input_schema`
// (hex digest, or `any`).

struct Metafile {
  std::string name;
  ComponentKind kind = ComponentKind::library;
  bool schema_changed = false;
  Digest output_schema{};
  std::optional<std::vector<std::string>> output_headers;
  std::optional<Digest> input_schema;  // nullopt = any
};

Metafile parse_metafile(std::string_view text);
std::string render_metafile(const Metafile& m);

}  // namespace pipevc
