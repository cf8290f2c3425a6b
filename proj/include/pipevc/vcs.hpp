#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pipevc/exec.hpp"
#include "pipevc/model.hpp"
#include "pipevc/store.hpp"

namespace pipevc {

// An executed pipeline version on a branch. Immutable once created; the id
// is the digest of the serialized record.
struct Commit {
  std::string id;
  std::string branch;
  std::vector<std::string> parents;  // 0, 1 or 2 (2 = merge commit)
  std::uint64_t sequence = 0;
  PipelineVersion pipeline;
  std::map<std::string, std::string> outputs;  // slot -> output manifest id
  std::map<std::string, double> scores;        // metric -> value
  RunStats stats;

  // ArtifactRef for a slot's archived output.
  ArtifactRef output_ref(const std::string& slot) const;
  std::map<std::string, ArtifactRef> output_refs() const;
  std::map<std::string, std::string> binding_keys() const;
};

// What a commit needs from the run that produced it.
struct RunRecord {
  std::map<std::string, ArtifactRef> outputs;
  std::map<std::string, double> scores;
  RunStats stats;
};

// On-disk repository: shared dataset/library version repos, one pipeline
// commit graph, branch refs and a deduplicating object store.
//
// Layout under the repository root:
//   HEAD                      current branch name
//   refs/<branch>             commit id ("" while the branch is unborn)
//   commits/<id>              key-value commit records
//   components/<name>/<ver>   component version records
//   pipeline.spec             slot/edge declaration
//   store/                    chunk store (objects/ + manifests/)
//
// Single writer per repository (advisory lock); readers may share.
class Repository {
 public:
  static Repository init(const std::filesystem::path& path);
  static Repository open(const std::filesystem::path& path);

  const std::filesystem::path& path() const { return path_; }
  Store& store() { return *store_; }
  const Store& store() const { return *store_; }

  // -- pipeline spec ---------------------------------------------------
  bool has_spec() const { return spec_.has_value(); }
  const PipelineSpec& spec() const;
  void register_spec(const PipelineSpec& spec);

  // -- component repositories -------------------------------------------
  // Versions of a component, ordered by (schema_ordinal, increment).
  std::vector<const ComponentVersion*> versions_of(const std::string& name) const;
  const ComponentVersion* find_version(const std::string& key) const;

  // Registers the next version of `meta.name` on `branch`; the first
  // version of a component is 0.0. Throws SchemaFlagMismatch when the
  // metafile flag disagrees with the digest change.
  const ComponentVersion& register_component(const Metafile& meta,
                                             const std::string& payload_manifest,
                                             const std::string& branch);

  // -- branches and commits ----------------------------------------------
  std::vector<std::string> branches() const;
  bool has_branch(const std::string& name) const;
  // Head commit id; nullopt while the branch has no commits.
  std::optional<std::string> head(const std::string& branch) const;
  void create_branch(const std::string& name, const std::string& from_commit);

  const std::string& current_branch() const { return current_branch_; }
  void checkout(const std::string& branch);

  bool has_commit(const std::string& id) const;
  const Commit& commit(const std::string& id) const;
  std::uint64_t commit_count() const { return commits_.size(); }

  const Commit& commit_pipeline(const std::string& branch,
                                const PipelineVersion& pv,
                                const RunRecord& run);

  // Generic merge-commit creation used by both merge flavors. Bindings
  // must already satisfy edge compatibility.
  const Commit& create_merge_commit(const std::string& head_branch,
                                    const PipelineVersion& pv,
                                    const RunRecord& run,
                                    const std::string& head_id,
                                    const std::string& merge_head_id);

  const Commit& common_ancestor(const std::string& a, const std::string& b) const;
  bool is_fast_forward(const std::string& head_id,
                       const std::string& merge_head_id) const;
  const Commit& fast_forward_merge(const std::string& head_branch,
                                   const std::string& merge_branch);

  // Newest-first history of a branch (first parents transitively).
  std::vector<const Commit*> log(const std::string& branch) const;

  // All commits lying on some path from `tip` back to `ancestor`, both
  // inclusive.
  std::vector<const Commit*> commits_between(const std::string& ancestor,
                                             const std::string& tip) const;

  // Advisory writer lock (file `lock` under the root).
  class WriterLock {
   public:
    explicit WriterLock(const std::filesystem::path& repo_root);
    ~WriterLock();
    WriterLock(const WriterLock&) = delete;
    WriterLock& operator=(const WriterLock&) = delete;

   private:
    std::filesystem::path file_;
  };

 private:
  Repository() = default;
  void load();
  void persist_component(const ComponentVersion& cv);
  void persist_commit(const Commit& c);
  void persist_head(const std::string& branch);
  void register_binding_versions(const PipelineVersion& pv);
  const Commit& append_commit(Commit c);
  std::map<std::string, bool> reach_ancestor_memo(const std::string& anc) const;

  std::filesystem::path path_;
  std::unique_ptr<Store> store_;
  std::optional<PipelineSpec> spec_;
  std::map<std::string, std::vector<ComponentVersion>> components_;
  std::map<std::string, Commit> commits_;
  std::map<std::string, std::optional<std::string>> heads_;
  std::string current_branch_ = "master";
  std::uint64_t next_sequence_ = 1;
};

}  // namespace pipevc
