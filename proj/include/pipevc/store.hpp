#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "pipevc/digest.hpp"

namespace pipevc {

struct StoreStats {
  std::uint64_t physical_bytes = 0;  // unique chunk bytes on disk
  std::uint64_t logical_bytes = 0;   // sum of object sizes put
  std::uint64_t chunk_count = 0;     // unique chunks
  std::uint64_t object_count = 0;    // objects put
};

struct ObjectManifest {
  std::string id;          // hex id of the object (hash of its bytes)
  std::string kind;        // payload | output | metafile | commit
  std::uint64_t total_size = 0;
  std::vector<Digest> chunks;
};

// Content-defined chunk boundaries: rolling hash over a 48-byte window,
// boundary when the low 12 bits equal 0xFFF, chunks clamped to [1 KiB,
// 16 KiB]. Returns end offsets; the final offset equals bytes.size().
std::vector<std::size_t> chunk_boundaries(std::string_view bytes);

class ObjectStore {
 public:
  virtual ~ObjectStore() = default;
  virtual ObjectManifest put_object(std::string_view bytes,
                                    std::string_view kind) = 0;
  virtual std::string get_object(const std::string& manifest_id) const = 0;
  virtual StoreStats stats() const = 0;
};

// Content-addressed, deduplicating store.
//
// Layout: `objects/<2-hex-prefix>/<digest>` chunk files and
// `manifests/<digest>` manifest files (line-oriented: kind, size, then one
// chunk id per line, hex). Append-only, no GC. One writer per instance;
// concurrent readers are fine.
class Store : public ObjectStore {
 public:
  explicit Store(std::filesystem::path root);

  ObjectManifest put_object(std::string_view bytes,
                            std::string_view kind) override;
  std::string get_object(const std::string& manifest_id) const override;
  std::string get_object(const ObjectManifest& manifest) const;
  ObjectManifest manifest(const std::string& manifest_id) const;
  bool has_object(const std::string& manifest_id) const;
  StoreStats stats() const override;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path chunk_path(const Digest& id) const;

  std::filesystem::path root_;
  mutable std::mutex mu_;
  StoreStats stats_;
};

// Copy-everything write path used as the storage baseline: every put lands
// in its own `folders/<seq>` file, so physical growth always equals the
// object size regardless of content overlap.
class FolderStore : public ObjectStore {
 public:
  explicit FolderStore(std::filesystem::path root);

  ObjectManifest put_object(std::string_view bytes,
                            std::string_view kind) override;
  std::string get_object(const std::string& manifest_id) const override;
  StoreStats stats() const override;

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
  StoreStats stats_;
  std::uint64_t seq_ = 0;
  std::map<std::string, std::filesystem::path> index_;
};

// Deterministic container for multi-file objects (payload dirs, output
// artifacts): entries sorted by name, each encoded as
// `<name>\n<size>\n<bytes>\n`. Names must not contain newlines.
std::string pack_entries(const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> unpack_entries(std::string_view bytes);

}  // namespace pipevc
