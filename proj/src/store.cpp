#include "pipevc/store.hpp"

#include <fstream>
#include <sstream>

#include "pipevc/errors.hpp"

namespace fs = std::filesystem;

namespace pipevc {

namespace {

constexpr std::size_t kWindow = 48;
constexpr std::size_t kMinChunk = 1024;
constexpr std::size_t kMaxChunk = 16 * 1024;
constexpr std::uint64_t kBoundaryMask = 0xFFF;

// Byte-keyed table for the cyclic-polynomial rolling hash, generated once
// from splitmix64 so chunk boundaries are identical across builds.
const std::array<std::uint64_t, 256>& hash_table() {
  static const std::array<std::uint64_t, 256> table = [] {
    std::array<std::uint64_t, 256> t{};
    std::uint64_t x = 0x9e3779b97f4a7c15ULL;
    for (auto& v : t) {
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      v = z ^ (z >> 31);
    }
    return t;
  }();
  return table;
}

inline std::uint64_t rotl64(std::uint64_t v, unsigned r) {
  return (v << r) | (v >> (64 - r));
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
  if (!f) fail(Errc::io_failure, "short write to " + p.string());
}

}  // namespace

std::vector<std::size_t> chunk_boundaries(std::string_view bytes) {
  const auto& table = hash_table();
  std::vector<std::size_t> ends;
  std::size_t start = 0;
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::size_t len = i - start + 1;
    h = rotl64(h, 1) ^ table[static_cast<unsigned char>(bytes[i])];
    if (len > kWindow) {
      h ^= rotl64(table[static_cast<unsigned char>(bytes[i - kWindow])],
                  kWindow % 64);
    }
    if ((len >= kMinChunk && (h & kBoundaryMask) == kBoundaryMask) ||
        len == kMaxChunk) {
      ends.push_back(i + 1);
      start = i + 1;
      h = 0;
    }
  }
  if (start < bytes.size()) ends.push_back(bytes.size());
  return ends;
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

Store::Store(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "objects", ec);
  fs::create_directories(root_ / "manifests", ec);
  if (ec) fail(Errc::io_failure, "cannot create store at " + root_.string());
  // Rebuild counters from disk so a reopened store keeps honest stats.
  for (const auto& e : fs::recursive_directory_iterator(root_ / "objects")) {
    if (!e.is_regular_file()) continue;
    ++stats_.chunk_count;
    stats_.physical_bytes += e.file_size();
  }
  for (const auto& e : fs::directory_iterator(root_ / "manifests")) {
    if (!e.is_regular_file()) continue;
    ++stats_.object_count;
    auto m = manifest(e.path().filename().string());
    stats_.logical_bytes += m.total_size;
  }
}

fs::path Store::chunk_path(const Digest& id) const {
  std::string hex = to_hex(id);
  return root_ / "objects" / hex.substr(0, 2) / hex;
}

ObjectManifest Store::put_object(std::string_view bytes,
                                 std::string_view kind) {
  ObjectManifest m;
  m.id = to_hex(sha256(bytes));
  m.kind = std::string(kind);
  m.total_size = bytes.size();

  std::uint64_t new_chunk_bytes = 0;
  std::uint64_t new_chunks = 0;
  std::size_t begin = 0;
  for (std::size_t end : chunk_boundaries(bytes)) {
    std::string_view chunk = bytes.substr(begin, end - begin);
    Digest id = sha256(chunk);
    m.chunks.push_back(id);
    fs::path p = chunk_path(id);
    if (!fs::exists(p)) {
      fs::create_directories(p.parent_path());
      write_file(p, chunk);
      new_chunk_bytes += chunk.size();
      ++new_chunks;
    }
    begin = end;
  }

  fs::path mp = root_ / "manifests" / m.id;
  if (!fs::exists(mp)) {
    std::ostringstream ss;
    ss << m.kind << "\n" << m.total_size << "\n";
    for (const auto& c : m.chunks) ss << to_hex(c) << "\n";
    write_file(mp, ss.str());
  }

  std::lock_guard lk(mu_);
  stats_.physical_bytes += new_chunk_bytes;
  stats_.chunk_count += new_chunks;
  stats_.logical_bytes += bytes.size();
  stats_.object_count += 1;
  return m;
}

ObjectManifest Store::manifest(const std::string& manifest_id) const {
  fs::path mp = root_ / "manifests" / manifest_id;
  if (!fs::exists(mp))
    fail(Errc::missing_chunk, "no manifest " + manifest_id);
  std::istringstream in(read_file(mp));
  ObjectManifest m;
  m.id = manifest_id;
  std::string line;
  if (!std::getline(in, line)) fail(Errc::io_failure, "empty manifest " + manifest_id);
  m.kind = line;
  if (!std::getline(in, line)) fail(Errc::io_failure, "truncated manifest " + manifest_id);
  m.total_size = std::stoull(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto d = digest_from_hex(line);
    if (!d) fail(Errc::io_failure, "bad chunk id in manifest " + manifest_id);
    m.chunks.push_back(*d);
  }
  return m;
}

bool Store::has_object(const std::string& manifest_id) const {
  return fs::exists(root_ / "manifests" / manifest_id);
}

std::string Store::get_object(const ObjectManifest& m) const {
  std::string out;
  out.reserve(m.total_size);
  for (const auto& c : m.chunks) {
    fs::path p = chunk_path(c);
    if (!fs::exists(p))
      fail(Errc::missing_chunk, "chunk " + to_hex(c) + " not in store");
    out += read_file(p);
  }
  return out;
}

std::string Store::get_object(const std::string& manifest_id) const {
  return get_object(manifest(manifest_id));
}

StoreStats Store::stats() const {
  std::lock_guard lk(mu_);
  return stats_;
}

// ---------------------------------------------------------------------------
// FolderStore
// ---------------------------------------------------------------------------

FolderStore::FolderStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "folders", ec);
  if (ec) fail(Errc::io_failure, "cannot create store at " + root_.string());
}

ObjectManifest FolderStore::put_object(std::string_view bytes,
                                       std::string_view kind) {
  std::lock_guard lk(mu_);
  std::uint64_t seq = seq_++;
  char name[32];
  std::snprintf(name, sizeof(name), "%08llu",
                static_cast<unsigned long long>(seq));
  fs::path p = root_ / "folders" / name;
  write_file(p, bytes);

  ObjectManifest m;
  m.id = std::string(name) + "-" + to_hex(sha256(bytes)).substr(0, 16);
  m.kind = std::string(kind);
  m.total_size = bytes.size();
  m.chunks.push_back(sha256(bytes));
  index_[m.id] = p;

  stats_.physical_bytes += bytes.size();
  stats_.logical_bytes += bytes.size();
  stats_.chunk_count += 1;
  stats_.object_count += 1;
  return m;
}

std::string FolderStore::get_object(const std::string& manifest_id) const {
  std::lock_guard lk(mu_);
  auto it = index_.find(manifest_id);
  if (it == index_.end())
    fail(Errc::missing_chunk, "no object " + manifest_id);
  return read_file(it->second);
}

StoreStats FolderStore::stats() const {
  std::lock_guard lk(mu_);
  return stats_;
}

// ---------------------------------------------------------------------------
// Entry packing
// ---------------------------------------------------------------------------

std::string pack_entries(const std::map<std::string, std::string>& entries) {
  std::string out;
  for (const auto& [name, bytes] : entries) {
    if (name.find('\n') != std::string::npos)
      fail(Errc::bad_config, "entry name contains newline");
    out += name;
    out.push_back('\n');
    out += std::to_string(bytes.size());
    out.push_back('\n');
    out += bytes;
    out.push_back('\n');
  }
  return out;
}

std::map<std::string, std::string> unpack_entries(std::string_view bytes) {
  std::map<std::string, std::string> entries;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos)
      fail(Errc::io_failure, "truncated entry name");
    std::string name(bytes.substr(pos, nl - pos));
    pos = nl + 1;
    nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos)
      fail(Errc::io_failure, "truncated entry size");
    std::size_t size = std::stoull(std::string(bytes.substr(pos, nl - pos)));
    pos = nl + 1;
    if (pos + size + 1 > bytes.size())
      fail(Errc::io_failure, "truncated entry body");
    entries[name] = std::string(bytes.substr(pos, size));
    pos += size + 1;  // trailing newline
  }
  return entries;
}

}  // namespace pipevc
