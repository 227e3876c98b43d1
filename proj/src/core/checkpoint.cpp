#include "densebody/core/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "densebody/core/errors.hpp"

namespace densebody::core {

namespace {
constexpr char kMagic[4] = {'D', 'B', 'C', 'K'};

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& ps, const Json& meta) {
  Json manifest;
  Json plist = Json::array();
  uint64_t offset = 0;
  for (const auto& [name, e] : ps.entries()) {
    Json p;
    p["name"] = name;
    p["shape"] = e.value.shape;
    p["offset"] = offset;
    p["count"] = e.value.numel();
    p["trainable"] = e.trainable;
    plist.push_back(std::move(p));
    offset += uint64_t(e.value.numel());
  }
  manifest["params"] = std::move(plist);
  manifest["meta"] = meta;
  const std::string mtext = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(kMagic, 4);
  write_pod<uint32_t>(f, kCheckpointVersion);
  write_pod<uint64_t>(f, uint64_t(mtext.size()));
  f.write(mtext.data(), std::streamsize(mtext.size()));
  for (const auto& [name, e] : ps.entries())
    f.write(reinterpret_cast<const char*>(e.value.data()),
            std::streamsize(sizeof(Scalar) * size_t(e.value.numel())));
  if (!f) throw IoError("checkpoint write failed: " + path);
}

namespace {
Json read_manifest(std::ifstream& f, const std::string& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  const uint32_t version = read_pod<uint32_t>(f);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const uint64_t mlen = read_pod<uint64_t>(f);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), std::streamsize(mlen));
  if (!f) throw CheckpointError("truncated checkpoint manifest: " + path);
  return Json::parse(mtext);
}
}  // namespace

Json load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  Json manifest = read_manifest(f, path);
  ps = ParamStore();
  for (const auto& p : manifest["params"]) {
    const std::string name = p["name"].get<std::string>();
    std::vector<int64_t> shape = p["shape"].get<std::vector<int64_t>>();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           std::streamsize(sizeof(Scalar) * t.v.size()));
    if (!f) throw CheckpointError("truncated checkpoint payload: " + path);
    ps.create(name, std::move(t), p["trainable"].get<bool>());
  }
  return manifest["meta"];
}

Json load_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  return read_manifest(f, path)["meta"];
}

}  // namespace densebody::core
