#include "densebody/sim/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "densebody/core/errors.hpp"

namespace densebody::sim {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'B', '2'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::ifstream& f, const std::string& path) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw InputError("truncated episode file: " + path);
  return v;
}

void read_bytes(std::ifstream& f, void* dst, size_t n, const std::string& path) {
  f.read(reinterpret_cast<char*>(dst), std::streamsize(n));
  if (!f) throw InputError("truncated episode file: " + path);
}

}  // namespace

void write_episode(const std::string& path, const Episode& e) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + tmp);
    f.write(kMagic, 4);
    write_pod(f, kVersion);
    write_pod(f, uint32_t(e.steps.size()));
    write_pod(f, uint16_t(64));
    write_pod(f, uint16_t(64));
    for (const auto& s : e.steps) {
      for (const auto& img : s.images) {
        if (img.h != 64 || img.w != 64 || img.rgb.size() != 64 * 64 * 3)
          throw InputError("episode image is not 64x64x3");
        f.write(reinterpret_cast<const char*>(img.rgb.data()),
                std::streamsize(img.rgb.size()));
      }
      write_pod(f, uint32_t(s.cloud.size()));
      for (const auto& p : s.cloud)
        f.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(float));
      for (Scalar v : s.state.values) write_pod(f, float(v));
      f.write(reinterpret_cast<const char*>(s.state.mask.data()),
              std::streamsize(s.state.mask.size()));
      if (int(s.action.values.size()) != morph::kActionDims ||
          s.action.tag != morph::FrameTag::absolute_pose)
        throw InputError("episode action must be a 25-dim absolute pose");
      for (Scalar v : s.action.values) write_pod(f, float(v));
    }
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + tmp + " -> " + path);
}

Episode read_episode(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  read_bytes(f, magic, 4, path);
  if (std::string(magic, 4) != std::string(kMagic, 4))
    throw InputError("bad episode magic in " + path);
  if (read_pod<uint32_t>(f, path) != kVersion)
    throw InputError("unsupported episode version in " + path);
  const uint32_t n_steps = read_pod<uint32_t>(f, path);
  const int h = read_pod<uint16_t>(f, path);
  const int w = read_pod<uint16_t>(f, path);
  if (h != 64 || w != 64) throw InputError("unexpected image size in " + path);

  Episode e;
  e.steps.resize(n_steps);
  for (auto& s : e.steps) {
    for (auto& img : s.images) {
      img.h = h;
      img.w = w;
      img.rgb.resize(size_t(h) * size_t(w) * 3);
      read_bytes(f, img.rgb.data(), img.rgb.size(), path);
    }
    s.cloud.resize(read_pod<uint32_t>(f, path));
    for (auto& p : s.cloud) read_bytes(f, p.data(), 3 * sizeof(float), path);
    for (auto& v : s.state.values) v = Scalar(read_pod<float>(f, path));
    read_bytes(f, s.state.mask.data(), s.state.mask.size(), path);
    s.action.values.resize(size_t(morph::kActionDims));
    s.action.tag = morph::FrameTag::absolute_pose;
    for (auto& v : s.action.values) v = Scalar(read_pod<float>(f, path));
  }
  f.peek();
  if (!f.eof()) throw InputError("trailing bytes in " + path);
  return e;
}

Json generate_demos(const TaskSpec& spec, int n, uint64_t seed,
                    const std::string& out_dir) {
  if (n <= 0) throw InputError("episode count must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory: " + out_dir);

  core::Rng master(seed);
  std::vector<morph::ActionVector> all_actions;
  Json ep_table = Json::array();
  int successes = 0, attempts = 0;
  uint64_t total_steps = 0;

  while (successes < n) {
    const uint64_t ep_seed = master.fork_seed();
    ++attempts;
    World w(spec, ep_seed);
    Observation obs = w.observe();
    Episode ep;
    while (!w.done()) {
      StepRecord rec;
      rec.images = obs.images;
      rec.cloud = obs.cloud;
      rec.state = obs.state;
      rec.action = expert_action(w);
      World::StepResult r = w.step(rec.action);
      ep.steps.push_back(std::move(rec));
      obs = std::move(r.obs);
    }
    if (w.success()) {
      char name[32];
      std::snprintf(name, sizeof name, "ep_%04d.dsb", successes);
      write_episode((std::filesystem::path(out_dir) / name).string(), ep);
      for (const auto& s : ep.steps) all_actions.push_back(s.action);
      total_steps += ep.steps.size();
      Json row;
      row["file"] = name;
      row["steps"] = ep.steps.size();
      row["seed"] = ep_seed;
      ep_table.push_back(std::move(row));
      ++successes;
    }
    if (attempts >= 20 && successes * 2 < attempts)
      throw EpisodeError("expert success rate collapsed: " +
                         std::to_string(successes) + "/" + std::to_string(attempts));
  }

  const morph::NormStats stats = morph::compute_norm_stats(all_actions);
  Json meta;
  meta["format_version"] = kVersion;
  meta["task"] = spec.task;
  meta["tolerance"] = spec.tolerance;
  meta["light"] = spec.light;
  meta["table_offset"] = spec.table_offset;
  meta["object_color"] = spec.object_color;
  meta["object_scale"] = spec.object_scale;
  meta["scene_swap"] = spec.scene_swap;
  meta["seed"] = seed;
  meta["n_episodes"] = n;
  meta["attempts"] = attempts;
  meta["total_steps"] = total_steps;
  Json img;
  img["height"] = 64;
  img["width"] = 64;
  img["cameras"] = Json::array({"head", "torso", "left_wrist", "right_wrist"});
  meta["image"] = std::move(img);
  Json layout = Json::array();
  for (const auto& b : morph::kLayout) {
    Json blk;
    blk["name"] = b.name;
    blk["offset"] = b.offset;
    blk["width"] = b.width;
    layout.push_back(std::move(blk));
  }
  meta["layout"] = std::move(layout);
  Json ns;
  ns["location"] = stats.location;
  ns["scale"] = stats.scale;
  meta["norm_stats"] = std::move(ns);
  meta["episodes"] = std::move(ep_table);

  const std::string meta_path = (std::filesystem::path(out_dir) / "meta.json").string();
  const std::string tmp = meta_path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + tmp);
    f << meta.dump(2) << "\n";
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, meta_path, ec);
  if (ec) throw IoError("rename failed: " + tmp + " -> " + meta_path);
  return meta;
}

Json read_meta(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "meta.json").string();
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  Json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad meta.json in " + dir + ": " + e.what());
  }
  if (!j.contains("format_version") || j["format_version"] != kVersion)
    throw InputError("unsupported dataset format in " + dir);
  return j;
}

}  // namespace densebody::sim
