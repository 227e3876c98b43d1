#include "densebody/pipe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "densebody/core/errors.hpp"
#include "densebody/core/hash.hpp"

namespace densebody::pipe {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- TrainConfig

void TrainConfig::validate() const {
  try {
    sim::TaskSpec::for_task(task);
  } catch (const SpecError& e) {
    throw ConfigError(std::string("bad task in train config: ") + e.what());
  }
  if (dataset.empty()) throw ConfigError("train.dataset must be set");
  if (lr <= 0) throw ConfigError("train.lr must be positive");
  if (batch <= 0) throw ConfigError("train.batch must be positive");
  if (steps <= 0) throw ConfigError("train.steps must be positive");
  if (eval_every < 0) throw ConfigError("train.eval_every must be >= 0");
  if (eval_trials <= 0) throw ConfigError("train.eval_trials must be positive");
  model.validate();
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  const std::string s = "train";
  t.task = c.str_or(s, "task", t.task);
  t.dataset = c.str_or(s, "dataset", t.dataset);
  t.out_dir = c.str_or(s, "out_dir", t.out_dir);
  t.init_from = c.str_or(s, "init_from", t.init_from);
  t.seed = uint64_t(c.integer_or(s, "seed", int64_t(t.seed)));
  t.lr = c.num_or(s, "lr", t.lr);
  t.batch = int(c.integer_or(s, "batch", t.batch));
  t.steps = int(c.integer_or(s, "steps", t.steps));
  t.eval_every = int(c.integer_or(s, "eval_every", t.eval_every));
  t.eval_trials = int(c.integer_or(s, "eval_trials", t.eval_trials));
  t.deterministic = c.boolean_or(s, "deterministic", t.deterministic);
  t.model = ModelConfig::from_config(c);
  return t;
}

void TrainConfig::to_config(Config& c) const {
  const std::string s = "train";
  c.set(s, "task", task);
  c.set(s, "dataset", dataset);
  c.set(s, "out_dir", out_dir);
  c.set(s, "init_from", init_from);
  c.set_int(s, "seed", int64_t(seed));
  c.set_num(s, "lr", lr);
  c.set_int(s, "batch", batch);
  c.set_int(s, "steps", steps);
  c.set_int(s, "eval_every", eval_every);
  c.set_int(s, "eval_trials", eval_trials);
  c.set(s, "deterministic", deterministic ? "true" : "false");
  model.to_config(c);
}

// -------------------------------------------------------------------- dataset

int64_t LoadedDataset::total_steps() const {
  int64_t n = 0;
  for (const auto& e : episodes) n += int64_t(e.size());
  return n;
}

Json validate_dataset_meta(const std::string& dir) {
  const std::string path = (fs::path(dir) / "meta.json").string();
  std::ifstream f(path);
  if (!f) throw IoError("cannot open dataset metadata: " + path);
  Json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad meta.json in " + dir + ": " + e.what());
  }
  if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
      j["format_version"].get<int>() != 1)
    throw CompatError("dataset format version mismatch in " + dir);
  if (!j.contains("layout") || !j["layout"].is_array() ||
      j["layout"].size() != size_t(morph::kNumBlocks))
    throw CompatError("dataset layout block count mismatch in " + dir);
  for (int b = 0; b < morph::kNumBlocks; ++b) {
    const Json& blk = j["layout"][size_t(b)];
    const auto& want = morph::kLayout[size_t(b)];
    if (blk.value("name", std::string()) != want.name ||
        blk.value("offset", -1) != want.offset ||
        blk.value("width", -1) != want.width)
      throw CompatError("dataset layout mismatch at block '" +
                        std::string(want.name) + "' in " + dir);
  }
  const Json img = j.value("image", Json::object());
  if (img.value("height", 0) != 64 || img.value("width", 0) != 64 ||
      img.value("cameras", Json::array()).size() != 4)
    throw CompatError("dataset image geometry mismatch in " + dir);
  if (!j.contains("norm_stats") || !j.contains("episodes"))
    throw CompatError("dataset metadata lacks norm_stats/episodes in " + dir);
  return j;
}

namespace {

morph::NormStats stats_from_json(const Json& ns) {
  const auto loc = ns.value("location", std::vector<Scalar>());
  const auto sc = ns.value("scale", std::vector<Scalar>());
  if (loc.size() != size_t(morph::kActionDims) ||
      sc.size() != size_t(morph::kActionDims))
    throw CompatError("normalization stats have the wrong width");
  morph::NormStats st;
  std::copy(loc.begin(), loc.end(), st.location.begin());
  std::copy(sc.begin(), sc.end(), st.scale.begin());
  return st;
}

}  // namespace

LoadedDataset load_dataset(const std::string& dir, const ModelConfig& mc) {
  mc.validate();
  LoadedDataset ds;
  ds.dir = dir;
  ds.meta = validate_dataset_meta(dir);
  ds.stats = stats_from_json(ds.meta["norm_stats"]);
  ds.hash = core::hash_dir(dir);
  for (const Json& row : ds.meta["episodes"]) {
    const std::string file = row.value("file", std::string());
    sim::Episode ep = sim::read_episode((fs::path(dir) / file).string());
    std::vector<LoadedStep> steps;
    steps.reserve(ep.steps.size());
    for (auto& rec : ep.steps) {
      LoadedStep s;
      s.images = std::move(rec.images);
      s.vox = enc::voxelize(rec.cloud, mc.voxel_size);
      s.state = rec.state;
      s.action = morph::normalize(rec.action, ds.stats).values;
      steps.push_back(std::move(s));
    }
    if (steps.empty()) throw InputError("empty episode in " + dir);
    ds.episodes.push_back(std::move(steps));
  }
  if (ds.episodes.empty()) throw InputError("dataset has no episodes: " + dir);
  return ds;
}

Tensor truth_window(const std::vector<LoadedStep>& ep, int t, int horizon) {
  if (ep.empty() || t < 0 || t >= int(ep.size()))
    throw RangeError("truth window start out of range");
  Tensor w(horizon, morph::kActionDims);
  for (int k = 0; k < horizon; ++k) {
    const auto& a = ep[size_t(std::min(t + k, int(ep.size()) - 1))].action;
    std::copy(a.begin(), a.end(),
              w.v.begin() + size_t(k) * size_t(morph::kActionDims));
  }
  return w;
}

// ------------------------------------------------------------------ execution

morph::ActionVector action_from_plan_row(const Tensor& plan, int row,
                                         const morph::NormStats& stats,
                                         const morph::RobotState& current) {
  if (plan.shape.size() != 2 || plan.shape[1] != morph::kActionDims)
    throw InputError("plan must be [T, action_dims]");
  if (row < 0 || row >= plan.shape[0]) throw RangeError("plan row out of range");
  morph::ActionVector a;
  a.tag = morph::FrameTag::normalized;
  a.values.resize(size_t(morph::kActionDims));
  const Scalar* src = plan.v.data() + size_t(row) * size_t(morph::kActionDims);
  std::copy(src, src + morph::kActionDims, a.values.begin());
  for (int off : {morph::kLeftQuatOffset, morph::kRightQuatOffset}) {
    Scalar* q = a.values.data() + off;
    const Scalar n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (n < 1e-6) {
      // a collapsed prediction keeps the current hand orientation
      for (int k = 0; k < 4; ++k) q[k] = current.values[size_t(off - 3 + k)];
    } else {
      const Scalar s = (q[0] < 0 ? -1.0 : 1.0) / n;
      for (int k = 0; k < 4; ++k) q[k] *= s;
    }
  }
  return morph::denormalize(a, stats);
}

// ------------------------------------------------------------------- training

namespace {

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + tmp);
    f << content;
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + tmp + " -> " + path);
}

void warm_start_backbone(ParamStore& ps, const std::string& ckpt) {
  ParamStore pre;
  core::load_checkpoint(ckpt, pre);
  int copied = 0;
  for (auto& [name, dst] : ps.entries()) {
    if (name.rfind("enc2d.", 0) != 0) continue;
    if (name.find(".pretext") != std::string::npos) continue;
    const bool adapter = name.find(".lora_") != std::string::npos;
    if (!pre.has(name)) {
      if (adapter) continue;  // adapters are optional in a warm start
      throw CompatError("init_from checkpoint lacks backbone weight " + name);
    }
    const auto& src = pre.at(name);
    if (src.value.shape != dst.value.shape)
      throw CompatError("init_from shape mismatch at " + name);
    dst.value = src.value;
    ++copied;
  }
  if (copied == 0)
    throw CompatError("init_from checkpoint has no matching backbone weights");
}

}  // namespace

TrainResult train_loaded(const TrainConfig& cfg, const LoadedDataset& ds) {
  cfg.validate();
  const std::string ds_task = ds.meta.value("task", std::string());
  if (ds_task != cfg.task)
    throw CompatError("dataset task '" + ds_task +
                      "' does not match configured task '" + cfg.task + "'");
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create out_dir: " + cfg.out_dir);

  ParamStore ps;
  Rng rng(cfg.seed);
  init_policy(ps, cfg.model, rng);
  if (!cfg.init_from.empty()) warm_start_backbone(ps, cfg.init_from);
  Rng data_rng(rng.fork_seed());

  core::AdamConfig adam;
  adam.lr = cfg.lr;

  TrainResult res;
  res.losses.reserve(size_t(cfg.steps));
  Json evals = Json::array();

  for (int step = 0; step < cfg.steps; ++step) {
    std::map<std::string, Tensor> grads;
    Scalar mean_loss = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& ep =
          ds.episodes[size_t(data_rng.uniform_int(uint64_t(ds.episodes.size())))];
      const int t = int(data_rng.uniform_int(uint64_t(ep.size())));
      Graph g(true);
      const PolicyFeatures f =
          policy_features(g, ps, ep[size_t(t)].images, ep[size_t(t)].vox,
                          ep[size_t(t)].state, ds.stats, true, data_rng,
                          cfg.model);
      const Tensor truth = truth_window(ep, t, cfg.model.horizon);
      const int loss = policy_loss(g, ps, f, truth, data_rng, cfg.model);
      const Scalar lv = g.val(loss).v[0];
      if (!std::isfinite(lv)) {
        std::ostringstream d;
        d << "training diverged: non-finite loss at step " << step
          << " (sample episode " << (&ep - ds.episodes.data()) << ", t=" << t
          << "); last losses:";
        const size_t back = std::min<size_t>(5, res.losses.size());
        for (size_t i = res.losses.size() - back; i < res.losses.size(); ++i)
          d << " " << res.losses[i];
        throw TrainingError(d.str());
      }
      mean_loss += lv / Scalar(cfg.batch);
      g.backward(loss);
      g.export_param_grads(grads, 1.0 / Scalar(cfg.batch));
    }
    core::adam_step(ps, grads, adam, step + 1,
                    core::cosine_decay(step, cfg.steps));
    res.losses.push_back(mean_loss);

    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
      const EvalReport r =
          evaluate_policy(ps, cfg.model, ds.stats,
                          sim::TaskSpec::for_task(cfg.task), cfg.eval_trials,
                          cfg.seed);
      Json e;
      e["step"] = step + 1;
      e["success_rate"] = r.success_rate;
      evals.push_back(std::move(e));
    }
  }
  res.final_loss = res.losses.empty() ? 0 : res.losses.back();

  Config ini;
  cfg.to_config(ini);
  Json meta;
  meta["format"] = "policy";
  meta["task"] = cfg.task;
  meta["seed"] = cfg.seed;
  meta["steps"] = cfg.steps;
  meta["dataset_hash"] = core::hash_hex(ds.hash);
  meta["final_loss"] = res.final_loss;
  meta["config"] = ini.serialize();
  Json ns;
  ns["location"] = ds.stats.location;
  ns["scale"] = ds.stats.scale;
  meta["norm_stats"] = std::move(ns);

  res.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.dbck").string();
  core::save_checkpoint(res.checkpoint, ps, meta);
  res.checkpoint_hash = core::hash_file(res.checkpoint);

  Json log;
  log["task"] = cfg.task;
  log["seed"] = cfg.seed;
  log["steps"] = cfg.steps;
  log["batch"] = cfg.batch;
  log["lr"] = cfg.lr;
  log["final_loss"] = res.final_loss;
  log["losses"] = res.losses;
  log["evals"] = std::move(evals);
  res.log = (fs::path(cfg.out_dir) / "train_log.json").string();
  write_text_file(res.log, log.dump(2) + "\n");
  return res;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  return train_loaded(cfg, load_dataset(cfg.dataset, cfg.model));
}

// ----------------------------------------------------------------- evaluation

Json EvalReport::to_json() const {
  Json j;
  j["task"] = task;
  j["trials"] = trials;
  j["success_rate"] = success_rate;
  Json st = Json::object();
  for (size_t i = 0; i < stage_names.size(); ++i)
    st[stage_names[i]] = stage_rates[i];
  j["stages"] = std::move(st);
  j["mean_episode_len"] = mean_episode_len;
  j["mean_decoder_calls"] = mean_decoder_calls;
  j["seed"] = seed;
  j["trial_seeds"] = trial_seeds;
  j["successes"] = std::vector<int>(successes.begin(), successes.end());
  return j;
}

namespace {

std::vector<std::string> stage_names_for(const std::string& task) {
  if (task == "pick_place") return {"pick", "place"};
  if (task == "deliver") return {"pick", "deliver"};
  if (task == "stack") return {"pick", "stack"};
  if (task == "push") return {"contact", "push"};
  throw SpecError("unknown task id: " + task);
}

// First-stage predicate from world truth: grasp (or lift) for the prehensile
// tasks, a 2 cm displacement for push.
bool first_stage_hit(const sim::World& w, int goal, const sim::Vec3& start) {
  const auto& o = w.objects()[size_t(goal)];
  if (w.spec().task == "push")
    return (o.pos - start).horiz_norm() >= 0.02;
  return o.attached_arm >= 0 ||
         o.pos.z > w.table_top() + o.half + 0.02;
}

struct TrialStats {
  int first_stage = 0, success = 0;
  int64_t len_sum = 0, calls_sum = 0, plans_sum = 0;
};

template <typename PlanFn>
void run_trial(sim::World& w, TrialStats& st, PlanFn&& next_actions) {
  const int goal = w.goal_object();
  const sim::Vec3 start = w.objects()[size_t(goal)].pos;
  bool stage1 = false;
  morph::RobotState cur = w.observe().state;  // state_only mode: cheap
  while (!w.done()) {
    const std::vector<morph::ActionVector> acts = next_actions(cur);
    if (acts.empty()) throw TrainingError("planner returned no actions");
    for (const auto& a : acts) {
      const sim::World::StepResult r = w.step(a);
      cur = r.obs.state;
      stage1 = stage1 || first_stage_hit(w, goal, start);
      if (r.done) break;
    }
  }
  st.first_stage += stage1 ? 1 : 0;
  st.success += w.success() ? 1 : 0;
  st.len_sum += w.steps_taken();
}

EvalReport finish_report(const std::string& task, int n_trials, uint64_t seed,
                         std::vector<uint64_t> trial_seeds,
                         std::vector<uint8_t> succ, const TrialStats& st,
                         int64_t second_stage_hits) {
  EvalReport rep;
  rep.task = task;
  rep.trials = n_trials;
  rep.seed = seed;
  rep.trial_seeds = std::move(trial_seeds);
  rep.successes = std::move(succ);
  rep.success_rate = n_trials > 0 ? Scalar(st.success) / n_trials : 0;
  rep.stage_names = stage_names_for(task);
  rep.stage_rates = {n_trials > 0 ? Scalar(st.first_stage) / n_trials : 0,
                     n_trials > 0 ? Scalar(second_stage_hits) / n_trials : 0};
  rep.mean_episode_len = n_trials > 0 ? Scalar(st.len_sum) / n_trials : 0;
  rep.mean_decoder_calls =
      st.plans_sum > 0 ? Scalar(st.calls_sum) / Scalar(st.plans_sum) : 0;
  return rep;
}

}  // namespace

EvalReport evaluate_policy(const ParamStore& ps, const ModelConfig& mc,
                           const morph::NormStats& stats,
                           const sim::TaskSpec& spec, int n_trials,
                           uint64_t seed) {
  mc.validate();
  if (n_trials <= 0) throw InputError("trial count must be positive");
  ParamStore& psm = const_cast<ParamStore&>(ps);  // graph reads values only
  Rng seeder(seed);
  std::vector<uint64_t> trial_seeds;
  std::vector<uint8_t> succ;
  TrialStats st;
  for (int i = 0; i < n_trials; ++i) {
    const uint64_t tseed = seeder.fork_seed();
    trial_seeds.push_back(tseed);
    sim::World w(spec, tseed);
    int plan_idx = 0;
    run_trial(w, st, [&](const morph::RobotState&) {
      w.set_observe_mode(sim::ObserveMode::full);
      const sim::Observation obs = w.observe();
      w.set_observe_mode(sim::ObserveMode::state_only);
      Graph g(false);
      Rng feat_rng(0);  // unused outside training
      const PolicyFeatures f =
          policy_features(g, psm, obs, stats, false, feat_rng, mc);
      const uint64_t plan_seed =
          tseed ^ (0x9E3779B97F4A7C15ULL * uint64_t(plan_idx + 1));
      const head::ActionSequence plan = policy_plan(g, psm, f, plan_seed, mc);
      ++plan_idx;
      st.calls_sum += plan.decoder_calls;
      st.plans_sum += 1;
      std::vector<morph::ActionVector> acts;
      morph::RobotState cur = obs.state;
      for (int e = 0; e < mc.exec_steps; ++e) {
        acts.push_back(action_from_plan_row(plan.actions, e, stats, cur));
        // later rows keep falling back to the pre-plan pose if degenerate
      }
      return acts;
    });
    succ.push_back(w.success() ? 1 : 0);
  }
  // second stage == task success for every task family
  return finish_report(spec.task, n_trials, seed, std::move(trial_seeds),
                       std::move(succ), st, st.success);
}

EvalReport evaluate(const std::string& ckpt_path, const sim::TaskSpec& spec,
                    int n_trials, uint64_t seed, int expect_horizon) {
  ParamStore ps;
  const CheckpointInfo info = load_policy_checkpoint(ckpt_path, ps);
  if (expect_horizon >= 0 && expect_horizon != info.cfg.model.horizon)
    throw CompatError("checkpoint horizon " +
                      std::to_string(info.cfg.model.horizon) +
                      " does not match expected horizon " +
                      std::to_string(expect_horizon));
  return evaluate_policy(ps, info.cfg.model, info.stats, spec, n_trials, seed);
}

EvalReport evaluate_expert(const sim::TaskSpec& spec, int n_trials,
                           uint64_t seed) {
  if (n_trials <= 0) throw InputError("trial count must be positive");
  Rng seeder(seed);
  std::vector<uint64_t> trial_seeds;
  std::vector<uint8_t> succ;
  TrialStats st;
  for (int i = 0; i < n_trials; ++i) {
    const uint64_t tseed = seeder.fork_seed();
    trial_seeds.push_back(tseed);
    sim::World w(spec, tseed);
    w.set_observe_mode(sim::ObserveMode::state_only);
    run_trial(w, st, [&](const morph::RobotState&) {
      return std::vector<morph::ActionVector>{sim::expert_action(w)};
    });
    succ.push_back(w.success() ? 1 : 0);
  }
  return finish_report(spec.task, n_trials, seed, std::move(trial_seeds),
                       std::move(succ), st, st.success);
}

// ---------------------------------------------------------------- checkpoints

namespace {

CheckpointInfo info_from_meta(Json meta, const std::string& path) {
  if (!meta.is_object() || meta.value("format", std::string()) != "policy" ||
      !meta.contains("config") || !meta.contains("norm_stats"))
    throw CheckpointError("not a policy checkpoint: " + path);
  CheckpointInfo info;
  info.cfg = TrainConfig::from_config(
      Config::parse_string(meta["config"].get<std::string>()));
  info.stats = stats_from_json(meta["norm_stats"]);
  info.meta = std::move(meta);
  return info;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::string& path) {
  return info_from_meta(core::load_checkpoint_meta(path), path);
}

CheckpointInfo load_policy_checkpoint(const std::string& path, ParamStore& ps) {
  CheckpointInfo info = info_from_meta(core::load_checkpoint(path, ps), path);
  apply_mode(ps, info.cfg.model);  // restore trainable flags
  return info;
}

// ------------------------------------------------------------- generalization

const std::vector<std::string>& generalization_axes() {
  static const std::vector<std::string> axes = {"light", "spatial", "color",
                                                "shape", "scene"};
  return axes;
}

sim::TaskSpec variant_spec(const sim::TaskSpec& base, const std::string& axis) {
  sim::TaskSpec s = base;
  if (axis == "none") return s;
  if (axis == "light")
    s.apply_variation("light", "0.25");
  else if (axis == "spatial")
    s.apply_variation("table_offset", "0.05");
  else if (axis == "color")
    s.apply_variation("object_color", "held_out");
  else if (axis == "shape")
    s.apply_variation("object_scale", "0.7");
  else if (axis == "scene")
    s.apply_variation("scene", "swapped");
  else
    throw SpecError("unknown generalization axis: " + axis);
  return s;
}

Json GenReport::to_json() const {
  Json j;
  j["task"] = task;
  j["trials"] = trials;
  j["seed"] = seed;
  j["original"] = original.to_json();
  Json vs = Json::array();
  for (const auto& [axis, rep] : variants) {
    Json v;
    v["axis"] = axis;
    v["report"] = rep.to_json();
    vs.push_back(std::move(v));
  }
  j["variants"] = std::move(vs);
  return j;
}

GenReport run_generalization(const std::string& ckpt_path,
                             const std::vector<std::string>& axes,
                             int n_trials, uint64_t seed) {
  ParamStore ps;
  const CheckpointInfo info = load_policy_checkpoint(ckpt_path, ps);
  const sim::TaskSpec base =
      sim::TaskSpec::for_task(info.meta.value("task", info.cfg.task));
  GenReport rep;
  rep.task = base.task;
  rep.trials = n_trials;
  rep.seed = seed;
  rep.original =
      evaluate_policy(ps, info.cfg.model, info.stats, base, n_trials, seed);
  for (const std::string& axis : axes) {
    const sim::TaskSpec vs = variant_spec(base, axis);
    rep.variants.emplace_back(
        axis, evaluate_policy(ps, info.cfg.model, info.stats, vs, n_trials,
                              seed));
  }
  return rep;
}

// ------------------------------------------------------------------- ablation

Json AblationReport::to_json() const {
  Json j;
  j["task"] = task;
  j["dataset_hash"] = core::hash_hex(dataset_hash);
  Json budget;
  budget["seed"] = seed;
  budget["steps"] = steps;
  budget["batch"] = batch;
  budget["trials"] = trials;
  j["budget"] = std::move(budget);
  Json cs = Json::array();
  for (const auto& c : cells) {
    Json e;
    e["head"] = c.head;
    e["mode"] = c.mode;
    e["failed"] = c.failed;
    e["error"] = c.error;
    e["final_loss"] = c.final_loss;
    e["checkpoint_hash"] = core::hash_hex(c.checkpoint_hash);
    e["eval"] = c.failed ? Json() : c.eval.to_json();
    cs.push_back(std::move(e));
  }
  j["cells"] = std::move(cs);
  return j;
}

std::string AblationReport::to_csv() const {
  std::vector<std::string> stages;
  for (const auto& c : cells)
    if (!c.failed) {
      stages = c.eval.stage_names;
      break;
    }
  std::ostringstream o;
  o << "head,mode,failed,success_rate";
  for (const auto& s : stages) o << ",stage:" << s;
  o << ",mean_episode_len,mean_decoder_calls,final_loss,dataset_hash\n";
  for (const auto& c : cells) {
    o << c.head << "," << c.mode << "," << (c.failed ? 1 : 0) << ",";
    if (c.failed) {
      o << "";
      for (size_t i = 0; i < stages.size(); ++i) o << ",";
      o << ",," << c.final_loss << "," << core::hash_hex(dataset_hash) << "\n";
      continue;
    }
    o << c.eval.success_rate;
    for (Scalar r : c.eval.stage_rates) o << "," << r;
    o << "," << c.eval.mean_episode_len << "," << c.eval.mean_decoder_calls
      << "," << c.final_loss << "," << core::hash_hex(dataset_hash) << "\n";
  }
  return o.str();
}

std::string AblationReport::to_svg() const {
  const int W = 680, H = 400;
  const Scalar x0 = 70, x1 = 650, y0 = 330, y1 = 60;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
    << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"28\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"16\">Success rate by action "
       "head and encoder mode (task: "
    << task << ")</text>\n";
  for (int g = 0; g <= 4; ++g) {
    const Scalar frac = 0.25 * g;
    const Scalar y = y0 - frac * (y0 - y1);
    o << "<line x1=\"" << x0 << "\" y1=\"" << y << "\" x2=\"" << x1
      << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << x0 - 8 << "\" y=\"" << y + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << frac << "</text>\n";
  }
  const char* fills[] = {"#88a0a8", "#4aa564", "#3366cc"};  // frozen/lora/full
  const Scalar group_w = (x1 - x0) / 2.0;
  const Scalar bar_w = 52;
  for (size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    const int head_i = c.head == "dense" ? 0 : 1;
    const int mode_i = c.mode == "frozen" ? 0 : (c.mode == "lora" ? 1 : 2);
    const Scalar cx =
        x0 + group_w * (head_i + 0.5) + (mode_i - 1) * (bar_w + 12);
    const Scalar bx = cx - bar_w / 2;
    if (c.failed) {
      o << "<rect x=\"" << bx << "\" y=\"" << y0 - 24 << "\" width=\"" << bar_w
        << "\" height=\"24\" fill=\"none\" stroke=\"#c33\" "
           "stroke-dasharray=\"4 3\"/>\n";
      o << "<text x=\"" << cx << "\" y=\"" << y0 - 30
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\" fill=\"#c33\">failed</text>\n";
    } else {
      const Scalar h = c.eval.success_rate * (y0 - y1);
      o << "<rect x=\"" << bx << "\" y=\"" << y0 - h << "\" width=\"" << bar_w
        << "\" height=\"" << h << "\" fill=\"" << fills[mode_i] << "\"/>\n";
      o << "<text x=\"" << cx << "\" y=\"" << y0 - h - 6
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << std::fixed << std::setprecision(2) << c.eval.success_rate
        << "</text>\n";
      o.unsetf(std::ios::fixed);
      o << std::setprecision(6);
    }
    o << "<text x=\"" << cx << "\" y=\"" << y0 + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"11\">"
      << c.mode << "</text>\n";
  }
  for (int h = 0; h < 2; ++h) {
    o << "<text x=\"" << x0 + group_w * (h + 0.5) << "\" y=\"" << y0 + 34
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" font-weight=\"bold\">"
      << (h == 0 ? "dense" : "diffusion") << "</text>\n";
  }
  o << "<text x=\"" << x0 << "\" y=\"" << H - 12
    << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#666\">dataset "
    << core::hash_hex(dataset_hash) << ", seed " << seed << ", " << steps
    << " steps x batch " << batch << ", " << trials << " trials</text>\n";
  o << "</svg>\n";
  return o.str();
}

void write_ablation_files(const AblationReport& r, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir);
  write_text_file((fs::path(dir) / "ablation.csv").string(), r.to_csv());
  write_text_file((fs::path(dir) / "ablation.json").string(),
                  r.to_json().dump(2) + "\n");
  write_text_file((fs::path(dir) / "ablation.svg").string(), r.to_svg());
}

AblationReport run_ablation(const TrainConfig& base) {
  base.validate();
  const LoadedDataset ds = load_dataset(base.dataset, base.model);
  AblationReport rep;
  rep.task = base.task;
  rep.dataset_hash = ds.hash;
  rep.seed = base.seed;
  rep.steps = base.steps;
  rep.batch = base.batch;
  rep.trials = base.eval_trials;
  for (const std::string head : {"dense", "diffusion"}) {
    for (const std::string mode : {"frozen", "lora", "full"}) {
      TrainConfig c = base;
      c.model.head = head;
      c.model.encoder_mode = mode;
      c.out_dir =
          (fs::path(base.out_dir) / ("cell_" + head + "_" + mode)).string();
      AblationCell cell;
      cell.head = head;
      cell.mode = mode;
      try {
        const TrainResult tr = train_loaded(c, ds);
        cell.final_loss = tr.final_loss;
        cell.checkpoint_hash = tr.checkpoint_hash;
        cell.eval = evaluate(tr.checkpoint, sim::TaskSpec::for_task(c.task),
                             base.eval_trials, base.seed);
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      rep.cells.push_back(std::move(cell));
    }
  }
  write_ablation_files(rep, base.out_dir);
  return rep;
}

// ----------------------------------------------------------------- pretraining

void PretrainConfig::validate() const {
  if (out.empty()) throw ConfigError("pretrain.out must be set");
  if (scenes <= 0 || steps <= 0 || batch <= 0)
    throw ConfigError("pretrain sizes must be positive");
  if (lr <= 0) throw ConfigError("pretrain.lr must be positive");
  model.validate();
}

PretrainConfig PretrainConfig::from_config(const Config& c) {
  PretrainConfig p;
  const std::string s = "pretrain";
  p.out = c.str_or(s, "out", p.out);
  p.seed = uint64_t(c.integer_or(s, "seed", int64_t(p.seed)));
  p.scenes = int(c.integer_or(s, "scenes", p.scenes));
  p.steps = int(c.integer_or(s, "steps", p.steps));
  p.batch = int(c.integer_or(s, "batch", p.batch));
  p.lr = c.num_or(s, "lr", p.lr);
  p.model = ModelConfig::from_config(c);
  return p;
}

void PretrainConfig::to_config(Config& c) const {
  const std::string s = "pretrain";
  c.set(s, "out", out);
  c.set_int(s, "seed", int64_t(seed));
  c.set_int(s, "scenes", scenes);
  c.set_int(s, "steps", steps);
  c.set_int(s, "batch", batch);
  c.set_num(s, "lr", lr);
  model.to_config(c);
}

namespace {

// Camera whose +z axis points from `pos` toward `focus` (x right, y down
// up to roll, which the pretext statistics do not care about).
sim::Pose look_at(const sim::Vec3& pos, const sim::Vec3& focus) {
  const sim::Vec3 d = (focus - pos).normalized();
  const Scalar yaw = std::atan2(d.y, d.x);
  const Scalar pitch = std::atan2(-d.z, d.horiz_norm());
  const Scalar half_pi = std::acos(Scalar(0));
  return {pos, (sim::Quat::yaw(yaw) * sim::Quat::pitch(pitch) *
                sim::Quat::pitch(half_pi))
                   .normalized()};
}

struct PretrainSample {
  Tensor pixels;  // [P, patch inputs]
  Tensor target;  // [P, 4]: mean rgb + scaled mean depth
};

PretrainSample make_scene_sample(Rng& rng, const enc::PatchEncSpec& spec) {
  std::vector<sim::Primitive> prims;
  sim::Primitive floor;
  floor.shape = sim::Shape::box;
  floor.pose = {{0.8, 0, -0.05}, sim::Quat::identity()};
  floor.half = {3.0, 3.0, 0.05};
  floor.color = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                 rng.uniform(0.2, 0.8)};
  prims.push_back(floor);
  const int n = 3 + int(rng.uniform_int(6));
  for (int i = 0; i < n; ++i) {
    sim::Primitive p;
    const uint64_t kind = rng.uniform_int(3);
    p.shape = kind == 0 ? sim::Shape::box
                        : (kind == 1 ? sim::Shape::sphere : sim::Shape::cylinder);
    p.pose = {{rng.uniform(0.2, 1.6), rng.uniform(-0.8, 0.8),
               rng.uniform(0.1, 0.9)},
              sim::Quat::yaw(rng.uniform(-3.1, 3.1))};
    const Scalar s = rng.uniform(0.05, 0.25);
    p.half = {s, rng.uniform(0.05, 0.25), rng.uniform(0.05, 0.25)};
    p.color = {rng.uniform(), rng.uniform(), rng.uniform()};
    prims.push_back(p);
  }
  const Scalar ambient = rng.uniform(0.4, 1.4);
  const std::array<Scalar, 3> bg = {rng.uniform(), rng.uniform(),
                                    rng.uniform()};
  const sim::Vec3 focus{0.8 + rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                        0.4 + rng.uniform(-0.2, 0.2)};
  const Scalar radius = rng.uniform(1.0, 2.0);
  const Scalar azim = rng.uniform(-3.1, 3.1);
  const Scalar elev = rng.uniform(0.15, 0.9);
  const sim::Vec3 pos = focus + sim::Vec3{radius * std::cos(azim) * std::cos(elev),
                                          radius * std::sin(azim) * std::cos(elev),
                                          radius * std::sin(elev)};
  sim::Camera cam;
  cam.pose = look_at(pos, focus);
  const sim::RenderResult r = sim::render(prims, ambient, bg, cam);

  PretrainSample out;
  out.pixels = enc::patch_pixels(r.rgb, spec);
  const int pw = spec.image_w / spec.patch;
  out.target = Tensor(spec.patches_per_view(), 4);
  for (int64_t p = 0; p < out.target.rows(); ++p) {
    const int py = int(p) / pw, px = int(p) % pw;
    Scalar acc[4] = {0, 0, 0, 0};
    for (int dy = 0; dy < spec.patch; ++dy)
      for (int dx = 0; dx < spec.patch; ++dx) {
        const int y = py * spec.patch + dy, x = px * spec.patch + dx;
        for (int c = 0; c < 3; ++c)
          acc[c] += Scalar(r.rgb.rgb[size_t((y * r.rgb.w + x) * 3 + c)]) / 255.0;
        acc[3] += Scalar(r.depth[size_t(y * r.rgb.w + x)]) / 3.0;
      }
    const Scalar inv = 1.0 / Scalar(spec.patch * spec.patch);
    for (int c = 0; c < 4; ++c) out.target.at(p, c) = acc[c] * inv;
  }
  return out;
}

}  // namespace

PretrainResult pretrain_backbone(const PretrainConfig& cfg) {
  cfg.validate();
  const enc::PatchEncSpec spec = cfg.model.patch_spec();
  Rng rng(cfg.seed);
  std::vector<PretrainSample> samples;
  samples.reserve(size_t(cfg.scenes));
  for (int i = 0; i < cfg.scenes; ++i)
    samples.push_back(make_scene_sample(rng, spec));

  ParamStore ps;
  enc::init_patch_backbone(ps, kPatchPrefix, spec, rng, /*with_lora=*/true);
  enc::init_patch_pretext(ps, kPatchPrefix, spec, rng);
  enc::apply_encoder_mode(ps, kPatchPrefix, enc::EncoderMode::full);

  core::AdamConfig adam;
  adam.lr = cfg.lr;
  PretrainResult res;
  for (int step = 0; step < cfg.steps; ++step) {
    std::map<std::string, Tensor> grads;
    Scalar mean_loss = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const PretrainSample& s =
          samples[size_t(rng.uniform_int(uint64_t(samples.size())))];
      Graph g(true);
      const int feats =
          enc::patch_backbone(g, ps, s.pixels, enc::EncoderMode::full,
                              kPatchPrefix, spec);
      const int pred = enc::patch_pretext(g, ps, feats, kPatchPrefix);
      const int loss = g.mse(pred, s.target);
      const Scalar lv = g.val(loss).v[0];
      if (!std::isfinite(lv))
        throw TrainingError("pretraining diverged at step " +
                            std::to_string(step));
      mean_loss += lv / Scalar(cfg.batch);
      g.backward(loss);
      g.export_param_grads(grads, 1.0 / Scalar(cfg.batch));
    }
    core::adam_step(ps, grads, adam, step + 1,
                    core::cosine_decay(step, cfg.steps));
    if (step == 0) res.first_loss = mean_loss;
    res.final_loss = mean_loss;
  }

  Config ini;
  cfg.to_config(ini);
  Json meta;
  meta["format"] = "pretrain";
  meta["seed"] = cfg.seed;
  meta["scenes"] = cfg.scenes;
  meta["steps"] = cfg.steps;
  meta["final_loss"] = res.final_loss;
  meta["config"] = ini.serialize();
  if (cfg.out.find('/') != std::string::npos) {
    std::error_code ec;
    fs::create_directories(fs::path(cfg.out).parent_path(), ec);
  }
  core::save_checkpoint(cfg.out, ps, meta);
  res.checkpoint = cfg.out;
  return res;
}

}  // namespace densebody::pipe
