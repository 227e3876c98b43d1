#pragma once

#include <string>
#include <utility>
#include <vector>

#include "densebody/core/checkpoint.hpp"
#include "densebody/pipe/policy.hpp"
#include "densebody/sim/dataset.hpp"

namespace densebody::pipe {

using core::Json;

// Behavior-cloning run description; the [train] section plus the embedded
// [model] section round-trip through the ini format.
struct TrainConfig {
  std::string task = "pick_place";
  std::string dataset;            // demo directory holding meta.json
  std::string out_dir = "run";
  std::string init_from;          // optional backbone warm-start checkpoint
  uint64_t seed = 1;
  Scalar lr = 3e-4;
  int batch = 16;
  int steps = 20000;
  int eval_every = 0;             // 0 disables mid-train rollout evals
  int eval_trials = 20;
  bool deterministic = true;
  ModelConfig model;

  void validate() const;  // ConfigError
  static TrainConfig from_config(const Config& c);
  void to_config(Config& c) const;
};

// One demo timestep held in memory, pre-voxelized and with the action
// already normalized for the loss.
struct LoadedStep {
  std::array<sim::Image, enc::kNumViews> images;
  enc::Voxels vox;
  morph::RobotState state;
  std::vector<Scalar> action;  // normalized, kActionDims
};

struct LoadedDataset {
  std::string dir;
  Json meta;
  morph::NormStats stats;
  uint64_t hash = 0;  // directory content hash, shared across ablation cells
  std::vector<std::vector<LoadedStep>> episodes;
  int64_t total_steps() const;
};

// Reads and checks meta.json before any episode bytes are touched.
// CompatError on format-version, layout, or image-geometry mismatch;
// IoError/InputError on missing or malformed files.
Json validate_dataset_meta(const std::string& dir);
LoadedDataset load_dataset(const std::string& dir, const ModelConfig& mc);

// Horizon-window of normalized truth actions starting at step t; the final
// step is repeated past the episode end.
Tensor truth_window(const std::vector<LoadedStep>& ep, int t, int horizon);

// One planned row -> executable absolute action: denormalized, quaternions
// renormalized with w >= 0 and degenerate ones replaced by the robot's
// current rotation.
morph::ActionVector action_from_plan_row(const Tensor& plan, int row,
                                         const morph::NormStats& stats,
                                         const morph::RobotState& current);

struct TrainResult {
  std::string checkpoint;  // written checkpoint path
  std::string log;         // written train_log.json path
  std::vector<Scalar> losses;
  Scalar final_loss = 0;
  uint64_t checkpoint_hash = 0;
};

// End-to-end behavior cloning. Deterministic for a fixed config+seed.
// TrainingError with diagnostics on divergence; CompatError when the
// dataset does not match the config (task, layout, format).
TrainResult train(const TrainConfig& cfg);
TrainResult train_loaded(const TrainConfig& cfg, const LoadedDataset& ds);

struct EvalReport {
  std::string task;
  int trials = 0;
  Scalar success_rate = 0;
  std::vector<std::string> stage_names;  // e.g. pick / place
  std::vector<Scalar> stage_rates;
  Scalar mean_episode_len = 0;
  Scalar mean_decoder_calls = 0;  // per plan; 0 for the scripted expert
  uint64_t seed = 0;
  std::vector<uint64_t> trial_seeds;
  std::vector<uint8_t> successes;  // per trial
  Json to_json() const;
};

// Receding-horizon rollouts: plan every exec_steps sim steps, execute the
// window prefix. Deterministic given seeds.
EvalReport evaluate_policy(const ParamStore& ps, const ModelConfig& mc,
                           const morph::NormStats& stats,
                           const sim::TaskSpec& spec, int n_trials,
                           uint64_t seed);
// Loads the checkpoint first; CompatError when expect_horizon >= 0 and the
// checkpoint was trained with a different planning horizon.
EvalReport evaluate(const std::string& ckpt_path, const sim::TaskSpec& spec,
                    int n_trials, uint64_t seed, int expect_horizon = -1);
// The scripted controller through the identical harness (sanity floor).
EvalReport evaluate_expert(const sim::TaskSpec& spec, int n_trials,
                           uint64_t seed);

// Checkpoint metadata: the full train config plus normalization stats.
struct CheckpointInfo {
  TrainConfig cfg;
  morph::NormStats stats;
  Json meta;
};
CheckpointInfo read_checkpoint_info(const std::string& path);
CheckpointInfo load_policy_checkpoint(const std::string& path, ParamStore& ps);

// The five evaluation-shift axes; "none" is additionally accepted by
// variant_spec as the identity. SpecError on anything else.
const std::vector<std::string>& generalization_axes();
sim::TaskSpec variant_spec(const sim::TaskSpec& base, const std::string& axis);

struct GenReport {
  std::string task;
  int trials = 0;
  uint64_t seed = 0;
  EvalReport original;
  std::vector<std::pair<std::string, EvalReport>> variants;
  Json to_json() const;
};

// Pairs the unshifted evaluation with each requested axis, same seeds.
GenReport run_generalization(const std::string& ckpt_path,
                             const std::vector<std::string>& axes,
                             int n_trials, uint64_t seed);

struct AblationCell {
  std::string head;
  std::string mode;
  bool failed = false;
  std::string error;
  EvalReport eval;
  Scalar final_loss = 0;
  uint64_t checkpoint_hash = 0;
};

struct AblationReport {
  std::string task;
  uint64_t dataset_hash = 0;
  uint64_t seed = 0;
  int steps = 0, batch = 0, trials = 0;
  std::vector<AblationCell> cells;  // 2 heads x 3 modes, fixed order
  Json to_json() const;
  std::string to_csv() const;
  std::string to_svg() const;
};

// Trains and evaluates every head x encoder-mode cell with one dataset,
// seed, and budget. A diverging cell is marked failed and the run
// continues. Writes ablation.{csv,json,svg} into base.out_dir.
AblationReport run_ablation(const TrainConfig& base);
void write_ablation_files(const AblationReport& r, const std::string& dir);

// Self-supervised backbone pretraining on procedurally generated scenes:
// the pretext head regresses per-patch mean color and depth.
struct PretrainConfig {
  std::string out = "pretrain.dbck";
  uint64_t seed = 1;
  int scenes = 64;
  int steps = 300;
  int batch = 8;
  Scalar lr = 1e-3;
  ModelConfig model;

  void validate() const;
  static PretrainConfig from_config(const Config& c);
  void to_config(Config& c) const;
};

struct PretrainResult {
  std::string checkpoint;
  Scalar first_loss = 0;
  Scalar final_loss = 0;
};

PretrainResult pretrain_backbone(const PretrainConfig& cfg);

}  // namespace densebody::pipe
