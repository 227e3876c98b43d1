#pragma once

#include <string>
#include <vector>

#include "densebody/core/graph.hpp"
#include "densebody/core/params.hpp"
#include "densebody/core/rng.hpp"
#include "densebody/core/tensor.hpp"
#include "densebody/fuse/qfusion.hpp"
#include "densebody/head/densehead.hpp"
#include "densebody/morph/morphology.hpp"

namespace densebody::head {

struct DiffHeadSpec {
  int horizon = 16;
  int dim = 128;
  int hidden = 256;  // same transformer capacity as the dense decoder
  int layers = 4;
  int heads = 4;
  int steps = 50;
  int exec_steps = 8;
};

// Cosine noise schedule over `steps` denoising steps. beta rises within
// (0, 1); the cumulative signal fraction alpha_bar decreases strictly and
// starts above 0.99 (too few steps cannot satisfy that and are rejected).
struct DiffusionSchedule {
  std::vector<Scalar> beta;
  std::vector<Scalar> alpha_bar;
  int steps() const { return int(beta.size()); }
};

DiffusionSchedule make_schedule(int steps);

// Forward process: sqrt(alpha_bar_t) * clean + sqrt(1 - alpha_bar_t) * noise.
// RangeError unless 0 <= t < steps; InputError on shape mismatch.
Tensor diffuse(const DiffusionSchedule& sch, const Tensor& clean, int t,
               const Tensor& noise);

void init_diff_head(ParamStore& ps, const std::string& prefix,
                    const DiffHeadSpec& spec, Rng& rng);

// Memory projection shared by every denoising step (same layout as the
// dense head's: [F_V || F_S] with invalid rows masked by key bias).
DecoderMemory project_diff_memory(Graph& g, ParamStore& ps,
                                  const fuse::FusedFeatureSet& fv, int fs,
                                  const std::string& prefix,
                                  const DiffHeadSpec& spec);

// Predicts the noise component of x_t (graph node, [T, 25]) at step t.
int predict_noise(Graph& g, ParamStore& ps, const DecoderMemory& mem, int x_t,
                  int t, const std::string& prefix, const DiffHeadSpec& spec);

// Ancestral denoising from pure noise over all schedule steps; deterministic
// given the seed. decoder_calls == spec.steps. CheckpointError if the head's
// parameters are absent.
ActionSequence denoise_sample(Graph& g, ParamStore& ps,
                              const fuse::FusedFeatureSet& fv, int fs,
                              uint64_t seed, const std::string& prefix,
                              const DiffHeadSpec& spec);

// Noise-prediction training loss for one sample: draws a uniform step and
// unit-variance noise from `rng`, diffuses the (quaternion-canonicalized)
// truth, and returns the MSE between predicted and true noise.
// TrainingError on non-finite targets.
int diffusion_loss(Graph& g, ParamStore& ps, const fuse::FusedFeatureSet& fv,
                   int fs, const Tensor& truth, Rng& rng,
                   const std::string& prefix, const DiffHeadSpec& spec);

}  // namespace densebody::head
