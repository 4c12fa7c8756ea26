#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmdp/evaluation.hpp"
#include "fmdp/networks.hpp"

namespace fmdp {

// All knobs of the learning and transfer phases. Parsed from key=value lines
// (same style as the instance format); every field has a CLI flag override.
struct TrainConfig {
  int workers_per_instance = 2;    // 1 selects the deterministic sequential mode
  std::uint64_t total_env_steps = 200000;
  int rollout_len = 10;
  double lambda = 0.1;             // instance-classifier weight (inside grad reversal)
  double lambda_tr = 1.0;          // transition-loss weight
  double entropy_beta = 0.01;
  double learning_rate = 5e-5;
  double rms_decay = 0.99;
  double rms_epsilon = 1e-6;
  double clip_norm = 40.0;
  std::optional<double> gamma;     // unset: use each instance's discount
  bool use_sad_tr = true;          // transition module + its loss term
  bool use_ic = true;              // adversarial instance classifier
  bool tr_independent_pairs = false;
  bool share_value_encoder = false;
  std::uint64_t seed = 1;
  std::uint64_t eval_interval = 50000;
  int eval_episodes = 100;
  int decoder_pairs = 50000;       // model-generated pairs for transfer
  int decoder_batch = 32;
  double decoder_learning_rate = 2e-3;  // supervised fit of the fresh decoder
  int embed_dim = 20;
  int hidden_dim = 64;

  static TrainConfig from_text(const std::string& text);
  std::string to_text() const;  // canonical key=value form
  std::string hash() const;     // FNV-1a of to_text(), hex
  double effective_gamma(const InstanceSpec& spec) const;
};

// Sets {use_sad_tr, use_ic} for the named variant: gcn = both off,
// gcn-sad = transition on, full = both on.
void apply_variant(TrainConfig& config, const std::string& variant);

// One on-policy slice of experience from a single instance.
struct RolloutSegment {
  int instance_index = 0;
  std::string instance_id;
  std::vector<State> states;    // one more than actions
  std::vector<int> actions;
  std::vector<double> rewards;  // reward of the state acted from
  bool terminal = false;
  // V(s_end) under the collecting snapshot when the episode continues;
  // the exact continuation value at a terminal (0, or the drowned tail).
  double bootstrap_value = 0.0;
  // Off-rollout successors for the transition loss (tr_independent_pairs);
  // empty means the consecutive rollout states are used.
  std::vector<State> tr_next_states;
};

// G_t by backward recursion: G_t = r_t + gamma * G_{t+1}, seeded with the
// bootstrap.
std::vector<double> n_step_returns(std::span<const double> rewards, double bootstrap,
                                   double gamma);

struct A3cLosses {
  Tensor policy_loss;  // -sum_t log pi(a_t|s_t) * (G_t - V(s_t)), advantage constant
  Tensor value_loss;   // sum_t (G_t - V(s_t))^2
  Tensor entropy;      // sum_t H(pi(.|s_t))
};

A3cLosses a3c_losses(Tape& tape, const ModelBundle& bundle, const GraphContext& graph,
                     const RolloutSegment& segment, double gamma);

struct LossStats {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double transition = 0.0;
  double classifier = 0.0;
  int tr_pairs_skipped = 0;
};

// The full objective over a batch of segments:
//   sum_i [ L_p + 0.5 L_v - beta H ] + lambda_tr sum_i L_tr + sum_i L_c
// where L_c flows through grad_reverse(lambda), so the classifier itself
// minimizes its cross-entropy while everything upstream receives -lambda
// times that gradient. Disabled terms contribute exactly zero and leave
// their networks untouched.
Tensor combined_loss(Tape& tape, const ModelBundle& bundle,
                     std::span<const GraphContext* const> graphs,
                     std::span<const RolloutSegment> segments, const TrainConfig& config,
                     LossStats* stats = nullptr);

struct TrainResult {
  ModelBundle bundle;
  std::vector<CurveRecord> curves;
  std::uint64_t env_steps = 0;
};

// Multi-task learning over N equi-sized sources: workers_per_instance
// workers per source snapshot the shared parameters, collect a rollout,
// compute the combined loss, and submit clipped gradients to a serialized
// RMSProp applier. Deterministic when workers_per_instance == 1 (workers run
// round-robin on the calling thread).
//
// Stream layout, all derived from config.seed: child(0) -> initialization,
// child(1).child(w) -> worker w environment, child(2).child(w) -> worker w
// action sampling, child(3)/child(4)/child(6) -> transfer, child(5).child(k)
// .child(i) -> k-th curve evaluation of instance i.
TrainResult learning_phase(const std::vector<InstanceSpec>& sources, const TrainConfig& config,
                           const std::string& run_id, const std::string& algorithm,
                           std::uint64_t env_step_offset = 0,
                           const ModelBundle* init_bundle = nullptr);

struct TransferStats {
  int pairs_trained = 0;
  int pairs_heldout = 0;
  int pairs_skipped = 0;
  int minibatches = 0;
  double holdout_ce = 0.0;
  double holdout_top1 = 0.0;
  double uniform_ce = 0.0;  // ln |A|
};

// Near-zero-shot step: adds fresh decoder/value components for the target,
// generates (s, s') pairs purely from the transition model, and trains only
// the target decoder against the exact action posterior; the encoder and
// transition module stay bitwise frozen. No environment reward is consumed.
TransferStats transfer_decoder_training(ModelBundle& bundle, const InstanceSpec& target,
                                        const TrainConfig& config);

// Plain A3C fine-tuning on the target after decoder training; the transition
// and classifier terms are dropped. env_step_offset shifts the recorded
// x-axis by the decoder sample count.
TrainResult full_transfer_finetune(const ModelBundle& bundle, const InstanceSpec& target,
                                   const TrainConfig& config, const std::string& run_id,
                                   const std::string& algorithm, std::uint64_t env_step_offset);

}  // namespace fmdp
