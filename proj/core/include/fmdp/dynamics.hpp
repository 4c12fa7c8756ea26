#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "fmdp/instance.hpp"
#include "fmdp/rng.hpp"

namespace fmdp {

// Model-derived distribution over actions: p(a) = Pr(s,a,s') / sum_a' Pr(s,a',s').
struct ActionPosterior {
  std::vector<double> probs;
};

struct StepResult {
  State next;
  double reward = 0.0;
  bool terminal = false;
};

// One sampled trajectory; states has one more entry than actions/rewards.
struct Episode {
  std::vector<State> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  bool terminated_early = false;
};

// P(x_i' = 1 | s, a) under the exact factored model. For Navigation the
// per-variable probabilities are coupled through the one-hot location
// semantics; use transition_prob / enumerate_successors for joint queries.
double next_var_prob(const InstanceSpec& spec, const State& s, int action, int var);

// Exact joint probability of the specific successor.
double transition_prob(const InstanceSpec& spec, const State& s, int action, const State& s2);

// Throws UnreachableSuccessorError when no action can produce s2 from s.
ActionPosterior action_posterior(const InstanceSpec& spec, const State& s, const State& s2);

// SysAdmin/GameOfLife: popcount. Navigation: 0 at the goal, -1 elsewhere
// (the drowned all-zeros state included).
double reward(const InstanceSpec& spec, const State& s);

// Samples a successor. The returned reward is the reward of the state acted
// from, matching the per-timestep reward convention of the domains; terminal
// marks Navigation goal/drown absorption. Deterministic given the stream.
StepResult step(const InstanceSpec& spec, const State& s, int action, RngStream& rng);

// All successors with positive probability; probabilities sum to 1 within
// 1e-12. Guarded to num_vars <= 20.
std::vector<std::pair<State, double>> enumerate_successors(const InstanceSpec& spec,
                                                           const State& s, int action);

// Rolls one episode from the initial state until the horizon or a terminal,
// with actions chosen by the callback.
Episode sample_episode(const InstanceSpec& spec,
                       const std::function<int(const State&)>& pick_action, RngStream& rng);

// Per-variable Bernoulli parameters cached for repeated sampling of one
// (s, a) pair. Navigation keeps (dest, drown) instead.
class SuccessorSampler {
 public:
  SuccessorSampler(const InstanceSpec& spec, const State& s, int action);
  State sample(RngStream& rng) const;

 private:
  const InstanceSpec* spec_;
  std::vector<double> var_probs_;
  int nav_dest_ = -1;
  double nav_drown_ = 0.0;
  bool nav_absorbing_ = false;
  State nav_source_;
};

// Exact value of remaining-step rewards after drowning: the drowned state
// yields -1 per step until the horizon.
double drowned_tail_value(double gamma, int remaining_steps);

}  // namespace fmdp
