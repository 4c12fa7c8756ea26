#include "fmdp/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fmdp {

namespace {

void check_indices(const InstanceSpec& spec, const State& s, int action) {
  if (s.size() != spec.num_vars)
    throw std::out_of_range("state length does not match num_vars");
  if (action < 0 || action >= spec.num_actions())
    throw std::out_of_range("action index out of range");
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

int live_neighbors(const InstanceSpec& spec, const State& s, int i) {
  int n = spec.num_vars;
  int k = 0;
  for (int j = 0; j < n; ++j)
    if (spec.adjacency[i * n + j] && s.bits[j]) ++k;
  return k;
}

// Navigation: destination cell of a clamped move. Action order: up, down,
// left, right. Returns -1 for absorbing source states (goal or drowned).
int nav_destination(const InstanceSpec& spec, const State& s, int action) {
  if (spec.is_drowned_state(s) || spec.is_goal_state(s)) return -1;
  int loc = -1;
  for (int i = 0; i < spec.num_vars; ++i)
    if (s.bits[i]) {
      loc = i;
      break;
    }
  int rows = spec.grid_rows, cols = spec.grid_cols;
  int r = loc / cols, c = loc % cols;
  switch (action) {
    case 0: r = std::max(0, r - 1); break;
    case 1: r = std::min(rows - 1, r + 1); break;
    case 2: c = std::max(0, c - 1); break;
    case 3: c = std::min(cols - 1, c + 1); break;
    default: throw std::out_of_range("navigation action out of range");
  }
  return r * cols + c;
}

}  // namespace

double next_var_prob(const InstanceSpec& spec, const State& s, int action, int var) {
  check_indices(spec, s, action);
  if (var < 0 || var >= spec.num_vars) throw std::out_of_range("variable index out of range");
  int n = spec.num_vars;
  switch (spec.domain_kind) {
    case DomainKind::SysAdmin: {
      if (action == var) return 1.0;  // reboot(var)
      if (s.bits[var]) {
        int deg = spec.degree(var);
        int on = live_neighbors(spec, s, var);
        double ratio = static_cast<double>(1 + on) / static_cast<double>(1 + deg);
        return clamp01(spec.constant("a") + spec.constant("b") * ratio);
      }
      return spec.constant("d");
    }
    case DomainKind::GameOfLife: {
      if (action == var) return 1.0;  // set-alive(var)
      int k = live_neighbors(spec, s, var);
      int conway = s.bits[var] ? (k == 2 || k == 3 ? 1 : 0) : (k == 3 ? 1 : 0);
      double p = spec.constant("p_noise");
      return conway ? 1.0 - p : p;
    }
    case DomainKind::Navigation: {
      int dest = nav_destination(spec, s, action);
      if (dest < 0) return s.bits[var] ? 1.0 : 0.0;  // absorbing
      if (var == dest) return 1.0 - spec.drown_prob(dest);
      return 0.0;
    }
  }
  (void)n;
  return 0.0;
}

double transition_prob(const InstanceSpec& spec, const State& s, int action, const State& s2) {
  check_indices(spec, s, action);
  if (s2.size() != spec.num_vars) throw std::out_of_range("successor length mismatch");
  if (spec.domain_kind == DomainKind::Navigation) {
    int dest = nav_destination(spec, s, action);
    if (dest < 0) return s2 == s ? 1.0 : 0.0;
    double drown = spec.drown_prob(dest);
    if (spec.is_drowned_state(s2)) return drown;
    if (s2 == State::one_hot(spec.num_vars, dest)) return 1.0 - drown;
    return 0.0;
  }
  double p = 1.0;
  for (int i = 0; i < spec.num_vars; ++i) {
    double pi = next_var_prob(spec, s, action, i);
    p *= s2.bits[i] ? pi : 1.0 - pi;
    if (p == 0.0) return 0.0;
  }
  return p;
}

ActionPosterior action_posterior(const InstanceSpec& spec, const State& s, const State& s2) {
  ActionPosterior post;
  post.probs.resize(spec.num_actions());
  double total = 0.0;
  for (int a = 0; a < spec.num_actions(); ++a) {
    post.probs[a] = transition_prob(spec, s, a, s2);
    total += post.probs[a];
  }
  if (total <= 0.0) throw UnreachableSuccessorError();
  for (auto& p : post.probs) p /= total;
  return post;
}

double reward(const InstanceSpec& spec, const State& s) {
  switch (spec.domain_kind) {
    case DomainKind::SysAdmin:
    case DomainKind::GameOfLife:
      return static_cast<double>(s.popcount());
    case DomainKind::Navigation:
      return spec.is_goal_state(s) ? 0.0 : -1.0;
  }
  return 0.0;
}

SuccessorSampler::SuccessorSampler(const InstanceSpec& spec, const State& s, int action)
    : spec_(&spec) {
  check_indices(spec, s, action);
  if (spec.domain_kind == DomainKind::Navigation) {
    nav_dest_ = nav_destination(spec, s, action);
    if (nav_dest_ < 0) {
      nav_absorbing_ = true;
      nav_source_ = s;
    } else {
      nav_drown_ = spec.drown_prob(nav_dest_);
    }
    return;
  }
  var_probs_.resize(spec.num_vars);
  for (int i = 0; i < spec.num_vars; ++i) var_probs_[i] = next_var_prob(spec, s, action, i);
}

State SuccessorSampler::sample(RngStream& rng) const {
  const InstanceSpec& spec = *spec_;
  if (spec.domain_kind == DomainKind::Navigation) {
    if (nav_absorbing_) return nav_source_;
    if (rng.next_double() < nav_drown_) return State::zeros(spec.num_vars);
    return State::one_hot(spec.num_vars, nav_dest_);
  }
  State s2 = State::zeros(spec.num_vars);
  for (int i = 0; i < spec.num_vars; ++i) s2.bits[i] = rng.bernoulli(var_probs_[i]) ? 1 : 0;
  return s2;
}

StepResult step(const InstanceSpec& spec, const State& s, int action, RngStream& rng) {
  SuccessorSampler sampler(spec, s, action);
  StepResult res;
  res.reward = reward(spec, s);
  res.next = sampler.sample(rng);
  if (spec.domain_kind == DomainKind::Navigation)
    res.terminal = spec.is_drowned_state(res.next) || spec.is_goal_state(res.next);
  return res;
}

std::vector<std::pair<State, double>> enumerate_successors(const InstanceSpec& spec,
                                                           const State& s, int action) {
  check_indices(spec, s, action);
  if (spec.num_vars > 20)
    throw std::invalid_argument("enumerate_successors: instance too large (num_vars > 20)");

  std::vector<std::pair<State, double>> out;
  if (spec.domain_kind == DomainKind::Navigation) {
    int dest = nav_destination(spec, s, action);
    if (dest < 0) {
      out.emplace_back(s, 1.0);
      return out;
    }
    double drown = spec.drown_prob(dest);
    if (1.0 - drown > 0.0) out.emplace_back(State::one_hot(spec.num_vars, dest), 1.0 - drown);
    if (drown > 0.0) out.emplace_back(State::zeros(spec.num_vars), drown);
    return out;
  }

  int n = spec.num_vars;
  std::vector<double> probs(n);
  for (int i = 0; i < n; ++i) probs[i] = next_var_prob(spec, s, action, i);

  State cur = State::zeros(n);
  // Depth-first product expansion, 0-branch before 1-branch, pruning zeros.
  auto expand = [&](auto&& self, int i, double p) -> void {
    if (i == n) {
      out.emplace_back(cur, p);
      return;
    }
    if (1.0 - probs[i] > 0.0) {
      cur.bits[i] = 0;
      self(self, i + 1, p * (1.0 - probs[i]));
    }
    if (probs[i] > 0.0) {
      cur.bits[i] = 1;
      self(self, i + 1, p * probs[i]);
      cur.bits[i] = 0;
    }
  };
  expand(expand, 0, 1.0);
  return out;
}

Episode sample_episode(const InstanceSpec& spec,
                       const std::function<int(const State&)>& pick_action, RngStream& rng) {
  Episode ep;
  State s = spec.initial_state;
  ep.states.push_back(s);
  for (int t = 0; t < spec.horizon; ++t) {
    int a = pick_action(s);
    StepResult st = step(spec, s, a, rng);
    ep.actions.push_back(a);
    ep.rewards.push_back(st.reward);
    ep.states.push_back(st.next);
    if (st.terminal) {
      ep.terminated_early = t + 1 < spec.horizon;
      break;
    }
    s = st.next;
  }
  return ep;
}

double drowned_tail_value(double gamma, int remaining_steps) {
  if (remaining_steps <= 0) return 0.0;
  if (gamma == 1.0) return -static_cast<double>(remaining_steps);
  return -(1.0 - std::pow(gamma, remaining_steps)) / (1.0 - gamma);
}

}  // namespace fmdp
