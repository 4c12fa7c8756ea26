#include "fmdp/dynamics.hpp"

#include <cmath>
#include <map>

#include "doctest.h"
#include "testutil.hpp"

using namespace fmdp;
using fmdp::test::sysadmin_pair_fixture;

TEST_CASE("sysadmin on-probability follows the ratio rule") {
  InstanceSpec spec = sysadmin_pair_fixture();
  State both_on{{1, 1}};
  int noop = 2;
  // a + b*(1+1)/(1+1) with defaults (0.45, 0.5)
  CHECK(next_var_prob(spec, both_on, noop, 0) == doctest::Approx(0.95).epsilon(1e-12));
  // reboot forces the variable on
  CHECK(next_var_prob(spec, State{{0, 0}}, 0, 0) == 1.0);
  CHECK(next_var_prob(spec, both_on, 0, 0) == 1.0);
  // off and not rebooted: d
  CHECK(next_var_prob(spec, State{{0, 0}}, 2, 0) == doctest::Approx(0.1));
}

TEST_CASE("game of life follows conway plus noise") {
  // 2x3 Moore grid, noiseless
  InstanceSpec spec = generate_instance(DomainKind::GameOfLife, 6, 1);
  spec.constants["p_noise"] = 0.0;
  validate_instance(spec);
  int noop = spec.num_actions() - 1;
  // cell 0 dead with 3 live neighbors (1, 3, 4 in the 2x3 grid) births
  State s{{0, 1, 0, 1, 1, 0}};
  CHECK(next_var_prob(spec, s, noop, 0) == 1.0);
  // set-alive forces the cell
  CHECK(next_var_prob(spec, State::zeros(6), 0, 0) == 1.0);
  // noise flips the deterministic outcome
  spec.constants["p_noise"] = 0.25;
  validate_instance(spec);
  CHECK(next_var_prob(spec, s, noop, 0) == doctest::Approx(0.75));
}

TEST_CASE("transition probabilities multiply per-variable terms") {
  InstanceSpec spec = sysadmin_pair_fixture();
  State off{{0, 0}};
  State want{{1, 0}};
  CHECK(transition_prob(spec, off, 0, want) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(transition_prob(spec, off, 1, want) == 0.0);
  CHECK(transition_prob(spec, off, 2, want) == doctest::Approx(0.09).epsilon(1e-12));
}

TEST_CASE("action posterior normalizes the worked example exactly") {
  InstanceSpec spec = sysadmin_pair_fixture();
  ActionPosterior post = action_posterior(spec, State{{0, 0}}, State{{1, 0}});
  REQUIRE(post.probs.size() == 3);
  CHECK(post.probs[0] == doctest::Approx(10.0 / 11.0).epsilon(1e-12));
  CHECK(post.probs[1] == 0.0);
  CHECK(post.probs[2] == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("deterministic transitions give one-hot posteriors") {
  InstanceSpec spec = fmdp::test::deterministic_sysadmin_fixture();
  State off = State::zeros(4);
  ActionPosterior post = action_posterior(spec, off, State::one_hot(4, 2));
  for (int a = 0; a < 5; ++a) CHECK(post.probs[a] == (a == 2 ? 1.0 : 0.0));
}

TEST_CASE("unreachable successors are an error") {
  InstanceSpec spec = fmdp::test::deterministic_sysadmin_fixture();
  State two_on{{1, 1, 0, 0}};
  CHECK_THROWS_AS(action_posterior(spec, State::zeros(4), two_on), UnreachableSuccessorError);
}

TEST_CASE("reward counts set bits and navigates to the goal") {
  InstanceSpec sys = sysadmin_pair_fixture();
  CHECK(reward(sys, State{{1, 0}}) == 1.0);
  InstanceSpec gol = generate_instance(DomainKind::GameOfLife, 6, 1);
  CHECK(reward(gol, State::zeros(6)) == 0.0);
  InstanceSpec nav = fmdp::test::tiny_navigation_fixture();
  CHECK(reward(nav, State{{0, 1}}) == 0.0);   // at goal
  CHECK(reward(nav, State{{1, 0}}) == -1.0);  // elsewhere
  CHECK(reward(nav, State::zeros(2)) == -1.0);  // drowned
}

TEST_CASE("enumerate_successors expands the worked product table") {
  InstanceSpec spec = sysadmin_pair_fixture();
  auto succ = enumerate_successors(spec, State{{0, 0}}, 2);
  std::map<std::vector<std::uint8_t>, double> table;
  for (const auto& [s, p] : succ) table[s.bits] = p;
  CHECK(table[{0, 0}] == doctest::Approx(0.81).epsilon(1e-12));
  CHECK(table[{1, 0}] == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(table[{0, 1}] == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(table[{1, 1}] == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("enumerate_successors is a distribution on random inputs") {
  RngStream rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    DomainKind kind = static_cast<DomainKind>(rng.next_below(3));
    int n = kind == DomainKind::SysAdmin ? 2 + static_cast<int>(rng.next_below(5)) : 6;
    InstanceSpec spec = generate_instance(kind, n, rng.next_u64());
    State s = State::zeros(n);
    if (kind == DomainKind::Navigation) {
      s.bits[rng.next_below(n)] = 1;
    } else {
      for (int i = 0; i < n; ++i) s.bits[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    int a = static_cast<int>(rng.next_below(spec.num_actions()));
    auto succ = enumerate_successors(spec, s, a);
    double total = 0.0;
    for (const auto& [s2, p] : succ) {
      CHECK(p > 0.0);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("deterministic factors give a single successor") {
  InstanceSpec spec = fmdp::test::deterministic_sysadmin_fixture();
  auto succ = enumerate_successors(spec, State{{1, 1, 1, 1}}, 0);
  REQUIRE(succ.size() == 1);
  CHECK(succ[0].first == State::one_hot(4, 0));
  CHECK(succ[0].second == 1.0);
}

TEST_CASE("step is deterministic under a fixed stream") {
  InstanceSpec spec = generate_instance(DomainKind::SysAdmin, 5, 3);
  RngStream r1(123), r2(123);
  State s = spec.initial_state;
  for (int i = 0; i < 50; ++i) {
    StepResult a = step(spec, s, i % spec.num_actions(), r1);
    StepResult b = step(spec, s, i % spec.num_actions(), r2);
    CHECK(a.next == b.next);
    CHECK(a.reward == b.reward);
    s = a.next;
  }
}

TEST_CASE("sampled successor frequencies match the exact distribution") {
  InstanceSpec spec = generate_instance(DomainKind::SysAdmin, 3, 7);
  State s{{1, 0, 1}};
  int action = spec.num_actions() - 1;
  auto exact = enumerate_successors(spec, s, action);
  std::map<std::vector<std::uint8_t>, double> expect;
  for (const auto& [s2, p] : exact) expect[s2.bits] = p;

  RngStream rng(2024);
  const int draws = 100000;
  std::map<std::vector<std::uint8_t>, int> counts;
  SuccessorSampler sampler(spec, s, action);
  for (int i = 0; i < draws; ++i) ++counts[sampler.sample(rng).bits];

  double tv = 0.0;
  for (const auto& [bits, p] : expect) {
    double freq = counts.count(bits) ? static_cast<double>(counts.at(bits)) / draws : 0.0;
    tv += std::abs(freq - p);
  }
  for (const auto& [bits, c] : counts)
    if (!expect.count(bits)) tv += static_cast<double>(c) / draws;
  CHECK(tv / 2.0 <= 0.01);
}

TEST_CASE("navigation moves clamp at borders and stop at goal or water") {
  // 2x2 grid, goal top-right (index 1), start bottom-left (index 2),
  // cell 3 always drowns.
  std::string text =
      "domain navigation vars 4 horizon 10 discount 1.000000\n"
      "edges\n"
      "0 1\n"
      "0 2\n"
      "1 3\n"
      "2 3\n"
      "nodefeat 1 0 1.000000\n"
      "nodefeat 3 1 1.000000\n"
      "init 0 0 1 0\n";
  InstanceSpec spec = parse_instance(text, "nav2x2");
  REQUIRE(spec.grid_rows == 2);
  REQUIRE(spec.grid_cols == 2);

  RngStream rng(1);
  // left from the left column stays put
  StepResult stay = step(spec, State::one_hot(4, 2), 2, rng);
  CHECK(stay.next == State::one_hot(4, 2));
  CHECK_FALSE(stay.terminal);
  CHECK(stay.reward == -1.0);
  // up reaches the top-left cell
  StepResult up = step(spec, State::one_hot(4, 2), 0, rng);
  CHECK(up.next == State::one_hot(4, 0));
  // right from the start walks into the water: drowned and terminal
  StepResult drown = step(spec, State::one_hot(4, 2), 3, rng);
  CHECK(drown.next == State::zeros(4));
  CHECK(drown.terminal);
  // reaching the goal is terminal
  StepResult goal = step(spec, State::one_hot(4, 0), 3, rng);
  CHECK(goal.next == State::one_hot(4, 1));
  CHECK(goal.terminal);
  // absorbing states persist
  StepResult at_goal = step(spec, State::one_hot(4, 1), 1, rng);
  CHECK(at_goal.next == State::one_hot(4, 1));
  CHECK(at_goal.terminal);

  // transition_prob agrees with the one-hot semantics
  CHECK(transition_prob(spec, State::one_hot(4, 2), 3, State::zeros(4)) == 1.0);
  CHECK(transition_prob(spec, State::one_hot(4, 2), 0, State::one_hot(4, 0)) == 1.0);
  CHECK(transition_prob(spec, State::one_hot(4, 2), 0, State::one_hot(4, 3)) == 0.0);
}

TEST_CASE("drowned tail value sums the remaining penalties") {
  CHECK(drowned_tail_value(1.0, 3) == -3.0);
  CHECK(drowned_tail_value(0.5, 2) == doctest::Approx(-1.5));
  CHECK(drowned_tail_value(0.99, 0) == 0.0);
}

TEST_CASE("sampled episodes keep their length bookkeeping invariants") {
  RngStream rng(17);
  InstanceSpec sys = generate_instance(DomainKind::SysAdmin, 4, 2);
  Episode full = sample_episode(sys, [](const State&) { return 0; }, rng);
  CHECK(full.states.size() == full.actions.size() + 1);
  CHECK(full.states.size() == full.rewards.size() + 1);
  CHECK(static_cast<int>(full.actions.size()) == sys.horizon);  // no terminals
  CHECK_FALSE(full.terminated_early);

  InstanceSpec nav = fmdp::test::tiny_navigation_fixture();
  Episode quick = sample_episode(nav, [](const State&) { return 3; }, rng);  // straight right
  CHECK(quick.actions.size() == 1);
  CHECK(quick.states.size() == 2);
  CHECK(quick.terminated_early);
  CHECK(quick.rewards[0] == -1.0);
  CHECK(static_cast<int>(quick.states.size()) <= nav.horizon + 1);
}
