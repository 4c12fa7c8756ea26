#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fmdp/errors.hpp"

namespace fmdp {

enum class DomainKind { SysAdmin, GameOfLife, Navigation };

const char* domain_kind_name(DomainKind kind);
DomainKind domain_kind_from_name(const std::string& name);

// Bit vector over an instance's state variables.
struct State {
  std::vector<std::uint8_t> bits;

  int size() const { return static_cast<int>(bits.size()); }
  int popcount() const;
  bool operator==(const State&) const = default;

  static State zeros(int n) { return State{std::vector<std::uint8_t>(n, 0)}; }
  static State one_hot(int n, int index);
};

// One ground factored-MDP problem. Immutable after construction/validation;
// safe to share across threads.
struct InstanceSpec {
  DomainKind domain_kind = DomainKind::SysAdmin;
  std::string instance_id;
  int num_vars = 0;
  std::vector<std::uint8_t> adjacency;  // num_vars x num_vars, row-major 0/1
  int num_node_features = 0;            // F_s: 2 for Navigation, 0 otherwise
  std::vector<double> node_features;    // num_vars x num_node_features, row-major
  std::vector<std::string> actions;
  std::map<std::string, double> constants;
  State initial_state;
  int horizon = 40;
  double discount = 0.99;

  // Derived during validation (grid domains only).
  int grid_rows = 0;
  int grid_cols = 0;

  int num_actions() const { return static_cast<int>(actions.size()); }
  bool adjacent(int i, int j) const { return adjacency[i * num_vars + j] != 0; }
  int degree(int i) const;
  double constant(const std::string& name) const;
  double node_feature(int node, int channel) const {
    return node_features[node * num_node_features + channel];
  }

  // Navigation helpers; only meaningful after validation.
  int goal_index() const;
  bool is_goal_state(const State& s) const;
  bool is_drowned_state(const State& s) const;
  double drown_prob(int cell) const { return node_feature(cell, 1); }

  bool operator==(const InstanceSpec& other) const;
};

// N source problems plus one target, all equi-sized.
struct ExperimentSet {
  std::vector<InstanceSpec> sources;
  InstanceSpec target;
};

// Checks every invariant; throws ValidationError naming the offending field.
// Returns human-readable warnings (e.g. a SysAdmin instance whose a+b exceeds
// 1, which forces clamping of the on-probability). Fills derived grid fields.
std::vector<std::string> validate_instance(InstanceSpec& spec);

// Equi-sized checks across sources and target; distinct instance ids.
void validate_experiment(const ExperimentSet& set);

// Parses the line-oriented instance format. The format does not carry an id;
// callers supply one (the CLI uses the file stem).
InstanceSpec parse_instance(const std::string& text, const std::string& instance_id = "");

// Canonical text form: fixed field order, reals with 6 decimal places.
// parse_instance(serialize_instance(s), s.instance_id) == s for any valid s.
std::string serialize_instance(const InstanceSpec& spec);

// Deterministic in (domain_kind, num_vars, seed). Grid domains require
// num_vars to factor as rows x cols with rows, cols >= 2.
InstanceSpec generate_instance(DomainKind kind, int num_vars, std::uint64_t seed);

// Action labels implied by the domain kind (one per variable plus noop for
// SysAdmin/GameOfLife; up/down/left/right for Navigation).
std::vector<std::string> domain_actions(DomainKind kind, int num_vars);

}  // namespace fmdp
