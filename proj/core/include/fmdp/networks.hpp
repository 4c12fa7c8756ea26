#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fmdp/instance.hpp"
#include "fmdp/optimizer.hpp"
#include "fmdp/tensor.hpp"

namespace fmdp {

// Shape bookkeeping for a bundle; persisted in checkpoints and checked when
// a bundle meets an instance or experiment.
struct BundleSignature {
  DomainKind domain_kind = DomainKind::SysAdmin;
  int num_vars = 0;
  int num_node_features = 0;
  int gcn_hidden = 3;
  int gcn_out = 7;
  int embed_dim = 20;
  int hidden_dim = 64;
  int num_actions = 0;
  int num_sources = 1;
  bool share_value_encoder = false;
  std::vector<std::string> instance_ids;  // instances owning a decoder/value net

  int state_embed_dim() const { return num_vars * gcn_out; }
  bool operator==(const BundleSignature&) const = default;
};

BundleSignature make_signature(const std::vector<InstanceSpec>& sources, int embed_dim = 20,
                               int hidden_dim = 64, bool share_value_encoder = false);

struct FcStack {
  Tensor w1, b1, w2, b2;
};

struct GcnStack {
  Tensor w1, w2;
};

struct ValueNet {
  GcnStack gcn;
  FcStack fc;
};

// All parameters of the architecture: shared state encoder, policy head,
// transition module and instance classifier, plus per-instance value nets and
// action decoders; carries its optimizer state.
struct ModelBundle {
  BundleSignature sig;
  GcnStack se;
  FcStack policy;
  FcStack tr;
  FcStack ic;  // defined only when sig.num_sources >= 2
  std::map<std::string, ValueNet> value;
  std::map<std::string, FcStack> decoder;
  OptimizerState opt;

  static ModelBundle initialize(const BundleSignature& sig, std::uint64_t seed);

  // Fresh decoder and value net for a new instance (the transfer target).
  void add_instance(const std::string& instance_id, std::uint64_t seed);

  // Canonical (name, tensor) list: shared components first, then per-instance
  // components in sig.instance_ids order. Shared value-encoder weights appear
  // once under "se.*".
  std::vector<std::pair<std::string, Tensor>> named_params() const;

  // Deep copy of parameter values (requires_grad set), without optimizer state.
  ModelBundle snapshot() const;

  // Deep copy including optimizer state.
  ModelBundle clone() const;

  void zero_grads() const;

  const FcStack& decoder_for(const std::string& instance_id) const;
  const ValueNet& value_for(const std::string& instance_id) const;
  bool has_instance(const std::string& instance_id) const;
};

// Immutable per-instance tensors used by the encoders.
struct GraphContext {
  const InstanceSpec* spec = nullptr;
  Tensor a_norm;  // normalized adjacency, constant
};

GraphContext make_graph_context(const InstanceSpec& spec);

// Node feature matrix [state bit | static channels], n x (1 + F_s), constant.
Tensor state_node_features(const InstanceSpec& spec, const State& s);

// State bits as a constant 1 x n row.
Tensor state_row(const State& s);

// Two graph convolutions on [state bit | static channels]; rows concatenated
// into a 1 x (n * gcn_out) embedding.
Tensor encode_state(Tape& tape, const ModelBundle& bundle, const GraphContext& graph,
                    const State& s);

Tensor policy_forward(Tape& tape, const ModelBundle& bundle, const Tensor& state_embedding);

// Softmax distribution over ground actions from [state | state-action embedding].
Tensor decode_action(Tape& tape, const ModelBundle& bundle, const std::string& instance_id,
                     const State& s, const Tensor& z);

Tensor transition_forward(Tape& tape, const ModelBundle& bundle, const Tensor& e_s,
                          const Tensor& e_s2);

// Gradient-reversed instance classification head; the forward value does not
// depend on lambda.
Tensor classify_instance(Tape& tape, const ModelBundle& bundle, const Tensor& z, double lambda);

Tensor value_forward(Tape& tape, const ModelBundle& bundle, const std::string& instance_id,
                     const GraphContext& graph, const State& s);

// Convenience: full acting pass (encode -> policy -> decode) on a throwaway tape.
std::vector<double> policy_distribution(const ModelBundle& bundle, const GraphContext& graph,
                                        const std::string& instance_id, const State& s);

// Little-endian binary checkpoint with format version and signature; restores
// every parameter and optimizer accumulator bit-exactly.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

// Signature checks against concrete instances; throws ValidationError.
void ensure_compatible(const BundleSignature& sig, const InstanceSpec& spec);

}  // namespace fmdp
