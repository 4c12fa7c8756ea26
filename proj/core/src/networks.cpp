#include "fmdp/networks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fmdp/errors.hpp"
#include "fmdp/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace fmdp {

BundleSignature make_signature(const std::vector<InstanceSpec>& sources, int embed_dim,
                               int hidden_dim, bool share_value_encoder) {
  if (sources.empty()) throw ValidationError("sources", "signature needs at least one instance");
  const InstanceSpec& ref = sources.front();
  BundleSignature sig;
  sig.domain_kind = ref.domain_kind;
  sig.num_vars = ref.num_vars;
  sig.num_node_features = ref.num_node_features;
  sig.embed_dim = embed_dim;
  sig.hidden_dim = hidden_dim;
  sig.num_actions = ref.num_actions();
  sig.num_sources = static_cast<int>(sources.size());
  sig.share_value_encoder = share_value_encoder;
  for (const auto& s : sources) sig.instance_ids.push_back(s.instance_id);
  return sig;
}

namespace {

void glorot_fill(Tensor& t, RngStream& rng) {
  double bound = std::sqrt(6.0 / (t.rows() + t.cols()));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}

Tensor make_param(int rows, int cols) { return Tensor::zeros(rows, cols, /*requires_grad=*/true); }

FcStack init_fc(int in, int hidden, int out, RngStream& rng) {
  FcStack fc;
  fc.w1 = make_param(in, hidden);
  fc.b1 = make_param(1, hidden);
  fc.w2 = make_param(hidden, out);
  fc.b2 = make_param(1, out);
  glorot_fill(fc.w1, rng);
  glorot_fill(fc.w2, rng);
  return fc;
}

GcnStack init_gcn(int in, int hidden, int out, RngStream& rng) {
  GcnStack g;
  g.w1 = make_param(in, hidden);
  g.w2 = make_param(hidden, out);
  glorot_fill(g.w1, rng);
  glorot_fill(g.w2, rng);
  return g;
}

ValueNet init_value_net(const BundleSignature& sig, const GcnStack& se, RngStream& rng) {
  ValueNet v;
  if (sig.share_value_encoder) {
    v.gcn = se;  // shared handles; gradients accumulate into the encoder
  } else {
    v.gcn = init_gcn(1 + sig.num_node_features, sig.gcn_hidden, sig.gcn_out, rng);
  }
  v.fc = init_fc(sig.state_embed_dim(), sig.hidden_dim, 1, rng);
  return v;
}

void append_fc(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               const FcStack& fc) {
  out.emplace_back(prefix + ".w1", fc.w1);
  out.emplace_back(prefix + ".b1", fc.b1);
  out.emplace_back(prefix + ".w2", fc.w2);
  out.emplace_back(prefix + ".b2", fc.b2);
}

}  // namespace

ModelBundle ModelBundle::initialize(const BundleSignature& sig, std::uint64_t seed) {
  ModelBundle b;
  b.sig = sig;
  RngStream rng(seed);
  int d_in = 1 + sig.num_node_features;
  b.se = init_gcn(d_in, sig.gcn_hidden, sig.gcn_out, rng);
  b.policy = init_fc(sig.state_embed_dim(), sig.hidden_dim, sig.embed_dim, rng);
  b.tr = init_fc(2 * sig.state_embed_dim(), sig.hidden_dim, sig.embed_dim, rng);
  if (sig.num_sources >= 2)
    b.ic = init_fc(sig.embed_dim, sig.hidden_dim, sig.num_sources, rng);
  for (const auto& id : sig.instance_ids) {
    b.value.emplace(id, init_value_net(sig, b.se, rng));
    b.decoder.emplace(id, init_fc(sig.num_vars + sig.embed_dim, sig.hidden_dim,
                                  sig.num_actions, rng));
  }
  return b;
}

void ModelBundle::add_instance(const std::string& instance_id, std::uint64_t seed) {
  if (has_instance(instance_id))
    throw ValidationError("instance_id", "bundle already has components for '" + instance_id + "'");
  RngStream rng(seed);
  sig.instance_ids.push_back(instance_id);
  value.emplace(instance_id, init_value_net(sig, se, rng));
  decoder.emplace(instance_id,
                  init_fc(sig.num_vars + sig.embed_dim, sig.hidden_dim, sig.num_actions, rng));
}

std::vector<std::pair<std::string, Tensor>> ModelBundle::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("se.w1", se.w1);
  out.emplace_back("se.w2", se.w2);
  append_fc(out, "policy", policy);
  append_fc(out, "tr", tr);
  if (ic.w1.defined()) append_fc(out, "ic", ic);
  for (const auto& id : sig.instance_ids) {
    const ValueNet& v = value.at(id);
    if (!sig.share_value_encoder) {
      out.emplace_back("value/" + id + ".g1", v.gcn.w1);
      out.emplace_back("value/" + id + ".g2", v.gcn.w2);
    }
    append_fc(out, "value/" + id, v.fc);
    append_fc(out, "decoder/" + id, decoder.at(id));
  }
  return out;
}

ModelBundle ModelBundle::snapshot() const {
  ModelBundle copy;
  copy.sig = sig;
  auto dup = [](const Tensor& t) {
    Tensor c = t.detached_copy();
    c.set_requires_grad(true);
    return c;
  };
  auto dup_fc = [&](const FcStack& fc) {
    return FcStack{dup(fc.w1), dup(fc.b1), dup(fc.w2), dup(fc.b2)};
  };
  copy.se = GcnStack{dup(se.w1), dup(se.w2)};
  copy.policy = dup_fc(policy);
  copy.tr = dup_fc(tr);
  if (ic.w1.defined()) copy.ic = dup_fc(ic);
  for (const auto& [id, v] : value) {
    ValueNet nv;
    nv.gcn = sig.share_value_encoder ? copy.se : GcnStack{dup(v.gcn.w1), dup(v.gcn.w2)};
    nv.fc = dup_fc(v.fc);
    copy.value.emplace(id, std::move(nv));
  }
  for (const auto& [id, d] : decoder) copy.decoder.emplace(id, dup_fc(d));
  return copy;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle copy = snapshot();
  copy.opt.config = opt.config;
  for (const auto& [name, t] : opt.accumulators)
    copy.opt.accumulators.emplace(name, t.detached_copy());
  return copy;
}

void ModelBundle::zero_grads() const {
  for (auto& [name, t] : named_params()) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

const FcStack& ModelBundle::decoder_for(const std::string& instance_id) const {
  auto it = decoder.find(instance_id);
  if (it == decoder.end())
    throw ValidationError("instance_id", "no action decoder for instance '" + instance_id + "'");
  return it->second;
}

const ValueNet& ModelBundle::value_for(const std::string& instance_id) const {
  auto it = value.find(instance_id);
  if (it == value.end())
    throw ValidationError("instance_id", "no value network for instance '" + instance_id + "'");
  return it->second;
}

bool ModelBundle::has_instance(const std::string& instance_id) const {
  return decoder.count(instance_id) > 0;
}

GraphContext make_graph_context(const InstanceSpec& spec) {
  GraphContext g;
  g.spec = &spec;
  g.a_norm = Tensor::matrix(spec.num_vars, spec.num_vars,
                            normalize_adjacency(spec.adjacency, spec.num_vars));
  return g;
}

Tensor state_node_features(const InstanceSpec& spec, const State& s) {
  int n = spec.num_vars;
  int d = 1 + spec.num_node_features;
  std::vector<double> f(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    f[i * d] = s.bits[i] ? 1.0 : 0.0;
    for (int c = 0; c < spec.num_node_features; ++c)
      f[i * d + 1 + c] = spec.node_feature(i, c);
  }
  return Tensor::matrix(n, d, std::move(f));
}

Tensor state_row(const State& s) {
  std::vector<double> v(s.bits.begin(), s.bits.end());
  return Tensor::row(std::move(v));
}

namespace {

Tensor fc_forward(Tape& tape, const FcStack& fc, const Tensor& x) {
  Tensor h = tape.elu(tape.add_rowwise(tape.matmul(x, fc.w1), fc.b1));
  return tape.add_rowwise(tape.matmul(h, fc.w2), fc.b2);
}

}  // namespace

Tensor encode_state(Tape& tape, const ModelBundle& bundle, const GraphContext& graph,
                    const State& s) {
  const InstanceSpec& spec = *graph.spec;
  if (spec.num_vars != bundle.sig.num_vars ||
      spec.num_node_features != bundle.sig.num_node_features)
    throw ValidationError("signature", "bundle and instance dimensions differ");
  Tensor f = state_node_features(spec, s);
  Tensor h1 = gcn_layer(tape, f, graph.a_norm, bundle.se.w1);
  Tensor h2 = gcn_layer(tape, h1, graph.a_norm, bundle.se.w2);
  return tape.flatten_row(h2);
}

Tensor policy_forward(Tape& tape, const ModelBundle& bundle, const Tensor& state_embedding) {
  if (state_embedding.cols() != bundle.sig.state_embed_dim())
    throw std::invalid_argument("policy_forward: embedding dimension mismatch");
  return fc_forward(tape, bundle.policy, state_embedding);
}

Tensor decode_action(Tape& tape, const ModelBundle& bundle, const std::string& instance_id,
                     const State& s, const Tensor& z) {
  const FcStack& dec = bundle.decoder_for(instance_id);
  Tensor x = tape.concat_cols(state_row(s), z);
  return tape.softmax_row(fc_forward(tape, dec, x));
}

Tensor transition_forward(Tape& tape, const ModelBundle& bundle, const Tensor& e_s,
                          const Tensor& e_s2) {
  if (e_s.cols() != e_s2.cols())
    throw std::invalid_argument("transition_forward: embedding dimensions differ");
  return fc_forward(tape, bundle.tr, tape.concat_cols(e_s, e_s2));
}

Tensor classify_instance(Tape& tape, const ModelBundle& bundle, const Tensor& z, double lambda) {
  if (!bundle.ic.w1.defined())
    throw ValidationError("instance_classifier", "bundle was built with fewer than 2 sources");
  Tensor reversed = tape.grad_reverse(z, lambda);
  return tape.softmax_row(fc_forward(tape, bundle.ic, reversed));
}

Tensor value_forward(Tape& tape, const ModelBundle& bundle, const std::string& instance_id,
                     const GraphContext& graph, const State& s) {
  const ValueNet& vn = bundle.value_for(instance_id);
  Tensor f = state_node_features(*graph.spec, s);
  Tensor h1 = gcn_layer(tape, f, graph.a_norm, vn.gcn.w1);
  Tensor h2 = gcn_layer(tape, h1, graph.a_norm, vn.gcn.w2);
  return fc_forward(tape, vn.fc, tape.flatten_row(h2));
}

std::vector<double> policy_distribution(const ModelBundle& bundle, const GraphContext& graph,
                                        const std::string& instance_id, const State& s) {
  Tape tape;
  Tensor e = encode_state(tape, bundle, graph, s);
  Tensor z = policy_forward(tape, bundle, e);
  Tensor pi = decode_action(tape, bundle, instance_id, s, z);
  auto v = pi.values();
  return std::vector<double>(v.begin(), v.end());
}

namespace {

constexpr char kMagic[8] = {'F', 'M', 'D', 'P', 'B', 'N', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("checkpoint truncated");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  auto len = read_pod<std::uint32_t>(in);
  if (len > (1u << 20)) throw ParseError("checkpoint string length implausible");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw ParseError("checkpoint truncated");
  return s;
}

void write_record(std::ostream& out, const std::string& name, const Tensor& t) {
  write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint8_t>(out, 2);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
  auto v = t.values();
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::pair<std::string, Tensor> read_record(std::istream& in) {
  auto name_len = read_pod<std::uint16_t>(in);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  if (!in) throw ParseError("checkpoint truncated");
  auto rank = read_pod<std::uint8_t>(in);
  if (rank != 2) throw ParseError("checkpoint record rank must be 2");
  auto rows = read_pod<std::uint32_t>(in);
  auto cols = read_pod<std::uint32_t>(in);
  if (static_cast<std::uint64_t>(rows) * cols > (1u << 26))
    throw ParseError("checkpoint record implausibly large");
  std::vector<double> values(static_cast<size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw ParseError("checkpoint truncated");
  return {name, Tensor::matrix(rows, cols, std::move(values))};
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  const BundleSignature& s = bundle.sig;
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(s.domain_kind));
  write_pod<std::uint32_t>(out, s.num_vars);
  write_pod<std::uint32_t>(out, s.num_node_features);
  write_pod<std::uint32_t>(out, s.gcn_hidden);
  write_pod<std::uint32_t>(out, s.gcn_out);
  write_pod<std::uint32_t>(out, s.embed_dim);
  write_pod<std::uint32_t>(out, s.hidden_dim);
  write_pod<std::uint32_t>(out, s.num_actions);
  write_pod<std::uint32_t>(out, s.num_sources);
  write_pod<std::uint8_t>(out, s.share_value_encoder ? 1 : 0);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.instance_ids.size()));
  for (const auto& id : s.instance_ids) write_string(out, id);

  write_pod(out, bundle.opt.config.learning_rate);
  write_pod(out, bundle.opt.config.decay);
  write_pod(out, bundle.opt.config.epsilon);

  auto params = bundle.named_params();
  std::uint32_t count = static_cast<std::uint32_t>(params.size() + bundle.opt.accumulators.size());
  write_pod(out, count);
  for (const auto& [name, t] : params) write_record(out, name, t);
  for (const auto& [name, t] : bundle.opt.accumulators) write_record(out, "rms/" + name, t);
  if (!out) throw ParseError("write failure on '" + path.string() + "'");
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError("not a model checkpoint: bad magic");
  auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version));

  BundleSignature sig;
  sig.domain_kind = static_cast<DomainKind>(read_pod<std::uint8_t>(in));
  sig.num_vars = static_cast<int>(read_pod<std::uint32_t>(in));
  sig.num_node_features = static_cast<int>(read_pod<std::uint32_t>(in));
  sig.gcn_hidden = static_cast<int>(read_pod<std::uint32_t>(in));
  sig.gcn_out = static_cast<int>(read_pod<std::uint32_t>(in));
  sig.embed_dim = static_cast<int>(read_pod<std::uint32_t>(in));
  sig.hidden_dim = static_cast<int>(read_pod<std::uint32_t>(in));
  sig.num_actions = static_cast<int>(read_pod<std::uint32_t>(in));
  sig.num_sources = static_cast<int>(read_pod<std::uint32_t>(in));
  sig.share_value_encoder = read_pod<std::uint8_t>(in) != 0;
  auto id_count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < id_count; ++i) sig.instance_ids.push_back(read_string(in));

  ModelBundle bundle = ModelBundle::initialize(sig, /*seed=*/0);
  bundle.opt.config.learning_rate = read_pod<double>(in);
  bundle.opt.config.decay = read_pod<double>(in);
  bundle.opt.config.epsilon = read_pod<double>(in);

  std::map<std::string, Tensor> records;
  auto count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = read_record(in);
    if (!records.emplace(name, t).second)
      throw ParseError("duplicate checkpoint record '" + name + "'");
  }

  auto params = bundle.named_params();
  for (auto& [name, param] : params) {
    auto it = records.find(name);
    if (it == records.end()) throw ParseError("checkpoint missing parameter '" + name + "'");
    if (it->second.rows() != param.rows() || it->second.cols() != param.cols())
      throw ParseError("checkpoint shape mismatch for '" + name + "'");
    Tensor dst = param;
    std::copy(it->second.values().begin(), it->second.values().end(), dst.values().begin());
    std::string rms_name = "rms/" + name;
    auto rit = records.find(rms_name);
    if (rit != records.end()) {
      if (rit->second.rows() != param.rows() || rit->second.cols() != param.cols())
        throw ParseError("checkpoint shape mismatch for '" + rms_name + "'");
      bundle.opt.accumulators.emplace(name, rit->second);
    }
  }
  return bundle;
}

void ensure_compatible(const BundleSignature& sig, const InstanceSpec& spec) {
  if (sig.domain_kind != spec.domain_kind)
    throw ValidationError("signature", "checkpoint domain kind is " +
                                           std::string(domain_kind_name(sig.domain_kind)) +
                                           ", instance is " +
                                           domain_kind_name(spec.domain_kind));
  if (sig.num_vars != spec.num_vars)
    throw ValidationError("signature", "checkpoint has " + std::to_string(sig.num_vars) +
                                           " variables, instance has " +
                                           std::to_string(spec.num_vars));
  if (sig.num_actions != spec.num_actions())
    throw ValidationError("signature", "checkpoint and instance action counts differ");
  if (sig.num_node_features != spec.num_node_features)
    throw ValidationError("signature", "checkpoint and instance feature channels differ");
}

}  // namespace fmdp
