#include "fmdp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "fmdp/dynamics.hpp"
#include "fmdp/errors.hpp"

namespace fmdp {

namespace {

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool parse_bool(const std::string& v, int line) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ParseError(line, 1, "expected a boolean (0/1/true/false), got '" + v + "'");
}

}  // namespace

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(ln, 1, "expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "workers_per_instance") cfg.workers_per_instance = std::stoi(val);
    else if (key == "total_env_steps") cfg.total_env_steps = std::stoull(val);
    else if (key == "rollout_len") cfg.rollout_len = std::stoi(val);
    else if (key == "lambda") cfg.lambda = std::stod(val);
    else if (key == "lambda_tr") cfg.lambda_tr = std::stod(val);
    else if (key == "entropy_beta") cfg.entropy_beta = std::stod(val);
    else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
    else if (key == "rms_decay") cfg.rms_decay = std::stod(val);
    else if (key == "rms_epsilon") cfg.rms_epsilon = std::stod(val);
    else if (key == "clip_norm") cfg.clip_norm = std::stod(val);
    else if (key == "gamma") cfg.gamma = std::stod(val);
    else if (key == "use_sad_tr") cfg.use_sad_tr = parse_bool(val, ln);
    else if (key == "use_ic") cfg.use_ic = parse_bool(val, ln);
    else if (key == "tr_independent_pairs") cfg.tr_independent_pairs = parse_bool(val, ln);
    else if (key == "share_value_encoder") cfg.share_value_encoder = parse_bool(val, ln);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "eval_interval") cfg.eval_interval = std::stoull(val);
    else if (key == "eval_episodes") cfg.eval_episodes = std::stoi(val);
    else if (key == "decoder_pairs") cfg.decoder_pairs = std::stoi(val);
    else if (key == "decoder_batch") cfg.decoder_batch = std::stoi(val);
    else if (key == "decoder_learning_rate") cfg.decoder_learning_rate = std::stod(val);
    else if (key == "embed_dim") cfg.embed_dim = std::stoi(val);
    else if (key == "hidden_dim") cfg.hidden_dim = std::stoi(val);
    else throw ParseError(ln, 1, "unknown config key '" + key + "'");
  }
  return cfg;
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "workers_per_instance=" << workers_per_instance << "\n";
  out << "total_env_steps=" << total_env_steps << "\n";
  out << "rollout_len=" << rollout_len << "\n";
  out << "lambda=" << fmt_g17(lambda) << "\n";
  out << "lambda_tr=" << fmt_g17(lambda_tr) << "\n";
  out << "entropy_beta=" << fmt_g17(entropy_beta) << "\n";
  out << "learning_rate=" << fmt_g17(learning_rate) << "\n";
  out << "rms_decay=" << fmt_g17(rms_decay) << "\n";
  out << "rms_epsilon=" << fmt_g17(rms_epsilon) << "\n";
  out << "clip_norm=" << fmt_g17(clip_norm) << "\n";
  if (gamma) out << "gamma=" << fmt_g17(*gamma) << "\n";
  out << "use_sad_tr=" << (use_sad_tr ? 1 : 0) << "\n";
  out << "use_ic=" << (use_ic ? 1 : 0) << "\n";
  out << "tr_independent_pairs=" << (tr_independent_pairs ? 1 : 0) << "\n";
  out << "share_value_encoder=" << (share_value_encoder ? 1 : 0) << "\n";
  out << "seed=" << seed << "\n";
  out << "eval_interval=" << eval_interval << "\n";
  out << "eval_episodes=" << eval_episodes << "\n";
  out << "decoder_pairs=" << decoder_pairs << "\n";
  out << "decoder_batch=" << decoder_batch << "\n";
  out << "decoder_learning_rate=" << fmt_g17(decoder_learning_rate) << "\n";
  out << "embed_dim=" << embed_dim << "\n";
  out << "hidden_dim=" << hidden_dim << "\n";
  return out.str();
}

std::string TrainConfig::hash() const {
  std::string text = to_text();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double TrainConfig::effective_gamma(const InstanceSpec& spec) const {
  return gamma.value_or(spec.discount);
}

void apply_variant(TrainConfig& config, const std::string& variant) {
  if (variant == "gcn") {
    config.use_sad_tr = false;
    config.use_ic = false;
  } else if (variant == "gcn-sad") {
    config.use_sad_tr = true;
    config.use_ic = false;
  } else if (variant == "full") {
    config.use_sad_tr = true;
    config.use_ic = true;
  } else {
    throw ValidationError("variant", "unknown variant '" + variant + "' (gcn, gcn-sad, full)");
  }
}

std::vector<double> n_step_returns(std::span<const double> rewards, double bootstrap,
                                   double gamma) {
  std::vector<double> returns(rewards.size());
  double g = bootstrap;
  for (int t = static_cast<int>(rewards.size()) - 1; t >= 0; --t) {
    g = rewards[t] + gamma * g;
    returns[t] = g;
  }
  return returns;
}

namespace {

struct SegmentForward {
  std::vector<Tensor> embeddings;  // per state; one extra when next-state encoding is on
  std::vector<Tensor> zs;          // per step
  std::vector<Tensor> pis;         // per step
  std::vector<Tensor> values;      // per step
};

// Op order is fixed and documented: all state embeddings first, then per step
// the policy head, decoder and value net.
SegmentForward forward_segment(Tape& tape, const ModelBundle& bundle, const GraphContext& graph,
                               const RolloutSegment& seg, bool with_next) {
  SegmentForward fw;
  size_t len = seg.actions.size();
  size_t n_embed = with_next ? len + 1 : len;
  for (size_t t = 0; t < n_embed; ++t)
    fw.embeddings.push_back(encode_state(tape, bundle, graph, seg.states[t]));
  for (size_t t = 0; t < len; ++t) {
    fw.zs.push_back(policy_forward(tape, bundle, fw.embeddings[t]));
    fw.pis.push_back(decode_action(tape, bundle, seg.instance_id, seg.states[t], fw.zs[t]));
    fw.values.push_back(value_forward(tape, bundle, seg.instance_id, graph, seg.states[t]));
  }
  return fw;
}

void accumulate(Tape& tape, Tensor& acc, const Tensor& term) {
  acc = acc.defined() ? tape.add(acc, term) : term;
}

// Per-step terms in step order: policy, value, entropy.
void base_loss_terms(Tape& tape, const SegmentForward& fw, const RolloutSegment& seg,
                     double gamma, Tensor& policy_acc, Tensor& value_acc, Tensor& entropy_acc) {
  auto returns = n_step_returns(seg.rewards, seg.bootstrap_value, gamma);
  for (size_t t = 0; t < seg.actions.size(); ++t) {
    double advantage = returns[t] - fw.values[t].value();  // constant in the policy loss
    Tensor logp = tape.log_eps(tape.pick(fw.pis[t], seg.actions[t]));
    accumulate(tape, policy_acc, tape.scale(logp, -advantage));
    Tensor diff = tape.add_const(tape.scale(fw.values[t], -1.0), returns[t]);
    accumulate(tape, value_acc, tape.square(diff));
    Tensor plogp = tape.sum(tape.mul(fw.pis[t], tape.log_eps(fw.pis[t])));
    accumulate(tape, entropy_acc, tape.scale(plogp, -1.0));
  }
}

std::vector<double> one_hot(int index, int size) {
  std::vector<double> v(size, 0.0);
  v[index] = 1.0;
  return v;
}

}  // namespace

A3cLosses a3c_losses(Tape& tape, const ModelBundle& bundle, const GraphContext& graph,
                     const RolloutSegment& segment, double gamma) {
  SegmentForward fw = forward_segment(tape, bundle, graph, segment, /*with_next=*/false);
  A3cLosses out;
  base_loss_terms(tape, fw, segment, gamma, out.policy_loss, out.value_loss, out.entropy);
  return out;
}

Tensor combined_loss(Tape& tape, const ModelBundle& bundle,
                     std::span<const GraphContext* const> graphs,
                     std::span<const RolloutSegment> segments, const TrainConfig& config,
                     LossStats* stats) {
  bool ic_on = config.use_ic && bundle.ic.w1.defined();
  Tensor policy_acc, value_acc, entropy_acc, tr_acc, ic_acc;
  int skipped = 0;

  for (const RolloutSegment& seg : segments) {
    const GraphContext& graph = *graphs[seg.instance_index];
    double gamma = config.effective_gamma(*graph.spec);
    SegmentForward fw = forward_segment(tape, bundle, graph, seg, config.use_sad_tr);
    base_loss_terms(tape, fw, seg, gamma, policy_acc, value_acc, entropy_acc);

    if (config.use_sad_tr) {
      bool off_rollout = !seg.tr_next_states.empty();
      for (size_t t = 0; t < seg.actions.size(); ++t) {
        const State& next = off_rollout ? seg.tr_next_states[t] : seg.states[t + 1];
        std::vector<double> gold;
        try {
          gold = action_posterior(*graph.spec, seg.states[t], next).probs;
        } catch (const UnreachableSuccessorError&) {
          ++skipped;
          continue;
        }
        Tensor e_next = off_rollout ? encode_state(tape, bundle, graph, next)
                                    : fw.embeddings[t + 1];
        Tensor z_tr = transition_forward(tape, bundle, fw.embeddings[t], e_next);
        Tensor p_tr = decode_action(tape, bundle, seg.instance_id, seg.states[t], z_tr);
        accumulate(tape, tr_acc, tape.cross_entropy(p_tr, gold));
      }
    }
    if (ic_on) {
      auto label = one_hot(seg.instance_index, bundle.sig.num_sources);
      for (size_t t = 0; t < seg.actions.size(); ++t) {
        Tensor p_ic = classify_instance(tape, bundle, fw.zs[t], config.lambda);
        accumulate(tape, ic_acc, tape.cross_entropy(p_ic, label));
      }
    }
  }

  if (!policy_acc.defined()) throw std::invalid_argument("combined_loss: empty batch");
  Tensor total = policy_acc;
  total = tape.add(total, tape.scale(value_acc, 0.5));
  total = tape.add(total, tape.scale(entropy_acc, -config.entropy_beta));
  if (config.use_sad_tr && tr_acc.defined())
    total = tape.add(total, tape.scale(tr_acc, config.lambda_tr));
  if (ic_on && ic_acc.defined()) total = tape.add(total, ic_acc);

  if (stats) {
    stats->policy = policy_acc.value();
    stats->value = value_acc.value();
    stats->entropy = entropy_acc.value();
    stats->transition = tr_acc.defined() ? tr_acc.value() : 0.0;
    stats->classifier = ic_acc.defined() ? ic_acc.value() : 0.0;
    stats->tr_pairs_skipped = skipped;
  }
  return total;
}

namespace {

// Parameters a worker for one instance touches, in canonical order. Disabled
// components stay out so their optimizer state never decays.
std::vector<std::pair<std::string, Tensor>> touched_params(const ModelBundle& bundle,
                                                           const std::string& instance_id,
                                                           const TrainConfig& config) {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push_fc = [&out](const std::string& prefix, const FcStack& fc) {
    out.emplace_back(prefix + ".w1", fc.w1);
    out.emplace_back(prefix + ".b1", fc.b1);
    out.emplace_back(prefix + ".w2", fc.w2);
    out.emplace_back(prefix + ".b2", fc.b2);
  };
  out.emplace_back("se.w1", bundle.se.w1);
  out.emplace_back("se.w2", bundle.se.w2);
  push_fc("policy", bundle.policy);
  if (config.use_sad_tr) push_fc("tr", bundle.tr);
  if (config.use_ic && bundle.ic.w1.defined()) push_fc("ic", bundle.ic);
  const ValueNet& v = bundle.value_for(instance_id);
  if (!bundle.sig.share_value_encoder) {
    out.emplace_back("value/" + instance_id + ".g1", v.gcn.w1);
    out.emplace_back("value/" + instance_id + ".g2", v.gcn.w2);
  }
  push_fc("value/" + instance_id, v.fc);
  push_fc("decoder/" + instance_id, bundle.decoder_for(instance_id));
  return out;
}

struct WorkerContext {
  int worker_index = 0;
  int instance_index = 0;
  const InstanceSpec* spec = nullptr;
  const GraphContext* graph = nullptr;
  RngStream env_rng{0};
  RngStream act_rng{0};
  RngStream tr_rng{0};  // only consumed with tr_independent_pairs
  State cur;
  int ep_step = 0;
};

class Trainer {
 public:
  Trainer(const std::vector<InstanceSpec>& sources, const TrainConfig& config,
          std::string run_id, std::string algorithm, std::uint64_t offset,
          const ModelBundle* init_bundle)
      : sources_(sources),
        config_(config),
        run_id_(std::move(run_id)),
        algorithm_(std::move(algorithm)),
        offset_(offset),
        base_(config.seed) {
    if (sources_.empty()) throw ValidationError("sources", "no source instances");
    const InstanceSpec& ref = sources_.front();
    std::vector<std::string> ids;
    for (const auto& s : sources_) {
      if (s.domain_kind != ref.domain_kind || s.num_vars != ref.num_vars ||
          s.num_actions() != ref.num_actions())
        throw ValidationError("sources", "sources must be equi-sized (same kind, vars, actions)");
      ids.push_back(s.instance_id);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw ValidationError("instance_id", "duplicate source instance id");
    if (config_.use_ic && sources_.size() < 2 && init_bundle == nullptr)
      throw ValidationError("use_ic", "instance classifier needs at least 2 sources");

    if (init_bundle) {
      bundle_ = init_bundle->clone();
      for (const auto& s : sources_)
        if (!bundle_.has_instance(s.instance_id))
          throw ValidationError("instance_id",
                                "bundle has no components for '" + s.instance_id + "'");
    } else {
      BundleSignature sig = make_signature(sources_, config_.embed_dim, config_.hidden_dim,
                                           config_.share_value_encoder);
      bundle_ = ModelBundle::initialize(sig, base_.child(0).next_u64());
    }
    bundle_.opt.config =
        RmsPropConfig{config_.learning_rate, config_.rms_decay, config_.rms_epsilon};
    for (auto& [name, t] : bundle_.named_params()) shared_by_name_.emplace(name, t);

    for (const auto& s : sources_) graphs_.push_back(make_graph_context(s));
    graph_ptrs_.resize(graphs_.size());
    for (size_t i = 0; i < graphs_.size(); ++i) graph_ptrs_[i] = &graphs_[i];

    int per = std::max(1, config_.workers_per_instance);
    for (size_t i = 0; i < sources_.size(); ++i) {
      for (int k = 0; k < per; ++k) {
        WorkerContext w;
        w.worker_index = static_cast<int>(workers_.size());
        w.instance_index = static_cast<int>(i);
        w.spec = &sources_[i];
        w.graph = &graphs_[i];
        w.env_rng = base_.child(1).child(w.worker_index);
        w.act_rng = base_.child(2).child(w.worker_index);
        w.tr_rng = base_.child(7).child(w.worker_index);
        w.cur = sources_[i].initial_state;
        workers_.push_back(std::move(w));
      }
    }
  }

  TrainResult run() {
    start_ = std::chrono::steady_clock::now();
    record_eval_point();  // env_steps = 0
    next_eval_ = config_.eval_interval == 0 ? std::numeric_limits<std::uint64_t>::max()
                                            : config_.eval_interval;

    if (config_.total_env_steps > 0) {
      if (config_.workers_per_instance <= 1) {
        size_t i = 0;
        while (counter_ < config_.total_env_steps) {
          iterate(workers_[i % workers_.size()]);
          ++i;
        }
      } else {
        std::vector<std::thread> threads;
        threads.reserve(workers_.size());
        for (auto& w : workers_)
          threads.emplace_back([this, &w] { worker_loop(w); });
        for (auto& t : threads) t.join();
        if (failure_) std::rethrow_exception(failure_);
      }
      if (last_eval_counter_ != counter_) record_eval_point();
    }

    std::stable_sort(curves_.begin(), curves_.end(),
                     [](const CurveRecord& a, const CurveRecord& b) {
                       return a.env_steps < b.env_steps;
                     });
    TrainResult res;
    res.bundle = std::move(bundle_);
    res.curves = std::move(curves_);
    res.env_steps = counter_;
    return res;
  }

 private:
  void worker_loop(WorkerContext& w) {
    try {
      for (;;) {
        {
          std::lock_guard<std::mutex> lock(mu_);
          if (counter_ >= config_.total_env_steps || stop_) break;
        }
        iterate(w);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu_);
      if (!failure_) failure_ = std::current_exception();
      stop_ = true;
    }
  }

  void iterate(WorkerContext& w) {
    ModelBundle snap;
    {
      std::lock_guard<std::mutex> lock(mu_);
      snap = bundle_.snapshot();
    }
    RolloutSegment seg = collect_segment(w, snap);
    if (config_.tr_independent_pairs) resample_pairs(w, seg);

    Tape tape;
    LossStats stats;
    std::vector<RolloutSegment> batch{seg};
    Tensor loss = combined_loss(tape, snap, graph_ptrs_, batch, config_, &stats);
    if (!std::isfinite(loss.value()))
      throw DivergenceError("non-finite loss (policy=" + fmt_g17(stats.policy) +
                            ", value=" + fmt_g17(stats.value) + ")");
    tape.backward(loss);

    auto named = touched_params(snap, seg.instance_id, config_);
    std::vector<std::span<double>> grads;
    grads.reserve(named.size());
    for (auto& [name, t] : named) {
      Tensor handle = t;
      grads.push_back(handle.grad());
    }
    clip_global_norm(grads, config_.clip_norm);

    bool do_eval = false;
    std::uint64_t eval_at = 0;
    int eval_k = 0;
    ModelBundle eval_snap;
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (size_t i = 0; i < named.size(); ++i) {
        Tensor& shared = shared_by_name_.at(named[i].first);
        rmsprop_step(shared, grads[i], bundle_.opt.accumulator_for(named[i].first, shared),
                     bundle_.opt.config);
      }
      counter_ += seg.actions.size();
      if (counter_ >= next_eval_) {
        next_eval_ = counter_ - counter_ % config_.eval_interval + config_.eval_interval;
        if (next_eval_ <= counter_) next_eval_ = counter_ + config_.eval_interval;
        do_eval = true;
        eval_at = counter_;
        eval_k = ++eval_counter_;
        last_eval_counter_ = counter_;
        eval_snap = bundle_.snapshot();
      }
    }
    if (do_eval) evaluate_all(eval_snap, eval_at, eval_k);
  }

  // The acting pass, the environment draw and the bootstrap all use the
  // worker's parameter snapshot. Segments never span episode boundaries.
  RolloutSegment collect_segment(WorkerContext& w, const ModelBundle& snap) {
    const InstanceSpec& spec = *w.spec;
    bool nav = spec.domain_kind == DomainKind::Navigation;
    double gamma = config_.effective_gamma(spec);
    RolloutSegment seg;
    seg.instance_index = w.instance_index;
    seg.instance_id = spec.instance_id;
    seg.states.push_back(w.cur);
    for (int h = 0; h < config_.rollout_len; ++h) {
      auto pi = policy_distribution(snap, *w.graph, spec.instance_id, w.cur);
      int a = sample_index(pi, w.act_rng);
      StepResult st = step(spec, w.cur, a, w.env_rng);
      seg.actions.push_back(a);
      seg.rewards.push_back(st.reward);
      seg.states.push_back(st.next);
      ++w.ep_step;
      bool horizon_end = w.ep_step >= spec.horizon;
      if (st.terminal || horizon_end) {
        seg.terminal = true;
        if (nav && spec.is_drowned_state(st.next))
          seg.bootstrap_value = drowned_tail_value(gamma, spec.horizon - w.ep_step);
        else
          seg.bootstrap_value = 0.0;
        w.cur = spec.initial_state;
        w.ep_step = 0;
        return seg;
      }
      w.cur = st.next;
    }
    Tape tape;
    seg.bootstrap_value =
        value_forward(tape, snap, spec.instance_id, *w.graph, seg.states.back()).value();
    return seg;
  }

  // tr_independent_pairs: pair each rollout state with a fresh model sample
  // under a uniform action; the on-policy trajectory stays untouched.
  void resample_pairs(WorkerContext& w, RolloutSegment& seg) {
    const InstanceSpec& spec = *w.spec;
    seg.tr_next_states.clear();
    for (size_t t = 0; t < seg.actions.size(); ++t) {
      int a = static_cast<int>(w.tr_rng.next_below(spec.num_actions()));
      SuccessorSampler sampler(spec, seg.states[t], a);
      seg.tr_next_states.push_back(sampler.sample(w.tr_rng));
    }
  }

  void evaluate_all(const ModelBundle& snap, std::uint64_t at, int eval_k) {
    double wall = 0.0;
    if (config_.workers_per_instance > 1) {
      wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    std::vector<CurveRecord> recs;
    for (size_t i = 0; i < sources_.size(); ++i) {
      RngStream eval_rng = base_.child(5).child(eval_k).child(i);
      EvalResult r =
          evaluate_policy(snap, sources_[i], config_.eval_episodes, eval_rng, /*greedy=*/true);
      CurveRecord rec;
      rec.run_id = run_id_;
      rec.algorithm = algorithm_;
      rec.instance_id = sources_[i].instance_id;
      rec.env_steps = offset_ + at;
      rec.mean_return = r.mean_return;
      rec.std_error = r.std_error;
      rec.episodes = config_.eval_episodes;
      rec.wall_seconds = wall;
      recs.push_back(std::move(rec));
    }
    std::lock_guard<std::mutex> lock(curve_mu_);
    for (auto& r : recs) curves_.push_back(std::move(r));
  }

  void record_eval_point() {
    ModelBundle snap;
    {
      std::lock_guard<std::mutex> lock(mu_);
      snap = bundle_.snapshot();
      last_eval_counter_ = counter_;
    }
    evaluate_all(snap, counter_, eval_counter_++);
  }

  std::vector<InstanceSpec> sources_;
  TrainConfig config_;
  std::string run_id_;
  std::string algorithm_;
  std::uint64_t offset_;
  RngStream base_;

  ModelBundle bundle_;
  std::map<std::string, Tensor> shared_by_name_;
  std::vector<GraphContext> graphs_;
  std::vector<const GraphContext*> graph_ptrs_;
  std::vector<WorkerContext> workers_;

  std::mutex mu_;
  std::mutex curve_mu_;
  std::uint64_t counter_ = 0;
  std::uint64_t next_eval_ = 0;
  std::uint64_t last_eval_counter_ = 0;
  int eval_counter_ = 0;
  bool stop_ = false;
  std::exception_ptr failure_;
  std::vector<CurveRecord> curves_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

TrainResult learning_phase(const std::vector<InstanceSpec>& sources, const TrainConfig& config,
                           const std::string& run_id, const std::string& algorithm,
                           std::uint64_t env_step_offset, const ModelBundle* init_bundle) {
  Trainer trainer(sources, config, run_id, algorithm, env_step_offset, init_bundle);
  return trainer.run();
}

TransferStats transfer_decoder_training(ModelBundle& bundle, const InstanceSpec& target,
                                        const TrainConfig& config) {
  ensure_compatible(bundle.sig, target);
  if (bundle.has_instance(target.instance_id))
    throw ValidationError("instance_id",
                          "bundle already has a decoder for '" + target.instance_id + "'");
  RngStream base(config.seed);
  bundle.add_instance(target.instance_id, base.child(3).next_u64());
  RmsPropConfig decoder_opt{config.decoder_learning_rate, config.rms_decay, config.rms_epsilon};
  GraphContext graph = make_graph_context(target);
  bool nav = target.domain_kind == DomainKind::Navigation;

  struct Pair {
    State s;
    Tensor z;  // Tr(e(s), e(s')) under the frozen encoder, detached
    std::vector<double> posterior;
  };
  std::vector<Pair> train, holdout;
  TransferStats stats;
  stats.uniform_ce = std::log(static_cast<double>(target.num_actions()));

  // Model-only walk with uniform actions; restarts pick a random previously
  // visited state so coverage is not limited to the initial-state basin.
  RngStream walk = base.child(4);
  std::vector<State> reservoir;
  reservoir.reserve(1024);
  size_t reservoir_cursor = 0;
  State cur = target.initial_state;
  int ep = 0;
  int produced = 0;
  while (produced < config.decoder_pairs) {
    bool absorbing = nav && (target.is_goal_state(cur) || target.is_drowned_state(cur));
    if (absorbing || ep >= target.horizon) {
      // Half the restarts replay the initial state so the supervision covers
      // the region where evaluation episodes actually live.
      if (reservoir.empty() || walk.bernoulli(0.5)) {
        cur = target.initial_state;
      } else {
        cur = reservoir[walk.next_below(static_cast<std::uint32_t>(reservoir.size()))];
      }
      ep = 0;
      continue;
    }
    int a = static_cast<int>(walk.next_below(target.num_actions()));
    SuccessorSampler sampler(target, cur, a);
    State s2 = sampler.sample(walk);
    if (reservoir.size() < 1024) {
      reservoir.push_back(cur);
    } else {
      reservoir[reservoir_cursor] = cur;
      reservoir_cursor = (reservoir_cursor + 1) % reservoir.size();
    }
    try {
      auto post = action_posterior(target, cur, s2);
      Tape tape;
      Tensor e1 = encode_state(tape, bundle, graph, cur);
      Tensor e2 = encode_state(tape, bundle, graph, s2);
      Tensor z = transition_forward(tape, bundle, e1, e2).detached_copy();
      Pair p{cur, std::move(z), std::move(post.probs)};
      if (produced % 10 == 9)
        holdout.push_back(std::move(p));
      else
        train.push_back(std::move(p));
      ++produced;
    } catch (const UnreachableSuccessorError&) {
      ++stats.pairs_skipped;
    }
    cur = std::move(s2);
    ++ep;
  }
  stats.pairs_trained = static_cast<int>(train.size());
  stats.pairs_heldout = static_cast<int>(holdout.size());

  auto holdout_metrics = [&](double* ce, double* top1) {
    double total = 0.0;
    int hits = 0;
    for (const Pair& p : holdout) {
      Tape tape;
      Tensor pi = decode_action(tape, bundle, target.instance_id, p.s, p.z);
      auto pv = pi.values();
      double loss = 0.0;
      for (size_t k = 0; k < p.posterior.size(); ++k)
        loss -= p.posterior[k] * std::log(pv[k] + Tape::kLogEps);
      total += loss;
      if (argmax_index(pv) == argmax_index(p.posterior)) ++hits;
    }
    *ce = holdout.empty() ? 0.0 : total / holdout.size();
    *top1 = holdout.empty() ? 0.0 : static_cast<double>(hits) / holdout.size();
  };

  // Only the target decoder trains; plateau detection on held-out
  // cross-entropy every 200 minibatches, patience 5, threshold 1e-3.
  std::vector<std::pair<std::string, Tensor>> dec_params;
  {
    const FcStack& dec = bundle.decoder_for(target.instance_id);
    std::string prefix = "decoder/" + target.instance_id;
    dec_params = {{prefix + ".w1", dec.w1},
                  {prefix + ".b1", dec.b1},
                  {prefix + ".w2", dec.w2},
                  {prefix + ".b2", dec.b2}};
  }
  RngStream batch_rng = base.child(6);
  constexpr int kEvalEvery = 200;
  constexpr int kMaxBatches = 20000;
  constexpr double kPlateauDelta = 1e-3;
  constexpr int kPatience = 5;
  double best_ce = std::numeric_limits<double>::infinity();
  int bad_evals = 0;
  for (int b = 0; b < kMaxBatches && !train.empty(); ++b) {
    if (b % kEvalEvery == 0 && !holdout.empty()) {
      double ce, top1;
      holdout_metrics(&ce, &top1);
      if (ce < best_ce - kPlateauDelta) {
        best_ce = ce;
        bad_evals = 0;
      } else if (++bad_evals >= kPatience) {
        break;
      }
    }
    Tape tape;
    Tensor acc;
    for (int k = 0; k < config.decoder_batch; ++k) {
      const Pair& p = train[batch_rng.next_below(static_cast<std::uint32_t>(train.size()))];
      Tensor pi = decode_action(tape, bundle, target.instance_id, p.s, p.z);
      accumulate(tape, acc, tape.cross_entropy(pi, p.posterior));
    }
    Tensor loss = tape.scale(acc, 1.0 / config.decoder_batch);
    if (!std::isfinite(loss.value()))
      throw DivergenceError("non-finite decoder loss during transfer");
    tape.backward(loss);
    std::vector<std::span<double>> grads;
    for (auto& [name, t] : dec_params) {
      Tensor handle = t;
      grads.push_back(handle.grad());
    }
    clip_global_norm(grads, config.clip_norm);
    for (auto& [name, t] : dec_params) {
      Tensor handle = t;
      rmsprop_step(handle, handle.grad(), bundle.opt.accumulator_for(name, handle),
                   decoder_opt);
      handle.zero_grad();
    }
    ++stats.minibatches;
  }
  holdout_metrics(&stats.holdout_ce, &stats.holdout_top1);
  return stats;
}

TrainResult full_transfer_finetune(const ModelBundle& bundle, const InstanceSpec& target,
                                   const TrainConfig& config, const std::string& run_id,
                                   const std::string& algorithm,
                                   std::uint64_t env_step_offset) {
  if (!bundle.has_instance(target.instance_id))
    throw ValidationError("instance_id",
                          "transfer decoder training must run before fine-tuning");
  TrainConfig cfg = config;
  cfg.use_sad_tr = false;
  cfg.use_ic = false;
  return learning_phase({target}, cfg, run_id, algorithm, env_step_offset, &bundle);
}

}  // namespace fmdp
