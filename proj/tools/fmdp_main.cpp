// Command-line front end: instance generation, multi-task training,
// two-step transfer, policy evaluation and the ablation variants.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fmdp/dynamics.hpp"
#include "fmdp/errors.hpp"
#include "fmdp/evaluation.hpp"
#include "fmdp/instance.hpp"
#include "fmdp/training.hpp"

namespace fs = std::filesystem;
using namespace fmdp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

InstanceSpec load_instance(const fs::path& path) {
  return parse_instance(read_file(path), path.stem().string());
}

// Every TrainConfig field gets a flag; only flags actually passed override
// the config file.
struct ConfigFlags {
  std::optional<int> workers_per_instance, rollout_len, eval_episodes, decoder_pairs,
      decoder_batch, embed_dim, hidden_dim;
  std::optional<double> decoder_learning_rate;
  std::optional<std::uint64_t> total_env_steps, seed, eval_interval;
  std::optional<double> lambda, lambda_tr, entropy_beta, learning_rate, rms_decay, rms_epsilon,
      clip_norm, gamma;
  std::optional<bool> use_sad_tr, use_ic, tr_independent_pairs, share_value_encoder;

  void attach(CLI::App* cmd) {
    cmd->add_option("--workers-per-instance", workers_per_instance,
                    "Parallel workers per source (1 = deterministic)");
    cmd->add_option("--steps,--total-env-steps", total_env_steps,
                    "Environment steps summed across workers");
    cmd->add_option("--rollout-len", rollout_len, "Steps per rollout segment");
    cmd->add_option("--lambda", lambda, "Instance-classifier weight");
    cmd->add_option("--lambda-tr", lambda_tr, "Transition-loss weight");
    cmd->add_option("--entropy-beta", entropy_beta, "Entropy bonus weight");
    cmd->add_option("--learning-rate", learning_rate, "RMSProp learning rate");
    cmd->add_option("--rms-decay", rms_decay, "RMSProp decay rho");
    cmd->add_option("--rms-epsilon", rms_epsilon, "RMSProp epsilon");
    cmd->add_option("--clip-norm", clip_norm, "Global gradient norm bound");
    cmd->add_option("--gamma", gamma, "Discount override (default: instance discount)");
    cmd->add_option("--use-sad-tr", use_sad_tr, "Train the transition module");
    cmd->add_option("--use-ic", use_ic, "Train the adversarial instance classifier");
    cmd->add_option("--tr-independent-pairs", tr_independent_pairs,
                    "Sample transition pairs off-rollout");
    cmd->add_option("--share-value-encoder", share_value_encoder,
                    "Value networks reuse the shared encoder weights");
    cmd->add_option("--seed", seed, "Master seed");
    cmd->add_option("--eval-interval", eval_interval, "Env steps between curve points");
    cmd->add_option("--eval-episodes", eval_episodes, "Episodes per curve point");
    cmd->add_option("--decoder-pairs", decoder_pairs, "Model-generated pairs for transfer");
    cmd->add_option("--decoder-batch", decoder_batch, "Transfer minibatch size");
    cmd->add_option("--decoder-learning-rate", decoder_learning_rate,
                    "RMSProp rate of the transfer decoder fit");
    cmd->add_option("--embed-dim", embed_dim, "State-action embedding width");
    cmd->add_option("--hidden-dim", hidden_dim, "Fully connected hidden width");
  }

  void apply(TrainConfig& cfg) const {
    if (workers_per_instance) cfg.workers_per_instance = *workers_per_instance;
    if (total_env_steps) cfg.total_env_steps = *total_env_steps;
    if (rollout_len) cfg.rollout_len = *rollout_len;
    if (lambda) cfg.lambda = *lambda;
    if (lambda_tr) cfg.lambda_tr = *lambda_tr;
    if (entropy_beta) cfg.entropy_beta = *entropy_beta;
    if (learning_rate) cfg.learning_rate = *learning_rate;
    if (rms_decay) cfg.rms_decay = *rms_decay;
    if (rms_epsilon) cfg.rms_epsilon = *rms_epsilon;
    if (clip_norm) cfg.clip_norm = *clip_norm;
    if (gamma) cfg.gamma = *gamma;
    if (use_sad_tr) cfg.use_sad_tr = *use_sad_tr;
    if (use_ic) cfg.use_ic = *use_ic;
    if (tr_independent_pairs) cfg.tr_independent_pairs = *tr_independent_pairs;
    if (share_value_encoder) cfg.share_value_encoder = *share_value_encoder;
    if (seed) cfg.seed = *seed;
    if (eval_interval) cfg.eval_interval = *eval_interval;
    if (eval_episodes) cfg.eval_episodes = *eval_episodes;
    if (decoder_pairs) cfg.decoder_pairs = *decoder_pairs;
    if (decoder_batch) cfg.decoder_batch = *decoder_batch;
    if (decoder_learning_rate) cfg.decoder_learning_rate = *decoder_learning_rate;
    if (embed_dim) cfg.embed_dim = *embed_dim;
    if (hidden_dim) cfg.hidden_dim = *hidden_dim;
  }
};

std::string variant_tag(const TrainConfig& cfg) {
  if (cfg.use_sad_tr && cfg.use_ic) return "full";
  if (cfg.use_sad_tr) return "gcn-sad";
  return "gcn";
}

TrainConfig make_config(const std::string& config_path, const ConfigFlags& flags) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = TrainConfig::from_text(read_file(config_path));
  flags.apply(cfg);
  return cfg;
}

void echo_config(const std::string& run_id, const std::string& algorithm,
                 const TrainConfig& cfg) {
  std::cout << "run_id " << run_id << "\n";
  std::cout << "algorithm " << algorithm << "\n";
  std::cout << "config_hash " << cfg.hash() << "\n";
  std::cout << cfg.to_text();
}

void persist_run(const std::vector<CurveRecord>& curves, const TrainConfig& cfg,
                 const std::string& curves_path, const std::string& manifest_path) {
  RunManifest manifest = update_manifest(curves, manifest_path, cfg.hash(), cfg.seed);
  if (!curves_path.empty()) write_curves(curves, manifest, curves_path);
}

int cmd_generate(const std::string& domain, int size, int count, std::uint64_t seed,
                 const std::string& out_dir) {
  DomainKind kind = domain_kind_from_name(domain);
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    InstanceSpec spec = generate_instance(kind, size, seed + static_cast<std::uint64_t>(i));
    for (const auto& w : validate_instance(spec)) std::cerr << "warning: " << w << "\n";
    fs::path path = fs::path(out_dir) / (spec.instance_id + ".inst");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
    out << serialize_instance(spec);
    std::cout << path.string() << "\n";
  }
  return kExitOk;
}

int cmd_train(const std::vector<std::string>& source_paths, const std::string& config_path,
              const ConfigFlags& flags, const std::string& out_ckpt,
              const std::string& curves_path, const std::string& manifest_path,
              std::string run_id, const std::string& forced_variant) {
  TrainConfig cfg = make_config(config_path, flags);
  if (!forced_variant.empty()) apply_variant(cfg, forced_variant);
  std::string algorithm = variant_tag(cfg);
  if (run_id.empty()) run_id = algorithm + "-s" + std::to_string(cfg.seed);

  std::vector<InstanceSpec> sources;
  for (const auto& p : source_paths) sources.push_back(load_instance(p));
  echo_config(run_id, algorithm, cfg);

  TrainResult result = learning_phase(sources, cfg, run_id, algorithm);
  if (!out_ckpt.empty()) save_bundle(result.bundle, out_ckpt);
  persist_run(result.curves, cfg, curves_path, manifest_path);
  std::cout << "env_steps " << result.env_steps << "\n";
  return kExitOk;
}

int cmd_baseline(const std::string& instance_path, const std::string& config_path,
                 const ConfigFlags& flags, const std::string& out_ckpt,
                 const std::string& curves_path, const std::string& manifest_path,
                 std::string run_id) {
  TrainConfig cfg = make_config(config_path, flags);
  cfg.use_sad_tr = false;
  cfg.use_ic = false;
  if (run_id.empty()) run_id = "a3c-s" + std::to_string(cfg.seed);

  InstanceSpec spec = load_instance(instance_path);
  echo_config(run_id, "a3c", cfg);
  TrainResult result = learning_phase({spec}, cfg, run_id, "a3c");
  if (!out_ckpt.empty()) save_bundle(result.bundle, out_ckpt);
  persist_run(result.curves, cfg, curves_path, manifest_path);
  std::cout << "env_steps " << result.env_steps << "\n";
  return kExitOk;
}

int cmd_transfer(const std::string& ckpt, const std::string& target_path,
                 const std::string& mode, const std::string& config_path,
                 const ConfigFlags& flags, const std::string& out_ckpt,
                 const std::string& curves_path, const std::string& manifest_path,
                 std::string run_id) {
  if (mode != "zero-shot" && mode != "full")
    throw CLI::ValidationError("--mode", "must be zero-shot or full");
  TrainConfig cfg = make_config(config_path, flags);
  std::string algorithm = variant_tag(cfg);
  if (run_id.empty()) run_id = algorithm + "-transfer-s" + std::to_string(cfg.seed);

  ModelBundle bundle = load_bundle(ckpt);
  InstanceSpec target = load_instance(target_path);
  ensure_compatible(bundle.sig, target);
  echo_config(run_id, algorithm, cfg);

  TransferStats stats = transfer_decoder_training(bundle, target, cfg);
  std::cout << "decoder_pairs " << (stats.pairs_trained + stats.pairs_heldout) << "\n";
  std::cout << "pairs_skipped " << stats.pairs_skipped << "\n";
  std::cout << "holdout_ce " << stats.holdout_ce << "\n";
  std::cout << "holdout_top1 " << stats.holdout_top1 << "\n";
  std::cout << "uniform_ce " << stats.uniform_ce << "\n";

  std::uint64_t offset = static_cast<std::uint64_t>(cfg.decoder_pairs);
  std::vector<CurveRecord> curves;
  {
    RngStream eval_rng = RngStream(cfg.seed).child(5).child(0).child(9999);
    EvalResult res = evaluate_policy(bundle, target, cfg.eval_episodes, eval_rng, true);
    CurveRecord rec;
    rec.run_id = run_id;
    rec.algorithm = algorithm;
    rec.instance_id = target.instance_id;
    rec.env_steps = offset;  // x axis includes the decoder sample count
    rec.mean_return = res.mean_return;
    rec.std_error = res.std_error;
    rec.episodes = cfg.eval_episodes;
    curves.push_back(rec);
    std::cout << "zero_shot_mean " << res.mean_return << "\n";
  }

  if (mode == "full") {
    TrainResult fine = full_transfer_finetune(bundle, target, cfg, run_id, algorithm, offset);
    bundle = std::move(fine.bundle);
    curves.insert(curves.end(), fine.curves.begin(), fine.curves.end());
  }
  if (!out_ckpt.empty()) save_bundle(bundle, out_ckpt);
  persist_run(curves, cfg, curves_path, manifest_path);
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt, const std::string& instance_path, int episodes,
                 bool sampled, std::uint64_t eval_seed) {
  ModelBundle bundle = load_bundle(ckpt);
  InstanceSpec spec = load_instance(instance_path);
  RngStream rng(eval_seed);
  EvalResult res = evaluate_policy(bundle, spec, episodes, rng, !sampled);
  std::cout << "mean " << res.mean_return << " stderr " << res.std_error << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factored-MDP transfer planning laboratory"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write random instance files");
  std::string gen_domain, gen_out_dir = ".";
  int gen_size = 5, gen_count = 1;
  std::uint64_t gen_seed = 1;
  gen->add_option("--domain", gen_domain, "sysadmin, gameoflife or navigation")->required();
  gen->add_option("--size", gen_size, "Number of state variables")->required();
  gen->add_option("--count", gen_count, "Instances to generate");
  gen->add_option("--seed", gen_seed, "Seed of the first instance");
  gen->add_option("--out-dir", gen_out_dir, "Output directory");

  // train
  auto* train = app.add_subcommand("train", "Multi-task learning phase over source instances");
  std::vector<std::string> train_sources;
  std::string train_config, train_out, train_curves, train_manifest = "manifest.txt",
              train_run_id;
  ConfigFlags train_flags;
  train->add_option("--sources", train_sources, "Source instance files")->required()
      ->expected(-1);
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--out", train_out, "Checkpoint to write");
  train->add_option("--curves", train_curves, "Learning-curve CSV to write");
  train->add_option("--manifest", train_manifest, "Run manifest to update");
  train->add_option("--run-id", train_run_id, "Run identifier for curve records");
  train_flags.attach(train);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train a named architecture variant");
  std::string ablate_variant;
  std::vector<std::string> ablate_sources;
  std::string ablate_config, ablate_out, ablate_curves, ablate_manifest = "manifest.txt",
              ablate_run_id;
  ConfigFlags ablate_flags;
  ablate->add_option("--variant", ablate_variant, "gcn, gcn-sad or full")->required();
  ablate->add_option("--sources", ablate_sources, "Source instance files")->required()
      ->expected(-1);
  ablate->add_option("--config", ablate_config, "key=value config file");
  ablate->add_option("--out", ablate_out, "Checkpoint to write");
  ablate->add_option("--curves", ablate_curves, "Learning-curve CSV to write");
  ablate->add_option("--manifest", ablate_manifest, "Run manifest to update");
  ablate->add_option("--run-id", ablate_run_id, "Run identifier for curve records");
  ablate_flags.attach(ablate);

  // transfer
  auto* transfer = app.add_subcommand("transfer", "Two-step transfer to a target instance");
  std::string tr_ckpt, tr_target, tr_mode = "zero-shot", tr_config, tr_out, tr_curves,
              tr_manifest = "manifest.txt", tr_run_id;
  ConfigFlags tr_flags;
  transfer->add_option("--ckpt", tr_ckpt, "Checkpoint from the learning phase")->required();
  transfer->add_option("--target", tr_target, "Target instance file")->required();
  transfer->add_option("--mode", tr_mode, "zero-shot or full");
  transfer->add_option("--config", tr_config, "key=value config file");
  transfer->add_option("--out", tr_out, "Checkpoint to write (includes the new decoder)");
  transfer->add_option("--curves", tr_curves, "Learning-curve CSV to write");
  transfer->add_option("--manifest", tr_manifest, "Run manifest to update");
  transfer->add_option("--run-id", tr_run_id, "Run identifier for curve records");
  tr_flags.attach(transfer);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on an instance");
  std::string ev_ckpt, ev_instance;
  int ev_episodes = 100;
  bool ev_sampled = false;
  std::uint64_t ev_seed = 12345;
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  eval->add_option("--instance", ev_instance, "Instance file")->required();
  eval->add_option("--episodes", ev_episodes, "Evaluation episodes");
  eval->add_flag("--sampled", ev_sampled, "Sample actions instead of greedy argmax");
  eval->add_option("--eval-seed", ev_seed, "Evaluation stream seed");

  // baseline-a3c
  auto* baseline = app.add_subcommand("baseline-a3c", "From-scratch single-instance baseline");
  std::string bl_instance, bl_config, bl_out, bl_curves, bl_manifest = "manifest.txt",
              bl_run_id;
  ConfigFlags bl_flags;
  baseline->add_option("--instance", bl_instance, "Instance file")->required();
  baseline->add_option("--config", bl_config, "key=value config file");
  baseline->add_option("--out", bl_out, "Checkpoint to write");
  baseline->add_option("--curves", bl_curves, "Learning-curve CSV to write");
  baseline->add_option("--manifest", bl_manifest, "Run manifest to update");
  baseline->add_option("--run-id", bl_run_id, "Run identifier for curve records");
  bl_flags.attach(baseline);

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return cmd_generate(gen_domain, gen_size, gen_count, gen_seed, gen_out_dir);
    if (train->parsed())
      return cmd_train(train_sources, train_config, train_flags, train_out, train_curves,
                       train_manifest, train_run_id, "");
    if (ablate->parsed())
      return cmd_train(ablate_sources, ablate_config, ablate_flags, ablate_out, ablate_curves,
                       ablate_manifest, ablate_run_id, ablate_variant);
    if (transfer->parsed())
      return cmd_transfer(tr_ckpt, tr_target, tr_mode, tr_config, tr_flags, tr_out, tr_curves,
                          tr_manifest, tr_run_id);
    if (eval->parsed()) return cmd_evaluate(ev_ckpt, ev_instance, ev_episodes, ev_sampled, ev_seed);
    if (baseline->parsed())
      return cmd_baseline(bl_instance, bl_config, bl_flags, bl_out, bl_curves, bl_manifest,
                          bl_run_id);
    std::cerr << "error: no subcommand\n";
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
