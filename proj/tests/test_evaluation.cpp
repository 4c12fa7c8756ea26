#include "fmdp/evaluation.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fmdp/errors.hpp"
#include "fmdp/training.hpp"
#include "testutil.hpp"

using namespace fmdp;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Decoder biased to always pick the given action, regardless of state.
ModelBundle fixed_action_bundle(const InstanceSpec& spec, int action) {
  ModelBundle b = ModelBundle::initialize(make_signature({spec}), 1);
  for (auto& [name, t] : b.named_params()) {
    Tensor handle = t;
    std::fill(handle.values().begin(), handle.values().end(), 0.0);
  }
  FcStack& dec = b.decoder.at(spec.instance_id);
  dec.b2.values()[action] = 25.0;
  return b;
}

}  // namespace

TEST_CASE("greedy optimal policy on the tiny navigation fixture returns exactly -1") {
  InstanceSpec nav = fmdp::test::tiny_navigation_fixture(1.0);
  ModelBundle bundle = fixed_action_bundle(nav, 3);  // always move right
  RngStream rng(1);
  EvalResult res = evaluate_policy(bundle, nav, 10, rng, /*greedy=*/true);
  CHECK(res.mean_return == -1.0);
  CHECK(res.std_error == 0.0);
}

TEST_CASE("a policy that never reaches the goal pays every step") {
  InstanceSpec nav = fmdp::test::tiny_navigation_fixture(1.0);
  ModelBundle bundle = fixed_action_bundle(nav, 2);  // always move left
  RngStream rng(1);
  EvalResult res = evaluate_policy(bundle, nav, 5, rng, true);
  CHECK(res.mean_return == -40.0);  // horizon 40, -1 per step
}

TEST_CASE("evaluation rejects zero episodes and missing decoders") {
  InstanceSpec nav = fmdp::test::tiny_navigation_fixture(1.0);
  ModelBundle bundle = fixed_action_bundle(nav, 3);
  RngStream rng(1);
  CHECK_THROWS_AS(evaluate_policy(bundle, nav, 0, rng, true), std::invalid_argument);

  InstanceSpec other = nav;
  other.instance_id = "someone-else";
  CHECK_THROWS_AS(evaluate_policy(bundle, other, 5, rng, true), ValidationError);
}

TEST_CASE("random policy mean return matches exact enumeration within 3 stderr") {
  InstanceSpec spec = generate_instance(DomainKind::SysAdmin, 3, 5);
  double exact = fmdp::test::exact_random_policy_return(spec);

  // zero weights make the sampled policy exactly uniform
  ModelBundle bundle = ModelBundle::initialize(make_signature({spec}), 1);
  for (auto& [name, t] : bundle.named_params()) {
    Tensor handle = t;
    std::fill(handle.values().begin(), handle.values().end(), 0.0);
  }
  RngStream rng(42);
  EvalResult res = evaluate_policy(bundle, spec, 800, rng, /*greedy=*/false);
  CHECK(std::abs(res.mean_return - exact) <= 3.0 * res.std_error);
}

TEST_CASE("evaluation with a fixed seed is deterministic") {
  InstanceSpec spec = generate_instance(DomainKind::SysAdmin, 4, 9);
  ModelBundle bundle = ModelBundle::initialize(make_signature({spec}), 11);
  RngStream r1(7), r2(7);
  EvalResult a = evaluate_policy(bundle, spec, 50, r1, false);
  EvalResult b = evaluate_policy(bundle, spec, 50, r2, false);
  CHECK(a.mean_return == b.mean_return);
  CHECK(a.std_error == b.std_error);
}

TEST_CASE("alpha normalizes against the manifest bounds") {
  RunManifest m;
  m.instances["inst"] = RunManifest::InstanceStats{-10.0, 30.0};
  CHECK(alpha(30.0, m, "inst") == 1.0);
  CHECK(alpha(-10.0, m, "inst") == 0.0);
  CHECK(alpha(10.0, m, "inst") == doctest::Approx(0.5));

  bool clamped = false;
  CHECK(alpha(50.0, m, "inst", &clamped) == 1.0);
  CHECK(clamped);
  CHECK(alpha(-20.0, m, "inst", &clamped) == 0.0);
  CHECK(clamped);

  CHECK_THROWS_AS(alpha(0.0, m, "unknown"), ValidationError);
  m.instances["flat"] = RunManifest::InstanceStats{5.0, 5.0};
  CHECK_THROWS_AS(alpha(5.0, m, "flat"), ValidationError);
}

TEST_CASE("alpha is invariant to affine rescaling of all returns") {
  RngStream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    double vinf = rng.uniform(-100.0, 0.0);
    double vsup = vinf + rng.uniform(1.0, 100.0);
    double v = rng.uniform(vinf, vsup);
    double c = rng.uniform(0.1, 10.0);
    double k = rng.uniform(-50.0, 50.0);
    RunManifest m1, m2;
    m1.instances["i"] = RunManifest::InstanceStats{vinf, vsup};
    m2.instances["i"] = RunManifest::InstanceStats{c * vinf + k, c * vsup + k};
    CHECK(alpha(v, m1, "i") == doctest::Approx(alpha(c * v + k, m2, "i")).epsilon(1e-9));
  }
}

TEST_CASE("curve CSV round-trips and starts with the fixed header") {
  std::vector<CurveRecord> records;
  CurveRecord r;
  r.run_id = "run-1";
  r.algorithm = "full";
  r.instance_id = "sysadmin5-s1";
  r.env_steps = 12345;
  r.mean_return = 38.2275130421;
  r.std_error = 0.5233119;
  r.episodes = 100;
  r.wall_seconds = 0.0;
  records.push_back(r);
  r.env_steps = 20000;
  r.mean_return = 40.0;
  records.push_back(r);

  RunManifest m;
  for (const auto& rec : records) m.absorb(rec);
  auto path = temp_path("fmdp_curves_test.csv");
  write_curves(records, m, path);

  std::string text = slurp(path);
  CHECK(text.rfind("run_id,algorithm,instance_id,env_steps,mean_return,stderr,episodes,"
                   "wall_seconds,alpha\n", 0) == 0);

  auto back = read_curves(path);
  REQUIRE(back.size() == records.size());
  for (size_t i = 0; i < back.size(); ++i) CHECK(back[i] == records[i]);
  std::filesystem::remove(path);
}

TEST_CASE("empty record lists produce a header-only CSV") {
  auto path = temp_path("fmdp_curves_empty.csv");
  write_curves({}, RunManifest{}, path);
  CHECK(slurp(path) ==
        "run_id,algorithm,instance_id,env_steps,mean_return,stderr,episodes,wall_seconds,alpha\n");
  CHECK(read_curves(path).empty());
  std::filesystem::remove(path);
}

TEST_CASE("manifests widen with new records and persist idempotently") {
  auto path = temp_path("fmdp_manifest_test.txt");
  std::filesystem::remove(path);

  CurveRecord r;
  r.run_id = "r1";
  r.instance_id = "inst";
  r.mean_return = 10.0;
  std::vector<CurveRecord> first{r};
  RunManifest m1 = update_manifest(first, path, "abc123", 7);
  CHECK(m1.instances.at("inst").v_inf == 10.0);
  CHECK(m1.instances.at("inst").v_sup == 10.0);

  r.run_id = "r2";
  r.mean_return = 25.0;
  std::vector<CurveRecord> second{r};
  RunManifest m2 = update_manifest(second, path);
  CHECK(m2.instances.at("inst").v_inf == 10.0);
  CHECK(m2.instances.at("inst").v_sup == 25.0);  // raised by the new record
  CHECK(m2.run_ids.count("r1") == 1);
  CHECK(m2.run_ids.count("r2") == 1);
  CHECK(m2.config_hashes.count("abc123") == 1);
  CHECK(m2.seeds.count(7) == 1);

  std::string before = slurp(path);
  update_manifest(second, path);
  CHECK(slurp(path) == before);  // rewriting the same records changes nothing

  // alpha of the earlier record is recomputed against the widened bounds
  CHECK(alpha(10.0, m2, "inst") == 0.0);
  CHECK(alpha(25.0, m2, "inst") == 1.0);
  std::filesystem::remove(path);
}

TEST_CASE("alpha column stays in [0,1] after clamping") {
  RunManifest m;
  m.instances["i"] = RunManifest::InstanceStats{0.0, 10.0};
  std::vector<CurveRecord> records;
  CurveRecord r;
  r.run_id = "x";
  r.algorithm = "a3c";
  r.instance_id = "i";
  for (double v : {-5.0, 0.0, 5.0, 10.0, 15.0}) {
    r.mean_return = v;
    records.push_back(r);
  }
  auto path = temp_path("fmdp_curves_alpha.csv");
  write_curves(records, m, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    double a = std::stod(line.substr(line.rfind(',') + 1));
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint reload reproduces evaluation exactly") {
  InstanceSpec spec = generate_instance(DomainKind::SysAdmin, 5, 77);
  TrainConfig cfg;
  cfg.workers_per_instance = 1;
  cfg.total_env_steps = 200;
  cfg.eval_interval = 0;
  cfg.eval_episodes = 2;
  cfg.use_sad_tr = false;
  cfg.use_ic = false;
  cfg.seed = 3;
  ModelBundle bundle = learning_phase({spec}, cfg, "ck", "a3c").bundle.clone();

  auto path = temp_path("fmdp_eval_roundtrip.ckpt");
  save_bundle(bundle, path);
  ModelBundle back = load_bundle(path);

  RngStream r1(1234), r2(1234);
  EvalResult a = evaluate_policy(bundle, spec, 40, r1, true);
  EvalResult b = evaluate_policy(back, spec, 40, r2, true);
  CHECK(a.mean_return == b.mean_return);
  CHECK(a.std_error == b.std_error);
  std::filesystem::remove(path);
}

TEST_CASE("single-worker fixed-seed runs write byte-identical curve CSVs") {
  auto sources = std::vector<InstanceSpec>{generate_instance(DomainKind::SysAdmin, 4, 1),
                                           generate_instance(DomainKind::SysAdmin, 4, 2)};
  TrainConfig cfg;
  cfg.workers_per_instance = 1;
  cfg.total_env_steps = 300;
  cfg.eval_interval = 100;
  cfg.eval_episodes = 3;
  cfg.seed = 21;

  auto run_once = [&](const std::string& tag) {
    TrainResult res = learning_phase(sources, cfg, "det", "full");
    auto path = temp_path("fmdp_det_" + tag + ".csv");
    RunManifest m;
    for (const auto& rec : res.curves) m.absorb(rec);
    write_curves(res.curves, m, path);
    std::string text = slurp(path);
    std::filesystem::remove(path);
    return text;
  };
  CHECK(run_once("a") == run_once("b"));
}
