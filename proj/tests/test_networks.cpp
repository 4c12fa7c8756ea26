#include "fmdp/networks.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fmdp/errors.hpp"
#include "fmdp/rng.hpp"
#include "testutil.hpp"

using namespace fmdp;

namespace {

std::vector<InstanceSpec> sysadmin_sources(int n, int count, std::uint64_t seed0) {
  std::vector<InstanceSpec> out;
  for (int i = 0; i < count; ++i) out.push_back(generate_instance(DomainKind::SysAdmin, n, seed0 + i));
  return out;
}

ModelBundle zero_weight_bundle(const std::vector<InstanceSpec>& sources) {
  ModelBundle b = ModelBundle::initialize(make_signature(sources), 1);
  for (auto& [name, t] : b.named_params()) {
    Tensor handle = t;
    std::fill(handle.values().begin(), handle.values().end(), 0.0);
  }
  return b;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("state embedding has dimension num_vars * 7") {
  auto sources = sysadmin_sources(10, 2, 1);
  ModelBundle bundle = ModelBundle::initialize(make_signature(sources), 3);
  GraphContext graph = make_graph_context(sources[0]);
  Tape tape;
  Tensor e = encode_state(tape, bundle, graph, sources[0].initial_state);
  CHECK(e.cols() == 70);
  Tensor z = policy_forward(tape, bundle, e);
  CHECK(z.cols() == 20);
}

TEST_CASE("zero weights give zero embeddings, uniform decoding, zero value") {
  auto sources = sysadmin_sources(5, 2, 1);
  ModelBundle bundle = zero_weight_bundle(sources);
  GraphContext graph = make_graph_context(sources[0]);
  const std::string& id = sources[0].instance_id;
  State s = sources[0].initial_state;

  Tape tape;
  Tensor e = encode_state(tape, bundle, graph, s);
  for (double v : e.values()) CHECK(v == 0.0);
  Tensor z = policy_forward(tape, bundle, e);
  for (double v : z.values()) CHECK(v == 0.0);
  Tensor pi = decode_action(tape, bundle, id, s, z);
  for (double v : pi.values()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(value_forward(tape, bundle, id, graph, s).value() == 0.0);
  Tensor tr = transition_forward(tape, bundle, e, e);
  for (double v : tr.values()) CHECK(v == 0.0);
}

TEST_CASE("decoder and classifier outputs are simplex vectors") {
  auto sources = sysadmin_sources(5, 3, 5);
  ModelBundle bundle = ModelBundle::initialize(make_signature(sources), 11);
  GraphContext graph = make_graph_context(sources[1]);
  RngStream rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    State s = State::zeros(5);
    for (auto& b : s.bits) b = rng.bernoulli(0.5) ? 1 : 0;
    Tape tape;
    Tensor e = encode_state(tape, bundle, graph, s);
    Tensor z = policy_forward(tape, bundle, e);
    Tensor pi = decode_action(tape, bundle, sources[1].instance_id, s, z);
    double total = 0.0;
    for (double v : pi.values()) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    Tensor probs = classify_instance(tape, bundle, z, 0.7);
    CHECK(probs.cols() == 3);
    double ptotal = 0.0;
    for (double v : probs.values()) ptotal += v;
    CHECK(ptotal == doctest::Approx(1.0).epsilon(1e-9));

    // forward value independent of lambda
    Tensor probs2 = classify_instance(tape, bundle, z, 0.0);
    for (int i = 0; i < 3; ++i) CHECK(probs.values()[i] == probs2.values()[i]);
  }
}

TEST_CASE("encode_state is equivariant under node permutations") {
  RngStream rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 4 + static_cast<int>(rng.next_below(6));
    InstanceSpec spec = generate_instance(DomainKind::SysAdmin, n, rng.next_u64());
    ModelBundle bundle = ModelBundle::initialize(make_signature({spec}), rng.next_u64());

    State s = State::zeros(n);
    for (auto& b : s.bits) b = rng.bernoulli(0.5) ? 1 : 0;

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.next_below(i + 1)]);

    InstanceSpec permuted = spec;
    State sp = State::zeros(n);
    for (int i = 0; i < n; ++i) {
      sp.bits[perm[i]] = s.bits[i];
      for (int j = 0; j < n; ++j)
        permuted.adjacency[perm[i] * n + perm[j]] = spec.adjacency[i * n + j];
    }
    permuted.initial_state = sp;
    validate_instance(permuted);

    Tape tape;
    Tensor e = encode_state(tape, bundle, make_graph_context(spec), s);
    Tensor ep = encode_state(tape, bundle, make_graph_context(permuted), sp);
    int d = bundle.sig.gcn_out;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c)
        CHECK(ep.values()[perm[i] * d + c] ==
              doctest::Approx(e.values()[i * d + c]).epsilon(1e-9));
  }
}

TEST_CASE("every network head passes a finite-difference check") {
  auto sources = sysadmin_sources(4, 2, 9);
  GraphContext graph = make_graph_context(sources[0]);
  const std::string& id = sources[0].instance_id;
  RngStream rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    ModelBundle bundle = ModelBundle::initialize(make_signature(sources), rng.next_u64());
    State s = State::zeros(4);
    State s2 = State::zeros(4);
    for (auto& b : s.bits) b = rng.bernoulli(0.5) ? 1 : 0;
    for (auto& b : s2.bits) b = rng.bernoulli(0.5) ? 1 : 0;
    std::vector<double> target{0.1, 0.2, 0.3, 0.2, 0.2};  // n=4 -> 5 actions
    std::vector<double> ic_target{0.4, 0.6};

    // one scalar exercising encoder, policy, decoder, value and transition
    auto build = [&](Tape& tape) {
      Tensor e = encode_state(tape, bundle, graph, s);
      Tensor e2 = encode_state(tape, bundle, graph, s2);
      Tensor z = policy_forward(tape, bundle, e);
      Tensor pi = decode_action(tape, bundle, id, s, z);
      Tensor v = value_forward(tape, bundle, id, graph, s);
      Tensor ztr = transition_forward(tape, bundle, e, e2);
      Tensor pitr = decode_action(tape, bundle, id, s, ztr);
      Tensor loss = tape.cross_entropy(pi, target);
      loss = tape.add(loss, tape.square(v));
      return tape.add(loss, tape.cross_entropy(pitr, target));
    };
    // classifier head checked on a detached embedding, reversal disarmed
    auto build_ic = [&](Tape& tape) {
      Tensor e = encode_state(tape, bundle, graph, s);
      Tensor z = policy_forward(tape, bundle, e);
      Tensor ic = classify_instance(tape, bundle, z.detached_copy(), 0.0);
      return tape.cross_entropy(ic, ic_target);
    };

    bundle.zero_grads();
    {
      Tape tape;
      tape.backward(build(tape));
    }
    std::vector<Tensor> main_params{bundle.se.w1, bundle.se.w2, bundle.policy.w1,
                                    bundle.policy.b2, bundle.tr.w1, bundle.tr.b2,
                                    bundle.value.at(id).gcn.w1, bundle.value.at(id).fc.w2,
                                    bundle.decoder.at(id).w1, bundle.decoder.at(id).b2};
    auto value_fn = [&]() {
      Tape tape;
      return build(tape).value();
    };
    CHECK(fmdp::test::finite_diff_check(value_fn, main_params) <= 1e-4);

    bundle.zero_grads();
    {
      Tape tape;
      tape.backward(build_ic(tape));
    }
    auto ic_fn = [&]() {
      Tape tape;
      return build_ic(tape).value();
    };
    CHECK(fmdp::test::finite_diff_check(ic_fn, {bundle.ic.w1, bundle.ic.b1, bundle.ic.w2,
                                                bundle.ic.b2}) <= 1e-4);
  }
}

TEST_CASE("checkpoint round-trip restores parameters and optimizer state bit-exactly") {
  auto sources = sysadmin_sources(5, 2, 21);
  ModelBundle bundle = ModelBundle::initialize(make_signature(sources), 99);
  for (auto& [name, t] : bundle.named_params()) {
    Tensor handle = t;
    Tensor& acc = bundle.opt.accumulator_for(name, handle);
    for (auto& v : acc.values()) v = 0.125;
  }
  auto path = temp_path("fmdp_test_bundle.ckpt");
  save_bundle(bundle, path);
  ModelBundle back = load_bundle(path);

  CHECK(back.sig == bundle.sig);
  auto a = bundle.named_params();
  auto b = back.named_params();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    auto av = a[i].second.values();
    auto bv = b[i].second.values();
    REQUIRE(av.size() == bv.size());
    for (size_t k = 0; k < av.size(); ++k) CHECK(av[k] == bv[k]);
  }
  REQUIRE(back.opt.accumulators.size() == bundle.opt.accumulators.size());
  for (const auto& [name, acc] : bundle.opt.accumulators) {
    auto it = back.opt.accumulators.find(name);
    REQUIRE(it != back.opt.accumulators.end());
    for (size_t k = 0; k < acc.values().size(); ++k)
      CHECK(acc.values()[k] == it->second.values()[k]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoints reject mismatched experiments and truncation") {
  auto sources = sysadmin_sources(5, 2, 31);
  ModelBundle bundle = ModelBundle::initialize(make_signature(sources), 1);
  auto path = temp_path("fmdp_test_bundle2.ckpt");
  save_bundle(bundle, path);

  InstanceSpec other = generate_instance(DomainKind::SysAdmin, 6, 77);
  CHECK_THROWS_AS(ensure_compatible(load_bundle(path).sig, other), ValidationError);

  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_bundle(path), ParseError);

  std::ofstream(path, std::ios::trunc) << "not a checkpoint";
  CHECK_THROWS_AS(load_bundle(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("unknown instance ids are reported") {
  auto sources = sysadmin_sources(5, 2, 41);
  ModelBundle bundle = ModelBundle::initialize(make_signature(sources), 1);
  GraphContext graph = make_graph_context(sources[0]);
  Tape tape;
  Tensor e = encode_state(tape, bundle, graph, sources[0].initial_state);
  Tensor z = policy_forward(tape, bundle, e);
  CHECK_THROWS_AS(decode_action(tape, bundle, "missing", sources[0].initial_state, z),
                  ValidationError);
  CHECK_THROWS_AS(value_forward(tape, bundle, "missing", graph, sources[0].initial_state),
                  ValidationError);
}

TEST_CASE("shared value encoder reuses the state encoder weights") {
  auto sources = sysadmin_sources(4, 2, 51);
  BundleSignature sig = make_signature(sources, 20, 64, /*share_value_encoder=*/true);
  ModelBundle bundle = ModelBundle::initialize(sig, 5);
  CHECK(bundle.value.at(sources[0].instance_id).gcn.w1.same_object(bundle.se.w1));
  int se_count = 0;
  for (auto& [name, t] : bundle.named_params())
    if (t.same_object(bundle.se.w1)) ++se_count;
  CHECK(se_count == 1);

  ModelBundle snap = bundle.snapshot();
  CHECK(snap.value.at(sources[0].instance_id).gcn.w1.same_object(snap.se.w1));
}

TEST_CASE("a value network can regress a known return") {
  InstanceSpec spec = fmdp::test::deterministic_sysadmin_fixture(3);
  ModelBundle bundle = ModelBundle::initialize(make_signature({spec}), 17);
  GraphContext graph = make_graph_context(spec);
  const std::string& id = spec.instance_id;
  State s0{{1, 1, 1}};
  double target_return = 3.0;

  RmsPropConfig cfg{1e-2, 0.99, 1e-6};
  for (int iter = 0; iter < 400; ++iter) {
    Tape tape;
    Tensor v = value_forward(tape, bundle, id, graph, s0);
    Tensor diff = tape.add_const(tape.scale(v, -1.0), target_return);
    tape.backward(tape.square(diff));
    const ValueNet& vn = bundle.value_for(id);
    std::vector<std::pair<std::string, Tensor>> params = {
        {"g1", vn.gcn.w1}, {"g2", vn.gcn.w2}, {"w1", vn.fc.w1},
        {"b1", vn.fc.b1},  {"w2", vn.fc.w2},  {"b2", vn.fc.b2}};
    for (auto& [name, t] : params) {
      Tensor handle = t;
      rmsprop_step(handle, handle.grad(), bundle.opt.accumulator_for("regress/" + name, handle),
                   cfg);
      handle.zero_grad();
    }
  }
  Tape tape;
  double v = value_forward(tape, bundle, id, graph, s0).value();
  CHECK(std::abs(v - target_return) <= 0.1 * target_return);
}
