#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fmdp/networks.hpp"
#include "fmdp/rng.hpp"

namespace fmdp {

struct EvalResult {
  double mean_return = 0.0;
  double std_error = 0.0;
};

// One point of a learning curve.
struct CurveRecord {
  std::string run_id;
  std::string algorithm;
  std::string instance_id;
  std::uint64_t env_steps = 0;
  double mean_return = 0.0;
  double std_error = 0.0;
  int episodes = 100;
  double wall_seconds = 0.0;

  bool operator==(const CurveRecord&) const = default;
};

// Per-instance return bounds plus run bookkeeping; the reference frame for
// every alpha computation.
struct RunManifest {
  struct InstanceStats {
    double v_inf = 0.0;
    double v_sup = 0.0;
  };
  std::map<std::string, InstanceStats> instances;
  std::set<std::string> run_ids;
  std::set<std::string> config_hashes;
  std::set<std::uint64_t> seeds;

  void absorb(const CurveRecord& rec);
};

int argmax_index(std::span<const double> values);
int sample_index(std::span<const double> probs, RngStream& rng);

// Discounted return of one full-horizon episode from the initial state.
// Navigation episodes that end early are accounted exactly: goal absorption
// contributes zero, drowning contributes -1 per remaining step.
double episode_return(const ModelBundle& bundle, const GraphContext& graph,
                      const InstanceSpec& spec, RngStream& rng, bool greedy);

// Mean and standard error over `episodes` episodes. Deterministic for a
// fixed stream. Action sampling (when not greedy) and environment draws share
// the stream, action first.
EvalResult evaluate_policy(const ModelBundle& bundle, const InstanceSpec& spec, int episodes,
                           RngStream& rng, bool greedy);

// (v - v_inf) / (v_sup - v_inf), clamped to [0, 1]; *clamped reports whether
// clamping occurred. Throws on an unknown instance or a degenerate manifest.
double alpha(double v, const RunManifest& manifest, const std::string& instance_id,
             bool* clamped = nullptr);

RunManifest load_manifest(const std::filesystem::path& path);  // empty if absent
void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);

// Read-merge-write: widens per-instance bounds to span the new records and
// unions the bookkeeping sets. Returns the merged manifest.
RunManifest update_manifest(std::span<const CurveRecord> records,
                            const std::filesystem::path& path,
                            const std::string& config_hash = "",
                            std::optional<std::uint64_t> seed = std::nullopt);

// CSV with header run_id,algorithm,instance_id,env_steps,mean_return,stderr,
// episodes,wall_seconds,alpha. The alpha column is computed against the given
// manifest (0 when the manifest cannot price the record).
void write_curves(std::span<const CurveRecord> records, const RunManifest& manifest,
                  const std::filesystem::path& path);

std::vector<CurveRecord> read_curves(const std::filesystem::path& path);

}  // namespace fmdp
