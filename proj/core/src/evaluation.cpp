#include "fmdp/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fmdp/dynamics.hpp"
#include "fmdp/errors.hpp"

namespace fmdp {

void RunManifest::absorb(const CurveRecord& rec) {
  auto it = instances.find(rec.instance_id);
  if (it == instances.end()) {
    instances.emplace(rec.instance_id, InstanceStats{rec.mean_return, rec.mean_return});
  } else {
    it->second.v_inf = std::min(it->second.v_inf, rec.mean_return);
    it->second.v_sup = std::max(it->second.v_sup, rec.mean_return);
  }
  if (!rec.run_id.empty()) run_ids.insert(rec.run_id);
}

int argmax_index(std::span<const double> values) {
  int best = 0;
  for (size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = static_cast<int>(i);
  return best;
}

int sample_index(std::span<const double> probs, RngStream& rng) {
  double u = rng.next_double();
  double cum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

double episode_return(const ModelBundle& bundle, const GraphContext& graph,
                      const InstanceSpec& spec, RngStream& rng, bool greedy) {
  bool nav = spec.domain_kind == DomainKind::Navigation;
  State s = spec.initial_state;
  double gamma = spec.discount;
  double ret = 0.0;
  double disc = 1.0;
  for (int t = 0; t < spec.horizon; ++t) {
    if (nav && spec.is_goal_state(s)) break;
    ret += disc * reward(spec, s);
    auto pi = policy_distribution(bundle, graph, spec.instance_id, s);
    int a = greedy ? argmax_index(pi) : sample_index(pi, rng);
    StepResult st = step(spec, s, a, rng);
    if (st.terminal) {
      if (nav && spec.is_drowned_state(st.next))
        ret += disc * gamma * drowned_tail_value(gamma, spec.horizon - t - 1);
      break;
    }
    s = st.next;
    disc *= gamma;
  }
  return ret;
}

EvalResult evaluate_policy(const ModelBundle& bundle, const InstanceSpec& spec, int episodes,
                           RngStream& rng, bool greedy) {
  if (episodes <= 0) throw std::invalid_argument("no episodes requested");
  ensure_compatible(bundle.sig, spec);
  bundle.decoder_for(spec.instance_id);  // missing decoder is an error
  GraphContext graph = make_graph_context(spec);
  double sum = 0.0, sumsq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    double r = episode_return(bundle, graph, spec, rng, greedy);
    sum += r;
    sumsq += r * r;
  }
  EvalResult res;
  res.mean_return = sum / episodes;
  if (episodes > 1) {
    double var = (sumsq - episodes * res.mean_return * res.mean_return) / (episodes - 1);
    res.std_error = std::sqrt(std::max(0.0, var) / episodes);
  }
  return res;
}

double alpha(double v, const RunManifest& manifest, const std::string& instance_id,
             bool* clamped) {
  auto it = manifest.instances.find(instance_id);
  if (it == manifest.instances.end())
    throw ValidationError("manifest", "no recorded bounds for instance '" + instance_id + "'");
  double span = it->second.v_sup - it->second.v_inf;
  if (!(span > 0.0))
    throw ValidationError("manifest", "degenerate bounds (v_sup == v_inf) for instance '" +
                                          instance_id + "'");
  double a = (v - it->second.v_inf) / span;
  bool clip = a < 0.0 || a > 1.0;
  if (clamped) *clamped = clip;
  return std::min(1.0, std::max(0.0, a));
}

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_f(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

constexpr const char* kCurveHeader =
    "run_id,algorithm,instance_id,env_steps,mean_return,stderr,episodes,wall_seconds,alpha";

}  // namespace

RunManifest load_manifest(const std::filesystem::path& path) {
  RunManifest m;
  std::ifstream in(path);
  if (!in) return m;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "manifest-version") {
      int v;
      is >> v;
      if (v != 1) throw ParseError(ln, 1, "unsupported manifest version");
    } else if (tag == "instance") {
      std::string id, kinf, ksup;
      double vinf, vsup;
      is >> id >> kinf >> vinf >> ksup >> vsup;
      if (!is || kinf != "vinf" || ksup != "vsup")
        throw ParseError(ln, 1, "expected 'instance <id> vinf <v> vsup <v>'");
      if (vsup < vinf) throw ParseError(ln, 1, "manifest has vsup < vinf");
      m.instances[id] = RunManifest::InstanceStats{vinf, vsup};
    } else if (tag == "run") {
      std::string id;
      is >> id;
      m.run_ids.insert(id);
    } else if (tag == "confighash") {
      std::string h;
      is >> h;
      m.config_hashes.insert(h);
    } else if (tag == "seed") {
      std::uint64_t s;
      is >> s;
      m.seeds.insert(s);
    } else {
      throw ParseError(ln, 1, "unknown manifest line '" + tag + "'");
    }
  }
  return m;
}

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
  out << "manifest-version 1\n";
  for (const auto& [id, st] : manifest.instances)
    out << "instance " << id << " vinf " << fmt_g(st.v_inf) << " vsup " << fmt_g(st.v_sup)
        << "\n";
  for (const auto& id : manifest.run_ids) out << "run " << id << "\n";
  for (const auto& h : manifest.config_hashes) out << "confighash " << h << "\n";
  for (const auto& s : manifest.seeds) out << "seed " << s << "\n";
}

RunManifest update_manifest(std::span<const CurveRecord> records,
                            const std::filesystem::path& path, const std::string& config_hash,
                            std::optional<std::uint64_t> seed) {
  RunManifest m = load_manifest(path);
  for (const auto& rec : records) m.absorb(rec);
  if (!config_hash.empty()) m.config_hashes.insert(config_hash);
  if (seed) m.seeds.insert(*seed);
  save_manifest(m, path);
  return m;
}

void write_curves(std::span<const CurveRecord> records, const RunManifest& manifest,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
  out << kCurveHeader << "\n";
  for (const auto& rec : records) {
    double a = 0.0;
    auto it = manifest.instances.find(rec.instance_id);
    if (it != manifest.instances.end() && it->second.v_sup > it->second.v_inf)
      a = alpha(rec.mean_return, manifest, rec.instance_id);
    out << rec.run_id << "," << rec.algorithm << "," << rec.instance_id << "," << rec.env_steps
        << "," << fmt_g(rec.mean_return) << "," << fmt_g(rec.std_error) << "," << rec.episodes
        << "," << fmt_g(rec.wall_seconds) << "," << fmt_f(a) << "\n";
  }
}

std::vector<CurveRecord> read_curves(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader)
    throw ParseError(1, 1, "bad curve CSV header");
  std::vector<CurveRecord> out;
  int ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    auto cols = split_csv_line(line);
    if (cols.size() != 9) throw ParseError(ln, 1, "expected 9 CSV columns");
    CurveRecord rec;
    rec.run_id = cols[0];
    rec.algorithm = cols[1];
    rec.instance_id = cols[2];
    rec.env_steps = std::stoull(cols[3]);
    rec.mean_return = std::stod(cols[4]);
    rec.std_error = std::stod(cols[5]);
    rec.episodes = std::stoi(cols[6]);
    rec.wall_seconds = std::stod(cols[7]);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace fmdp
