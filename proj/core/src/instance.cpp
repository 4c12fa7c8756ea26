#include "fmdp/instance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>
#include <sstream>

#include "fmdp/rng.hpp"

namespace fmdp {

const char* domain_kind_name(DomainKind kind) {
  switch (kind) {
    case DomainKind::SysAdmin: return "sysadmin";
    case DomainKind::GameOfLife: return "gameoflife";
    case DomainKind::Navigation: return "navigation";
  }
  return "?";
}

DomainKind domain_kind_from_name(const std::string& name) {
  if (name == "sysadmin") return DomainKind::SysAdmin;
  if (name == "gameoflife") return DomainKind::GameOfLife;
  if (name == "navigation") return DomainKind::Navigation;
  throw ValidationError("domain_kind", "unknown domain kind '" + name + "'");
}

int State::popcount() const {
  int c = 0;
  for (auto b : bits) c += b ? 1 : 0;
  return c;
}

State State::one_hot(int n, int index) {
  State s = zeros(n);
  s.bits[index] = 1;
  return s;
}

int InstanceSpec::degree(int i) const {
  int d = 0;
  for (int j = 0; j < num_vars; ++j) d += adjacency[i * num_vars + j] ? 1 : 0;
  return d;
}

double InstanceSpec::constant(const std::string& name) const {
  auto it = constants.find(name);
  if (it == constants.end()) throw ValidationError("constants " + name, "missing constant");
  return it->second;
}

int InstanceSpec::goal_index() const {
  for (int i = 0; i < num_vars; ++i)
    if (node_feature(i, 0) != 0.0) return i;
  throw ValidationError("node_features", "navigation instance has no goal flag");
}

bool InstanceSpec::is_goal_state(const State& s) const {
  int g = goal_index();
  for (int i = 0; i < num_vars; ++i) {
    if ((s.bits[i] != 0) != (i == g)) return false;
  }
  return true;
}

bool InstanceSpec::is_drowned_state(const State& s) const { return s.popcount() == 0; }

bool InstanceSpec::operator==(const InstanceSpec& other) const {
  return domain_kind == other.domain_kind && instance_id == other.instance_id &&
         num_vars == other.num_vars && adjacency == other.adjacency &&
         num_node_features == other.num_node_features && node_features == other.node_features &&
         actions == other.actions && constants == other.constants &&
         initial_state == other.initial_state && horizon == other.horizon &&
         discount == other.discount;
}

std::vector<std::string> domain_actions(DomainKind kind, int num_vars) {
  std::vector<std::string> actions;
  switch (kind) {
    case DomainKind::SysAdmin:
      for (int i = 0; i < num_vars; ++i) actions.push_back("reboot(c" + std::to_string(i) + ")");
      actions.push_back("noop");
      break;
    case DomainKind::GameOfLife:
      for (int i = 0; i < num_vars; ++i) actions.push_back("set(c" + std::to_string(i) + ")");
      actions.push_back("noop");
      break;
    case DomainKind::Navigation:
      actions = {"up", "down", "left", "right"};
      break;
  }
  return actions;
}

namespace {

bool connected(int n, const std::vector<std::uint8_t>& adj) {
  if (n == 0) return true;
  std::vector<char> seen(n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v = 0; v < n; ++v) {
      if (adj[u * n + v] && !seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
    }
  }
  return count == n;
}

// Factorization rows x cols with rows <= cols, rows maximal (closest to
// square); requires both factors >= 2.
bool grid_dims(int n, int* rows, int* cols) {
  for (int r = static_cast<int>(std::sqrt(static_cast<double>(n))); r >= 2; --r) {
    if (n % r == 0 && n / r >= 2) {
      *rows = r;
      *cols = n / r;
      return true;
    }
  }
  return false;
}

// Infers (rows, cols) of a row-major 4-neighbor grid from its adjacency.
// Node 0 is a corner: its vertical neighbor (if any) sits at index cols.
bool infer_grid_from_adjacency(const InstanceSpec& spec, int* rows, int* cols) {
  int n = spec.num_vars;
  int vertical = -1;
  for (int j = n - 1; j >= 2; --j) {
    if (spec.adjacent(0, j)) {
      vertical = j;
      break;
    }
  }
  int c = vertical > 0 ? vertical : n;  // single-row grid when only neighbor is 1
  if (c <= 0 || n % c != 0) return false;
  *rows = n / c;
  *cols = c;
  // Verify the adjacency is exactly that grid graph.
  for (int i = 0; i < n; ++i) {
    int ri = i / c, ci = i % c;
    for (int j = 0; j < n; ++j) {
      int rj = j / c, cj = j % c;
      bool grid_edge = (ri == rj && std::abs(ci - cj) == 1) || (ci == cj && std::abs(ri - rj) == 1);
      if (spec.adjacent(i, j) != grid_edge) return false;
    }
  }
  return true;
}

void require_constant(const InstanceSpec& spec, const std::string& name, bool probability) {
  auto it = spec.constants.find(name);
  if (it == spec.constants.end())
    throw ValidationError("constants " + name, "required by domain " +
                              std::string(domain_kind_name(spec.domain_kind)) + " but missing");
  if (probability && (it->second < 0.0 || it->second > 1.0))
    throw ValidationError("constants " + name,
                          "probability out of range [0,1]: " + std::to_string(it->second));
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::vector<std::string> validate_instance(InstanceSpec& spec) {
  std::vector<std::string> warnings;
  int n = spec.num_vars;
  if (n < 1) throw ValidationError("num_vars", "must be >= 1");
  if (static_cast<int>(spec.adjacency.size()) != n * n)
    throw ValidationError("adjacency", "expected " + std::to_string(n * n) + " entries, got " +
                                           std::to_string(spec.adjacency.size()));
  for (int i = 0; i < n; ++i) {
    if (spec.adjacency[i * n + i] != 0)
      throw ValidationError("adjacency", "nonzero diagonal at node " + std::to_string(i));
    for (int j = 0; j < n; ++j) {
      auto v = spec.adjacency[i * n + j];
      if (v != 0 && v != 1)
        throw ValidationError("adjacency", "entries must be 0/1");
      if (v != spec.adjacency[j * n + i])
        throw ValidationError("adjacency", "not symmetric at (" + std::to_string(i) + "," +
                                               std::to_string(j) + ")");
    }
  }

  int expected_fs = spec.domain_kind == DomainKind::Navigation ? 2 : 0;
  if (spec.num_node_features != expected_fs)
    throw ValidationError("node_features", "domain expects " + std::to_string(expected_fs) +
                                               " channels, got " +
                                               std::to_string(spec.num_node_features));
  if (static_cast<int>(spec.node_features.size()) != n * spec.num_node_features)
    throw ValidationError("node_features", "row count must equal num_vars");

  auto expected_actions = domain_actions(spec.domain_kind, n);
  if (spec.actions.empty()) spec.actions = expected_actions;
  if (spec.actions != expected_actions)
    throw ValidationError("actions", "action list does not match domain kind");

  if (spec.initial_state.size() != n)
    throw ValidationError("initial_state", "length must equal num_vars");
  for (auto b : spec.initial_state.bits)
    if (b != 0 && b != 1) throw ValidationError("initial_state", "bits must be 0/1");

  if (spec.horizon <= 0) throw ValidationError("horizon", "must be positive");
  if (!(spec.discount > 0.0 && spec.discount <= 1.0))
    throw ValidationError("discount", "must be in (0,1]");

  switch (spec.domain_kind) {
    case DomainKind::SysAdmin: {
      require_constant(spec, "a", true);
      require_constant(spec, "b", true);
      require_constant(spec, "d", true);
      if (spec.constants.size() != 3)
        throw ValidationError("constants", "sysadmin takes exactly a, b, d");
      double ab = spec.constant("a") + spec.constant("b");
      if (ab > 1.0)
        warnings.push_back("sysadmin: a+b = " + fmt_real(ab) +
                           " exceeds 1; the on-probability will be clamped to [0,1]");
      break;
    }
    case DomainKind::GameOfLife: {
      require_constant(spec, "p_noise", true);
      if (spec.constants.size() != 1)
        throw ValidationError("constants", "gameoflife takes exactly p_noise");
      break;
    }
    case DomainKind::Navigation: {
      if (!spec.constants.empty())
        throw ValidationError("constants", "navigation takes no constants");
      if (!infer_grid_from_adjacency(spec, &spec.grid_rows, &spec.grid_cols))
        throw ValidationError("adjacency", "navigation adjacency is not a row-major grid graph");
      int goals = 0;
      for (int i = 0; i < n; ++i) {
        double g = spec.node_feature(i, 0);
        if (g != 0.0 && g != 1.0)
          throw ValidationError("node_features", "goal channel must be 0/1 at node " +
                                                     std::to_string(i));
        goals += g != 0.0 ? 1 : 0;
        double p = spec.node_feature(i, 1);
        if (p < 0.0 || p > 1.0)
          throw ValidationError("node_features", "drown probability out of range at node " +
                                                     std::to_string(i));
      }
      if (goals != 1)
        throw ValidationError("node_features",
                              "navigation needs exactly one goal cell, found " +
                                  std::to_string(goals));
      if (spec.initial_state.popcount() != 1)
        throw ValidationError("initial_state", "navigation initial state must be one-hot");
      break;
    }
  }
  if (spec.domain_kind == DomainKind::GameOfLife) {
    int r, c;
    if (grid_dims(n, &r, &c)) {
      spec.grid_rows = r;
      spec.grid_cols = c;
    }
  }
  return warnings;
}

void validate_experiment(const ExperimentSet& set) {
  if (set.sources.empty()) throw ValidationError("sources", "experiment needs at least one source");
  const InstanceSpec& ref = set.sources.front();
  std::vector<const InstanceSpec*> all;
  for (const auto& s : set.sources) all.push_back(&s);
  all.push_back(&set.target);
  std::vector<std::string> ids;
  for (const auto* s : all) {
    if (s->domain_kind != ref.domain_kind)
      throw ValidationError("domain_kind", "instances must share a domain kind");
    if (s->num_vars != ref.num_vars)
      throw ValidationError("num_vars", "equi-sized assumption violated: " +
                                            std::to_string(s->num_vars) + " vs " +
                                            std::to_string(ref.num_vars));
    if (s->num_actions() != ref.num_actions())
      throw ValidationError("actions", "instances must share the action count");
    ids.push_back(s->instance_id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ValidationError("instance_id", "instance ids must be distinct");
}

namespace {

struct LineReader {
  std::vector<std::string> lines;
  size_t pos = 0;

  explicit LineReader(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
  }
  bool done() const {
    for (size_t i = pos; i < lines.size(); ++i)
      if (!lines[i].empty()) return false;
    return true;
  }
  // Returns the next nonempty line without consuming it.
  const std::string& peek() {
    while (pos < lines.size() && lines[pos].empty()) ++pos;
    if (pos >= lines.size()) throw ParseError(static_cast<int>(lines.size()), 1, "unexpected end of file");
    return lines[pos];
  }
  int line_no() const { return static_cast<int>(pos) + 1; }
  void consume() { ++pos; }
};

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

int token_column(const std::string& line, const std::vector<std::string>& toks, size_t index) {
  // Best effort: locate the index-th token's start, 1-based.
  size_t p = 0;
  for (size_t i = 0; i <= index && i < toks.size(); ++i) {
    p = line.find(toks[i], p);
    if (p == std::string::npos) return 1;
    if (i < index) p += toks[i].size();
  }
  return static_cast<int>(p) + 1;
}

double parse_real(const std::string& tok, int line, int col) {
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    throw ParseError(line, col, "expected a real number, got '" + tok + "'");
  return v;
}

long parse_int(const std::string& tok, int line, int col) {
  char* end = nullptr;
  long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0')
    throw ParseError(line, col, "expected an integer, got '" + tok + "'");
  return v;
}

bool is_uint_pair(const std::vector<std::string>& toks) {
  if (toks.size() != 2) return false;
  for (const auto& t : toks)
    for (char ch : t)
      if (!std::isdigit(static_cast<unsigned char>(ch))) return false;
  return true;
}

}  // namespace

InstanceSpec parse_instance(const std::string& text, const std::string& instance_id) {
  LineReader rd(text);
  InstanceSpec spec;
  spec.instance_id = instance_id;

  {
    const std::string& line = rd.peek();
    auto toks = split_ws(line);
    int ln = rd.line_no();
    if (toks.size() != 8 || toks[0] != "domain" || toks[2] != "vars" || toks[4] != "horizon" ||
        toks[6] != "discount")
      throw ParseError(ln, 1,
                       "expected header 'domain <kind> vars <n> horizon <H> discount <g>'");
    spec.domain_kind = domain_kind_from_name(toks[1]);
    spec.num_vars = static_cast<int>(parse_int(toks[3], ln, token_column(line, toks, 3)));
    spec.horizon = static_cast<int>(parse_int(toks[5], ln, token_column(line, toks, 5)));
    spec.discount = parse_real(toks[7], ln, token_column(line, toks, 7));
    rd.consume();
  }
  if (spec.num_vars < 1) throw ValidationError("num_vars", "must be >= 1");
  int n = spec.num_vars;
  spec.num_node_features = spec.domain_kind == DomainKind::Navigation ? 2 : 0;
  spec.node_features.assign(static_cast<size_t>(n) * spec.num_node_features, 0.0);
  spec.adjacency.assign(static_cast<size_t>(n) * n, 0);

  if (!rd.done() && split_ws(rd.peek()).front() == "constants") {
    const std::string& line = rd.peek();
    auto toks = split_ws(line);
    int ln = rd.line_no();
    for (size_t i = 1; i < toks.size(); ++i) {
      auto eq = toks[i].find('=');
      if (eq == std::string::npos)
        throw ParseError(ln, token_column(line, toks, i), "expected <name>=<value>");
      std::string name = toks[i].substr(0, eq);
      double value = parse_real(toks[i].substr(eq + 1), ln, token_column(line, toks, i));
      if (!spec.constants.emplace(name, value).second)
        throw ParseError(ln, token_column(line, toks, i), "duplicate constant '" + name + "'");
    }
    rd.consume();
  }

  {
    const std::string& line = rd.peek();
    if (split_ws(line) != std::vector<std::string>{"edges"})
      throw ParseError(rd.line_no(), 1, "expected 'edges' block");
    rd.consume();
  }
  while (!rd.done()) {
    const std::string& line = rd.peek();
    auto toks = split_ws(line);
    if (!is_uint_pair(toks)) break;
    int ln = rd.line_no();
    long u = parse_int(toks[0], ln, token_column(line, toks, 0));
    long v = parse_int(toks[1], ln, token_column(line, toks, 1));
    if (u < 0 || v < 0 || u >= n || v >= n)
      throw ParseError(ln, 1, "edge endpoint out of range [0," + std::to_string(n - 1) + "]");
    if (u >= v)
      throw ParseError(ln, 1, "edges must be listed once as 'u v' with u < v");
    if (spec.adjacency[u * n + v])
      throw ParseError(ln, 1, "duplicate edge " + toks[0] + " " + toks[1]);
    spec.adjacency[u * n + v] = 1;
    spec.adjacency[v * n + u] = 1;
    rd.consume();
  }
  while (!rd.done() && split_ws(rd.peek()).front() == "nodefeat") {
    const std::string& line = rd.peek();
    auto toks = split_ws(line);
    int ln = rd.line_no();
    if (toks.size() != 4) throw ParseError(ln, 1, "expected 'nodefeat <node> <channel> <value>'");
    long node = parse_int(toks[1], ln, token_column(line, toks, 1));
    long channel = parse_int(toks[2], ln, token_column(line, toks, 2));
    double value = parse_real(toks[3], ln, token_column(line, toks, 3));
    if (node < 0 || node >= n)
      throw ParseError(ln, token_column(line, toks, 1), "nodefeat node out of range");
    if (channel < 0 || channel >= spec.num_node_features)
      throw ParseError(ln, token_column(line, toks, 2), "nodefeat channel out of range");
    spec.node_features[node * spec.num_node_features + channel] = value;
    rd.consume();
  }
  {
    const std::string& line = rd.peek();
    auto toks = split_ws(line);
    int ln = rd.line_no();
    if (toks.empty() || toks[0] != "init")
      throw ParseError(ln, 1, "expected 'init' line");
    if (static_cast<int>(toks.size()) != n + 1)
      throw ParseError(ln, 1, "init line must carry exactly " + std::to_string(n) + " bits");
    spec.initial_state.bits.resize(n);
    for (int i = 0; i < n; ++i) {
      const std::string& t = toks[i + 1];
      if (t != "0" && t != "1")
        throw ParseError(ln, token_column(line, toks, i + 1), "init bits must be 0 or 1");
      spec.initial_state.bits[i] = t == "1" ? 1 : 0;
    }
    rd.consume();
  }
  if (!rd.done())
    throw ParseError(rd.line_no(), 1, "unexpected trailing content '" + rd.peek() + "'");

  spec.actions = domain_actions(spec.domain_kind, n);
  validate_instance(spec);
  return spec;
}

std::string serialize_instance(const InstanceSpec& spec) {
  std::ostringstream out;
  out << "domain " << domain_kind_name(spec.domain_kind) << " vars " << spec.num_vars
      << " horizon " << spec.horizon << " discount " << fmt_real(spec.discount) << "\n";
  if (!spec.constants.empty()) {
    out << "constants";
    static const std::vector<std::string> order = {"a", "b", "d", "p_noise"};
    for (const auto& key : order) {
      auto it = spec.constants.find(key);
      if (it != spec.constants.end()) out << " " << key << "=" << fmt_real(it->second);
    }
    out << "\n";
  }
  out << "edges\n";
  int n = spec.num_vars;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v)
      if (spec.adjacency[u * n + v]) out << u << " " << v << "\n";
  for (int node = 0; node < n; ++node)
    for (int ch = 0; ch < spec.num_node_features; ++ch) {
      double v = spec.node_features[node * spec.num_node_features + ch];
      if (v != 0.0) out << "nodefeat " << node << " " << ch << " " << fmt_real(v) << "\n";
    }
  out << "init";
  for (auto b : spec.initial_state.bits) out << " " << (b ? 1 : 0);
  out << "\n";
  return out.str();
}

namespace {

double quantize6(double v) { return std::round(v * 1e6) / 1e6; }

std::vector<std::uint8_t> moore_adjacency(int rows, int cols) {
  int n = rows * cols;
  std::vector<std::uint8_t> adj(static_cast<size_t>(n) * n, 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          int r2 = r + dr, c2 = c + dc;
          if (r2 < 0 || r2 >= rows || c2 < 0 || c2 >= cols) continue;
          adj[(r * cols + c) * n + (r2 * cols + c2)] = 1;
        }
  return adj;
}

std::vector<std::uint8_t> grid4_adjacency(int rows, int cols) {
  int n = rows * cols;
  std::vector<std::uint8_t> adj(static_cast<size_t>(n) * n, 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int i = r * cols + c;
      if (c + 1 < cols) adj[i * n + (i + 1)] = adj[(i + 1) * n + i] = 1;
      if (r + 1 < rows) adj[i * n + (i + cols)] = adj[(i + cols) * n + i] = 1;
    }
  return adj;
}

}  // namespace

InstanceSpec generate_instance(DomainKind kind, int num_vars, std::uint64_t seed) {
  if (num_vars < 2) throw ValidationError("num_vars", "generator requires num_vars >= 2");
  // Domain kind and size are folded into the stream so that distinct
  // (kind, n, seed) triples give unrelated instances.
  RngStream rng = RngStream(seed)
                      .child(static_cast<std::uint64_t>(kind) + 1)
                      .child(static_cast<std::uint64_t>(num_vars));
  InstanceSpec spec;
  spec.domain_kind = kind;
  spec.num_vars = num_vars;
  spec.instance_id = std::string(domain_kind_name(kind)) + std::to_string(num_vars) + "-s" +
                     std::to_string(seed);
  spec.actions = domain_actions(kind, num_vars);
  int n = num_vars;

  switch (kind) {
    case DomainKind::SysAdmin: {
      spec.constants = {{"a", 0.45}, {"b", 0.5}, {"d", 0.1}};
      // Erdos-Renyi p=0.3, resampled until connected.
      for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<std::uint8_t> adj(static_cast<size_t>(n) * n, 0);
        for (int u = 0; u < n; ++u)
          for (int v = u + 1; v < n; ++v)
            if (rng.bernoulli(0.3)) adj[u * n + v] = adj[v * n + u] = 1;
        if (connected(n, adj)) {
          spec.adjacency = std::move(adj);
          break;
        }
      }
      if (spec.adjacency.empty())
        throw ValidationError("adjacency", "failed to sample a connected graph");
      spec.initial_state = State{std::vector<std::uint8_t>(n, 1)};
      break;
    }
    case DomainKind::GameOfLife: {
      int rows, cols;
      if (!grid_dims(n, &rows, &cols))
        throw ValidationError("num_vars", std::to_string(n) +
                                              " is not a rows x cols product with rows, cols >= 2");
      spec.adjacency = moore_adjacency(rows, cols);
      spec.constants = {{"p_noise", 0.1}};
      spec.initial_state.bits.resize(n);
      for (int i = 0; i < n; ++i) spec.initial_state.bits[i] = rng.bernoulli(0.5) ? 1 : 0;
      break;
    }
    case DomainKind::Navigation: {
      int rows, cols;
      if (!grid_dims(n, &rows, &cols))
        throw ValidationError("num_vars", std::to_string(n) +
                                              " is not a rows x cols product with rows, cols >= 2");
      spec.adjacency = grid4_adjacency(rows, cols);
      spec.num_node_features = 2;
      spec.node_features.assign(static_cast<size_t>(n) * 2, 0.0);
      int goal_col = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(cols)));
      int start_col = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(cols)));
      int goal = goal_col;                       // top row
      int start = (rows - 1) * cols + start_col; // bottom row
      spec.node_features[goal * 2 + 0] = 1.0;
      for (int r = 1; r < rows - 1; ++r)
        for (int c = 0; c < cols; ++c)
          spec.node_features[(r * cols + c) * 2 + 1] = quantize6(rng.uniform(0.05, 0.5));
      spec.initial_state = State::one_hot(n, start);
      break;
    }
  }

  validate_instance(spec);
  return spec;
}

}  // namespace fmdp
