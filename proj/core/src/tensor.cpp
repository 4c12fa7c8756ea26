#include "fmdp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fmdp/errors.hpp"

namespace fmdp {

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->rows = rows;
  t.impl_->cols = cols;
  t.impl_->v.assign(static_cast<size_t>(rows) * cols, 0.0);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> values, bool requires_grad) {
  if (static_cast<int>(values.size()) != rows * cols)
    throw std::invalid_argument("tensor value count does not match shape");
  Tensor t = zeros(rows, cols, requires_grad);
  t.impl_->v = std::move(values);
  return t;
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  int n = static_cast<int>(values.size());
  return matrix(1, n, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return matrix(1, 1, {value}, requires_grad);
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value() requires a 1x1 tensor");
  return impl_->v[0];
}

std::span<double> Tensor::grad() {
  if (impl_->g.empty()) impl_->g.assign(impl_->v.size(), 0.0);
  return impl_->g;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->g.empty()) std::fill(impl_->g.begin(), impl_->g.end(), 0.0);
}

Tensor Tensor::detached_copy() const {
  Tensor t = zeros(rows(), cols(), false);
  t.impl_->v = impl_->v;
  return t;
}

double elu_value(double x) { return x >= 0.0 ? x : std::expm1(x); }

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor Tape::make_output(int rows, int cols, const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros(rows, cols);
  out.impl_->tape_produced = true;
  out.impl_->requires_grad =
      a.requires_grad() || (b.defined() && b.requires_grad());
  return out;
}

void Tape::record(Op op, Tensor a, Tensor b, Tensor out, double c, int index,
                  std::vector<double> target) {
  nodes_.push_back(Node{op, std::move(a), std::move(b), std::move(out), c, index,
                        std::move(target)});
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Tensor out = make_output(a.rows(), b.cols(), a, b);
  int m = a.rows(), k = a.cols(), n = b.cols();
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &ov[i * n];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  record(Op::MatMul, a, b, out);
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_output(a.rows(), a.cols(), a, b);
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  record(Op::Add, a, b, out);
  return out;
}

Tensor Tape::add_rowwise(const Tensor& m, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != m.cols())
    throw std::invalid_argument("add_rowwise: bias must be 1 x cols");
  Tensor out = make_output(m.rows(), m.cols(), m, bias);
  auto mv = m.values(), bv = bias.values();
  auto ov = out.values();
  int cols = m.cols();
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < cols; ++c) ov[r * cols + c] = mv[r * cols + c] + bv[c];
  record(Op::AddRowwise, m, bias, out);
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_output(a.rows(), a.cols(), a, b);
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  record(Op::Mul, a, b, out);
  return out;
}

Tensor Tape::elu(const Tensor& x) {
  Tensor out = make_output(x.rows(), x.cols(), x);
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = elu_value(xv[i]);
  record(Op::Elu, x, Tensor(), out);
  return out;
}

Tensor Tape::softmax_row(const Tensor& x) {
  if (x.rows() != 1) throw std::invalid_argument("softmax_row: expected a row vector");
  Tensor out = make_output(1, x.cols(), x);
  auto xv = x.values();
  auto ov = out.values();
  double mx = *std::max_element(xv.begin(), xv.end());
  double total = 0.0;
  for (size_t i = 0; i < ov.size(); ++i) {
    ov[i] = std::exp(xv[i] - mx);
    total += ov[i];
  }
  for (auto& v : ov) v /= total;
  record(Op::SoftmaxRow, x, Tensor(), out);
  return out;
}

Tensor Tape::log_eps(const Tensor& x) {
  Tensor out = make_output(x.rows(), x.cols(), x);
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(xv[i] + kLogEps);
  record(Op::LogEps, x, Tensor(), out);
  return out;
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != 1 || b.rows() != 1)
    throw std::invalid_argument("concat_cols: expected row vectors");
  Tensor out = make_output(1, a.cols() + b.cols(), a, b);
  auto ov = out.values();
  std::copy(a.values().begin(), a.values().end(), ov.begin());
  std::copy(b.values().begin(), b.values().end(), ov.begin() + a.cols());
  record(Op::ConcatCols, a, b, out);
  return out;
}

Tensor Tape::flatten_row(const Tensor& m) {
  Tensor out = make_output(1, m.size(), m);
  std::copy(m.values().begin(), m.values().end(), out.values().begin());
  record(Op::FlattenRow, m, Tensor(), out);
  return out;
}

Tensor Tape::pick(const Tensor& x, int flat_index) {
  if (flat_index < 0 || flat_index >= x.size())
    throw std::out_of_range("pick: index out of range");
  Tensor out = make_output(1, 1, x);
  out.values()[0] = x.values()[flat_index];
  record(Op::Pick, x, Tensor(), out, 0.0, flat_index);
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  Tensor out = make_output(1, 1, x);
  double total = 0.0;
  for (double v : x.values()) total += v;
  out.values()[0] = total;
  record(Op::Sum, x, Tensor(), out);
  return out;
}

Tensor Tape::scale(const Tensor& x, double c) {
  Tensor out = make_output(x.rows(), x.cols(), x);
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = c * xv[i];
  record(Op::Scale, x, Tensor(), out, c);
  return out;
}

Tensor Tape::add_const(const Tensor& x, double c) {
  Tensor out = make_output(x.rows(), x.cols(), x);
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + c;
  record(Op::AddConst, x, Tensor(), out, c);
  return out;
}

Tensor Tape::square(const Tensor& x) {
  Tensor out = make_output(x.rows(), x.cols(), x);
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * xv[i];
  record(Op::Square, x, Tensor(), out);
  return out;
}

Tensor Tape::grad_reverse(const Tensor& x, double lambda) {
  Tensor out = make_output(x.rows(), x.cols(), x);
  std::copy(x.values().begin(), x.values().end(), out.values().begin());
  record(Op::GradReverse, x, Tensor(), out, lambda);
  return out;
}

Tensor Tape::cross_entropy(const Tensor& probs, std::span<const double> target) {
  if (probs.rows() != 1 || static_cast<size_t>(probs.cols()) != target.size())
    throw std::invalid_argument("cross_entropy: probs/target shape mismatch");
  Tensor out = make_output(1, 1, probs);
  auto pv = probs.values();
  double loss = 0.0;
  for (size_t i = 0; i < target.size(); ++i) loss -= target[i] * std::log(pv[i] + kLogEps);
  out.values()[0] = loss;
  record(Op::CrossEntropy, probs, Tensor(), out, 0.0, 0,
         std::vector<double>(target.begin(), target.end()));
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  if (!loss.tape_produced())
    throw std::invalid_argument("backward: loss was not produced on a tape");
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->out.has_grad()) continue;  // nothing upstream reached this node
    if (it->out.requires_grad()) backward_node(*it);
  }
  nodes_.clear();
}

void Tape::backward_node(Node& node) {
  Tensor& out = node.out;
  auto og = out.grad();
  auto push = [&](const Tensor& t) {
    Tensor handle = t;  // shared storage; grad lives on the impl
    return handle.grad();
  };

  switch (node.op) {
    case Op::MatMul: {
      const Tensor& a = node.a;
      const Tensor& b = node.b;
      int m = a.rows(), k = a.cols(), n = b.cols();
      if (a.requires_grad()) {
        auto ag = push(a);
        auto bv = b.values();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* brow = &bv[p * n];
            const double* grow = &og[i * n];
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ag[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        auto bg = push(b);
        auto av = a.values();
        for (int p = 0; p < k; ++p)
          for (int i = 0; i < m; ++i) {
            double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* grow = &og[i * n];
            double* brow = &bg[p * n];
            for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
          }
      }
      break;
    }
    case Op::Add: {
      for (const Tensor* t : {&node.a, &node.b}) {
        if (!t->requires_grad()) continue;
        auto g = push(*t);
        for (size_t i = 0; i < g.size(); ++i) g[i] += og[i];
      }
      break;
    }
    case Op::AddRowwise: {
      int cols = node.a.cols();
      if (node.a.requires_grad()) {
        auto g = push(node.a);
        for (size_t i = 0; i < g.size(); ++i) g[i] += og[i];
      }
      if (node.b.requires_grad()) {
        auto g = push(node.b);
        for (int r = 0; r < node.a.rows(); ++r)
          for (int c = 0; c < cols; ++c) g[c] += og[r * cols + c];
      }
      break;
    }
    case Op::Mul: {
      if (node.a.requires_grad()) {
        auto g = push(node.a);
        auto bv = node.b.values();
        for (size_t i = 0; i < g.size(); ++i) g[i] += og[i] * bv[i];
      }
      if (node.b.requires_grad()) {
        auto g = push(node.b);
        auto av = node.a.values();
        for (size_t i = 0; i < g.size(); ++i) g[i] += og[i] * av[i];
      }
      break;
    }
    case Op::Elu: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      auto xv = node.a.values();
      auto ov = out.values();
      for (size_t i = 0; i < g.size(); ++i)
        g[i] += og[i] * (xv[i] >= 0.0 ? 1.0 : ov[i] + 1.0);
      break;
    }
    case Op::SoftmaxRow: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      auto pv = out.values();
      double dot = 0.0;
      for (size_t i = 0; i < g.size(); ++i) dot += og[i] * pv[i];
      for (size_t i = 0; i < g.size(); ++i) g[i] += pv[i] * (og[i] - dot);
      break;
    }
    case Op::LogEps: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      auto xv = node.a.values();
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i] / (xv[i] + kLogEps);
      break;
    }
    case Op::ConcatCols: {
      int ka = node.a.cols();
      if (node.a.requires_grad()) {
        auto g = push(node.a);
        for (int i = 0; i < ka; ++i) g[i] += og[i];
      }
      if (node.b.requires_grad()) {
        auto g = push(node.b);
        for (int i = 0; i < node.b.cols(); ++i) g[i] += og[ka + i];
      }
      break;
    }
    case Op::FlattenRow: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i];
      break;
    }
    case Op::Pick: {
      if (!node.a.requires_grad()) break;
      push(node.a)[node.index] += og[0];
      break;
    }
    case Op::Sum: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      for (auto& v : g) v += og[0];
      break;
    }
    case Op::Scale: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      for (size_t i = 0; i < g.size(); ++i) g[i] += node.c * og[i];
      break;
    }
    case Op::AddConst: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i];
      break;
    }
    case Op::Square: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      auto xv = node.a.values();
      for (size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * xv[i] * og[i];
      break;
    }
    case Op::GradReverse: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= node.c * og[i];
      break;
    }
    case Op::CrossEntropy: {
      if (!node.a.requires_grad()) break;
      auto g = push(node.a);
      auto pv = node.a.values();
      for (size_t i = 0; i < g.size(); ++i)
        g[i] -= og[0] * node.target[i] / (pv[i] + kLogEps);
      break;
    }
  }
}

std::vector<double> normalize_adjacency(const std::vector<std::uint8_t>& adjacency, int n) {
  if (static_cast<int>(adjacency.size()) != n * n)
    throw ValidationError("adjacency", "expected an n x n matrix");
  for (int i = 0; i < n; ++i) {
    if (adjacency[i * n + i] != 0)
      throw ValidationError("adjacency", "nonzero diagonal at node " + std::to_string(i));
    for (int j = i + 1; j < n; ++j)
      if (adjacency[i * n + j] != adjacency[j * n + i])
        throw ValidationError("adjacency", "not symmetric");
  }
  std::vector<double> deg(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double d = 1.0;  // self loop from A + I
    for (int j = 0; j < n; ++j) d += adjacency[i * n + j];
    deg[i] = d;
  }
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double hat = (i == j ? 1.0 : 0.0) + adjacency[i * n + j];
      if (hat != 0.0) out[i * n + j] = hat / std::sqrt(deg[i] * deg[j]);
    }
  return out;
}

Tensor gcn_layer(Tape& tape, const Tensor& features, const Tensor& a_norm,
                 const Tensor& weight) {
  if (a_norm.rows() != a_norm.cols() || a_norm.rows() != features.rows())
    throw std::invalid_argument("gcn_layer: adjacency/feature shape mismatch");
  if (features.cols() != weight.rows())
    throw std::invalid_argument("gcn_layer: feature/weight shape mismatch");
  return tape.elu(tape.matmul(tape.matmul(a_norm, features), weight));
}

}  // namespace fmdp
