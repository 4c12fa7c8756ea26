#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fmdp {

// Dense rank-2 real array with an optional gradient buffer. Tensors are
// cheap shared handles; scalars are 1x1, row vectors 1xk. Gradients
// accumulate additively across backward passes until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor matrix(int rows, int cols, std::vector<double> values,
                       bool requires_grad = false);
  static Tensor row(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  int rows() const { return impl_->rows; }
  int cols() const { return impl_->cols; }
  int size() const { return impl_->rows * impl_->cols; }
  std::vector<int> shape() const { return {impl_->rows, impl_->cols}; }

  std::span<double> values() { return impl_->v; }
  std::span<const double> values() const { return impl_->v; }
  double at(int r, int c) const { return impl_->v[r * impl_->cols + c]; }
  double value() const;  // 1x1 only

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  bool tape_produced() const { return impl_->tape_produced; }

  // Allocated (zeroed) on first access.
  std::span<double> grad();
  bool has_grad() const { return impl_ && !impl_->g.empty(); }
  void zero_grad();

  Tensor detached_copy() const;
  bool same_object(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    int rows = 0, cols = 0;
    std::vector<double> v;
    std::vector<double> g;
    bool requires_grad = false;
    bool tape_produced = false;
  };
  std::shared_ptr<Impl> impl_;
  friend class Tape;
};

// Ordered record of primitive applications. backward() traverses the record
// in exact reverse order, accumulating gradients into every tensor that
// requires them, then clears the record.
class Tape {
 public:
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor add_rowwise(const Tensor& m, const Tensor& bias);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor elu(const Tensor& x);
  Tensor softmax_row(const Tensor& x);
  Tensor log_eps(const Tensor& x);
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor flatten_row(const Tensor& m);
  Tensor pick(const Tensor& x, int flat_index);
  Tensor sum(const Tensor& x);
  Tensor scale(const Tensor& x, double c);
  Tensor add_const(const Tensor& x, double c);
  Tensor square(const Tensor& x);
  // Identity forward; multiplies the upstream gradient by -lambda.
  Tensor grad_reverse(const Tensor& x, double lambda);
  // -sum_k target_k * log(p_k + eps); the target is a constant.
  Tensor cross_entropy(const Tensor& probs, std::span<const double> target);

  void backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Floor inside logarithms.
  static constexpr double kLogEps = 1e-12;

 private:
  enum class Op {
    MatMul,
    Add,
    AddRowwise,
    Mul,
    Elu,
    SoftmaxRow,
    LogEps,
    ConcatCols,
    FlattenRow,
    Pick,
    Sum,
    Scale,
    AddConst,
    Square,
    GradReverse,
    CrossEntropy,
  };
  struct Node {
    Op op;
    Tensor a, b, out;
    double c = 0.0;
    int index = 0;
    std::vector<double> target;
  };

  Tensor make_output(int rows, int cols, const Tensor& a, const Tensor& b = Tensor());
  void record(Op op, Tensor a, Tensor b, Tensor out, double c = 0.0, int index = 0,
              std::vector<double> target = {});
  void backward_node(Node& node);

  std::vector<Node> nodes_;
};

// ELU forward on plain reals; the tape's elu op matches it.
double elu_value(double x);

// Symmetric normalization D^-1/2 (A + I) D^-1/2 of a 0/1 adjacency matrix.
// Throws ValidationError on a non-symmetric or non-zero-diagonal input.
std::vector<double> normalize_adjacency(const std::vector<std::uint8_t>& adjacency, int n);

// ELU(A_norm * F * W), recorded on the tape; the building block of the
// graph-convolution encoders.
Tensor gcn_layer(Tape& tape, const Tensor& features, const Tensor& a_norm, const Tensor& weight);

}  // namespace fmdp
