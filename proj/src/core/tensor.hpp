#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace rlfolio {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same size as values when requires_grad
  bool requires_grad = false;
  bool leaf = true;  // false for op results; only leaves keep grads across backward calls
};

/// Shared handle to a dense row-major 64-bit float tensor. Copying a Tensor
/// aliases the underlying storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);
  /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) over the trailing
  /// two axes; the usual init for dense weights.
  static Tensor xavier(Shape shape, std::mt19937_64& rng, bool requires_grad = true);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const;
  std::int64_t size() const;
  std::int64_t dim(int axis) const;
  int rank() const;
  bool requires_grad() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;  // requires numel == 1
  double at(const std::vector<std::int64_t>& index) const;

  /// Deep copy of values (and shape); the copy is a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  std::shared_ptr<TensorData> data() const { return d_; }
  static Tensor wrap(std::shared_ptr<TensorData> d) { return Tensor(std::move(d)); }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

/// Reverse-mode tape: an ordered record of executed primitives. Thread-local;
/// a graph and its tensors belong to one worker at a time.
class Graph {
 public:
  static Graph& current();
  static bool recording();  // false inside a NoGradScope

  void record(const Tensor& result, std::function<void()> pull);
  /// Seeds d(root)/d(root) = 1 and replays the tape in reverse execution
  /// order. Leaf grads accumulate across calls; op-result grads are transient.
  void backward(const Tensor& root);
  void clear();
  std::size_t num_steps() const { return steps_.size(); }

 private:
  struct Step {
    std::shared_ptr<TensorData> result;
    std::function<void()> pull;
  };
  std::vector<Step> steps_;
};

/// Disables tape recording (and gradient propagation) in scope; ops executed
/// under it produce requires_grad == false results.
struct NoGradScope {
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

void backward(const Tensor& root);

/// Checked mode: ops reject non-finite operand values. Off by default.
void set_finite_check(bool on);
bool finite_check_enabled();

// ---- primitives ------------------------------------------------------------
// Elementwise binaries broadcast per the usual right-aligned rules; matmul
// contracts the trailing two axes and broadcasts leading (batch) axes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& t, Shape shape);
Tensor permute(const Tensor& t, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& t, int axis, std::int64_t start, std::int64_t len);
Tensor pad(const Tensor& t, int axis, std::int64_t before, std::int64_t after);
Tensor softmax(const Tensor& t);  // last axis
Tensor relu(const Tensor& t);
Tensor tanh(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor scalar_mul(const Tensor& t, double c);
Tensor reduce_sum(const Tensor& t);             // -> scalar (shape {1})
Tensor reduce_mean(const Tensor& t);            // -> scalar
Tensor reduce_sum(const Tensor& t, int axis);   // drops the axis
Tensor reduce_mean(const Tensor& t, int axis);  // drops the axis
Tensor gather(const Tensor& t, int axis, const std::vector<std::int64_t>& indices);

// ---- parameters & optimizer ------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class ParameterSet {
 public:
  void add(std::string name, Tensor t);
  void extend(const ParameterSet& other);
  std::size_t size() const { return items_.size(); }
  NamedTensor& operator[](std::size_t i) { return items_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return items_[i]; }
  const Tensor* find(const std::string& name) const;
  void zero_grad();
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<NamedTensor> items_;
};

/// Copies parameter values from src into dst (matched by position; shapes must
/// agree). Used for target-network initialization and snapshot loading.
void copy_values(const ParameterSet& src, ParameterSet& dst);

class AdamOptimizer {
 public:
  AdamOptimizer(ParameterSet params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  /// One Adam step with bias correction over every registered parameter.
  /// A parameter without a gradient accumulator is rejected by name.
  void step();
  void zero_grad();

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::int64_t step_count() const { return t_; }
  double learning_rate() const { return lr_; }

  // moment state, exposed for checkpointing
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }
  void restore_state(std::size_t i, std::vector<double> m, std::vector<double> v);
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  ParameterSet params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  double lr_, beta1_, beta2_, eps_;
};

}  // namespace rlfolio
