#pragma once

// Minimal differentiable core: row-major double matrices, a reverse-mode
// tape with the handful of ops the GNN embedder and the SMR classifier need,
// Huber/contrastive/logistic losses, an Adam optimizer, and a central
// finite-difference gradient checker.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sentinel::nn {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Named learnable tensors. Names are unique and the map keeps them in a
// stable order, which the optimizer, the gradient checker and persistence
// rely on.
class Parameters {
 public:
  // Uniform in +-sqrt(6 / (rows + cols)).
  Matrix& add_glorot(const std::string& name, std::size_t rows, std::size_t cols, std::mt19937_64& rng);
  Matrix& add_zeros(const std::string& name, std::size_t rows, std::size_t cols);
  Matrix& add(const std::string& name, Matrix value);

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.contains(name); }

  std::map<std::string, Matrix>& tensors() noexcept { return tensors_; }
  const std::map<std::string, Matrix>& tensors() const noexcept { return tensors_; }
  std::size_t scalar_count() const noexcept;
  bool all_finite() const noexcept;

  bool operator==(const Parameters&) const = default;

 private:
  std::map<std::string, Matrix> tensors_;
};

using Gradients = std::map<std::string, Matrix>;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  // `params` may be null when the graph has no learnable inputs.
  explicit Tape(const Parameters* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf bound to a named parameter. Repeated calls return the same node.
  Var param(const std::string& name);

  // Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out);
  // Gradients of the bound parameters; zero-filled when a parameter was bound
  // but received no gradient, and absent when it was never bound.
  Gradients parameter_gradients() const;

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  Matrix& grad(std::size_t id);
  std::size_t size() const noexcept { return nodes_.size(); }

  using Backward = std::function<void(Tape&, std::size_t self)>;
  Var push(Matrix value, Backward back);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward back;
  };
  const Parameters* params_;
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> bound_;
};

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);                      // (n x k)(k x m)
Var add(Var a, Var b);                         // same shape
Var sub(Var a, Var b);                         // same shape
Var add_row(Var a, Var row);                   // (n x m) + broadcast (1 x m)
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double negative_slope = 0.2);
Var gather_rows(Var a, std::vector<std::size_t> rows);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var rowdot(Var a, Var v);                      // (n x m) . (1 x m) -> (n x 1)
// Softmax of an (n x 1) score column within each segment.
Var segment_softmax(Var scores, std::vector<std::size_t> segment, std::size_t segments);
// out[s] = sum over rows i in segment s of weights[i] * values[i].
Var segment_weighted_sum(Var values, Var weights, std::vector<std::size_t> segment,
                         std::size_t segments);
Var l2_normalize_rows(Var a);
// Euclidean distance between two (1 x m) rows. The gradient at zero distance
// is taken as zero.
Var distance(Var a, Var b);
Var sum_all(Var a);
Var mean_of(const std::vector<Var>& scalars);

// ---- losses ----------------------------------------------------------------

struct LossConfig {
  double delta = 1.0;              // Huber transition
  double target_separation = 2.0;  // c: where random pairs are pushed to
  double phi = 0.5;                // P(pair drawn from the random distribution)
};

// Throws PreconditionError when delta <= 0, c outside (0, 2] or phi outside (0, 1).
void validate_loss_config(const LossConfig& cfg);

// a^2 / 2 when |a| <= delta, else delta * (|a| - delta / 2).
double huber(double a, double delta);
double huber_derivative(double a, double delta);

// huber(d - c * y): y = 0 pulls same-agent-day pairs to 0, y = 1 pushes
// random pairs to c.
double contrastive_loss(double d, int y, const LossConfig& cfg);

Var huber(Var a, double delta);
Var contrastive_loss(Var d, int y, const LossConfig& cfg);
// Mean logistic loss of an (n x 1) logit column against 0/1 labels.
Var logistic_loss(Var logits, std::span<const double> labels);

double sigmoid(double z) noexcept;

// ---- optimization ----------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;
  std::int64_t step = 0;
};

// Builds the mean loss of one batch on the given tape.
using LossFn = std::function<Var(Tape&)>;

// One Adam update. Returns the loss evaluated before the update. Throws
// NonFiniteLoss when the loss or any gradient is not finite; the parameters
// are left untouched in that case.
double train_step(Parameters& params, AdamState& state, const LossFn& loss, const AdamConfig& cfg = {});

// Loss value only, no gradient.
double evaluate_loss(const Parameters& params, const LossFn& loss);
Gradients compute_gradients(const Parameters& params, const LossFn& loss, double* loss_out = nullptr);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  double max_abs_analytic = 0.0;
};

// Compares analytic gradients against Ridders-extrapolated central
// differences on `coordinates` parameter entries sampled without replacement
// (all entries when fewer). `epsilon` is the initial step, shrunk by 1.4 per
// row over fourteen rows.
// Relative error is |ga - gn| / max(1e-8, |ga| + |gn|).
GradCheckResult grad_check(const Parameters& params, const LossFn& loss, double epsilon,
                           std::size_t coordinates = 50, std::uint64_t seed = 7);

// ---- persistence -----------------------------------------------------------

// Writes <dir>/<stem>.json (manifest) and <dir>/<stem>.bin (little-endian
// float32, tensors back to back in manifest order, row-major).
void save_parameters(const std::filesystem::path& dir, const Parameters& params,
                     const std::string& stem = "params");
Parameters load_parameters(const std::filesystem::path& dir, const std::string& stem = "params");

}  // namespace sentinel::nn
