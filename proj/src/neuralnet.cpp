#include "sentinel/neuralnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/kernels.hpp"

namespace sentinel::nn {

using nlohmann::json;

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw DimensionMismatch(data_.size(), rows * cols);
}

// ---- Parameters ------------------------------------------------------------

Matrix& Parameters::add_glorot(const std::string& name, std::size_t rows, std::size_t cols,
                               std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return add(name, std::move(m));
}

Matrix& Parameters::add_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  return add(name, Matrix(rows, cols));
}

Matrix& Parameters::add(const std::string& name, Matrix value) {
  auto [it, inserted] = tensors_.emplace(name, std::move(value));
  if (!inserted) throw PreconditionError("duplicate parameter name: " + name);
  return it->second;
}

const Matrix& Parameters::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

Matrix& Parameters::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

std::size_t Parameters::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, m] : tensors_) n += m.size();
  return n;
}

bool Parameters::all_finite() const noexcept {
  for (const auto& [_, m] : tensors_) {
    for (double v : m.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// ---- Tape ------------------------------------------------------------------

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::push(Matrix value, Backward back) {
  nodes_.push_back(Node{std::move(value), Matrix{}, std::move(back)});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::param(const std::string& name) {
  if (params_ == nullptr) throw PreconditionError("tape has no parameters bound");
  auto it = bound_.find(name);
  if (it != bound_.end()) return Var{this, it->second};
  Var v = push(params_->at(name), nullptr);
  bound_.emplace(name, v.id);
  return v;
}

Matrix& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var out) {
  if (out.tape != this) throw PreconditionError("variable belongs to another tape");
  const Matrix& v = value(out.id);
  if (v.rows() != 1 || v.cols() != 1) throw PreconditionError("backward needs a 1x1 output");
  grad(out.id)(0, 0) += 1.0;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back && !n.grad.empty()) n.back(*this, i);
  }
}

Gradients Tape::parameter_gradients() const {
  Gradients out;
  for (const auto& [name, id] : bound_) {
    const Node& n = nodes_[id];
    out.emplace(name, n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad);
  }
  return out;
}

// ---- ops -------------------------------------------------------------------

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw PreconditionError("variables on different tapes");
}

void require_shape(bool ok, const char* op) {
  if (!ok) throw PreconditionError(std::string("shape mismatch in ") + op);
}

template <typename F>
Var elementwise(Var a, F forward_and_slope) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  Matrix slope(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [fy, fs] = forward_and_slope(x.data()[i]);
    y.data()[i] = fy;
    slope.data()[i] = fs;
  }
  const std::size_t in = a.id;
  return a.tape->push(std::move(y), [in, slope = std::move(slope)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& dx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) dx.data()[i] += g.data()[i] * slope.data()[i];
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require_shape(A.cols() == B.rows(), "matmul");
  Matrix C(A.rows(), B.cols());
  kernels::gemm_accumulate(A.rows(), A.cols(), B.cols(), A.data(), B.data(), C.data());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(C), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& A = t.value(ia);
    const Matrix& B = t.value(ib);
    Matrix& dA = t.grad(ia);
    for (std::size_t i = 0; i < A.rows(); ++i) {
      for (std::size_t p = 0; p < A.cols(); ++p) dA(i, p) += kernels::dot(g.row(i), B.row(p));
    }
    Matrix& dB = t.grad(ib);
    for (std::size_t i = 0; i < A.rows(); ++i) {
      for (std::size_t p = 0; p < A.cols(); ++p) {
        const double s = A(i, p);
        if (s != 0.0) kernels::axpy(s, g.row(i), dB.row(p));
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.value().same_shape(b.value()), "add");
  Matrix y = a.value();
  kernels::axpy(1.0, b.value().data(), y.data());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(y), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    kernels::axpy(1.0, g.data(), t.grad(ia).data());
    kernels::axpy(1.0, g.data(), t.grad(ib).data());
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.value().same_shape(b.value()), "sub");
  Matrix y = a.value();
  kernels::axpy(-1.0, b.value().data(), y.data());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(y), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    kernels::axpy(1.0, g.data(), t.grad(ia).data());
    kernels::axpy(-1.0, g.data(), t.grad(ib).data());
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  const Matrix& A = a.value();
  const Matrix& r = row.value();
  require_shape(r.rows() == 1 && r.cols() == A.cols(), "add_row");
  Matrix y = A;
  for (std::size_t i = 0; i < y.rows(); ++i) kernels::axpy(1.0, r.row(0), y.row(i));
  const std::size_t ia = a.id, ir = row.id;
  return a.tape->push(std::move(y), [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    kernels::axpy(1.0, g.data(), t.grad(ia).data());
    Matrix& dr = t.grad(ir);
    for (std::size_t i = 0; i < g.rows(); ++i) kernels::axpy(1.0, g.row(i), dr.row(0));
  });
}

Var scale(Var a, double s) {
  return elementwise(a, [s](double x) { return std::pair{s * x, s}; });
}

Var add_scalar(Var a, double s) {
  return elementwise(a, [s](double x) { return std::pair{x + s, 1.0}; });
}

Var tanh(Var a) {
  return elementwise(a, [](double x) {
    const double y = std::tanh(x);
    return std::pair{y, 1.0 - y * y};
  });
}

Var relu(Var a) {
  return elementwise(a, [](double x) { return x > 0.0 ? std::pair{x, 1.0} : std::pair{0.0, 0.0}; });
}

Var leaky_relu(Var a, double negative_slope) {
  return elementwise(a, [negative_slope](double x) {
    return x > 0.0 ? std::pair{x, 1.0} : std::pair{negative_slope * x, negative_slope};
  });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Matrix& A = a.value();
  Matrix y(rows.size(), A.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_shape(rows[r] < A.rows(), "gather_rows");
    std::copy(A.row(rows[r]).begin(), A.row(rows[r]).end(), y.row(r).begin());
  }
  const std::size_t ia = a.id;
  return a.tape->push(std::move(y), [ia, rows = std::move(rows)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& da = t.grad(ia);
    for (std::size_t r = 0; r < rows.size(); ++r) kernels::axpy(1.0, g.row(r), da.row(rows[r]));
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& A = a.value();
  require_shape(begin + count <= A.cols(), "slice_cols");
  Matrix y(A.rows(), count);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t c = 0; c < count; ++c) y(i, c) = A(i, begin + c);
  }
  const std::size_t ia = a.id;
  return a.tape->push(std::move(y), [ia, begin, count](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& da = t.grad(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t c = 0; c < count; ++c) da(i, begin + c) += g(i, c);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw PreconditionError("concat_cols of nothing");
  Tape* tape = parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.value().rows() == rows, "concat_cols");
    cols += p.value().cols();
    ids.push_back(p.id);
  }
  Matrix y(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& P = p.value();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(P.row(i).begin(), P.row(i).end(), y.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += P.cols();
  }
  return tape->push(std::move(y), [ids = std::move(ids)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      Matrix& dp = t.grad(id);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t c = 0; c < dp.cols(); ++c) dp(i, c) += g(i, offset + c);
      }
      offset += t.value(id).cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw PreconditionError("concat_rows of nothing");
  Tape* tape = parts.front().tape;
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.value().cols() == cols, "concat_rows");
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Matrix y(rows, cols);
  auto out = y.data().begin();
  for (Var p : parts) out = std::copy(p.value().data().begin(), p.value().data().end(), out);
  return tape->push(std::move(y), [ids = std::move(ids)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      Matrix& dp = t.grad(id);
      const std::size_t n = t.value(id).size();
      kernels::axpy(1.0, std::span<const double>(g.data().data() + offset, n), dp.data());
      offset += n;
    }
  });
}

Var rowdot(Var a, Var v) {
  require_same_tape(a, v);
  const Matrix& A = a.value();
  const Matrix& V = v.value();
  require_shape(V.rows() == 1 && V.cols() == A.cols(), "rowdot");
  Matrix y(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) y(i, 0) = kernels::dot(A.row(i), V.row(0));
  const std::size_t ia = a.id, iv = v.id;
  return a.tape->push(std::move(y), [ia, iv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& A = t.value(ia);
    const Matrix& V = t.value(iv);
    Matrix& dA = t.grad(ia);
    for (std::size_t i = 0; i < A.rows(); ++i) kernels::axpy(g(i, 0), V.row(0), dA.row(i));
    Matrix& dV = t.grad(iv);
    for (std::size_t i = 0; i < A.rows(); ++i) kernels::axpy(g(i, 0), A.row(i), dV.row(0));
  });
}

Var segment_softmax(Var scores, std::vector<std::size_t> segment, std::size_t segments) {
  const Matrix& s = scores.value();
  require_shape(s.cols() == 1 && s.rows() == segment.size(), "segment_softmax");
  std::vector<double> max(segments, -INFINITY);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    require_shape(segment[i] < segments, "segment_softmax");
    max[segment[i]] = std::max(max[segment[i]], s(i, 0));
  }
  Matrix y(s.rows(), 1);
  std::vector<double> total(segments, 0.0);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    y(i, 0) = std::exp(s(i, 0) - max[segment[i]]);
    total[segment[i]] += y(i, 0);
  }
  for (std::size_t i = 0; i < s.rows(); ++i) y(i, 0) /= total[segment[i]];
  const std::size_t in = scores.id;
  return scores.tape->push(std::move(y), [in, segment = std::move(segment), segments](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    std::vector<double> inner(segments, 0.0);
    for (std::size_t i = 0; i < y.rows(); ++i) inner[segment[i]] += g(i, 0) * y(i, 0);
    Matrix& dx = t.grad(in);
    for (std::size_t i = 0; i < y.rows(); ++i) dx(i, 0) += y(i, 0) * (g(i, 0) - inner[segment[i]]);
  });
}

Var segment_weighted_sum(Var values, Var weights, std::vector<std::size_t> segment, std::size_t segments) {
  require_same_tape(values, weights);
  const Matrix& V = values.value();
  const Matrix& W = weights.value();
  require_shape(W.cols() == 1 && W.rows() == V.rows() && segment.size() == V.rows(), "segment_weighted_sum");
  Matrix y(segments, V.cols());
  for (std::size_t i = 0; i < V.rows(); ++i) {
    require_shape(segment[i] < segments, "segment_weighted_sum");
    kernels::axpy(W(i, 0), V.row(i), y.row(segment[i]));
  }
  const std::size_t iv = values.id, iw = weights.id;
  return values.tape->push(std::move(y), [iv, iw, segment = std::move(segment)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& V = t.value(iv);
    const Matrix& W = t.value(iw);
    Matrix& dV = t.grad(iv);
    for (std::size_t i = 0; i < V.rows(); ++i) kernels::axpy(W(i, 0), g.row(segment[i]), dV.row(i));
    Matrix& dW = t.grad(iw);
    for (std::size_t i = 0; i < V.rows(); ++i) dW(i, 0) += kernels::dot(g.row(segment[i]), V.row(i));
  });
}

Var l2_normalize_rows(Var a) {
  const Matrix& A = a.value();
  Matrix y(A.rows(), A.cols());
  std::vector<double> norms(A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    norms[i] = std::sqrt(kernels::dot(A.row(i), A.row(i)));
    if (norms[i] > 0.0) {
      for (std::size_t c = 0; c < A.cols(); ++c) y(i, c) = A(i, c) / norms[i];
    }
  }
  const std::size_t ia = a.id;
  return a.tape->push(std::move(y), [ia, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& dx = t.grad(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      if (norms[i] == 0.0) continue;
      const double proj = kernels::dot(y.row(i), g.row(i));
      for (std::size_t c = 0; c < y.cols(); ++c) dx(i, c) += (g(i, c) - y(i, c) * proj) / norms[i];
    }
  });
}

Var distance(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.value().rows() == 1 && a.value().same_shape(b.value()), "distance");
  const double d = std::sqrt(kernels::squared_distance(a.value().data(), b.value().data()));
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(Matrix(1, 1, d), [ia, ib](Tape& t, std::size_t self) {
    const double d = t.value(self)(0, 0);
    if (d == 0.0) return;
    const double g = t.grad(self)(0, 0) / d;
    const Matrix& A = t.value(ia);
    const Matrix& B = t.value(ib);
    Matrix& dA = t.grad(ia);
    Matrix& dB = t.grad(ib);
    for (std::size_t c = 0; c < A.cols(); ++c) {
      const double diff = A(0, c) - B(0, c);
      dA(0, c) += g * diff;
      dB(0, c) -= g * diff;
    }
  });
}

Var sum_all(Var a) {
  const Matrix& A = a.value();
  const double s = std::accumulate(A.data().begin(), A.data().end(), 0.0);
  const std::size_t ia = a.id;
  return a.tape->push(Matrix(1, 1, s), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    for (double& v : t.grad(ia).data()) v += g;
  });
}

Var mean_of(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw PreconditionError("mean of no values");
  Tape* tape = scalars.front().tape;
  std::vector<std::size_t> ids;
  double s = 0.0;
  for (Var v : scalars) {
    require_same_tape(scalars.front(), v);
    require_shape(v.value().rows() == 1 && v.value().cols() == 1, "mean_of");
    s += v.scalar();
    ids.push_back(v.id);
  }
  const double n = static_cast<double>(ids.size());
  return tape->push(Matrix(1, 1, s / n), [ids = std::move(ids), n](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0) / n;
    for (std::size_t id : ids) t.grad(id)(0, 0) += g;
  });
}

// ---- losses ----------------------------------------------------------------

void validate_loss_config(const LossConfig& cfg) {
  if (!(cfg.delta > 0.0)) throw PreconditionError("huber delta must be > 0");
  if (!(cfg.target_separation > 0.0 && cfg.target_separation <= 2.0)) {
    throw PreconditionError("target separation must be in (0, 2]");
  }
  if (!(cfg.phi > 0.0 && cfg.phi < 1.0)) throw PreconditionError("phi must be in (0, 1)");
}

double huber(double a, double delta) {
  const double m = std::fabs(a);
  return m <= delta ? 0.5 * a * a : delta * (m - 0.5 * delta);
}

double huber_derivative(double a, double delta) {
  return std::fabs(a) <= delta ? a : std::copysign(delta, a);
}

double contrastive_loss(double d, int y, const LossConfig& cfg) {
  return huber(d - cfg.target_separation * y, cfg.delta);
}

Var huber(Var a, double delta) {
  return elementwise(a, [delta](double x) { return std::pair{huber(x, delta), huber_derivative(x, delta)}; });
}

Var contrastive_loss(Var d, int y, const LossConfig& cfg) {
  return huber(add_scalar(d, -cfg.target_separation * y), cfg.delta);
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Var logistic_loss(Var logits, std::span<const double> labels) {
  const Matrix& z = logits.value();
  require_shape(z.cols() == 1 && z.rows() == labels.size() && !labels.empty(), "logistic_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double x = z(i, 0);
    total += std::max(x, 0.0) - x * labels[i] + std::log1p(std::exp(-std::fabs(x)));
  }
  const double n = static_cast<double>(z.rows());
  const std::size_t iz = logits.id;
  std::vector<double> y(labels.begin(), labels.end());
  return logits.tape->push(Matrix(1, 1, total / n), [iz, y = std::move(y), n](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0) / n;
    const Matrix& z = t.value(iz);
    Matrix& dz = t.grad(iz);
    for (std::size_t i = 0; i < z.rows(); ++i) dz(i, 0) += g * (sigmoid(z(i, 0)) - y[i]);
  });
}

// ---- optimization ----------------------------------------------------------

Gradients compute_gradients(const Parameters& params, const LossFn& loss, double* loss_out) {
  Tape tape(&params);
  Var out = loss(tape);
  tape.backward(out);
  if (loss_out != nullptr) *loss_out = out.scalar();
  return tape.parameter_gradients();
}

double evaluate_loss(const Parameters& params, const LossFn& loss) {
  Tape tape(&params);
  return loss(tape).scalar();
}

double train_step(Parameters& params, AdamState& state, const LossFn& loss, const AdamConfig& cfg) {
  double value = 0.0;
  const Gradients grads = compute_gradients(params, loss, &value);
  if (!std::isfinite(value)) throw NonFiniteLoss("loss is not finite");
  for (const auto& [name, g] : grads) {
    for (double v : g.data()) {
      if (!std::isfinite(v)) throw NonFiniteLoss("gradient of " + name + " is not finite");
    }
  }

  ++state.step;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, w] : params.tensors()) {
    auto [m_it, m_new] = state.first_moment.try_emplace(name, w.rows(), w.cols());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, w.rows(), w.cols());
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    auto g_it = grads.find(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = g_it == grads.end() ? 0.0 : g_it->second.data()[i];
      m.data()[i] = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
      v.data()[i] = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m.data()[i] / bias1;
      const double v_hat = v.data()[i] / bias2;
      w.data()[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  return value;
}

GradCheckResult grad_check(const Parameters& params, const LossFn& loss, double epsilon,
                           std::size_t coordinates, std::uint64_t seed) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-1)) throw PreconditionError("epsilon must be in [1e-7, 1e-1]");
  double base_loss = 0.0;
  const Gradients analytic = compute_gradients(params, loss, &base_loss);

  std::vector<std::pair<std::string, std::size_t>> all;
  for (const auto& [name, m] : params.tensors()) {
    for (std::size_t i = 0; i < m.size(); ++i) all.emplace_back(name, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  if (all.size() > coordinates) all.resize(coordinates);

  Parameters probe = params;
  GradCheckResult result;
  for (const auto& [name, i] : all) {
    double& w = probe.at(name).data()[i];
    const double saved = w;
    auto central = [&](double h) {
      w = saved + h;
      const double up = evaluate_loss(probe, loss);
      w = saved - h;
      const double down = evaluate_loss(probe, loss);
      return (up - down) / (2.0 * h);
    };
    // Ridders extrapolation: shrink the step geometrically and keep the
    // Richardson estimate with the smallest error estimate. Each estimate's
    // error is floored at the rounding noise of a difference at that step, so
    // large steps win where the loss is flat and small steps win near kinks.
    constexpr int kRows = 14;
    constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink;
    const double noise = 8.0 * std::numeric_limits<double>::epsilon() * std::max(std::fabs(base_loss), 1e-300);
    double table[kRows][kRows];
    double h = epsilon;
    table[0][0] = central(h);
    double numeric = table[0][0], best_err = std::numeric_limits<double>::infinity();
    for (int r = 1; r < kRows; ++r) {
      h /= kShrink;
      table[0][r] = central(h);
      double factor = kShrink2;
      for (int c = 1; c <= r; ++c) {
        table[c][r] = (table[c - 1][r] * factor - table[c - 1][r - 1]) / (factor - 1.0);
        factor *= kShrink2;
        const double err = std::max({std::fabs(table[c][r] - table[c - 1][r]),
                                     std::fabs(table[c][r] - table[c - 1][r - 1]), noise / h});
        if (err <= best_err) {
          best_err = err;
          numeric = table[c][r];
        }
      }
    }
    w = saved;
    auto g_it = analytic.find(name);
    const double exact = g_it == analytic.end() ? 0.0 : g_it->second.data()[i];
    const double err = std::fabs(exact - numeric) / std::max(1e-8, std::fabs(exact) + std::fabs(numeric));
    result.max_relative_error = std::max(result.max_relative_error, err);
    result.max_abs_analytic = std::max(result.max_abs_analytic, std::fabs(exact));
    ++result.coordinates;
  }
  return result;
}

// ---- persistence -----------------------------------------------------------

namespace {

void put_f32_le(std::ostream& out, float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                            static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace

void save_parameters(const std::filesystem::path& dir, const Parameters& params, const std::string& stem) {
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  std::size_t offset = 0;
  const auto blob_path = dir / (stem + ".bin");
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw Error("cannot write " + blob_path.string());
  for (const auto& [name, m] : params.tensors()) {
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    for (double v : m.data()) put_f32_le(blob, static_cast<float>(v));
    offset += 4 * m.size();
  }
  json manifest{{"format", "sentinel.params/1"},
                {"dtype", "float32"},
                {"byte_order", "little"},
                {"blob", stem + ".bin"},
                {"total_bytes", offset},
                {"tensors", std::move(tensors)}};
  std::ofstream out(dir / (stem + ".json"), std::ios::trunc);
  if (!out) throw Error("cannot write parameter manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Parameters load_parameters(const std::filesystem::path& dir, const std::string& stem) {
  std::ifstream in(dir / (stem + ".json"));
  if (!in) throw Error("missing parameter manifest: " + (dir / (stem + ".json")).string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(std::string("bad parameter manifest: ") + e.what());
  }
  if (manifest.value("dtype", "") != "float32" || manifest.value("byte_order", "") != "little") {
    throw Error("unsupported parameter encoding");
  }
  const auto blob_path = dir / manifest.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw Error("missing parameter blob: " + blob_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  if (bytes.size() != manifest.at("total_bytes").get<std::size_t>()) {
    throw Error("parameter blob size does not match manifest");
  }
  Parameters params;
  for (const json& t : manifest.at("tensors")) {
    const auto rows = t.at("shape").at(0).get<std::size_t>();
    const auto cols = t.at("shape").at(1).get<std::size_t>();
    const auto offset = t.at("offset").get<std::size_t>();
    if (offset + 4 * rows * cols > bytes.size()) throw Error("tensor extends past blob end");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = get_f32_le(bytes.data() + offset + 4 * i);
    params.add(t.at("name").get<std::string>(), std::move(m));
  }
  return params;
}

}  // namespace sentinel::nn
