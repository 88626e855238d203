#include "mcalab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "mcalab/rng.hpp"

namespace mcalab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat map(const Tensor& t) {
  return CMapMat(t.value().data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

MapMat map_grad(Tensor& t) {
  return MapMat(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

CMapMat map_grad_const(const Tensor& t) {
  return CMapMat(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

std::size_t shape_count(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw InvalidShapeError("empty shape");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw InvalidShapeError("non-positive dimension in shape");
    n *= d;
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                            "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()) + ")");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> value,
                    bool requires_grad) {
  std::size_t n = shape_count(shape);
  if (n != value.size()) throw InvalidShapeError("value length does not match shape");
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->value = std::move(value);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::zeros(const std::vector<std::size_t>& shape, bool requires_grad) {
  return from(shape, std::vector<double>(shape_count(shape), 0.0), requires_grad);
}

Tensor Tensor::constant(const std::vector<std::size_t>& shape, double c, bool requires_grad) {
  return from(shape, std::vector<double>(shape_count(shape), c), requires_grad);
}

Tensor Tensor::gaussian(const std::vector<std::size_t>& shape, double mean, double std,
                        std::uint64_t seed, bool requires_grad) {
  if (std < 0.0) throw InvalidConfigError("gaussian std must be >= 0");
  std::vector<double> v(shape_count(shape));
  Rng rng(seed);
  for (double& x : v) x = rng.gaussian(mean, std);
  return from(shape, std::move(v), requires_grad);
}

double Tensor::scalar() const {
  if (size() != 1) throw ContractError("scalar() on non-scalar tensor");
  return d_->value[0];
}

void Tensor::zero_grad() {
  std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

void Tensor::ensure_grad() {
  if (d_->grad.size() != d_->value.size()) d_->grad.assign(d_->value.size(), 0.0);
}

Tensor Tape::record(std::vector<std::size_t> shape, std::vector<double> value,
                    std::vector<Tensor> inputs, std::function<void(Node&)> pull) {
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  Tensor out = Tensor::from(std::move(shape), std::move(value), needs);
  if (needs) nodes_.push_back(Node{std::move(inputs), out, std::move(pull)});
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw InvalidShapeError("matmul: inner dimensions disagree");
  std::vector<double> v(a.rows() * b.cols());
  MapMat(v.data(), a.rows(), b.cols()).noalias() = map(a) * map(b);
  return record({a.rows(), b.cols()}, std::move(v), {a, b}, [](Node& n) {
    Tensor &a = n.inputs[0], &b = n.inputs[1];
    CMapMat g = map_grad_const(n.output);
    if (a.requires_grad()) {
      a.ensure_grad();
      map_grad(a).noalias() += g * map(b).transpose();
    }
    if (b.requires_grad()) {
      b.ensure_grad();
      map_grad(b).noalias() += map(a).transpose() * g;
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  return record(a.shape(), std::move(v), {a, b}, [](Node& n) {
    const auto& g = n.output.grad();
    for (int k = 0; k < 2; ++k) {
      Tensor& t = n.inputs[k];
      if (!t.requires_grad()) continue;
      t.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) t.grad()[i] += g[i];
    }
  });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  return record(a.shape(), std::move(v), {a, b}, [](Node& n) {
    const auto& g = n.output.grad();
    Tensor &a = n.inputs[0], &b = n.inputs[1];
    if (a.requires_grad()) {
      a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    }
    if (b.requires_grad()) {
      b.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] -= g[i];
    }
  });
}

Tensor Tape::mul_elementwise(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul_elementwise");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  return record(a.shape(), std::move(v), {a, b}, [](Node& n) {
    const auto& g = n.output.grad();
    Tensor &a = n.inputs[0], &b = n.inputs[1];
    if (a.requires_grad()) {
      a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      b.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i] * a.value()[i];
    }
  });
}

Tensor Tape::scale(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * c;
  return record(a.shape(), std::move(v), {a}, [c](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * c;
  });
}

Tensor Tape::add_rowvec(const Tensor& a, const Tensor& row) {
  if (row.size() != a.cols()) throw InvalidShapeError("add_rowvec: row length must equal cols");
  std::vector<double> v(a.size());
  std::size_t r = a.rows(), c = a.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a.value()[i * c + j] + row.value()[j];
  return record(a.shape(), std::move(v), {a, row}, [r, c](Node& n) {
    Tensor &a = n.inputs[0], &row = n.inputs[1];
    const auto& g = n.output.grad();
    if (a.requires_grad()) {
      a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    }
    if (row.requires_grad()) {
      row.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) row.grad()[j] += g[i * c + j];
    }
  });
}

Tensor Tape::concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw InvalidShapeError("concat_rows: column counts disagree");
  std::vector<double> v;
  v.reserve(a.size() + b.size());
  v.insert(v.end(), a.value().begin(), a.value().end());
  v.insert(v.end(), b.value().begin(), b.value().end());
  return record({a.rows() + b.rows(), a.cols()}, std::move(v), {a, b}, [](Node& n) {
    Tensor &a = n.inputs[0], &b = n.inputs[1];
    const auto& g = n.output.grad();
    if (a.requires_grad()) {
      a.ensure_grad();
      for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += g[i];
    }
    if (b.requires_grad()) {
      b.ensure_grad();
      for (std::size_t i = 0; i < b.size(); ++i) b.grad()[i] += g[a.size() + i];
    }
  });
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw InvalidShapeError("concat_cols: row counts disagree");
  std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> v(r * (ca + cb));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) v[i * (ca + cb) + j] = a.value()[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j) v[i * (ca + cb) + ca + j] = b.value()[i * cb + j];
  }
  return record({r, ca + cb}, std::move(v), {a, b}, [r, ca, cb](Node& n) {
    Tensor &a = n.inputs[0], &b = n.inputs[1];
    const auto& g = n.output.grad();
    if (a.requires_grad()) {
      a.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) a.grad()[i * ca + j] += g[i * (ca + cb) + j];
    }
    if (b.requires_grad()) {
      b.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) b.grad()[i * cb + j] += g[i * (ca + cb) + ca + j];
    }
  });
}

Tensor Tape::transpose(const Tensor& a) {
  std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = a.value()[i * c + j];
  return record({c, r}, std::move(v), {a}, [r, c](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) a.grad()[i * c + j] += g[j * r + i];
  });
}

Tensor Tape::gelu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x = a.value()[i];
    v[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return record(a.shape(), std::move(v), {a}, [](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = a.value()[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      a.grad()[i] += g[i] * (cdf + x * pdf);
    }
  });
}

Tensor Tape::relu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, a.value()[i]);
  return record(a.shape(), std::move(v), {a}, [](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (a.value()[i] > 0.0) a.grad()[i] += g[i];
  });
}

Tensor Tape::sigmoid(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x = a.value()[i];
    // Branch keeps exp from overflowing for large |x|.
    v[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return record(a.shape(), std::move(v), {a}, [](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    const auto& y = n.output.value();
    for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor Tape::logsumexp_rows(const Tensor& a) {
  std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = a.value().data() + i * c;
    double m = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    v[i] = m + std::log(s);
  }
  return record({r, 1}, std::move(v), {a}, [r, c](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    const auto& y = n.output.value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        a.grad()[i * c + j] += g[i] * std::exp(a.value()[i * c + j] - y[i]);
  });
}

Tensor Tape::log_softmax_rows(const Tensor& a) {
  std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = a.value().data() + i * c;
    double m = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = row[j] - lse;
  }
  return record(a.shape(), std::move(v), {a}, [r, c](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    const auto& y = n.output.value();
    for (std::size_t i = 0; i < r; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        a.grad()[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gsum;
    }
  });
}

Tensor Tape::l2_normalize_rows(const Tensor& a) {
  std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(a.size());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += a.value()[i * c + j] * a.value()[i * c + j];
    double nrm = std::sqrt(s);
    if (nrm < kNormFloor)
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(i) +
                                 " has norm below floor");
    norms[i] = nrm;
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a.value()[i * c + j] / nrm;
  }
  return record(a.shape(), std::move(v), {a}, [r, c, norms = std::move(norms)](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    const auto& y = n.output.value();
    for (std::size_t i = 0; i < r; ++i) {
      double gy = 0.0;
      for (std::size_t j = 0; j < c; ++j) gy += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        a.grad()[i * c + j] += (g[i * c + j] - y[i * c + j] * gy) / norms[i];
    }
  });
}

Tensor Tape::mean_rows(const Tensor& a) {
  std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j] += a.value()[i * c + j];
  for (std::size_t j = 0; j < c; ++j) v[j] /= static_cast<double>(r);
  return record({1, c}, std::move(v), {a}, [r, c](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) a.grad()[i * c + j] += g[j] / static_cast<double>(r);
  });
}

Tensor Tape::sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  return record({1, 1}, {s}, {a}, [](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    double g = n.output.grad()[0];
    for (double& gx : a.grad()) gx += g;
  });
}

Tensor Tape::gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
  std::size_t c = table.cols();
  for (std::size_t idx : indices)
    if (idx >= table.rows()) throw InvalidInputError("gather_rows: index out of range");
  std::vector<double> v(indices.size() * c);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(table.value().data() + indices[i] * c, c, v.data() + i * c);
  return record({indices.size(), c}, std::move(v), {table}, [c, indices](Node& n) {
    Tensor& t = n.inputs[0];
    if (!t.requires_grad()) return;
    t.ensure_grad();
    const auto& g = n.output.grad();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) t.grad()[indices[i] * c + j] += g[i * c + j];
  });
}

Tensor Tape::sumpool_cols(const Tensor& a, std::size_t window) {
  if (window == 0 || a.cols() % window != 0)
    throw InvalidShapeError("sumpool_cols: cols must be a positive multiple of window");
  std::size_t r = a.rows(), c = a.cols(), co = c / window;
  std::vector<double> v(r * co, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i * co + j / window] += a.value()[i * c + j];
  return record({r, co}, std::move(v), {a}, [r, c, co, window](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) a.grad()[i * c + j] += g[i * co + j / window];
  });
}

Tensor Tape::signed_sqrt(const Tensor& a) {
  // Power normalization sign(x)*sqrt(|x|), as the infinitely smooth surrogate
  // x * (x^2 + eps)^(-1/4). It matches the exact form for |x| >> sqrt(eps)
  // while keeping all derivatives bounded at the origin, so finite-difference
  // gradient checks stay accurate.
  constexpr double eps = 1e-4;
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x = a.value()[i];
    v[i] = x * std::pow(x * x + eps, -0.25);
  }
  return record(a.shape(), std::move(v), {a}, [](Node& n) {
    Tensor& a = n.inputs[0];
    if (!a.requires_grad()) return;
    a.ensure_grad();
    const auto& g = n.output.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = a.value()[i];
      a.grad()[i] += g[i] * (0.5 * x * x + eps) * std::pow(x * x + eps, -1.25);
    }
  });
}

Tensor Tape::detach(const Tensor& a) {
  return Tensor::from(a.shape(), a.value(), false);
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar");
  if (nodes_.empty()) throw ContractError("backward: tape is empty");
  loss.data()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto& g = it->output.grad();
    if (g.empty()) continue;  // never reached from the loss
    bool all_zero = true;
    for (double x : g)
      if (x != 0.0) {
        all_zero = false;
        break;
      }
    if (all_zero) continue;  // e.g. a branch behind a zero loss weight
    it->pull(*it);
  }
}

}  // namespace mcalab
