#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mcalab/errors.hpp"

namespace mcalab {

// Dense 2-D double tensor participating in a reverse-mode tape.
// Shapes are (rows, cols); a 1-D shape {n} is treated as (n, 1).
// Values are row-major. Tensors are immutable after creation except for
// grad accumulation during backward and explicit in-place parameter
// updates between tapes (the optimizer owns that).

struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> value,
                     bool requires_grad = false);
  static Tensor zeros(const std::vector<std::size_t>& shape, bool requires_grad = false);
  static Tensor constant(const std::vector<std::size_t>& shape, double c,
                         bool requires_grad = false);
  static Tensor gaussian(const std::vector<std::size_t>& shape, double mean, double std,
                         std::uint64_t seed, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t rows() const { return d_->shape[0]; }
  std::size_t cols() const { return d_->shape.size() > 1 ? d_->shape[1] : 1; }
  std::size_t size() const { return d_->value.size(); }

  std::vector<double>& value() { return d_->value; }
  const std::vector<double>& value() const { return d_->value; }
  std::vector<double>& grad() { return d_->grad; }
  const std::vector<double>& grad() const { return d_->grad; }
  bool requires_grad() const { return d_->requires_grad; }

  double scalar() const;
  void zero_grad();
  void ensure_grad();

  TensorData* data() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData> d_;
};

// Define-by-run tape. One tape per forward pass; nodes are appended in
// execution order, which is by construction a topological order, and
// backward visits each node exactly once in reverse.
class Tape {
 public:
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul_elementwise(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor add_rowvec(const Tensor& a, const Tensor& row);
  Tensor concat_rows(const Tensor& a, const Tensor& b);
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor gelu(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor logsumexp_rows(const Tensor& a);
  Tensor log_softmax_rows(const Tensor& a);
  Tensor l2_normalize_rows(const Tensor& a);
  Tensor mean_rows(const Tensor& a);
  Tensor sum_all(const Tensor& a);
  Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices);
  Tensor sumpool_cols(const Tensor& a, std::size_t window);
  Tensor signed_sqrt(const Tensor& a);

  // Copies values into a fresh constant; gradients do not flow through.
  static Tensor detach(const Tensor& a);

  void backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

  // Row norms below this floor raise DegenerateInputError instead of
  // silently dividing by near-zero.
  static constexpr double kNormFloor = 1e-12;

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(Node&)> pull;
  };

  Tensor record(std::vector<std::size_t> shape, std::vector<double> value,
                std::vector<Tensor> inputs, std::function<void(Node&)> pull);

  std::vector<Node> nodes_;
};

}  // namespace mcalab
