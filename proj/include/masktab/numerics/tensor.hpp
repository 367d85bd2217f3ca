#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace masktab::num {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor of doubles. `grad`, when present, mirrors `values`.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  /// Leading dimension (1 for scalars).
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  /// Product of all trailing dimensions.
  std::size_t cols() const { return rows() == 0 ? 0 : size() / rows(); }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  bool has_grad() const { return !grad.empty(); }
  void zero_grad();

  /// Throws DimensionError when the invariants do not hold.
  void validate() const;
};

/// Named trainable tensors, iterated in name order. Entries are address-stable
/// so a Tape can accumulate into them directly.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  void zero_grad();
  std::size_t total_size() const;
  std::vector<std::string> names() const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  std::size_t count() const { return tensors_.size(); }

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace masktab::num
