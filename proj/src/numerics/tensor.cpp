#include "masktab/numerics/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "masktab/errors.hpp"

namespace masktab::num {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), values(numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  validate();
}

void Tensor::zero_grad() {
  if (grad.size() != values.size()) {
    grad.assign(values.size(), 0.0);
  } else {
    std::fill(grad.begin(), grad.end(), 0.0);
  }
}

void Tensor::validate() const {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  if (!grad.empty() && grad.size() != values.size()) {
    throw DimensionError("gradient size does not match tensor shape " + to_string(shape));
  }
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ProtocolError("duplicate parameter name: " + name);
  t.validate();
  t.requires_grad = true;
  t.grad.assign(t.values.size(), 0.0);
  return tensors_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::at(const std::string& name) {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ProtocolError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ProtocolError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

}  // namespace masktab::num
