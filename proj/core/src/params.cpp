#include "cdnet/params.hpp"

#include <cmath>

namespace cdnet {

double xavier_limit(int64_t fan_in, int64_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor ParamRegistry::create(const std::string& name, Shape shape,
                             const std::function<double(Rng&)>& init, Rng& rng) {
  auto it = params_.find(name);
  if (it != params_.end()) {
    if (it->second.value.shape() != shape)
      throw ShapeError("parameter '" + name + "' re-registered with shape " +
                       shape_str(shape) + " != " + shape_str(it->second.value.shape()));
    return it->second.value;
  }
  Tensor v(shape, 0.0, true);
  for (auto& x : v.data()) x = snap32(init(rng));
  Param p;
  p.name = name;
  p.value = v;
  p.momentum = Tensor(shape, 0.0);
  p.backbone = name.rfind("enc.", 0) == 0;
  params_.emplace(name, std::move(p));
  order_.push_back(name);
  return v;
}

Tensor ParamRegistry::create_const(const std::string& name, Shape shape,
                                   double fill) {
  Rng dummy(0);
  return create(name, std::move(shape), [fill](Rng&) { return fill; }, dummy);
}

Tensor ParamRegistry::buffer(const std::string& name, Shape shape, double fill) {
  auto it = buffers_.find(name);
  if (it != buffers_.end()) {
    if (it->second.shape() != shape)
      throw ShapeError("buffer '" + name + "' re-registered with a different shape");
    return it->second;
  }
  Tensor t(std::move(shape), snap32(fill));
  buffers_.emplace(name, t);
  buffer_order_.push_back(name);
  return t;
}

bool ParamRegistry::has(const std::string& name) const {
  return params_.count(name) != 0;
}

Param& ParamRegistry::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError("unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParamRegistry::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor ParamRegistry::buffer_at(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw DataError("unknown buffer '" + name + "'");
  return it->second;
}

std::vector<Param*> ParamRegistry::params() {
  std::vector<Param*> out;
  out.reserve(order_.size());
  for (const auto& n : order_) out.push_back(&params_.at(n));
  return out;
}

std::vector<std::string> ParamRegistry::param_names() const { return order_; }

std::vector<std::string> ParamRegistry::buffer_names() const {
  return buffer_order_;
}

int64_t ParamRegistry::param_count() const {
  int64_t n = 0;
  for (const auto& [k, p] : params_) n += p.value.numel();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& [k, p] : params_) p.value.zero_grad();
}

}  // namespace cdnet
