#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cdnet/rng.hpp"
#include "cdnet/tensor.hpp"

namespace cdnet {

// A learnable tensor plus its optimizer slot. Values are snapped to float32
// after init and after every update so that a float32 checkpoint restores
// the exact in-memory state.
struct Param {
  std::string name;
  Tensor value;
  Tensor momentum;       // same shape, zero-initialized
  bool backbone = false; // encoder params train at 1x lr; the rest at head_lr_mult
};

// Owns every learnable tensor and the named persistent buffers (batch-norm
// running statistics). Registration order is the checkpoint write order.
class ParamRegistry {
 public:
  // Creates (or returns the existing) parameter. init is applied on first
  // registration only, then the value is snapped to f32.
  Tensor create(const std::string& name, Shape shape,
                const std::function<double(Rng&)>& init, Rng& rng);
  Tensor create_const(const std::string& name, Shape shape, double fill);

  // Non-learnable named state saved in checkpoints (e.g. BN running stats).
  Tensor buffer(const std::string& name, Shape shape, double fill);

  bool has(const std::string& name) const;
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  Tensor buffer_at(const std::string& name) const;

  std::vector<Param*> params();               // registration order
  std::vector<std::string> param_names() const;
  std::vector<std::string> buffer_names() const;

  int64_t param_count() const;  // total scalar count across params

  void zero_grad();

 private:
  std::vector<std::string> order_;
  std::map<std::string, Param> params_;
  std::vector<std::string> buffer_order_;
  std::map<std::string, Tensor> buffers_;
};

// Common initializers.
double xavier_limit(int64_t fan_in, int64_t fan_out);

}  // namespace cdnet
