#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fruitlet/autodiff.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

// Named learnable tensors, iterated in lexicographic name order.
class ParamStore {
 public:
  ad::Tensor& create(const std::string& name, ad::Shape shape, std::vector<ad::Real> init);
  // Glorot-uniform weight of shape [in x out].
  ad::Tensor& create_weight(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  ad::Tensor& create_constant(const std::string& name, ad::Shape shape, ad::Real value);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  ad::Tensor& at(const std::string& name);
  const ad::Tensor& at(const std::string& name) const;

  const std::map<std::string, ad::Tensor>& tensors() const { return tensors_; }
  std::size_t parameter_count() const;

  void zero_grad();
  // Copies values of every entry whose name starts with `prefix`; shapes must match.
  void assign_from(const ParamStore& other, std::string_view prefix = "");
  ParamStore subset(std::string_view prefix) const;
  ParamStore clone() const;

 private:
  std::map<std::string, ad::Tensor> tensors_;
};

// Tensor payload: u32 count, then per entry u32 name length, UTF-8 name,
// u32 rank, u32 dims, little-endian float32 row-major data.
void write_tensor_payload(std::ostream& out, const ParamStore& params);
ParamStore read_tensor_payload(std::istream& in);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  uint64_t step = 0;
  std::map<std::string, std::vector<ad::Real>> m, v;
};

// One bias-corrected Adam update over every parameter that holds a gradient.
void adam_step(ParamStore& params, AdamState& state, double lr, const AdamConfig& config = {});

enum class LrScheduleKind { StepDecay, WarmupLinear };

LrScheduleKind parse_lr_schedule(std::string_view name);

struct LrScheduleConfig {
  double base_lr = 1e-3;
  std::size_t steps_per_epoch = 1;
  std::size_t total_epochs = 200;
  std::size_t warmup_epochs = 10;
  std::size_t decay_every_epochs = 50;
  double decay_factor = 0.1;
};

double lr_schedule(LrScheduleKind kind, std::size_t step, const LrScheduleConfig& config);

FRUITLET_PRECISION_END
}  // namespace fruitlet
