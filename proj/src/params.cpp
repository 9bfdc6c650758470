#include "fruitlet/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "fruitlet/error.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

ad::Tensor& ParamStore::create(const std::string& name, ad::Shape shape, std::vector<ad::Real> init) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  auto [it, ok] = tensors_.emplace(name, ad::Tensor::from(std::move(shape), std::move(init), true));
  return it->second;
}

ad::Tensor& ParamStore::create_weight(const std::string& name, std::size_t in, std::size_t out,
                                      std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<ad::Real> init(in * out);
  for (auto& w : init) w = static_cast<ad::Real>(dist(rng));
  return create(name, {in, out}, std::move(init));
}

ad::Tensor& ParamStore::create_constant(const std::string& name, ad::Shape shape, ad::Real value) {
  const auto n = ad::shape_numel(shape);
  return create(name, std::move(shape), std::vector<ad::Real>(n, value));
}

ad::Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return it->second;
}

const ad::Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

void ParamStore::assign_from(const ParamStore& other, std::string_view prefix) {
  for (auto& [name, t] : tensors_) {
    if (!name.starts_with(prefix)) continue;
    auto it = other.tensors_.find(name);
    if (it == other.tensors_.end()) throw DataError("missing parameter '" + name + "'");
    if (it->second.shape() != t.shape())
      throw DataError("parameter '" + name + "' has shape " + ad::shape_str(it->second.shape()) + ", expected " +
                      ad::shape_str(t.shape()));
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

ParamStore ParamStore::subset(std::string_view prefix) const {
  ParamStore out;
  for (const auto& [name, t] : tensors_)
    if (name.starts_with(prefix)) out.create(name, t.shape(), {t.data().begin(), t.data().end()});
  return out;
}

ParamStore ParamStore::clone() const { return subset(""); }

namespace {

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("tensor payload truncated");
  return v;
}

}  // namespace

void write_tensor_payload(std::ostream& out, const ParamStore& params) {
  put_u32(out, static_cast<uint32_t>(params.tensors().size()));
  for (const auto& [name, t] : params.tensors()) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
    std::vector<float> f32(t.data().begin(), t.data().end());
    out.write(reinterpret_cast<const char*>(f32.data()), static_cast<std::streamsize>(f32.size() * sizeof(float)));
  }
}

ParamStore read_tensor_payload(std::istream& in) {
  ParamStore store;
  const uint32_t count = get_u32(in);
  for (uint32_t e = 0; e < count; ++e) {
    const uint32_t len = get_u32(in);
    if (len > (1u << 16)) throw DataError("tensor payload: implausible name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw DataError("tensor payload truncated");
    const uint32_t rank = get_u32(in);
    if (rank > 8) throw DataError("tensor payload: implausible rank for '" + name + "'");
    ad::Shape shape(rank);
    for (auto& d : shape) d = get_u32(in);
    std::vector<float> f32(ad::shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(f32.data()), static_cast<std::streamsize>(f32.size() * sizeof(float))))
      throw DataError("tensor payload truncated in '" + name + "'");
    store.create(name, std::move(shape), {f32.begin(), f32.end()});
  }
  return store;
}

void adam_step(ParamStore& params, AdamState& state, double lr, const AdamConfig& config) {
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (const auto& [name, tensor] : params.tensors()) {
    ad::Tensor t = tensor;
    if (!t.has_grad()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(t.numel(), ad::Real(0.0));
      v.assign(t.numel(), ad::Real(0.0));
    }
    auto g = t.grad();
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<ad::Real>(config.beta1 * m[i] + (1.0 - config.beta1) * g[i]);
      v[i] = static_cast<ad::Real>(config.beta2 * v[i] + (1.0 - config.beta2) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<ad::Real>(w[i] - lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

LrScheduleKind parse_lr_schedule(std::string_view name) {
  if (name == "step_decay") return LrScheduleKind::StepDecay;
  if (name == "warmup_linear") return LrScheduleKind::WarmupLinear;
  throw UsageError("unknown learning-rate schedule '" + std::string(name) + "'");
}

double lr_schedule(LrScheduleKind kind, std::size_t step, const LrScheduleConfig& config) {
  const std::size_t spe = std::max<std::size_t>(config.steps_per_epoch, 1);
  switch (kind) {
    case LrScheduleKind::StepDecay: {
      const std::size_t epoch = step / spe;
      const std::size_t every = std::max<std::size_t>(config.decay_every_epochs, 1);
      return config.base_lr * std::pow(config.decay_factor, static_cast<double>(epoch / every));
    }
    case LrScheduleKind::WarmupLinear: {
      const double warm = static_cast<double>(config.warmup_epochs * spe);
      const double total = static_cast<double>(config.total_epochs * spe);
      const double s = static_cast<double>(step);
      if (s < warm) return config.base_lr * s / warm;
      if (total <= warm) return config.base_lr;
      return config.base_lr * std::max(0.0, (total - s) / (total - warm));
    }
  }
  throw UsageError("unknown learning-rate schedule");
}

FRUITLET_PRECISION_END
}  // namespace fruitlet
