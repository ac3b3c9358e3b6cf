#include "zimm/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace zimm {

Tensor& ParamStore::add(const std::string& name, Tensor value, double decay) {
  auto [it, inserted] = entries_.emplace(name, Entry{std::move(value), decay});
  if (!inserted) throw std::invalid_argument("duplicate parameter name: " + name);
  return it->second.value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.value;
}

Tensor& ParamStore::get_mutable(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.value;
}

double ParamStore::decay(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.decay;
}

void ParamStore::set_decay(const std::string& name, double decay) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  it->second.decay = decay;
}

void ParamStore::assign(const std::string& name, const Tensor& value) {
  Tensor& current = get_mutable(name);
  if (!current.same_shape(value)) {
    throw ShapeError("assign " + name + ": shape " + shape_string(value.shape()) +
                     " does not match " + shape_string(current.shape()));
  }
  current = value;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::total_parameters() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

double ParamStore::l2_penalty() const {
  double total = 0.0;
  for (const auto& [_, e] : entries_) {
    if (e.decay == 0.0) continue;
    double sq = 0.0;
    for (double w : e.value.data()) sq += w * w;
    total += 0.5 * e.decay * sq;
  }
  return total;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.decay != b->second.decay ||
        !(a->second.value == b->second.value)) {
      return false;
    }
  }
  return true;
}

Gradients zero_gradients(const ParamStore& store) {
  Gradients g;
  for (const auto& [name, e] : store.entries()) g.emplace(name, Tensor(e.value.shape()));
  return g;
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) {
    for (double v : g.data()) sq += v * v;
  }
  return std::sqrt(sq);
}

}  // namespace zimm
