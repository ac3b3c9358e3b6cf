#pragma once

#include <map>
#include <string>
#include <vector>

#include "zimm/tensor.hpp"

namespace zimm {

/// Gradients keyed by parameter name. std::map keeps reductions in sorted
/// name order, which is what makes accumulation bit-reproducible.
using Gradients = std::map<std::string, Tensor>;

/// Named trainable tensors with a per-name L2 decay coefficient.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    double decay = 0.0;
  };

  /// Throws if the name already exists.
  Tensor& add(const std::string& name, Tensor value, double decay = 0.0);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mutable(const std::string& name);
  double decay(const std::string& name) const;
  void set_decay(const std::string& name, double decay);

  /// Replaces the value of an existing entry; shape must match.
  void assign(const std::string& name, const Tensor& value);

  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t total_parameters() const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  /// Sum over entries of decay/2 * ||w||^2.
  double l2_penalty() const;

  bool operator==(const ParamStore& other) const;

 private:
  std::map<std::string, Entry> entries_;
};

Gradients zero_gradients(const ParamStore& store);

/// L2 norm over every gradient entry, in sorted name order.
double global_norm(const Gradients& grads);

}  // namespace zimm
