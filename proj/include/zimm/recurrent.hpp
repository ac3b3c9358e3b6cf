#pragma once

#include <cstdint>
#include <string>

#include "zimm/autodiff.hpp"
#include "zimm/param_store.hpp"

namespace zimm {

// ---- initializers ---------------------------------------------------------
// Each parameter draws from its own stream keyed by name, so adding a
// parameter never perturbs the initial values of the others.

/// uniform(-s, s), s = sqrt(6 / (fan_in + fan_out)); a vector counts as a
/// column (fan_out 1).
void init_glorot(ParamStore& store, const std::string& name, Shape shape, std::uint64_t seed,
                 double decay = 0.0);
void init_uniform(ParamStore& store, const std::string& name, Shape shape, double scale,
                  std::uint64_t seed, double decay = 0.0);
void init_constant(ParamStore& store, const std::string& name, Shape shape, double value,
                   double decay = 0.0);

// ---- cells ----------------------------------------------------------------

enum class CellType { lstm, gru };
CellType parse_cell_type(const std::string& name);

/// w {4H,I}, u {4H,H}, b {4H}; gate blocks ordered input, forget, cell, output.
struct LstmWeights {
  ad::Var w, u, b;
};

/// w {3H,I}, u_zr {2H,H}, u_n {H,H}, b {3H}; blocks ordered update, reset,
/// candidate.
struct GruWeights {
  ad::Var w, u_zr, u_n, b;
};

struct LstmState {
  ad::Var h, c;
};

/// Single-node LSTM update from the pre-activation gates [i f g o] {4H} and
/// the cell state {H}. Returns [h'; c'] {2H}.
ad::Var lstm_pointwise(ad::Var gates, ad::Var c);

/// c' = s(f) * c + s(i) * tanh(g),  h' = s(o) * tanh(c').
/// `recurrent_mask`, when given, multiplies h before the recurrent product.
LstmState lstm_cell(ad::Var x, ad::Var h, ad::Var c, const LstmWeights& w,
                    const Tensor* recurrent_mask = nullptr);

/// z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
/// n = tanh(Wn x + Un (r * h) + bn),  h' = z * h + (1 - z) * n.
ad::Var gru_cell(ad::Var x, ad::Var h, const GruWeights& w, const Tensor* recurrent_mask = nullptr);

/// A named recurrent layer whose weights live in a ParamStore.
class RecurrentLayer {
 public:
  struct State {
    ad::Var h, c;  // c is unused by GRU layers
  };

  RecurrentLayer(std::string prefix, CellType type, std::size_t input, std::size_t units);

  void init(ParamStore& store, std::uint64_t seed, double decay = 0.0) const;
  std::size_t parameter_count() const;
  State zero_state(ad::Tape& tape) const;
  State step(ad::Tape& tape, const ParamStore& store, ad::Var x, const State& state,
             const Tensor* recurrent_mask = nullptr) const;

  std::size_t units() const { return units_; }
  std::size_t input() const { return input_; }
  CellType type() const { return type_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  CellType type_;
  std::size_t input_;
  std::size_t units_;
};

}  // namespace zimm
