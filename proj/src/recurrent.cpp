#include "zimm/recurrent.hpp"

#include <cmath>
#include <stdexcept>

namespace zimm {

void init_glorot(ParamStore& store, const std::string& name, Shape shape, std::uint64_t seed,
                 double decay) {
  const double fan_out = static_cast<double>(shape.at(0));
  const double fan_in = shape.size() == 2 ? static_cast<double>(shape[1]) : 1.0;
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  init_uniform(store, name, std::move(shape), s, seed, decay);
}

void init_uniform(ParamStore& store, const std::string& name, Shape shape, double scale,
                  std::uint64_t seed, double decay) {
  RngStream rng = RngStream(seed).split(name);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  store.add(name, std::move(t), decay);
}

void init_constant(ParamStore& store, const std::string& name, Shape shape, double value,
                   double decay) {
  store.add(name, Tensor(std::move(shape), value), decay);
}

CellType parse_cell_type(const std::string& name) {
  if (name == "lstm") return CellType::lstm;
  if (name == "gru") return CellType::gru;
  throw std::invalid_argument("unknown recurrent cell type: " + name);
}

namespace {

void check_cell_shapes(const char* op, ad::Var x, ad::Var h, ad::Var w, ad::Var u, std::size_t gates) {
  const Shape& ws = w.value().shape();
  const Shape& us = u.value().shape();
  const std::size_t H = h.value().size();
  if (ws.size() != 2 || us.size() != 2 || ws[0] != gates * H || ws[1] != x.value().size() ||
      us[1] != H || x.value().rank() != 1 || h.value().rank() != 1) {
    throw ShapeError(std::string(op) + ": x " + shape_string(x.value().shape()) + ", h " +
                     shape_string(h.value().shape()) + ", w " + shape_string(ws) + ", u " +
                     shape_string(us) + " are inconsistent");
  }
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

ad::Var lstm_pointwise(ad::Var gates, ad::Var c) {
  const std::size_t H = c.value().size();
  if (gates.value().rank() != 1 || c.value().rank() != 1 || gates.value().size() != 4 * H) {
    throw ShapeError("lstm_pointwise: gates " + shape_string(gates.value().shape()) + " vs cell " +
                     shape_string(c.value().shape()));
  }
  if (gates.tape() != c.tape()) throw std::invalid_argument("lstm_pointwise: operands on different tapes");
  const Tensor& z = gates.value();
  const Tensor& cv = c.value();
  Tensor out(Shape{2 * H});
  for (std::size_t j = 0; j < H; ++j) {
    const double i = sigmoid(z[j]), f = sigmoid(z[H + j]), g = std::tanh(z[2 * H + j]),
                 o = sigmoid(z[3 * H + j]);
    const double cn = f * cv[j] + i * g;
    out[j] = o * std::tanh(cn);
    out[H + j] = cn;
  }
  return gates.tape()->record(
      std::move(out), {gates, c},
      [H](ad::BackwardContext& ctx) {
        const Tensor& z = ctx.input(0);
        const Tensor& cv = ctx.input(1);
        const Tensor& y = ctx.out();
        const Tensor& gy = ctx.gout();
        Tensor& gz = ctx.grad(0);
        Tensor& gc = ctx.grad(1);
        for (std::size_t j = 0; j < H; ++j) {
          const double i = sigmoid(z[j]), f = sigmoid(z[H + j]), g = std::tanh(z[2 * H + j]),
                       o = sigmoid(z[3 * H + j]);
          const double tc = std::tanh(y[H + j]);
          const double dc = gy[H + j] + gy[j] * o * (1.0 - tc * tc);
          gz[j] += dc * g * i * (1.0 - i);
          gz[H + j] += dc * cv[j] * f * (1.0 - f);
          gz[2 * H + j] += dc * i * (1.0 - g * g);
          gz[3 * H + j] += gy[j] * tc * o * (1.0 - o);
          gc[j] += dc * f;
        }
      },
      "lstm_pointwise");
}

LstmState lstm_cell(ad::Var x, ad::Var h, ad::Var c, const LstmWeights& w,
                    const Tensor* recurrent_mask) {
  check_cell_shapes("lstm_cell", x, h, w.w, w.u, 4);
  const std::size_t H = h.value().size();
  if (c.value().size() != H || w.u.value().shape()[0] != 4 * H || w.b.value().size() != 4 * H) {
    throw ShapeError("lstm_cell: cell state or bias shape mismatch");
  }
  ad::Var hr = recurrent_mask ? ad::mask_apply(h, *recurrent_mask) : h;
  ad::Var gates = ad::add(ad::add(ad::matmul(w.w, x), ad::matmul(w.u, hr)), w.b);
  ad::Var hc = lstm_pointwise(gates, c);
  ad::Var h_next = ad::slice(hc, 0, H);
  ad::Var c_next = ad::slice(hc, H, H);
  return {h_next, c_next};
}

ad::Var gru_cell(ad::Var x, ad::Var h, const GruWeights& w, const Tensor* recurrent_mask) {
  check_cell_shapes("gru_cell", x, h, w.w, w.u_zr, 3);
  const std::size_t H = h.value().size();
  if (w.u_zr.value().shape()[0] != 2 * H || w.u_n.value().shape() != Shape{H, H} ||
      w.b.value().size() != 3 * H) {
    throw ShapeError("gru_cell: recurrent weight or bias shape mismatch");
  }
  ad::Var hr = recurrent_mask ? ad::mask_apply(h, *recurrent_mask) : h;
  ad::Var xw = ad::add(ad::matmul(w.w, x), w.b);
  ad::Var hu = ad::matmul(w.u_zr, hr);
  ad::Var z = ad::sigmoid(ad::add(ad::slice(xw, 0, H), ad::slice(hu, 0, H)));
  ad::Var r = ad::sigmoid(ad::add(ad::slice(xw, H, H), ad::slice(hu, H, H)));
  ad::Var n = ad::tanh(ad::add(ad::slice(xw, 2 * H, H), ad::matmul(w.u_n, ad::mul(r, hr))));
  // h' = z*h + (1-z)*n = n + z*(h - n)
  return ad::add(n, ad::mul(z, ad::sub(h, n)));
}

RecurrentLayer::RecurrentLayer(std::string prefix, CellType type, std::size_t input, std::size_t units)
    : prefix_(std::move(prefix)), type_(type), input_(input), units_(units) {}

void RecurrentLayer::init(ParamStore& store, std::uint64_t seed, double decay) const {
  const std::size_t H = units_;
  if (type_ == CellType::lstm) {
    init_glorot(store, prefix_ + ".w", {4 * H, input_}, seed, decay);
    init_glorot(store, prefix_ + ".u", {4 * H, H}, seed, decay);
    init_constant(store, prefix_ + ".b", {4 * H}, 0.0);
  } else {
    init_glorot(store, prefix_ + ".w", {3 * H, input_}, seed, decay);
    init_glorot(store, prefix_ + ".u_zr", {2 * H, H}, seed, decay);
    init_glorot(store, prefix_ + ".u_n", {H, H}, seed, decay);
    init_constant(store, prefix_ + ".b", {3 * H}, 0.0);
  }
}

std::size_t RecurrentLayer::parameter_count() const {
  const std::size_t H = units_;
  const std::size_t gates = type_ == CellType::lstm ? 4 : 3;
  return gates * H * input_ + gates * H * H + gates * H;
}

RecurrentLayer::State RecurrentLayer::zero_state(ad::Tape& tape) const {
  ad::Var zero = tape.constant(Tensor(Shape{units_}));
  return {zero, zero};
}

RecurrentLayer::State RecurrentLayer::step(ad::Tape& tape, const ParamStore& store, ad::Var x,
                                           const State& state, const Tensor* recurrent_mask) const {
  if (type_ == CellType::lstm) {
    LstmWeights w{tape.parameter(store, prefix_ + ".w"), tape.parameter(store, prefix_ + ".u"),
                  tape.parameter(store, prefix_ + ".b")};
    LstmState next = lstm_cell(x, state.h, state.c, w, recurrent_mask);
    return {next.h, next.c};
  }
  GruWeights w{tape.parameter(store, prefix_ + ".w"), tape.parameter(store, prefix_ + ".u_zr"),
               tape.parameter(store, prefix_ + ".u_n"), tape.parameter(store, prefix_ + ".b")};
  ad::Var h = gru_cell(x, state.h, w, recurrent_mask);
  return {h, state.c};
}

}  // namespace zimm
