#include <cmath>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_util.hpp"
#include "zimm/autodiff.hpp"
#include "zimm/errors.hpp"
#include "zimm/nadam.hpp"
#include "zimm/recurrent.hpp"
#include "zimm/tensor.hpp"

namespace zimm {
namespace {

using testing::check_graph;
using testing::random_tensor;

constexpr double kGradTol = 1e-5;
constexpr int kDraws = 20;

std::size_t dim(RngStream& rng, std::size_t lo = 1) { return lo + static_cast<std::size_t>(rng.below(9 - lo)); }

// One scalar readout per draw so that every output coordinate matters.
ad::Var readout(ad::Var y, RngStream& rng) {
  return ad::weighted_sum(y, random_tensor(y.value().shape(), rng));
}

// Runs `kDraws` random instances of a primitive through the gradient check.
void check_primitive(const char* name,
                     const std::function<ParamStore(RngStream&)>& make_inputs,
                     const std::function<ad::Var(ad::Tape&, const ParamStore&, RngStream&)>& op) {
  for (int draw = 0; draw < kDraws; ++draw) {
    RngStream rng = RngStream(99).split(name).split(static_cast<std::uint64_t>(draw));
    const ParamStore store = make_inputs(rng);
    const RngStream readout_rng = rng.split("readout");
    const RngStream op_rng = rng.split("op");
    const GradCheckResult r = check_graph(
        [&](ad::Tape& t, const ParamStore& s) {
          RngStream ro = readout_rng;
          RngStream o = op_rng;
          return readout(op(t, s, o), ro);
        },
        store);
    EXPECT_LT(r.max_relative_error, kGradTol) << name << " draw " << draw << " at " << r.worst_parameter << "["
                                              << r.worst_index << "]";
  }
}

ParamStore two_of(Tensor a, Tensor b) {
  ParamStore s;
  s.add("a", std::move(a));
  s.add("b", std::move(b));
  return s;
}

ParamStore one_of(Tensor a) {
  ParamStore s;
  s.add("a", std::move(a));
  return s;
}

ad::Var A(ad::Tape& t, const ParamStore& s) { return t.parameter(s, "a"); }
ad::Var B(ad::Tape& t, const ParamStore& s) { return t.parameter(s, "b"); }

// ---- examples -----------------------------------------------------------------

TEST(Primitives, SoftmaxOfEqualEntriesIsUniform) {
  ad::Tape t;
  const Tensor y = ad::softmax(t.constant(Tensor::vector({0.0, 0.0}))).value();
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], 0.5);
}

TEST(Primitives, LogSoftmaxMatchesDirectFormula) {
  ad::Tape t;
  const Tensor y = ad::log_softmax(t.constant(Tensor::vector({1.0, 2.0, 3.0}))).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::log(std::exp(i + 1.0) / z), 1e-15);
  EXPECT_NEAR(y[0], -2.4076, 5e-5);
  EXPECT_NEAR(y[1], -1.4076, 5e-5);
  EXPECT_NEAR(y[2], -0.4076, 5e-5);
}

TEST(Primitives, EvalModeDropoutIsIdentity) {
  RngStream rng(3);
  ad::Tape t;
  ad::Var x = t.constant(random_tensor({4, 5}, rng));
  EXPECT_EQ(ad::dropout(x, 0.3, rng, false).id(), x.id());
  EXPECT_EQ(ad::gaussian_dropout(x, 0.3, rng, false).id(), x.id());
  EXPECT_EQ(ad::dropout(x, 0.3, rng, false).value(), x.value());
}

TEST(Primitives, ShapeMismatchNamesOpAndShapes) {
  ad::Tape t;
  ad::Var a = t.constant(Tensor({2, 3}));
  ad::Var b = t.constant(Tensor({2, 3}));
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(ad::add(a, t.constant(Tensor({3, 2}))), ShapeError);
}

TEST(Backward, SquaredNormGradient) {
  ParamStore s;
  s.add("x", Tensor::vector({1.0, 2.0}));
  ad::Tape t;
  ad::Var x = t.parameter(s, "x");
  const Gradients g = t.backward(ad::sum(ad::mul(x, x)));
  EXPECT_EQ(g.at("x")[0], 2.0);
  EXPECT_EQ(g.at("x")[1], 4.0);
}

TEST(Backward, SoftmaxFirstComponentAgainstFiniteDifferences) {
  ParamStore s;
  s.add("x", Tensor::vector({0.0, 0.0}));
  const auto build = [](ad::Tape& t, const ParamStore& p) {
    return ad::slice(ad::softmax(t.parameter(p, "x")), 0, 1);
  };
  ad::Tape t;
  const Gradients g = t.backward(build(t, s));
  const Gradients fd = finite_diff_grad(
      [&](const ParamStore& p) {
        ad::Tape u(false);
        return build(u, p).value()[0];
      },
      s, 1e-6);
  EXPECT_NEAR(g.at("x")[0], 0.25, 1e-15);
  EXPECT_NEAR(g.at("x")[1], -0.25, 1e-15);
  EXPECT_NEAR(fd.at("x")[0], 0.25, 1e-9);
  EXPECT_NEAR(fd.at("x")[1], -0.25, 1e-9);
}

TEST(Backward, NonScalarLossIsRejected) {
  ad::Tape t;
  ad::Var x = t.constant(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Backward, SecondBackwardIsRejected) {
  ParamStore s;
  s.add("x", Tensor::vector({1.0}));
  ad::Tape t;
  ad::Var l = ad::sum(t.parameter(s, "x"));
  t.backward(l);
  EXPECT_THROW(t.backward(l), std::logic_error);
}

TEST(Backward, UnreachedParametersGetZeroGradients) {
  ParamStore s;
  s.add("used", Tensor::vector({1.0, 2.0}));
  s.add("unused", Tensor({2, 2}, 5.0));
  ad::Tape t;
  const Gradients g = t.backward(ad::sum(t.parameter(s, "used")), s);
  ASSERT_TRUE(g.count("unused"));
  EXPECT_EQ(g.at("unused"), Tensor({2, 2}));
}

TEST(FiniteDiff, QuadraticAndTanh) {
  ParamStore s;
  s.add("w", Tensor::vector({0.5, -1.5, 2.0}));
  const Gradients g = finite_diff_grad(
      [](const ParamStore& p) {
        const Tensor& w = p.get("w");
        return 3.0 * w[0] * w[0] + w[1] * w[1] - w[2] * w[2];
      },
      s, 1e-6);
  EXPECT_NEAR(g.at("w")[0], 3.0, 1e-8);
  EXPECT_NEAR(g.at("w")[1], -3.0, 1e-8);
  EXPECT_NEAR(g.at("w")[2], -4.0, 1e-8);

  ParamStore z;
  z.add("x", Tensor::vector({0.0}));
  const Gradients gt = finite_diff_grad([](const ParamStore& p) { return std::tanh(p.get("x")[0]); }, z, 1e-6);
  EXPECT_NEAR(gt.at("x")[0], 1.0, 1e-8);
}

TEST(FiniteDiff, RelativeErrorFloor) {
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_NEAR(relative_error(1e-9, 2e-9), 1e-9 / 1e-3, 1e-18);
}

// ---- every primitive against finite differences ------------------------------

TEST(PrimitiveGradients, Matmul) {
  check_primitive("matmul",
                  [](RngStream& r) {
                    const std::size_t m = dim(r), k = dim(r), n = dim(r);
                    return two_of(random_tensor({m, k}, r), random_tensor({k, n}, r));
                  },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::matmul(A(t, s), B(t, s)); });
}

TEST(PrimitiveGradients, MatmulVectorOperands) {
  check_primitive("matvec",
                  [](RngStream& r) {
                    const std::size_t m = dim(r), k = dim(r);
                    return two_of(random_tensor({m, k}, r), random_tensor({k}, r));
                  },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::matmul(A(t, s), B(t, s)); });
  check_primitive("vecmat",
                  [](RngStream& r) {
                    const std::size_t k = dim(r), n = dim(r);
                    return two_of(random_tensor({k}, r), random_tensor({k, n}, r));
                  },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::matmul(A(t, s), B(t, s)); });
}

TEST(PrimitiveGradients, MatmulWideRightOperand) {
  // exercises the kernel used when the result has many columns
  check_primitive("matmul_wide",
                  [](RngStream& r) {
                    const std::size_t m = dim(r), k = dim(r), n = 8 + dim(r);
                    return two_of(random_tensor({m, k}, r), random_tensor({k, n}, r));
                  },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::matmul(A(t, s), B(t, s)); });
}

TEST(PrimitiveGradients, Elementwise) {
  const auto same = [](RngStream& r) {
    const Shape sh = {dim(r), dim(r)};
    return two_of(random_tensor(sh, r), random_tensor(sh, r));
  };
  check_primitive("add", same, [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::add(A(t, s), B(t, s)); });
  check_primitive("sub", same, [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::sub(A(t, s), B(t, s)); });
  check_primitive("mul", same, [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::mul(A(t, s), B(t, s)); });
  check_primitive("add_n", same, [](ad::Tape& t, const ParamStore& s, RngStream&) {
    return ad::add_n({A(t, s), B(t, s), A(t, s)});
  });
  const auto single = [](RngStream& r) { return one_of(random_tensor({dim(r), dim(r)}, r, -2.0, 2.0)); };
  check_primitive("tanh", single, [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::tanh(A(t, s)); });
  check_primitive("sigmoid", single, [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::sigmoid(A(t, s)); });
  check_primitive("affine", single, [](ad::Tape& t, const ParamStore& s, RngStream&) {
    return ad::affine(A(t, s), -1.7, 0.3);
  });
}

TEST(PrimitiveGradients, AddRows) {
  check_primitive("add_rows",
                  [](RngStream& r) {
                    const std::size_t n = dim(r), h = dim(r);
                    return two_of(random_tensor({n, h}, r), random_tensor({h}, r));
                  },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::add_rows(A(t, s), B(t, s)); });
}

TEST(PrimitiveGradients, SoftmaxAndLogSoftmaxAlongBothAxes) {
  const auto mat = [](RngStream& r) { return one_of(random_tensor({dim(r), dim(r)}, r, -3.0, 3.0)); };
  const auto vec = [](RngStream& r) { return one_of(random_tensor({dim(r)}, r, -3.0, 3.0)); };
  for (std::size_t axis : {0u, 1u}) {
    check_primitive("softmax_m", mat, [axis](ad::Tape& t, const ParamStore& s, RngStream&) {
      return ad::softmax(A(t, s), axis);
    });
    check_primitive("log_softmax_m", mat, [axis](ad::Tape& t, const ParamStore& s, RngStream&) {
      return ad::log_softmax(A(t, s), axis);
    });
  }
  check_primitive("softmax_v", vec, [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::softmax(A(t, s)); });
  check_primitive("log_softmax_v", vec,
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::log_softmax(A(t, s)); });
}

TEST(PrimitiveGradients, EmbeddingLookupWithRepeats) {
  check_primitive("embedding",
                  [](RngStream& r) { return one_of(random_tensor({dim(r, 2), dim(r)}, r)); },
                  [](ad::Tape& t, const ParamStore& s, RngStream& r) {
                    const std::size_t vocab = s.get("a").shape()[0];
                    std::vector<std::size_t> ids(dim(r));
                    for (auto& id : ids) id = static_cast<std::size_t>(r.below(vocab));
                    ids.push_back(ids.front());
                    return ad::embedding_lookup(A(t, s), ids);
                  });
}

TEST(PrimitiveGradients, ConcatSliceTransposeReshape) {
  check_primitive("concat_v",
                  [](RngStream& r) { return two_of(random_tensor({dim(r)}, r), random_tensor({dim(r)}, r)); },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::concat({A(t, s), B(t, s), A(t, s)}); });
  check_primitive("concat_rows",
                  [](RngStream& r) {
                    const std::size_t c = dim(r);
                    return two_of(random_tensor({dim(r), c}, r), random_tensor({dim(r), c}, r));
                  },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::concat({A(t, s), B(t, s)}, 0); });
  check_primitive("concat_cols",
                  [](RngStream& r) {
                    const std::size_t rows = dim(r);
                    return two_of(random_tensor({rows, dim(r)}, r), random_tensor({rows, dim(r)}, r));
                  },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::concat({A(t, s), B(t, s)}, 1); });
  check_primitive("slice",
                  [](RngStream& r) { return one_of(random_tensor({dim(r, 2), dim(r)}, r)); },
                  [](ad::Tape& t, const ParamStore& s, RngStream& r) {
                    const std::size_t rows = s.get("a").shape()[0];
                    const std::size_t begin = static_cast<std::size_t>(r.below(rows));
                    const std::size_t len = 1 + static_cast<std::size_t>(r.below(rows - begin));
                    return ad::slice(A(t, s), begin, len);
                  });
  check_primitive("transpose", [](RngStream& r) { return one_of(random_tensor({dim(r), dim(r)}, r)); },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::transpose(A(t, s)); });
  check_primitive("reshape", [](RngStream& r) { return one_of(random_tensor({dim(r), dim(r)}, r)); },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) {
                    return ad::reshape(A(t, s), Shape{s.get("a").size()});
                  });
}

TEST(PrimitiveGradients, LayerNorm) {
  check_primitive("layer_norm_v", [](RngStream& r) { return one_of(random_tensor({dim(r, 2)}, r)); },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::layer_norm(A(t, s), 1e-6); });
  check_primitive("layer_norm_m", [](RngStream& r) { return one_of(random_tensor({dim(r), dim(r, 2)}, r)); },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return ad::layer_norm(A(t, s), 1e-6); });
}

TEST(PrimitiveGradients, MasksAndTrainingNoise) {
  const auto single = [](RngStream& r) { return one_of(random_tensor({dim(r), dim(r)}, r)); };
  check_primitive("mask_apply", single, [](ad::Tape& t, const ParamStore& s, RngStream& r) {
    ad::Var a = A(t, s);
    return ad::mask_apply(a, random_tensor(a.value().shape(), r));
  });
  // the noise stream is re-created for every evaluation, so the mask is fixed
  check_primitive("dropout", single, [](ad::Tape& t, const ParamStore& s, RngStream& r) {
    return ad::dropout(A(t, s), 0.3, r, true);
  });
  check_primitive("gaussian_dropout", single, [](ad::Tape& t, const ParamStore& s, RngStream& r) {
    return ad::gaussian_dropout(A(t, s), 0.3, r, true);
  });
}

TEST(PrimitiveGradients, Reductions) {
  for (int draw = 0; draw < kDraws; ++draw) {
    RngStream r = RngStream(5).split(static_cast<std::uint64_t>(draw));
    const ParamStore s = one_of(random_tensor({dim(r), dim(r)}, r));
    const Tensor w = random_tensor(s.get("a").shape(), r);
    EXPECT_LT(check_graph([](ad::Tape& t, const ParamStore& p) { return ad::sum(A(t, p)); }, s).max_relative_error,
              kGradTol);
    EXPECT_LT(check_graph([&](ad::Tape& t, const ParamStore& p) { return ad::weighted_sum(A(t, p), w); }, s)
                  .max_relative_error,
              kGradTol);
  }
}

TEST(PrimitiveGradients, FusedLstmUpdate) {
  check_primitive("lstm_pointwise",
                  [](RngStream& r) {
                    const std::size_t h = dim(r);
                    return two_of(random_tensor({4 * h}, r, -2.0, 2.0), random_tensor({h}, r));
                  },
                  [](ad::Tape& t, const ParamStore& s, RngStream&) { return lstm_pointwise(A(t, s), B(t, s)); });
}

// ---- properties -------------------------------------------------------------------

TEST(Properties, SoftmaxNormalizationAndLogConsistency) {
  RngStream rng(11);
  for (int draw = 0; draw < 50; ++draw) {
    const Tensor v = random_tensor({dim(rng), dim(rng)}, rng, -50.0, 50.0);
    ad::Tape t(false);
    ad::Var x = t.constant(v);
    for (std::size_t axis : {0u, 1u}) {
      const Tensor s = ad::softmax(x, axis).value();
      const Tensor ls = ad::log_softmax(x, axis).value();
      const std::size_t rows = v.shape()[0], cols = v.shape()[1];
      for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_GE(s[i], 0.0);
        EXPECT_NEAR(std::exp(ls[i]), s[i], 1e-12);
      }
      const std::size_t lines = axis == 0 ? cols : rows, len = axis == 0 ? rows : cols;
      for (std::size_t l = 0; l < lines; ++l) {
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) total += axis == 0 ? s.at(j, l) : s.at(l, j);
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Properties, LayerNormStandardizesEachRow) {
  RngStream rng(12);
  for (int draw = 0; draw < 20; ++draw) {
    const Tensor v = random_tensor({dim(rng), dim(rng, 2)}, rng, -10.0, 10.0);
    ad::Tape t(false);
    const Tensor y = ad::layer_norm(t.constant(v), 1e-12).value();
    const std::size_t rows = v.shape()[0], cols = v.shape()[1];
    for (std::size_t r = 0; r < rows; ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t c = 0; c < cols; ++c) mean += y.at(r, c);
      mean /= static_cast<double>(cols);
      for (std::size_t c = 0; c < cols; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
      var /= static_cast<double>(cols);
      EXPECT_NEAR(mean, 0.0, 1e-9);
      EXPECT_NEAR(var, 1.0, 1e-9);
    }
  }
}

TEST(Properties, TrainingNoiseIsReproducibleGivenTheSeed) {
  const auto run = [] {
    RngStream rng(77);
    ad::Tape t;
    ad::Var x = t.constant(Tensor({6, 7}, 1.0));
    ad::Var y = ad::gaussian_dropout(ad::dropout(x, 0.4, rng, true), 0.3, rng, true);
    return y.value();
  };
  const Tensor a = run(), b = run();
  EXPECT_EQ(a, b);
  std::size_t zeros = 0;
  for (double v : a.data()) zeros += v == 0.0;
  EXPECT_GT(zeros, 0u);
}

// ---- recurrent cells ----------------------------------------------------------------

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

TEST(Cells, GruWithZeroWeightsAndZeroInputStaysAtZero) {
  ad::Tape t;
  GruWeights w{t.constant(Tensor({6, 3})), t.constant(Tensor({4, 2})), t.constant(Tensor({2, 2})),
               t.constant(Tensor({6}))};
  const Tensor h = gru_cell(t.constant(Tensor({3})), t.constant(Tensor({2})), w).value();
  EXPECT_EQ(h, Tensor({2}));
}

TEST(Cells, LstmWithZeroWeightsGivesZeroState) {
  RngStream rng(4);
  ad::Tape t;
  LstmWeights w{t.constant(Tensor({8, 3})), t.constant(Tensor({8, 2})), t.constant(Tensor({8}))};
  const LstmState s = lstm_cell(t.constant(random_tensor({3}, rng)), t.constant(Tensor({2})),
                                t.constant(Tensor({2})), w);
  EXPECT_EQ(s.h.value(), Tensor({2}));
  EXPECT_EQ(s.c.value(), Tensor({2}));
}

TEST(Cells, TwoUnitGruAgainstScalarArithmetic) {
  const double x = 0.5, h1 = 0.1, h2 = -0.2;
  ad::Tape t;
  GruWeights w{t.constant(Tensor::matrix(6, 1, {0.3, -0.1, 0.2, 0.4, -0.5, 0.6})),
               t.constant(Tensor::matrix(4, 2, {0.1, 0.2, -0.3, 0.1, 0.2, -0.2, 0.05, 0.3})),
               t.constant(Tensor::matrix(2, 2, {0.4, -0.1, 0.2, 0.3})),
               t.constant(Tensor::vector({0.1, 0.0, -0.1, 0.2, 0.0, 0.05}))};
  const Tensor out = gru_cell(t.constant(Tensor::vector({x})), t.constant(Tensor::vector({h1, h2})), w).value();

  const double z1 = sig(0.3 * x + 0.1 * h1 + 0.2 * h2 + 0.1);
  const double z2 = sig(-0.1 * x - 0.3 * h1 + 0.1 * h2 + 0.0);
  const double r1 = sig(0.2 * x + 0.2 * h1 - 0.2 * h2 - 0.1);
  const double r2 = sig(0.4 * x + 0.05 * h1 + 0.3 * h2 + 0.2);
  const double n1 = std::tanh(-0.5 * x + 0.4 * (r1 * h1) - 0.1 * (r2 * h2) + 0.0);
  const double n2 = std::tanh(0.6 * x + 0.2 * (r1 * h1) + 0.3 * (r2 * h2) + 0.05);
  EXPECT_NEAR(out[0], z1 * h1 + (1 - z1) * n1, 1e-15);
  EXPECT_NEAR(out[1], z2 * h2 + (1 - z2) * n2, 1e-15);
}

TEST(Cells, OneUnitLstmAgainstScalarArithmetic) {
  const double x = -0.7, h = 0.3, c = 0.8;
  ad::Tape t;
  LstmWeights w{t.constant(Tensor::matrix(4, 1, {0.5, -0.4, 0.9, 0.2})),
                t.constant(Tensor::matrix(4, 1, {0.1, 0.3, -0.6, 0.7})),
                t.constant(Tensor::vector({0.0, 1.0, 0.1, -0.2}))};
  const LstmState s = lstm_cell(t.constant(Tensor::vector({x})), t.constant(Tensor::vector({h})),
                                t.constant(Tensor::vector({c})), w);
  const double i = sig(0.5 * x + 0.1 * h), f = sig(-0.4 * x + 0.3 * h + 1.0);
  const double g = std::tanh(0.9 * x - 0.6 * h + 0.1), o = sig(0.2 * x + 0.7 * h - 0.2);
  const double cn = f * c + i * g;
  EXPECT_NEAR(s.c.value()[0], cn, 1e-15);
  EXPECT_NEAR(s.h.value()[0], o * std::tanh(cn), 1e-15);
}

TEST(Cells, HiddenStatesStayInsideTheOpenUnitInterval) {
  RngStream rng(21);
  for (int draw = 0; draw < 50; ++draw) {
    ad::Tape t;
    const std::size_t in = dim(rng), units = dim(rng);
    GruWeights g{t.constant(random_tensor({3 * units, in}, rng, -3, 3)),
                 t.constant(random_tensor({2 * units, units}, rng, -3, 3)),
                 t.constant(random_tensor({units, units}, rng, -3, 3)),
                 t.constant(random_tensor({3 * units}, rng, -3, 3))};
    LstmWeights l{t.constant(random_tensor({4 * units, in}, rng, -3, 3)),
                  t.constant(random_tensor({4 * units, units}, rng, -3, 3)),
                  t.constant(random_tensor({4 * units}, rng, -3, 3))};
    ad::Var x = t.constant(random_tensor({in}, rng, -5, 5));
    ad::Var h = t.constant(random_tensor({units}, rng, -0.99, 0.99));
    for (double v : gru_cell(x, h, g).value().data()) EXPECT_LT(std::abs(v), 1.0);
    for (double v : lstm_cell(x, h, t.constant(random_tensor({units}, rng, -5, 5)), l).h.value().data())
      EXPECT_LT(std::abs(v), 1.0);
  }
}

TEST(Cells, GradientsOfBothCellsWithRecurrentMasks) {
  for (int draw = 0; draw < kDraws; ++draw) {
    RngStream rng = RngStream(31).split(static_cast<std::uint64_t>(draw));
    const std::size_t in = dim(rng), units = dim(rng);
    ParamStore s;
    s.add("x", random_tensor({in}, rng));
    s.add("h", random_tensor({units}, rng));
    s.add("c", random_tensor({units}, rng));
    s.add("gw", random_tensor({3 * units, in}, rng));
    s.add("gzr", random_tensor({2 * units, units}, rng));
    s.add("gn", random_tensor({units, units}, rng));
    s.add("gb", random_tensor({3 * units}, rng));
    s.add("lw", random_tensor({4 * units, in}, rng));
    s.add("lu", random_tensor({4 * units, units}, rng));
    s.add("lb", random_tensor({4 * units}, rng));
    const Tensor mask = random_tensor({units}, rng, 0.0, 2.0);
    const Tensor r1 = random_tensor({units}, rng), r2 = random_tensor({units}, rng), r3 = random_tensor({units}, rng);
    const GradCheckResult r = check_graph(
        [&](ad::Tape& t, const ParamStore& p) {
          auto v = [&](const char* n) { return t.parameter(p, n); };
          ad::Var hg = gru_cell(v("x"), v("h"), GruWeights{v("gw"), v("gzr"), v("gn"), v("gb")}, &mask);
          LstmState ls = lstm_cell(v("x"), v("h"), v("c"), LstmWeights{v("lw"), v("lu"), v("lb")}, &mask);
          return ad::add_n({ad::weighted_sum(hg, r1), ad::weighted_sum(ls.h, r2), ad::weighted_sum(ls.c, r3)});
        },
        s);
    EXPECT_LT(r.max_relative_error, kGradTol) << "draw " << draw << " at " << r.worst_parameter;
  }
}

// ---- Nadam ------------------------------------------------------------------------

nlohmann::json nadam_reference() {
  std::ifstream in(testing::oracle_dir() / "nadam_reference.json");
  return nlohmann::json::parse(in);
}

void expect_relative(double actual, double expected, double tol, const std::string& what) {
  EXPECT_LE(std::abs(actual - expected), tol * std::max(std::abs(expected), 1e-300)) << what;
}

TEST(Nadam, ZeroGradientAndZeroMomentsLeaveParametersUnchanged) {
  ParamStore s;
  s.add("w", Tensor::vector({1.0, -2.0, 3.0}));
  const ParamStore before = s;
  NadamState st = nadam_init(s, NadamConfig{});
  nadam_step(s, zero_gradients(s), st);
  EXPECT_EQ(s, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Nadam, MissingGradientKeyIsRejected) {
  ParamStore s;
  s.add("w", Tensor::vector({1.0}));
  s.add("v", Tensor::vector({1.0}));
  NadamState st = nadam_init(s, NadamConfig{});
  Gradients g;
  g["w"] = Tensor::vector({1.0});
  EXPECT_THROW(nadam_step(s, g, st), std::invalid_argument);
}

TEST(Nadam, FirstStepOnHalfSquareDescendsByAtMostTheBoundedAmount) {
  const nlohmann::json ref = nadam_reference();
  ParamStore s;
  s.add("w", Tensor::vector({1.0}));
  NadamConfig cfg;
  cfg.learning_rate = 0.001;
  NadamState st = nadam_init(s, cfg);
  Gradients g;
  g["w"] = Tensor::vector({s.get("w")[0]});
  nadam_step(s, g, st);
  const double w = s.get("w")[0];
  EXPECT_LT(w, 1.0);
  // first-step multiplier of the Nesterov estimate is 1 + b1/(1+b1)
  EXPECT_LE(1.0 - w, cfg.learning_rate * (1.0 + cfg.beta1 / (1.0 + cfg.beta1)) + 1e-15);
  expect_relative(w, ref["half_square"]["w_step1"].get<double>(), 1e-13, "half_square");
}

TEST(Nadam, ConvexQuadraticTrajectoryMatchesReferenceRecurrences) {
  const nlohmann::json q = nadam_reference()["quadratic"];
  const auto a = q["a"].get<std::vector<double>>();
  ParamStore s;
  s.add("w", Tensor::vector(q["w0"].get<std::vector<double>>()));
  NadamConfig cfg;
  cfg.learning_rate = q["lr"].get<double>();
  NadamState st = nadam_init(s, cfg);
  const auto loss = [&] {
    const Tensor& w = s.get("w");
    return 0.5 * (a[0] * w[0] * w[0] + a[1] * w[1] * w[1]);
  };
  EXPECT_DOUBLE_EQ(loss(), q["loss0"].get<double>());
  const double loss0 = loss();
  for (int step = 1; step <= q["steps"].get<int>(); ++step) {
    const Tensor& w = s.get("w");
    Gradients g;
    g["w"] = Tensor::vector({a[0] * w[0], a[1] * w[1]});
    nadam_step(s, g, st);
    const std::string key = "w_step" + std::to_string(step);
    if (q.contains(key)) {
      const auto expected = q[key].get<std::vector<double>>();
      for (std::size_t i = 0; i < 2; ++i) expect_relative(s.get("w")[i], expected[i], 1e-9, key);
    }
  }
  EXPECT_LT(loss(), 1e-3 * loss0);
  expect_relative(loss(), q["loss200"].get<double>(), 1e-8, "loss200");
}

TEST(Nadam, DecayIsAddedToTheGradientPerName) {
  const nlohmann::json d = nadam_reference()["decay_only"];
  const auto w0 = d["w0"].get<std::vector<double>>();
  const auto decay = d["decay"].get<std::vector<double>>();
  ParamStore s;
  s.add("a", Tensor::vector({w0[0]}), decay[0]);
  s.add("b", Tensor::vector({w0[1]}), decay[1]);
  NadamConfig cfg;
  cfg.learning_rate = d["lr"].get<double>();
  NadamState st = nadam_init(s, cfg);
  for (int i = 0; i < 3; ++i) nadam_step(s, zero_gradients(s), st);
  const auto expected = d["w_step3"].get<std::vector<double>>();
  expect_relative(s.get("a")[0], expected[0], 1e-12, "decayed");
  EXPECT_EQ(s.get("b")[0], expected[1]);
}

TEST(Properties, DropoutKeepsTheExpectation) {
  RngStream rng(8);
  ad::Tape t(false);
  const Tensor y = ad::dropout(t.constant(Tensor({200, 200}, 1.0)), 0.3, rng, true).value();
  const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / static_cast<double>(y.size());
  EXPECT_NEAR(mean, 1.0, 0.02);
}

}  // namespace
}  // namespace zimm
