#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "wr/checkpoint.hpp"
#include "wr/optim.hpp"

namespace fs = std::filesystem;
using namespace wr;
using namespace wr::ag;

namespace {

ParamSet<double> one_param(std::vector<double> v) {
  ParamSet<double> p;
  const auto n = v.size();
  p.add("p", Tensor<double>::from({n}, std::move(v), true));
  return p;
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "wr_ckpt_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Rmsprop, ZeroGradientLeavesParametersUnchanged) {
  auto p = one_param({0.5, -1.0});
  RmspropState<double> st;
  st.options.learning_rate = 0.1;
  p.at("p").mutable_grad();  // allocated, all zero
  rmsprop_step(p, st);
  EXPECT_EQ(p.at("p").values()[0], 0.5);
  EXPECT_EQ(p.at("p").values()[1], -1.0);
}

TEST(Rmsprop, FirstStepSize) {
  auto p = one_param({1.0});
  RmspropState<double> st;
  st.options = {0.01, 0.9, 1e-8};
  p.at("p").mutable_grad()[0] = 1.0;
  rmsprop_step(p, st);
  // v = 0.1 g^2, step = lr g / (sqrt(v) + eps)
  EXPECT_NEAR(p.at("p").values()[0], 1.0 - 0.01 / (std::sqrt(0.1) + 1e-8), 1e-15);
  EXPECT_FALSE(p.at("p").has_grad());
}

TEST(Rmsprop, ConvergesOnQuadraticBowl) {
  auto p = one_param({3.0, -2.0, 1.5});
  RmspropState<double> st;
  st.options.learning_rate = 0.01;
  for (int i = 0; i < 500; ++i) {
    backward(mean(square(p.at("p"))));
    rmsprop_step(p, st);
  }
  for (double v : p.at("p").values()) EXPECT_LT(std::abs(v), 0.1);
}

TEST(Rmsprop, NonFiniteGradientNamesParameter) {
  auto p = one_param({1.0});
  RmspropState<double> st;
  p.at("p").mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    rmsprop_step(p, st);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("p"), std::string::npos);
  }
}

TEST(Rmsprop, FrozenParametersUntouched) {
  auto p = one_param({1.0});
  p.at("p").node()->requires_grad = false;
  RmspropState<double> st;
  rmsprop_step(p, st);
  EXPECT_EQ(p.at("p").values()[0], 1.0);
  EXPECT_TRUE(st.mean_square.empty());
}

TEST(ParamSet, DuplicateNameRejected) {
  auto p = one_param({1.0});
  EXPECT_THROW(p.add("p", Tensor<double>::zeros({1})), ArgumentError);
  EXPECT_THROW(p.at("q"), ArgumentError);
}

TEST(ParamSet, CloneIsIndependent) {
  auto p = one_param({1.0, 2.0});
  auto q = p.clone();
  EXPECT_TRUE(p.values_equal(q));
  q.at("p").mutable_values()[0] = 5.0;
  EXPECT_FALSE(p.values_equal(q));
  EXPECT_EQ(p.parameter_count(), 2u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint c;
  c.meta["epoch"] = "3";
  c.meta["note"] = "tab\tand newline\n";
  ParamSet<float> pf;
  pf.add("w", Tensor<float>::from({2, 3}, {1.f, -2.f, 3.5f, 1e-30f, -0.f, 7.f}, true));
  ParamSet<double> pd;
  pd.add("v", Tensor<double>::from({3}, {0.1, 1e300, -4.0}, true));
  c.put_params("f/", pf);
  c.put_params("d/", pd);
  RmspropState<float> st;
  st.mean_square["w"] = {0.5f, 0.25f};
  c.put_rmsprop("opt/", st);
  const auto path = temp_file("roundtrip.wrckpt");
  c.save(path);

  const auto r = Checkpoint::load(path);
  EXPECT_EQ(r.meta, c.meta);
  ParamSet<float> pf2;
  pf2.add("w", Tensor<float>::zeros({2, 3}, true));
  r.load_params("f/", pf2);
  EXPECT_TRUE(pf.values_equal(pf2));
  ParamSet<double> pd2;
  pd2.add("v", Tensor<double>::zeros({3}, true));
  r.load_params("d/", pd2);
  EXPECT_TRUE(pd.values_equal(pd2));
  RmspropState<float> st2;
  r.load_rmsprop("opt/", st2);
  EXPECT_EQ(st2.mean_square, st.mean_square);
  EXPECT_EQ(r.encode(), c.encode());
}

TEST(Checkpoint, ShapeMismatchAndDtypeMismatchRejected) {
  Checkpoint c;
  ParamSet<float> pf;
  pf.add("w", Tensor<float>::zeros({2}, true));
  c.put_params("", pf);
  ParamSet<float> wrong_shape;
  wrong_shape.add("w", Tensor<float>::zeros({3}, true));
  EXPECT_THROW(c.load_params("", wrong_shape), FormatError);
  ParamSet<double> wrong_type;
  wrong_type.add("w", Tensor<double>::zeros({2}, true));
  EXPECT_THROW(c.load_params("", wrong_type), FormatError);
}

TEST(Checkpoint, BadMagicRejected) {
  auto bytes = Checkpoint{}.encode();
  bytes[0] = 'X';
  EXPECT_THROW(Checkpoint::decode(bytes), FormatError);
}

TEST(Checkpoint, EveryTruncationRejected) {
  Checkpoint c;
  c.meta["k"] = "v";
  ParamSet<float> pf;
  pf.add("w", Tensor<float>::full({4}, 1.f, true));
  c.put_params("", pf);
  const auto bytes = c.encode();
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_THROW(Checkpoint::decode(std::span(bytes.data(), n)), FormatError) << "length " << n;
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(Checkpoint::decode(extra), FormatError);
}

TEST(Checkpoint, FutureVersionUnsupported) {
  auto bytes = Checkpoint{}.encode();
  bytes[7] = 2;
  EXPECT_THROW(Checkpoint::decode(bytes), UnsupportedError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(Checkpoint::load(temp_file("does_not_exist.wrckpt")), IoError);
}
