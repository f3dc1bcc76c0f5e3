#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <tuple>

#include "doctest.h"
#include "oracles.hpp"

#include "bilevel/checkpoint.hpp"
#include "bilevel/conv.hpp"
#include "bilevel/params.hpp"

using namespace bilevel;

TEST_CASE("conv matches the direct definition") {
  std::mt19937_64 rng(11);
  for (auto [in, out, k, H, W] : {std::tuple{1, 4, 5, 7, 9}, std::tuple{3, 2, 3, 6, 6}, std::tuple{2, 2, 1, 4, 5}}) {
    ConvLayer l(in, out, k);
    l.weights = oracle::gaussian(l.weights.size(), rng);
    const Shape s{in, H, W};
    const Vec x = oracle::gaussian(static_cast<Eigen::Index>(s.size()), rng);
    const Vec ref = oracle::conv_direct(l.weights, in, out, k, x, H, W);
    CHECK((conv_forward(l, x, s) - ref).norm() <= 1e-12 * ref.norm());
  }
}

TEST_CASE("conv adjoint identity") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    ConvStack st;
    st.layers = {ConvLayer(1, 4, 5), ConvLayer(4, 8, 5), ConvLayer(8, 3, 3)};
    for (auto& l : st.layers) l.weights = oracle::gaussian(l.weights.size(), rng);
    const Shape s{1, 9 + trial % 5, 8 + trial % 3};
    const Vec x = oracle::gaussian(static_cast<Eigen::Index>(s.size()), rng);
    const Vec u = oracle::gaussian(static_cast<Eigen::Index>(st.output_shape(s).size()), rng);
    const double lhs = st.apply(x, s).dot(u), rhs = x.dot(st.adjoint(u, s));
    REQUIRE(std::fabs(lhs - rhs) <= 1e-10 * std::max(1.0, std::fabs(lhs)));
  }
}

TEST_CASE("conv weight gradient matches finite differences") {
  std::mt19937_64 rng(13);
  ConvLayer l(2, 3, 3);
  l.weights = oracle::gaussian(l.weights.size(), rng);
  const Shape s{2, 6, 5};
  const Vec x = oracle::gaussian(static_cast<Eigen::Index>(s.size()), rng);
  const Vec sig = oracle::gaussian(static_cast<Eigen::Index>(l.output_shape(s).size()), rng);
  const auto f = [&](const Vec& w) { return oracle::conv_direct(w, 2, 3, 3, x, 6, 5).dot(sig); };
  const Vec fd = oracle::fd_gradient(f, l.weights, 1e-6);
  CHECK(oracle::rel_err(conv_weight_grad(l, sig, x, s), fd) < 1e-8);
}

TEST_CASE("conv rejects mismatched inputs") {
  ConvLayer l(2, 3, 3);
  CHECK_THROWS_AS(conv_forward(l, Vec::Zero(10), Shape{2, 2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(conv_forward(l, Vec::Zero(8), Shape{1, 2, 4}), std::invalid_argument);
  ConvLayer even(1, 1, 2);
  CHECK_THROWS_AS(conv_forward(even, Vec::Zero(4), Shape{1, 2, 2}), std::invalid_argument);
}

TEST_CASE("spectral normalization") {
  const Shape s{1, 16, 16};
  SUBCASE("scalar kernel") {
    ConvStack st;
    st.layers = {ConvLayer(1, 1, 1)};
    st.layers[0].weights[0] = 3.0;
    const auto n = spectral_normalize(st, s, 50);
    CHECK(n.layers[0].weights[0] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("identity kernel") {
    ConvStack st;
    st.layers = {ConvLayer(1, 1, 5)};
    st.layers[0].weights[12] = 1.0;
    const auto n = spectral_normalize(st, s, 50);
    CHECK((n.layers[0].weights - st.layers[0].weights).cwiseAbs().maxCoeff() <= 1e-2);
  }
  SUBCASE("random three-layer stack") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 5; ++trial) {
      ConvStack st;
      st.layers = {ConvLayer(1, 4, 5), ConvLayer(4, 8, 5), ConvLayer(8, 8, 3)};
      for (auto& l : st.layers) l.weights = oracle::gaussian(l.weights.size(), rng);
      const auto n = spectral_normalize(st, s, 50);
      // Independent power iteration from a different start.
      const double est = spectral_norm_estimate(n, s, 200, 0xabcdef + trial);
      CHECK(est >= 0.9);
      CHECK(est <= 1.01);
    }
  }
  SUBCASE("zero operator is left alone") {
    ConvStack st;
    st.layers = {ConvLayer(1, 2, 3)};
    const auto n = spectral_normalize(st, s, 10);
    CHECK(n.layers[0].weights.isZero(0.0));
  }
}

TEST_CASE("zero-mean kernels") {
  std::mt19937_64 rng(15);
  const Vec w = oracle::gaussian(4 * 3 * 25, rng, 2.0) + Vec::Constant(4 * 3 * 25, 5.0);
  const Vec z = zero_mean_kernels(w, 4, 3, 5);
  for (int s = 0; s < 12; ++s) CHECK(std::fabs(z.segment(s * 25, 25).sum()) <= 1e-12);
  CHECK((zero_mean_kernels(z, 4, 3, 5) - z).norm() <= 1e-13);
}

namespace {

ParamLayout sample_layout() {
  return ParamLayout({{"conv0", {4, 1, 5, 5}, false}, {"wz", {2, 3}, true}, {"log_scale", {4}, false}});
}

}  // namespace

TEST_CASE("parameter layout and packing") {
  const ParamLayout layout = sample_layout();
  CHECK(layout.size() == 100 + 6 + 4);
  CHECK(layout.offset("wz") == 100);
  CHECK(layout.offset("log_scale") == 106);
  CHECK(layout.contains("conv0"));
  CHECK_FALSE(layout.contains("bx"));
  CHECK_THROWS_AS(layout.offset("bx"), std::out_of_range);
  CHECK_THROWS_AS(ParamLayout({{"a", {1}}, {"a", {2}}}), std::invalid_argument);

  std::mt19937_64 rng(16);
  const ThetaParams th(layout, oracle::gaussian(static_cast<Eigen::Index>(layout.size()), rng));
  const ThetaParams back = pack(layout, unpack(th));
  CHECK(back.flat == th.flat);
  CHECK(unpack(back) == unpack(th));

  TensorMap missing = unpack(th);
  missing.erase("wz");
  CHECK_THROWS_AS(pack(layout, missing), std::invalid_argument);
  CHECK_THROWS_AS(ThetaParams(layout, Vec::Zero(3)), std::invalid_argument);
}

TEST_CASE("clamp_nonneg") {
  const ParamLayout layout = sample_layout();
  ThetaParams th(layout, Vec::Constant(static_cast<Eigen::Index>(layout.size()), -1.0));
  const ThetaParams c = clamp_nonneg(th);
  CHECK(c.block("wz").isZero(0.0));
  CHECK((c.block("conv0").array() == -1.0).all());
  CHECK((c.block("log_scale").array() == -1.0).all());
  CHECK(clamp_nonneg(c).flat == c.flat);

  ThetaParams pos(layout, Vec::Constant(static_cast<Eigen::Index>(layout.size()), 0.5));
  CHECK(clamp_nonneg(pos).flat == pos.flat);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(17);
  const ParamLayout layout = sample_layout();
  const ThetaParams th(layout, oracle::gaussian(static_cast<Eigen::Index>(layout.size()), rng));
  const auto bytes = encode_checkpoint(th);
  REQUIRE(bytes.size() > 7);
  CHECK(std::memcmp(bytes.data(), "BILEV01", 7) == 0);

  const ThetaParams back = decode_checkpoint(bytes);
  CHECK(std::memcmp(back.flat.data(), th.flat.data(), sizeof(double) * th.flat.size()) == 0);
  REQUIRE(back.layout.specs().size() == layout.specs().size());
  for (std::size_t i = 0; i < layout.specs().size(); ++i) {
    CHECK(back.layout.specs()[i].name == layout.specs()[i].name);
    CHECK(back.layout.specs()[i].shape == layout.specs()[i].shape);
  }

  // Data section is little-endian doubles at the end of the file.
  double last = 0.0;
  std::memcpy(&last, bytes.data() + bytes.size() - 8, 8);
  CHECK(last == th.flat[th.flat.size() - 1]);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS(decode_checkpoint(truncated));
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS(decode_checkpoint(trailing));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS(decode_checkpoint(bad_magic));

  const auto dir = std::filesystem::temp_directory_path() / "bilevel_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "t.bin", th);
  const ThetaParams loaded = load_checkpoint(dir / "t.bin", layout);
  CHECK(loaded.flat == th.flat);
  CHECK(loaded.layout.spec("wz").nonneg);
  const ParamLayout other({{"conv0", {4, 1, 5, 5}}, {"log_scale", {4}}});
  CHECK_THROWS(load_checkpoint(dir / "t.bin", other));
  CHECK_THROWS(load_checkpoint(dir / "missing.bin"));
  std::filesystem::remove_all(dir);
}
