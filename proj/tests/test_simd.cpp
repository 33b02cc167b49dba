#include <doctest.h>

#include <cmath>

#include "ems/network.hpp"
#include "ems/simd/kernels.hpp"
#include "support.hpp"

using namespace ems;

namespace {

// FMA contraction and a different summation order separate the variants by
// a few ulps of the accumulated magnitude.
void check_close(const std::vector<double>& a, const std::vector<double>& b, double scale) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12 * scale);
}

const simd::KernelTable* avx2_or_skip() {
  const auto* k = simd::avx2_kernels();
  if (k == nullptr || !simd::cpu_has_avx2()) {
    MESSAGE("AVX2/FMA unavailable; equivalence not exercised");
    return nullptr;
  }
  return k;
}

}  // namespace

TEST_CASE("layer kernels: avx2 matches scalar on random shapes") {
  const auto* vk = avx2_or_skip();
  if (!vk) return;
  const auto& sk = simd::scalar_kernels();
  test::Gen gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = gen.integer(1, 9), in = gen.integer(1, 37), out = gen.integer(1, 37);
    const auto x = gen.reals(rows * in, -2, 2), w = gen.reals(in * out, -1, 1), b = gen.reals(out, -1, 1);
    const auto g = gen.reals(rows * out, -1, 1);
    std::vector<double> ys(rows * out), yv(rows * out);
    sk.layer_forward(rows, in, out, x.data(), w.data(), b.data(), ys.data());
    vk->layer_forward(rows, in, out, x.data(), w.data(), b.data(), yv.data());
    check_close(ys, yv, static_cast<double>(in) * 4.0);

    std::vector<double> gxs(rows * in), gxv(rows * in);
    sk.layer_backward_input(rows, in, out, g.data(), w.data(), gxs.data());
    vk->layer_backward_input(rows, in, out, g.data(), w.data(), gxv.data());
    check_close(gxs, gxv, static_cast<double>(out));

    auto gws = gen.reals(in * out, -1, 1), gbs = gen.reals(out, -1, 1);
    auto gwv = gws, gbv = gbs;
    sk.layer_backward_params(rows, in, out, x.data(), g.data(), gws.data(), gbs.data());
    vk->layer_backward_params(rows, in, out, x.data(), g.data(), gwv.data(), gbv.data());
    check_close(gws, gwv, static_cast<double>(rows) * 4.0);
    check_close(gbs, gbv, static_cast<double>(rows) * 2.0);
  }
}

TEST_CASE("elementwise kernels: avx2 matches scalar") {
  const auto* vk = avx2_or_skip();
  if (!vk) return;
  const auto& sk = simd::scalar_kernels();
  test::Gen gen(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = gen.integer(1, 70);
    auto a = gen.reals(n, -4, 4);
    auto b = a;
    sk.tanh_forward(n, a.data());
    vk->tanh_forward(n, b.data());
    check_close(a, b, 1.0);

    const auto y = gen.reals(n, -1, 1);
    auto gs = gen.reals(n, -1, 1);
    auto gv = gs;
    sk.tanh_backward(n, y.data(), gs.data());
    vk->tanh_backward(n, y.data(), gv.data());
    check_close(gs, gv, 1.0);

    const double alpha = gen.real(-2, 2);
    const auto x = gen.reals(n, -1, 1);
    auto ys = gen.reals(n, -1, 1);
    auto yv = ys;
    sk.axpy(n, alpha, x.data(), ys.data());
    vk->axpy(n, alpha, x.data(), yv.data());
    check_close(ys, yv, 4.0);

    const double tau = gen.real(0, 1);
    sk.lerp(n, tau, x.data(), ys.data());
    vk->lerp(n, tau, x.data(), yv.data());
    check_close(ys, yv, 4.0);

    const auto grad = gen.reals(n, -1, 1);
    auto ms = gen.reals(n, -0.1, 0.1), vs = gen.reals(n, 0, 0.1), ps = gen.reals(n, -1, 1);
    auto mv = ms, vv = vs, pv = ps;
    sk.adam(n, 1e-3, 0.9, 0.999, 1e-8, grad.data(), ms.data(), vs.data(), ps.data());
    vk->adam(n, 1e-3, 0.9, 0.999, 1e-8, grad.data(), mv.data(), vv.data(), pv.data());
    check_close(ms, mv, 1.0);
    check_close(vs, vv, 1.0);
    check_close(ps, pv, 1.0);
  }
}

TEST_CASE("network forward/backward agree across kernel sets") {
  if (!avx2_or_skip()) return;
  test::Gen gen(13);
  auto net = gen.network({3, 32, 32, 1}, nn::Activation::tanh, nn::Activation::sigmoid);
  const auto x = gen.reals(3 * 17, -1, 1);
  const auto up = gen.reals(17, -1, 1);
  std::vector<double> out[2], params[2];
  for (int i = 0; i < 2; ++i) {
    simd::select(i ? simd::Isa::avx2 : simd::Isa::scalar);
    nn::ForwardCache c;
    net.forward(x, 17, c);
    out[i].assign(c.output().begin(), c.output().end());
    auto g = net.make_gradients();
    net.backward(c, up, g, nullptr);
    for (std::size_t l = 0; l < g.weights.size(); ++l) params[i].insert(params[i].end(), g.weights[l].begin(), g.weights[l].end());
  }
  simd::select(simd::Isa::scalar);
  check_close(out[0], out[1], 1.0);
  check_close(params[0], params[1], 64.0);
}

TEST_CASE("select switches the active table") {
  simd::select(simd::Isa::scalar);
  CHECK(simd::active().isa == simd::Isa::scalar);
  if (simd::avx2_kernels() && simd::cpu_has_avx2()) {
    simd::select(simd::Isa::avx2);
    CHECK(simd::active().isa == simd::Isa::avx2);
  }
}
