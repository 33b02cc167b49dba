#include "ems/simd/kernels.hpp"

#include <cmath>

namespace ems::simd {
namespace {

void layer_forward(std::size_t rows, std::size_t in, std::size_t out, const double* x,
                   const double* w, const double* b, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y + r * out;
    const double* xr = x + r * in;
    for (std::size_t j = 0; j < out; ++j) yr[j] = b[j];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wi = w + i * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xi * wi[j];
    }
  }
}

void layer_backward_input(std::size_t rows, std::size_t in, std::size_t out, const double* g,
                          const double* w, double* gx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gr = g + r * out;
    for (std::size_t i = 0; i < in; ++i) {
      const double* wi = w + i * out;
      double acc = 0.0;
      for (std::size_t j = 0; j < out; ++j) acc += wi[j] * gr[j];
      gx[r * in + i] = acc;
    }
  }
}

void layer_backward_params(std::size_t rows, std::size_t in, std::size_t out, const double* x,
                           const double* g, double* gw, double* gb) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gr = g + r * out;
    const double* xr = x + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      double* gwi = gw + i * out;
      for (std::size_t j = 0; j < out; ++j) gwi[j] += xi * gr[j];
    }
    for (std::size_t j = 0; j < out; ++j) gb[j] += gr[j];
  }
}

void tanh_forward(std::size_t n, double* x) {
  for (std::size_t k = 0; k < n; ++k) x[k] = std::tanh(x[k]);
}

void tanh_backward(std::size_t n, const double* y, double* g) {
  for (std::size_t k = 0; k < n; ++k) g[k] *= 1.0 - y[k] * y[k];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t k = 0; k < n; ++k) y[k] += alpha * x[k];
}

void lerp(std::size_t n, double tau, const double* src, double* dst) {
  const double keep = 1.0 - tau;
  for (std::size_t k = 0; k < n; ++k) dst[k] = keep * dst[k] + tau * src[k];
}

void adam(std::size_t n, double lr_t, double beta1, double beta2, double eps, const double* g,
          double* m, double* v, double* p) {
  for (std::size_t k = 0; k < n; ++k) {
    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
    p[k] -= lr_t * m[k] / (std::sqrt(v[k]) + eps);
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar,  layer_forward, layer_backward_input,
                                 layer_backward_params, tanh_forward, tanh_backward,
                                 axpy,         lerp,          adam};
  return table;
}

}  // namespace ems::simd
