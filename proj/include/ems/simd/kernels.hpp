#pragma once

// Dense-layer arithmetic kernels with a scalar reference and an AVX2/FMA
// variant. The variant is chosen once per process from the CPU feature set;
// `EMS_SIMD=scalar|avx2` forces a choice.

#include <cstddef>
#include <string_view>

namespace ems::simd {

enum class Isa { scalar, avx2 };

// Weight matrices are stored input-major: W[i * out + j] connects input i to
// output j. Batched activations are row-major: X[r * width + c].
struct KernelTable {
  Isa isa;

  // Y[r,:] = b + X[r,:] * W
  void (*layer_forward)(std::size_t rows, std::size_t in, std::size_t out, const double* x,
                        const double* w, const double* b, double* y);
  // GX[r,i] = sum_j W[i,j] * G[r,j]
  void (*layer_backward_input)(std::size_t rows, std::size_t in, std::size_t out,
                               const double* g, const double* w, double* gx);
  // GW[i,:] += sum_r X[r,i] * G[r,:];  GB += sum_r G[r,:]
  void (*layer_backward_params)(std::size_t rows, std::size_t in, std::size_t out,
                                const double* x, const double* g, double* gw, double* gb);

  void (*tanh_forward)(std::size_t n, double* x);
  // g[k] *= 1 - y[k]^2
  void (*tanh_backward)(std::size_t n, const double* y, double* g);

  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // dst = (1 - tau) * dst + tau * src
  void (*lerp)(std::size_t n, double tau, const double* src, double* dst);
  // Adam step with bias-corrected rates folded into lr_t.
  void (*adam)(std::size_t n, double lr_t, double beta1, double beta2, double eps,
               const double* g, double* m, double* v, double* p);
};

const KernelTable& scalar_kernels();
// Null when the binary was built without AVX2 support.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

// Kernel set in use by the library.
const KernelTable& active();
// Override for tests and the `EMS_SIMD` environment variable.
void select(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace ems::simd
