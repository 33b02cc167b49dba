#include "ems/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define EMS_HAVE_AVX2_TU 1
#include <immintrin.h>
#else
#define EMS_HAVE_AVX2_TU 0
#endif

#include <cmath>

namespace ems::simd {

#if EMS_HAVE_AVX2_TU

#define EMS_AVX2 __attribute__((target("avx2,fma")))

namespace {

// y[0..n) += a * x[0..n)
EMS_AVX2 inline void axpy_row(std::size_t n, double a, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d y0 = _mm256_loadu_pd(y + j);
    __m256d y1 = _mm256_loadu_pd(y + j + 4);
    y0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j), y0);
    y1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j + 4), y1);
    _mm256_storeu_pd(y + j, y0);
    _mm256_storeu_pd(y + j + 4, y1);
  }
  for (; j + 4 <= n; j += 4) {
    _mm256_storeu_pd(y + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j), _mm256_loadu_pd(y + j)));
  }
  for (; j < n; ++j) y[j] += a * x[j];
}

EMS_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

EMS_AVX2 inline double dot_row(std::size_t n, const double* a, const double* b) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j), _mm256_loadu_pd(b + j), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j + 4), _mm256_loadu_pd(b + j + 4), acc1);
  }
  for (; j + 4 <= n; j += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j), _mm256_loadu_pd(b + j), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; j < n; ++j) acc += a[j] * b[j];
  return acc;
}

EMS_AVX2 void layer_forward(std::size_t rows, std::size_t in, std::size_t out, const double* x,
                            const double* w, const double* b, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y + r * out;
    const double* xr = x + r * in;
    for (std::size_t j = 0; j < out; ++j) yr[j] = b[j];
    for (std::size_t i = 0; i < in; ++i) axpy_row(out, xr[i], w + i * out, yr);
  }
}

EMS_AVX2 void layer_backward_input(std::size_t rows, std::size_t in, std::size_t out,
                                   const double* g, const double* w, double* gx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gr = g + r * out;
    for (std::size_t i = 0; i < in; ++i) gx[r * in + i] = dot_row(out, w + i * out, gr);
  }
}

EMS_AVX2 void layer_backward_params(std::size_t rows, std::size_t in, std::size_t out,
                                    const double* x, const double* g, double* gw, double* gb) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gr = g + r * out;
    const double* xr = x + r * in;
    for (std::size_t i = 0; i < in; ++i) axpy_row(out, xr[i], gr, gw + i * out);
    axpy_row(out, 1.0, gr, gb);
  }
}

// exp(y) for y in [0, 40]: y = n ln2 + r, |r| <= ln2/2, degree-13 Taylor on r.
EMS_AVX2 inline __m256d exp_nonneg(__m256d y) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(y, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, y);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);

  static constexpr double c[] = {1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0,
                                 1.0 / 3628800.0,    1.0 / 362880.0,    1.0 / 40320.0,
                                 1.0 / 5040.0,       1.0 / 720.0,       1.0 / 120.0,
                                 1.0 / 24.0,         1.0 / 6.0,         0.5,
                                 1.0,                1.0};
  __m256d p = _mm256_set1_pd(c[0]);
  for (int k = 1; k < 14; ++k) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(c[k]));

  // 2^n via the exponent field; n is integral and small here.
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);  // 2^52 + 2^51
  const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)),
                                      _mm256_castpd_si256(magic));
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
}

EMS_AVX2 void tanh_forward(std::size_t n, double* x) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d cap = _mm256_set1_pd(20.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d v = _mm256_loadu_pd(x + k);
    const __m256d sign = _mm256_and_pd(v, sign_mask);
    const __m256d a = _mm256_min_pd(_mm256_andnot_pd(sign_mask, v), cap);
    const __m256d e = exp_nonneg(_mm256_mul_pd(two, a));
    const __m256d t = _mm256_sub_pd(one, _mm256_div_pd(two, _mm256_add_pd(e, one)));
    _mm256_storeu_pd(x + k, _mm256_or_pd(t, sign));
  }
  for (; k < n; ++k) x[k] = std::tanh(x[k]);
}

EMS_AVX2 void tanh_backward(std::size_t n, const double* y, double* g) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d yv = _mm256_loadu_pd(y + k);
    const __m256d d = _mm256_fnmadd_pd(yv, yv, one);
    _mm256_storeu_pd(g + k, _mm256_mul_pd(_mm256_loadu_pd(g + k), d));
  }
  for (; k < n; ++k) g[k] *= 1.0 - y[k] * y[k];
}

EMS_AVX2 void axpy(std::size_t n, double alpha, const double* x, double* y) {
  axpy_row(n, alpha, x, y);
}

EMS_AVX2 void lerp(std::size_t n, double tau, const double* src, double* dst) {
  const __m256d vt = _mm256_set1_pd(tau);
  const __m256d vk = _mm256_set1_pd(1.0 - tau);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d d = _mm256_mul_pd(vk, _mm256_loadu_pd(dst + k));
    _mm256_storeu_pd(dst + k, _mm256_fmadd_pd(vt, _mm256_loadu_pd(src + k), d));
  }
  const double keep = 1.0 - tau;
  for (; k < n; ++k) dst[k] = keep * dst[k] + tau * src[k];
}

EMS_AVX2 void adam(std::size_t n, double lr_t, double beta1, double beta2, double eps,
                   const double* g, double* m, double* v, double* p) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d c1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d c2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d ve = _mm256_set1_pd(eps);
  const __m256d vl = _mm256_set1_pd(lr_t);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d gv = _mm256_loadu_pd(g + k);
    const __m256d mv = _mm256_fmadd_pd(c1, gv, _mm256_mul_pd(b1, _mm256_loadu_pd(m + k)));
    const __m256d vv =
        _mm256_fmadd_pd(c2, _mm256_mul_pd(gv, gv), _mm256_mul_pd(b2, _mm256_loadu_pd(v + k)));
    _mm256_storeu_pd(m + k, mv);
    _mm256_storeu_pd(v + k, vv);
    const __m256d step = _mm256_div_pd(mv, _mm256_add_pd(_mm256_sqrt_pd(vv), ve));
    _mm256_storeu_pd(p + k, _mm256_fnmadd_pd(vl, step, _mm256_loadu_pd(p + k)));
  }
  for (; k < n; ++k) {
    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
    p[k] -= lr_t * m[k] / (std::sqrt(v[k]) + eps);
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{Isa::avx2,   layer_forward, layer_backward_input,
                                 layer_backward_params, tanh_forward, tanh_backward,
                                 axpy,         lerp,          adam};
  return &table;
}

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

#else

const KernelTable* avx2_kernels() { return nullptr; }
bool cpu_has_avx2() { return false; }

#endif

}  // namespace ems::simd
