#include "specnet/fast_infer.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <type_traits>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace specnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;


// Filter transform of F(4,3): u = G g.
constexpr double kG[6][3] = {
    {1.0 / 4, 0.0, 0.0},
    {-1.0 / 6, -1.0 / 6, -1.0 / 6},
    {-1.0 / 6, 1.0 / 6, -1.0 / 6},
    {1.0 / 24, 1.0 / 12, 1.0 / 6},
    {1.0 / 24, -1.0 / 12, 1.0 / 6},
    {0.0, 0.0, 1.0},
};

// Per-output-channel affine map of a folded batch norm (identity if absent).
template <typename T>
void fold(const nn::Conv1dLayer<T>& conv, const nn::BatchNormLayer<T>* bn, std::vector<double>& w,
          std::vector<double>& b) {
  const std::size_t per_out = conv.in_channels * conv.kernel_size;
  w.assign(conv.weight.value.begin(), conv.weight.value.end());
  b.assign(conv.out_channels, 0.0);
  if (conv.has_bias) std::copy(conv.bias.value.begin(), conv.bias.value.end(), b.begin());
  if (!bn) return;
  for (std::size_t o = 0; o < conv.out_channels; ++o) {
    const double scale = double(bn->gamma.value[o]) / std::sqrt(double(bn->running_var[o]) + bn->eps);
    for (std::size_t j = 0; j < per_out; ++j) w[o * per_out + j] *= scale;
    b[o] = double(bn->beta.value[o]) + scale * (b[o] - double(bn->running_mean[o]));
  }
}


#if defined(__AVX512F__)

// Register-blocked C (rows x 16*NV) = A (rows x K) * B (K x 16*NV) with
// MR x NV accumulators; B rows are reused from L1 across the row block.
template <int MR, int NV>
inline void micro_kernel(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc,
                         std::size_t k_len) {
  __m512 acc[MR][NV];
#pragma GCC unroll 8
  for (int r = 0; r < MR; ++r)
#pragma GCC unroll 4
    for (int v = 0; v < NV; ++v) acc[r][v] = _mm512_setzero_ps();
  for (std::size_t k = 0; k < k_len; ++k) {
    __m512 bv[NV];
#pragma GCC unroll 4
    for (int v = 0; v < NV; ++v) bv[v] = _mm512_loadu_ps(b + k * ldb + 16 * v);
#pragma GCC unroll 8
    for (int r = 0; r < MR; ++r) {
      const __m512 av = _mm512_set1_ps(a[r * lda + k]);
#pragma GCC unroll 4
      for (int v = 0; v < NV; ++v) acc[r][v] = _mm512_fmadd_ps(av, bv[v], acc[r][v]);
    }
  }
#pragma GCC unroll 8
  for (int r = 0; r < MR; ++r)
#pragma GCC unroll 4
    for (int v = 0; v < NV; ++v) _mm512_storeu_ps(c + r * ldc + 16 * v, acc[r][v]);
}

template <int NV>
void gemm_columns(const float* a, const float* b, std::size_t ldb, float* c, std::size_t ldc, std::size_t rows,
                  std::size_t k_len) {
  constexpr std::size_t kRows = 6;
  std::size_t r = 0;
  for (; r + kRows <= rows; r += kRows) micro_kernel<kRows, NV>(a + r * k_len, k_len, b, ldb, c + r * ldc, ldc, k_len);
  const float* ar = a + r * k_len;
  float* cr = c + r * ldc;
  switch (rows - r) {
    case 5: micro_kernel<5, NV>(ar, k_len, b, ldb, cr, ldc, k_len); break;
    case 4: micro_kernel<4, NV>(ar, k_len, b, ldb, cr, ldc, k_len); break;
    case 3: micro_kernel<3, NV>(ar, k_len, b, ldb, cr, ldc, k_len); break;
    case 2: micro_kernel<2, NV>(ar, k_len, b, ldb, cr, ldc, k_len); break;
    case 1: micro_kernel<1, NV>(ar, k_len, b, ldb, cr, ldc, k_len); break;
    default: break;
  }
}

// Row-major C = A * B for n a multiple of 16.
void gemm_avx512(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t n0 = 0; n0 < n; n0 += 64) {
    switch (std::min<std::size_t>(4, (n - n0) / 16)) {
      case 4: gemm_columns<4>(a, b + n0, n, c + n0, n, m, k); break;
      case 3: gemm_columns<3>(a, b + n0, n, c + n0, n, m, k); break;
      case 2: gemm_columns<2>(a, b + n0, n, c + n0, n, m, k); break;
      default: gemm_columns<1>(a, b + n0, n, c + n0, n, m, k); break;
    }
  }
}

#endif

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    if (n % 16 == 0) {
      gemm_avx512(a, b, c, m, k, n);
      return;
    }
  }
#endif
  Eigen::Map<const RowMat<T>> am(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  Eigen::Map<const RowMat<T>> bm(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  Eigen::Map<RowMat<T>> cm(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  cm.noalias() = am * bm;
}

// Input transform of one tile, v_xi = (B^T d)_xi, over n contiguous channels.
template <typename T>
inline void input_transform(const T* d, std::size_t n, T* v, std::size_t vstride) {
  const T *d0 = d, *d1 = d + n, *d2 = d + 2 * n, *d3 = d + 3 * n, *d4 = d + 4 * n, *d5 = d + 5 * n;
  std::size_t c = 0;
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    const __m512 two = _mm512_set1_ps(2.0f), four = _mm512_set1_ps(4.0f), five = _mm512_set1_ps(5.0f);
    for (; c + 16 <= n; c += 16) {
      const __m512 x0 = _mm512_loadu_ps(d0 + c), x1 = _mm512_loadu_ps(d1 + c), x2 = _mm512_loadu_ps(d2 + c);
      const __m512 x3 = _mm512_loadu_ps(d3 + c), x4 = _mm512_loadu_ps(d4 + c), x5 = _mm512_loadu_ps(d5 + c);
      const __m512 x34 = _mm512_add_ps(x3, x4);
      const __m512 x4m2 = _mm512_sub_ps(x4, x2);
      _mm512_storeu_ps(v + c, _mm512_fmadd_ps(four, x0, _mm512_fnmadd_ps(five, x2, x4)));
      _mm512_storeu_ps(v + vstride + c, _mm512_fnmadd_ps(four, _mm512_add_ps(x1, x2), x34));
      _mm512_storeu_ps(v + 2 * vstride + c,
                       _mm512_fmadd_ps(four, _mm512_sub_ps(x1, x2), _mm512_sub_ps(x4, x3)));
      _mm512_storeu_ps(v + 3 * vstride + c, _mm512_fmadd_ps(two, _mm512_sub_ps(x3, x1), x4m2));
      _mm512_storeu_ps(v + 4 * vstride + c, _mm512_fmadd_ps(two, _mm512_sub_ps(x1, x3), x4m2));
      _mm512_storeu_ps(v + 5 * vstride + c, _mm512_fmadd_ps(four, x1, _mm512_fnmadd_ps(five, x3, x5)));
    }
  }
#endif
  for (; c < n; ++c) {
    v[c] = 4 * d0[c] - 5 * d2[c] + d4[c];
    v[vstride + c] = -4 * (d1[c] + d2[c]) + d3[c] + d4[c];
    v[2 * vstride + c] = 4 * (d1[c] - d2[c]) - d3[c] + d4[c];
    v[3 * vstride + c] = 2 * (d3[c] - d1[c]) - d2[c] + d4[c];
    v[4 * vstride + c] = 2 * (d1[c] - d3[c]) - d2[c] + d4[c];
    v[5 * vstride + c] = 4 * d1[c] - 5 * d3[c] + d5[c];
  }
}

// Output transform of one tile, y = relu(A^T m + bias), writing `valid` rows.
template <typename T>
inline void output_transform(const T* m, std::size_t mstride, const T* bias, std::size_t n, std::size_t valid,
                             T* y) {
  const T *m0 = m, *m1 = m + mstride, *m2 = m + 2 * mstride, *m3 = m + 3 * mstride, *m4 = m + 4 * mstride,
          *m5 = m + 5 * mstride;
  std::size_t o = 0;
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    if (valid == 4) {
      const __m512 zero = _mm512_setzero_ps(), two = _mm512_set1_ps(2.0f), four = _mm512_set1_ps(4.0f),
                   eight = _mm512_set1_ps(8.0f);
      for (; o + 16 <= n; o += 16) {
        const __m512 a1 = _mm512_loadu_ps(m1 + o), a2 = _mm512_loadu_ps(m2 + o);
        const __m512 a3 = _mm512_loadu_ps(m3 + o), a4 = _mm512_loadu_ps(m4 + o);
        const __m512 bv = _mm512_loadu_ps(bias + o);
        const __m512 s12 = _mm512_add_ps(a1, a2), d12 = _mm512_sub_ps(a1, a2);
        const __m512 s34 = _mm512_add_ps(a3, a4), d34 = _mm512_sub_ps(a3, a4);
        const __m512 y0 = _mm512_add_ps(_mm512_add_ps(_mm512_loadu_ps(m0 + o), s12), _mm512_add_ps(s34, bv));
        const __m512 y1 = _mm512_fmadd_ps(two, d34, _mm512_add_ps(d12, bv));
        const __m512 y2 = _mm512_fmadd_ps(four, s34, _mm512_add_ps(s12, bv));
        const __m512 y3 = _mm512_fmadd_ps(eight, d34, _mm512_add_ps(_mm512_add_ps(d12, _mm512_loadu_ps(m5 + o)), bv));
        _mm512_storeu_ps(y + o, _mm512_max_ps(y0, zero));
        _mm512_storeu_ps(y + n + o, _mm512_max_ps(y1, zero));
        _mm512_storeu_ps(y + 2 * n + o, _mm512_max_ps(y2, zero));
        _mm512_storeu_ps(y + 3 * n + o, _mm512_max_ps(y3, zero));
      }
    }
  }
#endif
  for (; o < n; ++o) {
    const T s12 = m1[o] + m2[o], d12 = m1[o] - m2[o];
    const T s34 = m3[o] + m4[o], d34 = m3[o] - m4[o];
    const T out[4] = {m0[o] + s12 + s34, d12 + 2 * d34, s12 + 4 * s34, d12 + 8 * d34 + m5[o]};
    for (std::size_t r = 0; r < valid; ++r) y[r * n + o] = std::max(out[r] + bias[o], T(0));
  }
}

}  // namespace

template <typename T>
FastPreprocNet<T>::FastPreprocNet(const PreprocNet<T>& net) {
  const NetConfig& cfg = net.config();
  length_ = cfg.input_length;
  pad_ = (cfg.kernel_size - 1) / 2;
  tiles_ = (length_ + 3) / 4;
  rows_ = std::max(length_ + 2 * pad_, 4 * tiles_ + 2);
  const std::size_t width = cfg.width;
  const std::size_t K = cfg.kernel_size;

  auto make = [&](const nn::Conv1dLayer<T>& conv, const nn::BatchNormLayer<T>* bn) {
    std::vector<double> w, b;
    fold(conv, bn, w, b);
    Layer layer;
    layer.in = conv.in_channels;
    layer.out = conv.out_channels;
    layer.kernel = conv.kernel_size;
    layer.bias.assign(b.begin(), b.end());
    layer.weight.resize(K * layer.in * layer.out);
    for (std::size_t o = 0; o < layer.out; ++o)
      for (std::size_t c = 0; c < layer.in; ++c)
        for (std::size_t k = 0; k < K; ++k)
          layer.weight[(k * layer.in + c) * layer.out + o] = static_cast<T>(w[(o * layer.in + c) * K + k]);
    if (K == 3 && bn) {
      layer.wino.resize(6 * layer.in * layer.out);
      for (std::size_t o = 0; o < layer.out; ++o)
        for (std::size_t c = 0; c < layer.in; ++c) {
          const double* g = &w[(o * layer.in + c) * 3];
          for (std::size_t xi = 0; xi < 6; ++xi) {
            const double u = kG[xi][0] * g[0] + kG[xi][1] * g[1] + kG[xi][2] * g[2];
            layer.wino[(xi * layer.in + c) * layer.out + o] = static_cast<T>(u);
          }
        }
    }
    return layer;
  };

  first_ = make(net.first(), nullptr);
  for (std::size_t l = 0; l < net.body_conv().size(); ++l) body_.push_back(make(net.body_conv()[l], &net.body_bn()[l]));
  last_ = make(net.last(), nullptr);

  buf_a_.assign(rows_ * width, T(0));
  buf_b_.assign(rows_ * width, T(0));
  v_.assign(6 * kTileBlock * width, T(0));
  m_.assign(6 * kTileBlock * width, T(0));
}

template <typename T>
void FastPreprocNet<T>::body_direct(const Layer& layer, const T* src, T* dst) {
  const std::size_t C = layer.in;
  const std::size_t O = layer.out;
  using Stride = Eigen::OuterStride<>;
  // Row i of the overlapped view is the receptive window of output i.
  Eigen::Map<const RowMat<T>, 0, Stride> windows(src, static_cast<Eigen::Index>(length_),
                                                  static_cast<Eigen::Index>(layer.kernel * C),
                                                  Stride(static_cast<Eigen::Index>(C)));
  Eigen::Map<const RowMat<T>> w(layer.weight.data(), static_cast<Eigen::Index>(layer.kernel * C),
                                static_cast<Eigen::Index>(O));
  Eigen::Map<RowMat<T>> out(dst + pad_ * O, static_cast<Eigen::Index>(length_), static_cast<Eigen::Index>(O));
  out.noalias() = windows * w;
  for (std::size_t i = 0; i < length_; ++i) {
    T* row = dst + (i + pad_) * O;
    for (std::size_t o = 0; o < O; ++o) row[o] = std::max(row[o] + layer.bias[o], T(0));
  }
}

template <typename T>
void FastPreprocNet<T>::body_winograd(const Layer& layer, const T* src, T* dst) {
  const std::size_t C = layer.in;
  const std::size_t O = layer.out;
  // Tiles are processed in blocks small enough for the transformed data to
  // stay in cache between the three stages.
  for (std::size_t t0 = 0; t0 < tiles_; t0 += kTileBlock) {
    const std::size_t nt = std::min(kTileBlock, tiles_ - t0);
    const std::size_t vstride = nt * C;
    const std::size_t mstride = nt * O;
    for (std::size_t t = 0; t < nt; ++t) input_transform(src + 4 * (t0 + t) * C, C, v_.data() + t * C, vstride);
    for (std::size_t xi = 0; xi < 6; ++xi) {
      gemm(v_.data() + xi * vstride, layer.wino.data() + xi * C * O, m_.data() + xi * mstride, nt, C, O);
    }
    for (std::size_t t = 0; t < nt; ++t) {
      const std::size_t base = 4 * (t0 + t);
      // Rows past the signal are left untouched and stay zero as padding.
      output_transform(m_.data() + t * O, mstride, layer.bias.data(), O, std::min<std::size_t>(4, length_ - base),
                       dst + (base + pad_) * O);
    }
  }
}

template <typename T>
void FastPreprocNet<T>::residual(std::span<const T> y, std::span<T> z_hat) {
  if (y.size() != length_ || z_hat.size() != length_) {
    throw std::invalid_argument("fast inference: expected length " + std::to_string(length_) + ", got " +
                                std::to_string(y.size()));
  }
  const std::size_t K = first_.kernel;
  T* cur = buf_a_.data();
  T* nxt = buf_b_.data();

  // First layer, one input channel.
  {
    const std::size_t O = first_.out;
    for (std::size_t i = 0; i < length_; ++i) {
      T* row = cur + (i + pad_) * O;
      for (std::size_t o = 0; o < O; ++o) row[o] = first_.bias[o];
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + k) - static_cast<std::ptrdiff_t>(pad_);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(length_)) continue;
        const T yv = y[static_cast<std::size_t>(src)];
        const T* w = first_.weight.data() + k * O;
        for (std::size_t o = 0; o < O; ++o) row[o] += w[o] * yv;
      }
      for (std::size_t o = 0; o < O; ++o) row[o] = std::max(row[o], T(0));
    }
  }

  for (const Layer& layer : body_) {
    if (!layer.wino.empty()) {
      body_winograd(layer, cur, nxt);
    } else {
      body_direct(layer, cur, nxt);
    }
    std::swap(cur, nxt);
  }

  // Last layer, one output channel: a matrix-vector product over the
  // overlapped receptive windows.
  const std::size_t C = last_.in;
  using Stride = Eigen::OuterStride<>;
  Eigen::Map<const RowMat<T>, 0, Stride> windows(cur, static_cast<Eigen::Index>(length_),
                                                  static_cast<Eigen::Index>(K * C),
                                                  Stride(static_cast<Eigen::Index>(C)));
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> w(last_.weight.data(), static_cast<Eigen::Index>(K * C));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> z(z_hat.data(), static_cast<Eigen::Index>(length_));
  z.noalias() = windows * w;
  z.array() += last_.bias[0];
}

template <typename T>
std::vector<T> FastPreprocNet<T>::clean(std::span<const T> y) {
  std::vector<T> z(length_);
  residual(y, z);
  for (std::size_t i = 0; i < length_; ++i) z[i] = y[i] - z[i];
  return z;
}

template class FastPreprocNet<float>;
template class FastPreprocNet<double>;

}  // namespace specnet
