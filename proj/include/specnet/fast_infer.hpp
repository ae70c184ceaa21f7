#pragma once

// Single-shot inference for a trained PreprocNet. Batch normalization is
// folded into the preceding convolution, activations are stored channel-last
// and 3-tap body convolutions use Winograd F(4,3) minimal filtering. Results
// match PreprocNet::infer up to floating-point reassociation.

#include <cstddef>
#include <span>
#include <vector>

#include "specnet/aligned.hpp"
#include "specnet/models.hpp"

namespace specnet {

template <typename T>
class FastPreprocNet {
 public:
  explicit FastPreprocNet(const PreprocNet<T>& net);

  std::size_t input_length() const { return length_; }
  // Writes R(y) to z_hat; both spans have input_length() entries.
  void residual(std::span<const T> y, std::span<T> z_hat);
  // x_hat = y - R(y).
  std::vector<T> clean(std::span<const T> y);

 private:
  struct Layer {
    std::size_t in{0};
    std::size_t out{0};
    std::size_t kernel{0};
    AlignedVector<T> weight;  // direct: (kernel * in, out) row major
    AlignedVector<T> wino;    // Winograd: 6 blocks of (in, out)
    AlignedVector<T> bias;    // (out)
  };

  static constexpr std::size_t kTileBlock = 128;

  void body_direct(const Layer& layer, const T* src, T* dst);
  void body_winograd(const Layer& layer, const T* src, T* dst);

  std::size_t length_{0};
  std::size_t pad_{0};
  std::size_t tiles_{0};
  std::size_t rows_{0};  // padded rows per activation buffer
  Layer first_;
  std::vector<Layer> body_;
  Layer last_;
  AlignedVector<T> buf_a_;
  AlignedVector<T> buf_b_;
  AlignedVector<T> v_;  // transformed inputs of one tile block, 6 x (tiles, in)
  AlignedVector<T> m_;  // products of one tile block, 6 x (tiles, out)
};

}  // namespace specnet
