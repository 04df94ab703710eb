#pragma once

// Siamese Sleep Transformer: weight-shared CNN feature extractors, class
// token and sinusoidal positions, a cross-attention (ETE) stack, a
// sequential self-attention (SE) stack and a ReLU + linear classifier head.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sst/tensor.hpp"

namespace sst {

struct ModelConfig {
  std::size_t fs = 100;          // Hz
  std::size_t seq_len = 20;      // S, epochs per sequence
  std::size_t channels = 1;      // C
  std::size_t epoch_samples = 3000;  // T = 30 * fs
  std::size_t dim = 64;          // D
  std::size_t tokens = 16;       // N, excluding the class token
  std::size_t heads = 8;         // A
  std::size_t head_dim = 8;
  std::size_t depth = 3;         // d, for both ETE and SE stacks
  std::size_t ffn_dim = 128;
  std::size_t n_classes = 5;

  // Throws ConfigError on any broken invariant.
  void validate() const;

  // Small configuration for gradient checks and desk-scale runs:
  // fs=10, S=4, D=16, A=4, d=1, N=4.
  static ModelConfig toy();

  std::size_t large_kernel() const { return 4 * fs; }
  std::size_t small_kernel() const { return fs / 2; }

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Kernel length of the second convolution in each CNN path.
inline constexpr std::size_t kSecondConvKernel = 8;

struct CnnPath {
  Tensor conv1_weight;  // [D, C, k]
  Tensor conv1_bias;    // [D, 1]
  Tensor conv2_weight;  // [D, D, 8]
  Tensor conv2_bias;    // [D, 1]
  std::size_t kernel = 0;
  std::size_t stride = 1;
};

struct EncoderWeights {
  Tensor query;   // [D, D], heads concatenated column-wise
  Tensor key;     // [D, D]
  Tensor value;   // [D, D]
  Tensor merge;   // [D, D]
  Tensor norm1_gain, norm1_bias;  // [D]
  Tensor ffn_in;   // [D, ffn]
  Tensor ffn_out;  // [ffn, D]
  Tensor norm2_gain, norm2_bias;  // [D]
};

// All learnable weights. The CNN paths are used for both the X and X'
// branches; there is exactly one copy of them. Copies of ModelParams share
// storage; use clone() for an independent snapshot.
struct ModelParams {
  CnnPath large;
  CnnPath small;
  Tensor class_token;  // [1, 1, D]
  std::vector<EncoderWeights> ete;
  std::vector<EncoderWeights> se;
  Tensor head;  // [D, n_classes]

  // Fixed-order (name, tensor) listing; the order is the checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
  ModelParams clone() const;
  void zero_grad();
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
std::size_t parameter_count(const ModelConfig& cfg);

// PE[pos, n] = sin(pos / 10000^(2*floor(n/2)/D) - (1 + (-1)^n) * pi/4)
Tensor positional_encoding(std::size_t count, std::size_t dim);

// x: [B, S, C, T] -> [(B*S), N+1, D]
Tensor cnn_block_forward(const Tensor& x, const ModelParams& params, const ModelConfig& cfg);

struct AttentionResult {
  Tensor output;   // [n, L_q, D]
  Tensor weights;  // [n, A, L_q, L_c], rows sum to 1
};

// Per head: softmax(Q_i K_i^T / sqrt(D)) V_i, heads concatenated then merged.
AttentionResult multi_head_attention(const Tensor& query_in, const Tensor& context_in,
                                     const EncoderWeights& w, std::size_t heads);

// Post-norm block: L = LN(M + Q); E = LN(GELU(L W1) W2 + L).
Tensor encoder_block_forward(const Tensor& query_in, const Tensor& context_in,
                             const EncoderWeights& w, std::size_t heads);

struct ForwardTrace {
  Tensor cnn_x;    // [(B*S), N+1, D]
  Tensor cnn_xp;   // [(B*S), N+1, D]
  Tensor ete;      // [(B*S), 1, D]
  Tensor se;       // [B, S, D]
  Tensor logits;   // [B, S, n_classes]
};

// x, xp: [B, S, C, T]. Queries come from the X' branch, keys and values
// from the X branch.
ForwardTrace sst_forward(const Tensor& x, const Tensor& xp, const ModelParams& params,
                         const ModelConfig& cfg);

// Same as sst_forward from precomputed CNN features, so one feature pass can
// serve both (X, X') and (X', X).
ForwardTrace sst_forward_features(const Tensor& cnn_x, const Tensor& cnn_xp,
                                  std::size_t batch, const ModelParams& params,
                                  const ModelConfig& cfg);

}  // namespace sst
