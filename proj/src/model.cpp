#include "sst/model.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "sst/errors.hpp"
#include "sst/ops.hpp"

namespace sst {

namespace {

std::size_t first_stride(std::size_t kernel) { return kernel / 4 == 0 ? 1 : kernel / 4; }

std::size_t path_tokens_available(std::size_t T, std::size_t kernel) {
  if (kernel == 0 || kernel > T) return 0;
  const std::size_t l1 = (T - kernel) / first_stride(kernel) + 1;
  if (l1 < kSecondConvKernel) return 0;
  return l1 - kSecondConvKernel + 1;
}

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key,
                       std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(it->second, &pos);
  } catch (const std::exception&) {
    throw ConfigError("model key '" + key + "' is not a non-negative integer: " + it->second);
  }
  if (pos != it->second.size() || it->second.empty() || it->second[0] == '-') {
    throw ConfigError("model key '" + key + "' is not a non-negative integer: " + it->second);
  }
  return static_cast<std::size_t>(v);
}

struct Init {
  std::mt19937_64 rng;

  Tensor uniform(Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
  }

  Tensor normal(Shape shape, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
  }
};

CnnPath init_path(Init& init, const ModelConfig& cfg, std::size_t kernel) {
  CnnPath p;
  p.kernel = kernel;
  p.stride = first_stride(kernel);
  const std::size_t D = cfg.dim;
  p.conv1_weight = init.uniform({D, cfg.channels, kernel}, cfg.channels * kernel);
  p.conv1_bias = init.uniform({D, 1}, cfg.channels * kernel);
  p.conv2_weight = init.uniform({D, D, kSecondConvKernel}, D * kSecondConvKernel);
  p.conv2_bias = init.uniform({D, 1}, D * kSecondConvKernel);
  return p;
}

EncoderWeights init_encoder(Init& init, const ModelConfig& cfg) {
  const std::size_t D = cfg.dim;
  EncoderWeights w;
  w.query = init.uniform({D, D}, D);
  w.key = init.uniform({D, D}, D);
  w.value = init.uniform({D, D}, D);
  w.merge = init.uniform({D, D}, D);
  w.norm1_gain = Tensor({D}, 1.0, true);
  w.norm1_bias = Tensor({D}, 0.0, true);
  w.ffn_in = init.uniform({D, cfg.ffn_dim}, D);
  w.ffn_out = init.uniform({cfg.ffn_dim, D}, cfg.ffn_dim);
  w.norm2_gain = Tensor({D}, 1.0, true);
  w.norm2_bias = Tensor({D}, 0.0, true);
  return w;
}

void name_encoder(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                  const EncoderWeights& w) {
  out.emplace_back(prefix + ".query", w.query);
  out.emplace_back(prefix + ".key", w.key);
  out.emplace_back(prefix + ".value", w.value);
  out.emplace_back(prefix + ".merge", w.merge);
  out.emplace_back(prefix + ".norm1_gain", w.norm1_gain);
  out.emplace_back(prefix + ".norm1_bias", w.norm1_bias);
  out.emplace_back(prefix + ".ffn_in", w.ffn_in);
  out.emplace_back(prefix + ".ffn_out", w.ffn_out);
  out.emplace_back(prefix + ".norm2_gain", w.norm2_gain);
  out.emplace_back(prefix + ".norm2_bias", w.norm2_bias);
}

Tensor cnn_path_forward(const Tensor& x, const CnnPath& p, std::size_t pooled) {
  Tensor h = gelu(add(conv1d(x, p.conv1_weight, p.stride, 0), p.conv1_bias));
  h = gelu(add(conv1d(h, p.conv2_weight, 1, 0), p.conv2_bias));
  h = adaptive_avg_pool1d(h, pooled);
  return permute(h, {0, 2, 1});  // [n, tokens, D]
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t n = x.dim(0), L = x.dim(1), D = x.dim(2);
  return permute(reshape(x, {n, L, heads, D / heads}), {0, 2, 1, 3});
}

}  // namespace

void ModelConfig::validate() const {
  if (fs == 0 || fs % 2 != 0) {
    throw ConfigError("fs must be a positive even number of Hz (kernel fs/2), got " +
                      std::to_string(fs));
  }
  if (epoch_samples != 30 * fs) {
    throw ConfigError("epoch_samples must equal 30*fs = " + std::to_string(30 * fs) + ", got " +
                      std::to_string(epoch_samples));
  }
  if (seq_len == 0 || channels == 0 || dim == 0 || heads == 0 || head_dim == 0 || ffn_dim == 0) {
    throw ConfigError("model extents must be positive");
  }
  if (heads * head_dim != dim) {
    throw ConfigError("heads * head_dim must equal dim: " + std::to_string(heads) + " * " +
                      std::to_string(head_dim) + " != " + std::to_string(dim));
  }
  if (tokens == 0 || tokens % 2 != 0) {
    throw ConfigError("tokens must be a positive even number, got " + std::to_string(tokens));
  }
  if (n_classes != 5) throw ConfigError("n_classes must be 5");
  for (std::size_t k : {large_kernel(), small_kernel()}) {
    if (path_tokens_available(epoch_samples, k) < tokens / 2) {
      throw ConfigError("CNN path with kernel " + std::to_string(k) + " cannot yield " +
                        std::to_string(tokens / 2) + " pooled tokens from " +
                        std::to_string(epoch_samples) + " samples");
    }
  }
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.fs = 10;
  c.seq_len = 4;
  c.epoch_samples = 300;
  c.dim = 16;
  c.tokens = 4;
  c.heads = 4;
  c.head_dim = 4;
  c.depth = 1;
  c.ffn_dim = 32;
  return c;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  return {{"fs", std::to_string(fs)},
          {"seq_len", std::to_string(seq_len)},
          {"channels", std::to_string(channels)},
          {"epoch_samples", std::to_string(epoch_samples)},
          {"dim", std::to_string(dim)},
          {"tokens", std::to_string(tokens)},
          {"heads", std::to_string(heads)},
          {"head_dim", std::to_string(head_dim)},
          {"depth", std::to_string(depth)},
          {"ffn_dim", std::to_string(ffn_dim)},
          {"n_classes", std::to_string(n_classes)}};
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  static const char* known[] = {"fs",    "seq_len", "channels", "epoch_samples",
                                "dim",   "tokens",  "heads",    "head_dim",
                                "depth", "ffn_dim", "n_classes"};
  for (const auto& [k, v] : kv) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw ConfigError("unknown model key '" + k + "'");
  }
  ModelConfig c;
  c.fs = parse_size(kv, "fs", c.fs);
  c.epoch_samples = parse_size(kv, "epoch_samples", 30 * c.fs);
  c.seq_len = parse_size(kv, "seq_len", c.seq_len);
  c.channels = parse_size(kv, "channels", c.channels);
  c.dim = parse_size(kv, "dim", c.dim);
  c.tokens = parse_size(kv, "tokens", c.tokens);
  c.heads = parse_size(kv, "heads", c.heads);
  c.head_dim = parse_size(kv, "head_dim", c.head_dim);
  c.depth = parse_size(kv, "depth", c.depth);
  c.ffn_dim = parse_size(kv, "ffn_dim", c.ffn_dim);
  c.n_classes = parse_size(kv, "n_classes", c.n_classes);
  c.validate();
  return c;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto* path : {&large, &small}) {
    const std::string prefix = path == &large ? "cnn.large" : "cnn.small";
    out.emplace_back(prefix + ".conv1_weight", path->conv1_weight);
    out.emplace_back(prefix + ".conv1_bias", path->conv1_bias);
    out.emplace_back(prefix + ".conv2_weight", path->conv2_weight);
    out.emplace_back(prefix + ".conv2_bias", path->conv2_bias);
  }
  out.emplace_back("class_token", class_token);
  for (std::size_t i = 0; i < ete.size(); ++i) name_encoder(out, "ete." + std::to_string(i), ete[i]);
  for (std::size_t i = 0; i < se.size(); ++i) name_encoder(out, "se." + std::to_string(i), se[i]);
  out.emplace_back("head", head);
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

ModelParams ModelParams::clone() const {
  auto copy = [](const Tensor& t) {
    return Tensor(t.shape(), t.values(), t.requires_grad());
  };
  auto copy_path = [&](const CnnPath& p) {
    CnnPath q = p;
    q.conv1_weight = copy(p.conv1_weight);
    q.conv1_bias = copy(p.conv1_bias);
    q.conv2_weight = copy(p.conv2_weight);
    q.conv2_bias = copy(p.conv2_bias);
    return q;
  };
  auto copy_enc = [&](const EncoderWeights& w) {
    return EncoderWeights{copy(w.query),      copy(w.key),        copy(w.value),
                          copy(w.merge),      copy(w.norm1_gain), copy(w.norm1_bias),
                          copy(w.ffn_in),     copy(w.ffn_out),    copy(w.norm2_gain),
                          copy(w.norm2_bias)};
  };
  ModelParams out;
  out.large = copy_path(large);
  out.small = copy_path(small);
  out.class_token = copy(class_token);
  for (const auto& w : ete) out.ete.push_back(copy_enc(w));
  for (const auto& w : se) out.se.push_back(copy_enc(w));
  out.head = copy(head);
  return out;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors()) t.zero_grad();
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Init init{std::mt19937_64(seed)};
  ModelParams p;
  p.large = init_path(init, cfg, cfg.large_kernel());
  p.small = init_path(init, cfg, cfg.small_kernel());
  p.class_token = init.normal({1, 1, cfg.dim}, 0.02);
  for (std::size_t i = 0; i < cfg.depth; ++i) p.ete.push_back(init_encoder(init, cfg));
  for (std::size_t i = 0; i < cfg.depth; ++i) p.se.push_back(init_encoder(init, cfg));
  p.head = init.uniform({cfg.dim, cfg.n_classes}, cfg.dim);
  return p;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t D = cfg.dim;
  auto path = [&](std::size_t k) {
    return D * cfg.channels * k + D + D * D * kSecondConvKernel + D;
  };
  const std::size_t encoder = 4 * D * D + 4 * D + 2 * D * cfg.ffn_dim;
  return path(cfg.large_kernel()) + path(cfg.small_kernel()) + D + 2 * cfg.depth * encoder +
         D * cfg.n_classes;
}

Tensor positional_encoding(std::size_t count, std::size_t dim) {
  std::vector<double> v(count * dim);
  for (std::size_t pos = 0; pos < count; ++pos) {
    for (std::size_t n = 0; n < dim; ++n) {
      const double exponent =
          2.0 * static_cast<double>(n / 2) / static_cast<double>(dim);
      const double offset = n % 2 == 0 ? std::numbers::pi / 2.0 : 0.0;
      v[pos * dim + n] = std::sin(static_cast<double>(pos) / std::pow(10000.0, exponent) - offset);
    }
  }
  return Tensor({count, dim}, std::move(v));
}

Tensor cnn_block_forward(const Tensor& x, const ModelParams& params, const ModelConfig& cfg) {
  if (x.rank() != 4 || x.dim(1) != cfg.seq_len || x.dim(2) != cfg.channels ||
      x.dim(3) != cfg.epoch_samples) {
    throw DimensionError("CNN block expects [B," + std::to_string(cfg.seq_len) + "," +
                         std::to_string(cfg.channels) + "," + std::to_string(cfg.epoch_samples) +
                         "], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0) * x.dim(1);
  const Tensor flat = reshape(x, {n, cfg.channels, cfg.epoch_samples});
  const std::size_t half = cfg.tokens / 2;
  const Tensor features = concat({cnn_path_forward(flat, params.large, half),
                                  cnn_path_forward(flat, params.small, half)},
                                 1);
  const Tensor cls = broadcast_to(params.class_token, {n, 1, cfg.dim});
  return add(concat({cls, features}, 1), positional_encoding(cfg.tokens + 1, cfg.dim));
}

AttentionResult multi_head_attention(const Tensor& query_in, const Tensor& context_in,
                                     const EncoderWeights& w, std::size_t heads) {
  if (query_in.rank() != 3 || context_in.rank() != 3 || query_in.dim(0) != context_in.dim(0) ||
      query_in.dim(2) != context_in.dim(2)) {
    throw DimensionError("attention expects [n,L_q,D] and [n,L_c,D], got " +
                         shape_str(query_in.shape()) + " and " + shape_str(context_in.shape()));
  }
  const std::size_t n = query_in.dim(0), Lq = query_in.dim(1), D = query_in.dim(2);
  if (w.query.shape() != Shape{D, D} || heads == 0 || D % heads != 0) {
    throw DimensionError("attention weights " + shape_str(w.query.shape()) +
                         " do not match feature width " + std::to_string(D));
  }
  const Tensor q = split_heads(matmul(query_in, w.query), heads);
  const Tensor k = split_heads(matmul(context_in, w.key), heads);
  const Tensor v = split_heads(matmul(context_in, w.value), heads);
  const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(D)));
  Tensor weights = softmax(scores, -1);
  const Tensor mixed = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {n, Lq, D});
  return {matmul(mixed, w.merge), std::move(weights)};
}

Tensor encoder_block_forward(const Tensor& query_in, const Tensor& context_in,
                             const EncoderWeights& w, std::size_t heads) {
  const Tensor m = multi_head_attention(query_in, context_in, w, heads).output;
  const Tensor l = layernorm(add(m, query_in), w.norm1_gain, w.norm1_bias);
  const Tensor d = matmul(gelu(matmul(l, w.ffn_in)), w.ffn_out);
  return layernorm(add(d, l), w.norm2_gain, w.norm2_bias);
}

ForwardTrace sst_forward_features(const Tensor& cnn_x, const Tensor& cnn_xp, std::size_t batch,
                                  const ModelParams& params, const ModelConfig& cfg) {
  const Shape expected{batch * cfg.seq_len, cfg.tokens + 1, cfg.dim};
  if (cnn_x.shape() != expected || cnn_xp.shape() != expected) {
    throw DimensionError("CNN features must be " + shape_str(expected) + ", got " +
                         shape_str(cnn_x.shape()) + " and " + shape_str(cnn_xp.shape()));
  }
  Tensor q = cnn_xp;
  for (const auto& w : params.ete) q = encoder_block_forward(q, cnn_x, w, cfg.heads);
  const Tensor ete = slice(q, 1, 0, 1);

  Tensor h = add(reshape(ete, {batch, cfg.seq_len, cfg.dim}),
                 positional_encoding(cfg.seq_len, cfg.dim));
  for (const auto& w : params.se) h = encoder_block_forward(h, h, w, cfg.heads);

  ForwardTrace t;
  t.cnn_x = cnn_x;
  t.cnn_xp = cnn_xp;
  t.ete = ete;
  t.se = h;
  t.logits = matmul(relu(h), params.head);
  return t;
}

ForwardTrace sst_forward(const Tensor& x, const Tensor& xp, const ModelParams& params,
                         const ModelConfig& cfg) {
  if (x.shape() != xp.shape()) {
    throw DimensionError("X and X' must share a shape, got " + shape_str(x.shape()) + " and " +
                         shape_str(xp.shape()));
  }
  const Tensor cnn_x = cnn_block_forward(x, params, cfg);
  const Tensor cnn_xp = x.same_object(xp) ? cnn_x : cnn_block_forward(xp, params, cfg);
  return sst_forward_features(cnn_x, cnn_xp, x.dim(0), params, cfg);
}

}  // namespace sst
