#include "sst/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <map>

#include "sst/edf.hpp"
#include "sst/errors.hpp"

namespace sst {

namespace {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_string(std::string& out, std::string_view s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Cursor {
 public:
  explicit Cursor(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string_view string(const char* what) { return take(le<std::uint32_t>(what), what); }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("checkpoint truncated in ") + what, pos_);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelConfig& cfg, const ModelParams& params) {
  std::string out(kCheckpointMagic);
  const auto kv = cfg.to_kv();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) put_string(out, k + "=" + v);
  const auto named = params.named();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put_string(out, name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_le<std::uint64_t>(out, e);
    for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Cursor in(bytes);
  if (in.take(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
    throw ParseError("not a checkpoint: bad magic", 0);
  }
  std::map<std::string, std::string> kv;
  const auto lines = in.le<std::uint32_t>("config header");
  for (std::uint32_t i = 0; i < lines; ++i) {
    const std::size_t at = in.pos();
    const std::string_view line = in.string("config line");
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("config line without '='", at);
    kv.emplace(line.substr(0, eq), line.substr(eq + 1));
  }
  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_kv(kv);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what(), kCheckpointMagic.size());
  }
  ck.params = init_params(ck.config, 0);
  std::map<std::string, Tensor> slots;
  for (auto& [name, t] : ck.params.named()) slots.emplace(name, t);

  const auto count = in.le<std::uint32_t>("tensor count");
  if (count != slots.size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                         std::to_string(slots.size()),
                     in.pos());
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = in.pos();
    const std::string name(in.string("tensor name"));
    const auto it = slots.find(name);
    if (it == slots.end()) throw ParseError("unexpected tensor '" + name + "'", at);
    Tensor& t = it->second;
    Shape shape(in.le<std::uint32_t>("rank"));
    for (auto& e : shape) e = static_cast<std::size_t>(in.le<std::uint64_t>("extent"));
    if (shape != t.shape()) {
      throw ParseError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                           shape_str(t.shape()),
                       at);
    }
    for (double& v : t.data()) v = std::bit_cast<double>(in.le<std::uint64_t>("tensor data"));
    slots.erase(it);
  }
  if (!in.done()) throw ParseError("trailing bytes after the last tensor", in.pos());
  return ck;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params) {
  write_file(path, serialize_checkpoint(cfg, params));
}

Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace sst
