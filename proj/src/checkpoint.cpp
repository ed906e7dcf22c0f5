#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "srvae/training.hpp"

namespace srvae {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_tensor(std::string& out, const std::string& name, const DenseArray& a) {
  put_u64(out, name.size());
  out += name;
  put_u64(out, a.rank());
  for (std::size_t e : a.shape()) put_u64(out, e);
  for (double v : a.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t begin, std::size_t end)
      : buf_(buf), pos_(begin), end_(end) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == end_; }

  void need(std::size_t n, const char* what) const {
    if (n > end_ - pos_) {
      throw std::runtime_error("checkpoint: truncated while reading " + std::string(what) +
                               " at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& buf_;
  std::size_t pos_, end_;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t meta_size(const Metadata& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint: metadata lacks " + key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw std::runtime_error("checkpoint: metadata " + key + " is not an integer: " + it->second);
  }
}

}  // namespace

DenseArray to_float32_precision(const DenseArray& a) {
  DenseArray out = a;
  for (double& v : out.values()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

Metadata model_config_metadata(const ModelConfig& c) {
  return {{"model", to_string(c.kind)},
          {"height", std::to_string(c.height)},
          {"width", std::to_string(c.width)},
          {"channels", std::to_string(c.channels)},
          {"latent_u", std::to_string(c.latent_u)},
          {"latent_z", std::to_string(c.latent_z)},
          {"latent_hw", std::to_string(c.latent_hw)},
          {"n_mix", std::to_string(c.n_mix)},
          {"flow_depth", std::to_string(c.flow_depth)},
          {"flow_hidden", std::to_string(c.flow_hidden)},
          {"hidden", std::to_string(c.hidden)},
          {"model_seed", std::to_string(c.seed)}};
}

ModelConfig model_config_from_metadata(const Metadata& meta) {
  ModelConfig c;
  auto it = meta.find("model");
  if (it == meta.end()) throw std::runtime_error("checkpoint: metadata lacks model");
  c.kind = parse_model_kind(it->second);
  c.height = meta_size(meta, "height");
  c.width = meta_size(meta, "width");
  c.channels = meta_size(meta, "channels");
  c.latent_u = meta_size(meta, "latent_u");
  c.latent_z = meta_size(meta, "latent_z");
  c.latent_hw = meta_size(meta, "latent_hw");
  c.n_mix = meta_size(meta, "n_mix");
  c.flow_depth = meta_size(meta, "flow_depth");
  c.flow_hidden = meta_size(meta, "flow_hidden");
  c.hidden = meta_size(meta, "hidden");
  c.seed = meta_size(meta, "model_seed");
  return c;
}

void save_checkpoint(const Model& model, const AdaMaxState& state,
                     const std::filesystem::path& path, const Metadata& extra) {
  const ParamSet& params = model.params();
  const bool has_state = !state.m.empty();
  if (has_state && (state.m.size() != params.size() || state.u_inf.size() != params.size())) {
    throw std::invalid_argument("save_checkpoint: optimizer state does not mirror parameters");
  }
  Metadata meta = model_config_metadata(model.config());
  meta["adamax_t"] = std::to_string(state.t);
  for (const auto& [k, v] : extra) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("save_checkpoint: bad metadata entry " + k);
    }
    meta[k] = v;
  }
  std::string meta_text;
  for (const auto& [k, v] : meta) meta_text += k + "=" + v + "\n";

  std::string payload;
  put_u64(payload, meta_text.size());
  payload += meta_text;
  put_u64(payload, has_state ? 3 * params.size() : params.size());
  for (const auto& p : params) put_tensor(payload, p.name, p.value);
  if (has_state) {
    for (std::size_t i = 0; i < params.size(); ++i)
      put_tensor(payload, "adamax.m/" + params[i].name, state.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i)
      put_tensor(payload, "adamax.u/" + params[i].name, state.u_inf[i]);
  }

  std::string file(kCheckpointMagic, sizeof kCheckpointMagic);
  file += payload;
  put_u32(file, crc_of(payload.data(), payload.size()));

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + tmp.string());
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() < sizeof kCheckpointMagic ||
      std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  if (buf.size() < sizeof kCheckpointMagic + 4) {
    throw std::runtime_error("checkpoint: truncated file " + path.string());
  }
  const std::size_t begin = sizeof kCheckpointMagic;
  const std::size_t end = buf.size() - 4;
  Reader crc_reader(buf, end, buf.size());
  const std::uint32_t stored = crc_reader.u32("checksum");
  if (stored != crc_of(buf.data() + begin, end - begin)) {
    throw std::runtime_error("checkpoint: checksum mismatch (file corrupt or truncated): " +
                             path.string());
  }

  Reader r(buf, begin, end);
  const std::uint64_t meta_len = r.u64("metadata length");
  std::istringstream meta_in(r.bytes(meta_len, "metadata"));
  LoadedCheckpoint out;
  for (std::string line; std::getline(meta_in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: bad metadata line " + line);
    out.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  out.model = build_model(model_config_from_metadata(out.metadata));
  ParamSet& params = out.model->params();
  out.state = AdaMaxState::like(params);
  out.state.t = meta_size(out.metadata, "adamax_t");

  const std::uint64_t count = r.u64("tensor count");
  if (count != params.size() && count != 3 * params.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(count) +
                             " tensors do not match a model with " +
                             std::to_string(params.size()) + " parameters");
  }
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::size_t i = t % params.size();
    const std::uint64_t group = t / params.size();
    const std::string prefix = group == 0 ? "" : group == 1 ? "adamax.m/" : "adamax.u/";
    DenseArray& target = group == 0 ? params[i].value
                         : group == 1 ? out.state.m[i]
                                      : out.state.u_inf[i];
    const std::string expected = prefix + params[i].name;

    const std::uint64_t name_len = r.u64("tensor name length");
    const std::string name = r.bytes(name_len, "tensor name");
    if (name != expected) {
      throw std::runtime_error("checkpoint: expected tensor " + expected + ", found " + name);
    }
    const std::uint64_t rank = r.u64("tensor rank");
    if (rank > 16) throw std::runtime_error("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = r.u64("tensor extents");
    if (shape != target.shape()) {
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " + shape_string(shape) +
                               ", model expects " + shape_string(target.shape()));
    }
    r.need(4 * target.size(), "tensor values");
    for (double& v : target.values()) v = std::bit_cast<float>(r.u32("tensor values"));
  }
  if (!r.done()) {
    throw std::runtime_error("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  }
  return out;
}

}  // namespace srvae
