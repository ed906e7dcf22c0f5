#include "srvae/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace srvae {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty()) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

std::vector<std::filesystem::path> parse_paths(const std::string& v) {
  std::vector<std::filesystem::path> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.emplace_back(item);
  }
  return out;
}

std::string join_paths(const std::vector<std::filesystem::path>& ps) {
  std::string s;
  for (const auto& p : ps) s += (s.empty() ? "" : ",") + p.string();
  return s;
}

template <typename T, typename Field>
ConfigKey numeric(std::string name, std::string help, Field field) {
  ConfigKey k;
  k.name = name;
  k.help = std::move(help);
  k.set = [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<T>(name, v); };
  k.get = [field](const RunConfig& c) {
    const T v = field(const_cast<RunConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) {
      return format_double(v);
    } else {
      return std::to_string(v);
    }
  };
  return k;
}

std::vector<ConfigKey> make_keys() {
  std::vector<ConfigKey> keys;
  keys.push_back({"model", "vae | srvae", true,
                  [](RunConfig& c, const std::string& v) { c.model.kind = parse_model_kind(v); },
                  [](const RunConfig& c) { return to_string(c.model.kind); }});
  keys.push_back({"output_dir", "directory for checkpoints, history and images", true,
                  [](RunConfig& c, const std::string& v) { c.output_dir = v; },
                  [](const RunConfig& c) { return c.output_dir.string(); }});
  keys.push_back(numeric<std::uint64_t>("seed", "seeds initialization, shuffling, noise and sampling",
                                        [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
  keys.push_back(numeric<std::size_t>("height", "image height (must equal width)",
                                      [](RunConfig& c) -> std::size_t& { return c.model.height; }));
  keys.push_back(numeric<std::size_t>("width", "image width",
                                      [](RunConfig& c) -> std::size_t& { return c.model.width; }));
  keys.push_back(numeric<std::size_t>("channels", "1 or 3",
                                      [](RunConfig& c) -> std::size_t& { return c.model.channels; }));
  keys.push_back(numeric<std::size_t>("latent_u", "K, dimensionality of u (srvae)",
                                      [](RunConfig& c) -> std::size_t& { return c.model.latent_u; }));
  keys.push_back(numeric<std::size_t>("latent_z", "M, dimensionality of z",
                                      [](RunConfig& c) -> std::size_t& { return c.model.latent_z; }));
  keys.push_back(numeric<std::size_t>("latent_hw", "latent grid side; 0 = height / 4",
                                      [](RunConfig& c) -> std::size_t& { return c.model.latent_hw; }));
  keys.push_back(numeric<std::size_t>("n_mix", "logistic mixture components per channel",
                                      [](RunConfig& c) -> std::size_t& { return c.model.n_mix; }));
  keys.push_back(numeric<std::size_t>("flow_depth", "coupling layers in each flow prior (0 = N(0, I))",
                                      [](RunConfig& c) -> std::size_t& { return c.model.flow_depth; }));
  keys.push_back(numeric<std::size_t>("flow_hidden", "coupling MLP width; 0 = 4 x latent dim",
                                      [](RunConfig& c) -> std::size_t& { return c.model.flow_hidden; }));
  keys.push_back(numeric<std::size_t>("hidden", "convolution channels",
                                      [](RunConfig& c) -> std::size_t& { return c.model.hidden; }));
  keys.push_back(numeric<double>("learning_rate", "AdaMax step size",
                                 [](RunConfig& c) -> double& { return c.train.optimizer.learning_rate; }));
  keys.push_back(numeric<double>("beta1", "AdaMax first-moment decay",
                                 [](RunConfig& c) -> double& { return c.train.optimizer.beta1; }));
  keys.push_back(numeric<double>("beta2", "AdaMax infinity-norm decay",
                                 [](RunConfig& c) -> double& { return c.train.optimizer.beta2; }));
  keys.push_back(numeric<std::size_t>("batch_size", "examples per step",
                                      [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
  keys.push_back(numeric<std::size_t>("epochs", "passes over the training set",
                                      [](RunConfig& c) -> std::size_t& { return c.train.epochs; }));
  keys.push_back(numeric<std::size_t>("max_steps", "stop after this many steps; 0 = no cap",
                                      [](RunConfig& c) -> std::size_t& { return c.train.max_steps; }));
  keys.push_back(numeric<double>("clip_norm", "global gradient norm clip",
                                 [](RunConfig& c) -> double& { return c.train.clip_norm; }));
  keys.push_back(numeric<std::size_t>("kl_warmup_steps", "linear KL warm-up length; 0 = off",
                                      [](RunConfig& c) -> std::size_t& { return c.train.kl_warmup_steps; }));
  keys.push_back(numeric<std::size_t>("checkpoint_interval", "epochs between checkpoints",
                                      [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_interval; }));
  keys.push_back({"dataset", "toy | cifar10", false,
                  [](RunConfig& c, const std::string& v) {
                    if (v != "toy" && v != "cifar10") {
                      throw std::invalid_argument("config: dataset must be toy or cifar10, got '" + v + "'");
                    }
                    c.dataset = v;
                  },
                  [](const RunConfig& c) { return c.dataset; }});
  keys.push_back(numeric<std::size_t>("toy_train_size", "toy training images (seed = seed)",
                                      [](RunConfig& c) -> std::size_t& { return c.toy_train_size; }));
  keys.push_back(numeric<std::size_t>("toy_test_size", "toy test images (seed = seed + 1)",
                                      [](RunConfig& c) -> std::size_t& { return c.toy_test_size; }));
  keys.push_back({"cifar10_train", "comma-separated CIFAR-10 binary batch files", false,
                  [](RunConfig& c, const std::string& v) { c.cifar10_train = parse_paths(v); },
                  [](const RunConfig& c) { return join_paths(c.cifar10_train); }});
  keys.push_back({"cifar10_test", "comma-separated CIFAR-10 binary batch files", false,
                  [](RunConfig& c, const std::string& v) { c.cifar10_test = parse_paths(v); },
                  [](const RunConfig& c) { return join_paths(c.cifar10_test); }});
  return keys;
}

void validate(const RunConfig& c) {
  c.model.validate();
  c.train.validate();
  if (c.output_dir.empty()) throw std::invalid_argument("config: output_dir is empty");
  if (c.dataset == "cifar10") {
    if (c.cifar10_train.empty()) throw std::invalid_argument("config: cifar10_train is empty");
    if (c.model.height != kCifarSide || c.model.channels != 3) {
      throw std::invalid_argument("config: cifar10 needs height = width = 32 and channels = 3");
    }
  } else if (c.model.channels != 3) {
    throw std::invalid_argument("config: toy images have 3 channels");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

std::string config_key_help() {
  std::ostringstream out;
  out << "Config keys (key = value, # comments):\n";
  const RunConfig defaults;
  for (const auto& k : config_keys()) {
    out << "  " << k.name;
    for (std::size_t i = k.name.size(); i < 22; ++i) out << ' ';
    out << k.help;
    if (k.required) {
      out << " (required)";
    } else {
      out << " [default " << k.get(defaults) << "]";
    }
    out << "\n";
  }
  return out.str();
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    }
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

RunConfig parse_run_config(std::string_view text, std::span<const std::string> overrides) {
  const auto& keys = config_keys();
  auto lookup = [&keys](const std::string& name) -> const ConfigKey& {
    auto it = std::find_if(keys.begin(), keys.end(),
                           [&](const ConfigKey& k) { return k.name == name; });
    if (it == keys.end()) throw std::invalid_argument("config: unknown key '" + name + "'");
    return *it;
  };

  RunConfig c;
  std::set<std::string> seen;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!seen.insert(k).second) throw std::invalid_argument("config: duplicate key '" + k + "'");
    lookup(k).set(c, v);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("override '" + o + "': expected key=value");
    }
    const std::string k = trim(std::string_view(o).substr(0, eq));
    lookup(k).set(c, trim(std::string_view(o).substr(eq + 1)));
    seen.insert(k);
  }
  for (const auto& k : keys) {
    if (k.required && !seen.count(k.name)) {
      throw std::invalid_argument("config: missing required key '" + k.name + "'");
    }
  }
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  c.train.checkpoint_path = c.output_dir / "checkpoint.bin";
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

ImageDataset RunConfig::train_set() const {
  if (dataset == "cifar10") return load_cifar10_binary(cifar10_train);
  ImageDataset ds = gen_toy_shapes(toy_train_size, model.height, seed);
  ds.validate();
  return ds;
}

ImageDataset RunConfig::test_set() const {
  if (dataset == "cifar10") {
    return load_cifar10_binary(cifar10_test.empty() ? cifar10_train : cifar10_test);
  }
  ImageDataset ds = gen_toy_shapes(toy_test_size, model.height, seed + 1);
  ds.validate();
  return ds;
}

}  // namespace srvae
