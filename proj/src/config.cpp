#include "ccd/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ccd {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_unsigned(const std::string& v, const std::string& key) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: " + key + " expects a real number, got '" + v + "'");
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config: " + key + " expects a boolean, got '" + v + "'");
}

std::string real_text(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

template <typename Field>
ConfigKey size_key(std::string name, std::string help, Field field) {
  return {name, std::move(help),
          [field](const EngineConfig& c) { return std::to_string(field(c)); },
          [field, name](EngineConfig& c, const std::string& v) {
            field(c) = parse_unsigned<std::size_t>(v, name);
          }};
}

template <typename Field>
ConfigKey real_key(std::string name, std::string help, Field field) {
  return {name, std::move(help),
          [field](const EngineConfig& c) { return real_text(field(c)); },
          [field, name](EngineConfig& c, const std::string& v) { field(c) = parse_real(v, name); }};
}

template <typename Field>
ConfigKey bool_key(std::string name, std::string help, Field field) {
  return {name, std::move(help),
          [field](const EngineConfig& c) {
            return std::string(field(c) ? "true" : "false");
          },
          [field, name](EngineConfig& c, const std::string& v) { field(c) = parse_bool(v, name); }};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back({"backbone_hidden", "backbone hidden widths, comma separated",
               [](const EngineConfig& c) {
                 std::string s;
                 for (std::size_t i = 0; i < c.backbone_hidden.size(); ++i) {
                   s += (i ? "," : "") + std::to_string(c.backbone_hidden[i]);
                 }
                 return s;
               },
               [](EngineConfig& c, const std::string& v) {
                 std::vector<std::size_t> widths;
                 std::stringstream ss(v);
                 std::string cell;
                 while (std::getline(ss, cell, ',')) {
                   widths.push_back(parse_unsigned<std::size_t>(trim(cell), "backbone_hidden"));
                 }
                 c.backbone_hidden = std::move(widths);
               }});
  k.push_back(size_key("backbone_dim", "backbone output dimension d (also |G|)",
                       [](auto& c) -> auto& { return c.backbone_dim; }));
  k.push_back(size_key("projector_hidden", "projector hidden width",
                       [](auto& c) -> auto& { return c.projector_hidden; }));
  k.push_back(size_key("epochs_backbone", "initial backbone epochs (epoch_1)",
                       [](auto& c) -> auto& { return c.epochs_backbone; }));
  k.push_back(size_key("epochs_projector", "initial projector epochs (epoch_2)",
                       [](auto& c) -> auto& { return c.epochs_projector; }));
  k.push_back(size_key("epochs_incremental", "incremental projector epochs (epoch_3)",
                       [](auto& c) -> auto& { return c.epochs_incremental; }));
  k.push_back(real_key("lr_backbone", "backbone and P learning rate",
                       [](auto& c) -> auto& { return c.lr_backbone; }));
  k.push_back(real_key("lr_projector", "projector learning rate",
                       [](auto& c) -> auto& { return c.lr_projector; }));
  k.push_back(real_key("weight_decay", "decoupled weight decay",
                       [](auto& c) -> auto& { return c.weight_decay; }));
  k.push_back(size_key("batch_size", "minibatch size",
                       [](auto& c) -> auto& { return c.batch_size; }));
  k.push_back(real_key("alpha", "contrastive scaling factor",
                       [](auto& c) -> auto& { return c.contrastive.alpha; }));
  k.push_back(real_key("sigma", "contrastive margin",
                       [](auto& c) -> auto& { return c.contrastive.sigma; }));
  k.push_back(bool_key("softplus", "softplus form of the contrastive loss",
                       [](auto& c) -> auto& { return c.contrastive.softplus; }));
  k.push_back(real_key("tau", "orthogonality temperature",
                       [](auto& c) -> auto& { return c.tau; }));
  k.push_back(size_key("orthogonal_steps", "optimizer steps for G",
                       [](auto& c) -> auto& { return c.orthogonal.steps; }));
  k.push_back(real_key("orthogonal_lr", "learning rate for G",
                       [](auto& c) -> auto& { return c.orthogonal.learning_rate; }));
  k.push_back(bool_key("orthogonal_include_self", "keep the j=i term in the orthogonality loss",
                       [](auto& c) -> auto& { return c.orthogonal.include_self; }));
  k.push_back(bool_key("orthonormal_polish", "finish G with its nearest orthonormal matrix",
                       [](auto& c) -> auto& { return c.orthogonal.orthonormal_polish; }));
  k.push_back(bool_key("normalize_z", "unit-normalize z in the cross-entropy",
                       [](auto& c) -> auto& { return c.normalize_z; }));
  k.push_back(size_key("pool_capacity", "static pool entries per class (m = k_0)",
                       [](auto& c) -> auto& { return c.pool_capacity; }));
  k.push_back(real_key("epsilon", "known/novel similarity threshold",
                       [](auto& c) -> auto& { return c.split.epsilon; }));
  k.push_back(real_key("delta", "reliable-sample margin",
                       [](auto& c) -> auto& { return c.split.delta; }));
  k.push_back(size_key("split_hidden", "split classifier hidden width",
                       [](auto& c) -> auto& { return c.split.mlp_hidden; }));
  k.push_back(size_key("split_epochs", "split classifier epochs",
                       [](auto& c) -> auto& { return c.split.mlp_epochs; }));
  k.push_back(real_key("split_lr", "split classifier learning rate",
                       [](auto& c) -> auto& { return c.split.learning_rate; }));
  k.push_back(size_key("split_batch_size", "split classifier minibatch size",
                       [](auto& c) -> auto& { return c.split.batch_size; }));
  k.push_back(bool_key("split_balance", "class-balanced loss for the split classifier",
                       [](auto& c) -> auto& { return c.split.balance_classes; }));
  k.push_back(real_key("ap_damping", "affinity propagation damping",
                       [](auto& c) -> auto& { return c.discovery.ap.damping; }));
  k.push_back(size_key("ap_max_iters", "affinity propagation iteration cap",
                       [](auto& c) -> auto& { return c.discovery.ap.max_iters; }));
  k.push_back(size_key("ap_convergence_window", "iterations with stable exemplars to stop",
                       [](auto& c) -> auto& { return c.discovery.ap.convergence_window; }));
  k.push_back({"ap_preference", "affinity propagation preference, or 'median'",
               [](const EngineConfig& c) {
                 return c.discovery.ap.preference ? real_text(*c.discovery.ap.preference)
                                                  : std::string("median");
               },
               [](EngineConfig& c, const std::string& v) {
                 if (v == "median") {
                   c.discovery.ap.preference.reset();
                 } else {
                   c.discovery.ap.preference = parse_real(v, "ap_preference");
                 }
               }});
  k.push_back(size_key("gmm_max_iters", "EM iteration cap",
                       [](auto& c) -> auto& { return c.discovery.gmm.max_iters; }));
  k.push_back(real_key("gmm_tolerance", "EM relative log-likelihood tolerance",
                       [](auto& c) -> auto& { return c.discovery.gmm.tolerance; }));
  k.push_back(real_key("gmm_variance_floor", "minimum mixture variance",
                       [](auto& c) -> auto& { return c.discovery.gmm.variance_floor; }));
  k.push_back(size_key("gmm_max_reseeds", "component re-seeds before giving up",
                       [](auto& c) -> auto& { return c.discovery.gmm.max_reseeds; }));
  k.push_back(real_key("confidence_cut", "minimum max-responsibility kept by coarse discovery",
                       [](auto& c) -> auto& { return c.discovery.confidence_cut; }));
  k.push_back(size_key("k", "members kept per cluster by fine discovery",
                       [](auto& c) -> auto& { return c.discovery.k; }));
  k.push_back(bool_key("normalize_discovery", "cluster unit-normalized representations",
                       [](auto& c) -> auto& { return c.discovery.normalize_inputs; }));
  k.push_back(size_key("lambda_grid_points", "merge-threshold grid size",
                       [](auto& c) -> auto& { return c.lambda_grid_points; }));
  k.push_back(bool_key("ied", "independent enrichment of diversity",
                       [](auto& c) -> auto& { return c.ablation.ied; }));
  k.push_back(bool_key("jdn", "joint discovery of novelty",
                       [](auto& c) -> auto& { return c.ablation.jdn; }));
  k.push_back(bool_key("cio", "orthogonal prototypes with replay",
                       [](auto& c) -> auto& { return c.ablation.cio; }));
  k.push_back({"seed", "random seed",
               [](const EngineConfig& c) { return std::to_string(c.seed); },
               [](EngineConfig& c, const std::string& v) {
                 c.seed = parse_unsigned<std::uint64_t>(v, "seed");
               }});
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(EngineConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void apply_config_text(EngineConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    }
    set_config_value(config, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void apply_config_file(EngineConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(config, buf.str());
}

std::vector<std::pair<std::string, std::string>> config_echo(const EngineConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(config));
  return out;
}

std::string to_config_text(const EngineConfig& config) {
  std::string out;
  for (const auto& [key, value] : config_echo(config)) out += key + " = " + value + "\n";
  return out;
}

}  // namespace ccd
