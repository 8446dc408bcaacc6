#include "fedprobe/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "fedprobe/seed.hpp"

namespace fedprobe::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_uint(std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
    throw std::invalid_argument(fmt::format("'{}' is not a non-negative integer", v));
  }
  return out;
}

std::size_t parse_positive(std::string_view v) {
  const auto n = parse_uint(v);
  if (n == 0) throw std::invalid_argument("must be >= 1");
  return n;
}

double parse_double(std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size() ||
      !std::isfinite(out)) {
    throw std::invalid_argument(fmt::format("'{}' is not a finite number", v));
  }
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument(fmt::format("'{}' is not true or false", v));
}

std::vector<std::size_t> parse_list(std::string_view v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(parse_uint(trim(v.substr(start, comma - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

data::Rate parse_rate(std::string_view v) {
  const auto slash = v.find('/');
  data::Rate r;
  if (slash == std::string_view::npos) {
    r = {parse_uint(v), 1};
  } else {
    r = {parse_uint(trim(v.substr(0, slash))), parse_uint(trim(v.substr(slash + 1)))};
  }
  if (r.den == 0 || r.num == 0 || r.num > r.den) {
    throw std::invalid_argument(
        fmt::format("rate '{}' must be a fraction in (0, 1], like 1/3", v));
  }
  return r;
}

template <typename E>
E parse_enum(std::string_view v, std::initializer_list<std::pair<std::string_view, E>> names) {
  for (const auto& [name, value] : names) {
    if (v == name) return value;
  }
  std::vector<std::string_view> options;
  for (const auto& entry : names) options.push_back(entry.first);
  throw std::invalid_argument(
      fmt::format("'{}' is not one of {}", v, fmt::join(options, ", ")));
}

std::string_view activation_name(nn::Activation a) {
  switch (a) {
    case nn::Activation::kLinear: return "linear";
    case nn::Activation::kSigmoid: return "sigmoid";
    case nn::Activation::kReLU: return "relu";
    case nn::Activation::kSoftmax: return "softmax";
  }
  return "linear";
}

using Setter = std::function<void(ExperimentConfig&, std::string_view)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
  std::string_view section;
  std::string_view key;
  Setter set;
  Getter get;
};

std::string num(double v) { return fmt::format("{}", v); }
std::string num(std::uint64_t v) { return fmt::format("{}", v); }
std::string list(const std::vector<std::size_t>& v) {
  return fmt::format("{}", fmt::join(v, ","));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"experiment", "seed",
       [](auto& c, auto v) { c.seed = parse_uint(v); },
       [](const auto& c) { return num(c.seed); }},
      {"experiment", "rounds",
       [](auto& c, auto v) { c.rounds = parse_uint(v); },
       [](const auto& c) { return num(c.rounds); }},
      {"experiment", "output_dir",
       [](auto& c, auto v) {
         if (v.empty()) throw std::invalid_argument("must not be empty");
         c.output_dir = std::string(v);
       },
       [](const auto& c) { return c.output_dir.string(); }},

      {"data", "source",
       [](auto& c, auto v) {
         c.source = parse_enum<DataSource>(
             v, {{"synthetic", DataSource::kSynthetic}, {"cifar10", DataSource::kCifar10}});
       },
       [](const auto& c) {
         return std::string(c.source == DataSource::kSynthetic ? "synthetic" : "cifar10");
       }},
      {"data", "cifar_path",
       [](auto& c, auto v) { c.cifar_path = std::string(v); },
       [](const auto& c) { return c.cifar_path.string(); }},
      {"data", "num_classes",
       [](auto& c, auto v) {
         c.synthetic.num_classes = parse_uint(v);
         if (c.synthetic.num_classes < 2) throw std::invalid_argument("must be >= 2");
       },
       [](const auto& c) { return num(c.synthetic.num_classes); }},
      {"data", "samples_per_class",
       [](auto& c, auto v) { c.synthetic.samples_per_class = parse_positive(v); },
       [](const auto& c) { return num(c.synthetic.samples_per_class); }},
      {"data", "test_samples_per_class",
       [](auto& c, auto v) { c.synthetic.test_samples_per_class = parse_positive(v); },
       [](const auto& c) { return num(c.synthetic.test_samples_per_class); }},
      {"data", "image_shape",
       [](auto& c, auto v) {
         auto s = parse_list(v);
         if (s.size() != 3 || std::count(s.begin(), s.end(), 0u) != 0) {
           throw std::invalid_argument("must be channels,height,width, all >= 1");
         }
         c.synthetic.image_shape = s;
       },
       [](const auto& c) { return list(c.synthetic.image_shape); }},
      {"data", "noise",
       [](auto& c, auto v) {
         c.synthetic.noise = parse_double(v);
         if (c.synthetic.noise < 0.0) throw std::invalid_argument("must be >= 0");
       },
       [](const auto& c) { return num(c.synthetic.noise); }},

      {"partition", "scheme",
       [](auto& c, auto v) {
         c.partition_scheme = parse_enum<PartitionScheme>(
             v, {{"sharded", PartitionScheme::kSharded}, {"dirichlet", PartitionScheme::kDirichlet}});
       },
       [](const auto& c) {
         return std::string(c.partition_scheme == PartitionScheme::kSharded ? "sharded" : "dirichlet");
       }},
      {"partition", "shards_per_client",
       [](auto& c, auto v) { c.shards_per_client = parse_positive(v); },
       [](const auto& c) { return num(c.shards_per_client); }},
      {"partition", "beta",
       [](auto& c, auto v) {
         c.dirichlet_beta = parse_double(v);
         if (!(c.dirichlet_beta > 0.0)) throw std::invalid_argument("must be > 0");
       },
       [](const auto& c) { return num(c.dirichlet_beta); }},
      {"partition", "server_share",
       [](auto& c, auto v) {
         const double s = parse_double(v);
         if (s < 0.0 || s >= 1.0) throw std::invalid_argument("must be in [0, 1)");
         c.server_share = s;
       },
       [](const auto& c) { return num(c.server_share); }},

      {"model", "architecture",
       [](auto& c, auto v) {
         c.architecture = parse_enum<ArchPreset>(v, {{"mlp", ArchPreset::kMlp}, {"cnn", ArchPreset::kCnn}});
       },
       [](const auto& c) {
         return std::string(c.architecture == ArchPreset::kMlp ? "mlp" : "cnn");
       }},
      {"model", "hidden",
       [](auto& c, auto v) {
         auto h = parse_list(v);
         if (std::count(h.begin(), h.end(), 0u) != 0) {
           throw std::invalid_argument("layer widths must be >= 1");
         }
         c.hidden = h;
       },
       [](const auto& c) { return list(c.hidden); }},
      {"model", "hidden_activation",
       [](auto& c, auto v) {
         c.hidden_activation = parse_enum<nn::Activation>(
             v, {{"relu", nn::Activation::kReLU},
                 {"sigmoid", nn::Activation::kSigmoid},
                 {"linear", nn::Activation::kLinear}});
       },
       [](const auto& c) { return std::string(activation_name(c.hidden_activation)); }},
      {"model", "cnn_filters",
       [](auto& c, auto v) { c.cnn_filters = parse_positive(v); },
       [](const auto& c) { return num(c.cnn_filters); }},
      {"model", "cnn_dense",
       [](auto& c, auto v) { c.cnn_dense = parse_positive(v); },
       [](const auto& c) { return num(c.cnn_dense); }},
      {"model", "loss",
       [](auto& c, auto v) {
         c.loss = parse_enum<nn::LossKind>(
             v, {{"cross_entropy", nn::LossKind::kCrossEntropy}, {"mse", nn::LossKind::kMSE}});
       },
       [](const auto& c) {
         return std::string(c.loss == nn::LossKind::kMSE ? "mse" : "cross_entropy");
       }},

      {"training", "learning_rate",
       [](auto& c, auto v) {
         c.learning_rate = parse_double(v);
         if (!(c.learning_rate > 0.0)) throw std::invalid_argument("must be > 0");
       },
       [](const auto& c) { return num(c.learning_rate); }},
      {"training", "batch_size",
       [](auto& c, auto v) { c.batch_size = parse_positive(v); },
       [](const auto& c) { return num(c.batch_size); }},
      {"training", "local_epochs",
       [](auto& c, auto v) { c.local_epochs = parse_positive(v); },
       [](const auto& c) { return num(c.local_epochs); }},
      {"training", "server_init_epochs",
       [](auto& c, auto v) { c.server_init_epochs = parse_uint(v); },
       [](const auto& c) { return num(c.server_init_epochs); }},
      {"training", "parallel_clients",
       [](auto& c, auto v) { c.parallel_clients = parse_bool(v); },
       [](const auto& c) { return std::string(c.parallel_clients ? "true" : "false"); }},

      {"federation", "num_clients",
       [](auto& c, auto v) { c.num_clients = parse_positive(v); },
       [](const auto& c) { return num(c.num_clients); }},
      {"federation", "num_malicious",
       [](auto& c, auto v) { c.num_malicious = parse_uint(v); },
       [](const auto& c) { return num(c.num_malicious); }},
      {"federation", "malicious_ids",
       [](auto& c, auto v) {
         if (v == "auto") {
           c.malicious_ids.reset();
         } else {
           c.malicious_ids = parse_list(v);
         }
       },
       [](const auto& c) {
         return c.malicious_ids ? list(*c.malicious_ids) : std::string("auto");
       }},

      {"backdoor", "source_class",
       [](auto& c, auto v) { c.backdoor.source_class = parse_uint(v); },
       [](const auto& c) { return num(c.backdoor.source_class); }},
      {"backdoor", "target_class",
       [](auto& c, auto v) { c.backdoor.target_class = parse_uint(v); },
       [](const auto& c) { return num(c.backdoor.target_class); }},
      {"backdoor", "malicious_rate",
       [](auto& c, auto v) { c.backdoor.malicious_rate = parse_rate(v); },
       [](const auto& c) { return format_rate(c.backdoor.malicious_rate); }},
      {"backdoor", "trigger_fraction",
       [](auto& c, auto v) {
         const double f = parse_double(v);
         if (f < 0.0 || f > 1.0) throw std::invalid_argument("must be in [0, 1]");
         c.backdoor.trigger_fraction = f;
       },
       [](const auto& c) { return num(c.backdoor.trigger_fraction); }},
      {"backdoor", "trigger_row",
       [](auto& c, auto v) { c.backdoor.trigger.row = parse_uint(v); },
       [](const auto& c) { return num(c.backdoor.trigger.row); }},
      {"backdoor", "trigger_col",
       [](auto& c, auto v) { c.backdoor.trigger.col = parse_uint(v); },
       [](const auto& c) { return num(c.backdoor.trigger.col); }},
      {"backdoor", "trigger_height",
       [](auto& c, auto v) { c.backdoor.trigger.height = parse_positive(v); },
       [](const auto& c) { return num(c.backdoor.trigger.height); }},
      {"backdoor", "trigger_width",
       [](auto& c, auto v) { c.backdoor.trigger.width = parse_positive(v); },
       [](const auto& c) { return num(c.backdoor.trigger.width); }},
      {"backdoor", "trigger_value",
       [](auto& c, auto v) {
         const double t = parse_double(v);
         if (t < 0.0 || t > 1.0) throw std::invalid_argument("must be in [0, 1]");
         c.backdoor.trigger.value = t;
       },
       [](const auto& c) { return num(c.backdoor.trigger.value); }},

      {"anomaly", "flag_layer",
       [](auto& c, auto v) { c.flag_layer = v == "final" ? 0 : parse_positive(v); },
       [](const auto& c) { return c.flag_layer == 0 ? std::string("final") : num(c.flag_layer); }},
      {"anomaly", "flag_kind",
       [](auto& c, auto v) {
         const auto kind = parse_group_kind(v);
         if (!kind) throw std::invalid_argument(fmt::format("'{}' is not one of bias, weights", v));
         c.flag_kind = *kind;
       },
       [](const auto& c) { return std::string(to_string(c.flag_kind)); }},
      {"anomaly", "flag_factor",
       [](auto& c, auto v) {
         c.flag_factor = parse_double(v);
         if (!(c.flag_factor > 0.0)) throw std::invalid_argument("must be > 0");
       },
       [](const auto& c) { return num(c.flag_factor); }},
  };
  return table;
}

const Field* find_field(std::string_view section, std::string_view key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

bool known_section(std::string_view section) {
  return std::any_of(fields().begin(), fields().end(),
                     [&](const Field& f) { return f.section == section; });
}

// Checks that span several keys. Returns {field, message} of the first failure.
std::optional<std::pair<std::string, std::string>> cross_check(
    const ExperimentConfig& c) {
  const std::size_t classes = c.num_classes();
  const auto& bd = c.backdoor;
  if (bd.source_class >= classes) {
    return std::pair{"backdoor.source_class",
                     fmt::format("class {} is outside 0..{}", bd.source_class, classes - 1)};
  }
  if (bd.target_class >= classes) {
    return std::pair{"backdoor.target_class",
                     fmt::format("class {} is outside 0..{}", bd.target_class, classes - 1)};
  }
  if (bd.source_class == bd.target_class) {
    return std::pair{"backdoor.target_class", std::string("must differ from source_class")};
  }
  const Shape shape = c.sample_shape();
  if (bd.trigger.row + bd.trigger.height > shape[1] ||
      bd.trigger.col + bd.trigger.width > shape[2]) {
    return std::pair{"backdoor.trigger_row",
                     fmt::format("trigger patch does not fit a {}x{} image", shape[1], shape[2])};
  }
  if (c.num_malicious > c.num_clients) {
    return std::pair{"federation.num_malicious",
                     fmt::format("{} malicious clients but only {} clients",
                                 c.num_malicious, c.num_clients)};
  }
  if (c.malicious_ids) {
    const auto& ids = *c.malicious_ids;
    if (ids.size() != c.num_malicious) {
      return std::pair{"federation.malicious_ids",
                       fmt::format("lists {} ids but num_malicious is {}", ids.size(),
                                   c.num_malicious)};
    }
    for (std::size_t id : ids) {
      if (id >= c.num_clients) {
        return std::pair{"federation.malicious_ids",
                         fmt::format("client {} is outside 0..{}", id, c.num_clients - 1)};
      }
    }
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      return std::pair{"federation.malicious_ids", std::string("contains a duplicate id")};
    }
  }
  if (c.architecture == ArchPreset::kCnn && (shape[1] < 6 || shape[2] < 6)) {
    return std::pair{"model.architecture",
                     fmt::format("cnn needs images of at least 6x6, got {}x{}", shape[1], shape[2])};
  }
  return std::nullopt;
}

}  // namespace

ConfigError::ConfigError(std::string origin, std::size_t line, std::string field,
                         const std::string& message)
    : std::runtime_error(
          line > 0 ? fmt::format("{}:{}: {}: {}", origin, line, field, message)
                   : fmt::format("{}: {}: {}", origin, field, message)),
      origin_(std::move(origin)),
      line_(line),
      field_(std::move(field)) {}

std::size_t ExperimentConfig::num_classes() const {
  return source == DataSource::kCifar10 ? 10 : synthetic.num_classes;
}

Shape ExperimentConfig::sample_shape() const {
  return source == DataSource::kCifar10 ? Shape{3, 32, 32} : synthetic.image_shape;
}

std::vector<std::size_t> ExperimentConfig::resolved_malicious_ids() const {
  if (malicious_ids) {
    auto ids = *malicious_ids;
    std::sort(ids.begin(), ids.end());
    return ids;
  }
  std::vector<std::size_t> ids(num_malicious);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

data::PartitionPlan ExperimentConfig::partition_plan() const {
  data::PartitionPlan plan;
  if (partition_scheme == PartitionScheme::kSharded) {
    plan.scheme = data::Sharded{shards_per_client};
  } else {
    plan.scheme = data::Dirichlet{dirichlet_beta};
  }
  plan.num_clients = num_clients;
  plan.server_share = server_share;
  plan.seed = derive_seed(seed, Stream::kPartition);
  return plan;
}

std::string format_rate(const data::Rate& rate) {
  return fmt::format("{}/{}", rate.num, rate.den);
}

ExperimentConfig parse_config(std::string_view text, const std::string& origin) {
  ExperimentConfig config;
  std::map<std::string, std::size_t> line_of;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) {
      line = line.substr(0, c);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(origin, line_no, std::string(line), "unterminated section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!known_section(section)) {
        throw ConfigError(origin, line_no, section, "unknown section");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      const std::string key(line);
      throw ConfigError(origin, line_no, section.empty() ? key : section + "." + key,
                        "expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError(origin, line_no, key, "key outside of any [section]");
    }
    const std::string field = section + "." + key;
    const Field* f = find_field(section, key);
    if (f == nullptr) throw ConfigError(origin, line_no, field, "unknown key");
    if (!line_of.emplace(field, line_no).second) {
      throw ConfigError(origin, line_no, field,
                        fmt::format("duplicate key (first set on line {})", line_of[field]));
    }
    try {
      f->set(config, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(origin, line_no, field, e.what());
    }
  }
  if (const auto problem = cross_check(config)) {
    const auto it = line_of.find(problem->first);
    throw ConfigError(origin, it == line_of.end() ? 0 : it->second, problem->first,
                      problem->second);
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), 0, "file", "cannot be opened");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  ExperimentConfig config = parse_config(text, path.string());
  if (config.source == DataSource::kCifar10) {
    std::filesystem::path dir = config.cifar_path;
    if (dir.is_relative()) dir = path.parent_path() / dir;
    if (config.cifar_path.empty() || !std::filesystem::is_directory(dir)) {
      throw ConfigError(path.string(), 0, "data.cifar_path",
                        fmt::format("'{}' is not a directory", dir.string()));
    }
    config.cifar_path = dir;
  }
  return config;
}

std::string to_ini(const ExperimentConfig& config) {
  std::string out;
  std::string_view section;
  for (const auto& f : fields()) {
    const std::string value = f.get(config);
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      out += fmt::format("[{}]\n", f.section);
      section = f.section;
    }
    out += fmt::format("{} = {}\n", f.key, value);
  }
  return out;
}

void apply_environment(ExperimentConfig& config) {
  const char* dir = std::getenv(kOutputDirEnv);
  if (dir != nullptr && *dir != '\0') config.output_dir = dir;
}

void set_field(ExperimentConfig& config, std::string_view field,
               std::string_view value) {
  const auto dot = field.find('.');
  const Field* f = dot == std::string_view::npos
                       ? nullptr
                       : find_field(field.substr(0, dot), field.substr(dot + 1));
  if (f == nullptr) throw ConfigError("<override>", 0, std::string(field), "unknown key");
  ExperimentConfig next = config;
  try {
    f->set(next, trim(value));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("<override>", 0, std::string(field), e.what());
  }
  if (const auto problem = cross_check(next)) {
    throw ConfigError("<override>", 0, problem->first, problem->second);
  }
  config = std::move(next);
}

}  // namespace fedprobe::cli
