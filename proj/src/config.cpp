#include "edgepop/config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace edgepop {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError("key '" + key + "': trailing junk in '" + v + "'");
    return d;
  } catch (const std::invalid_argument&) {
    throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
  } catch (const std::out_of_range&) {
    throw ConfigError("key '" + key + "': number out of range: '" + v + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw ConfigError("key '" + key + "': trailing junk in '" + v + "'");
    return static_cast<int64_t>(i);
  } catch (const std::invalid_argument&) {
    throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
  } catch (const std::out_of_range&) {
    throw ConfigError("key '" + key + "': integer out of range: '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// k is canonically a fraction; values above 1 are read as percent.
double parse_keep(const std::string& v) {
  double k = parse_double("popup.k", v);
  if (k > 1.0) k /= 100.0;
  if (!(k > 0.0) || k > 1.0) throw ConfigError("popup.k must land in (0,1], got '" + v + "'");
  return k;
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool cosine_set = false, optimizer_kind_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      if (section != "arch" && section != "init" && section != "popup" &&
          section != "optimizer" && section != "dataset" && section != "sweep") {
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + t +
                        "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const std::string qual = section.empty() ? key : section + "." + key;

    if (qual == "algorithm") {
      cfg.algorithm = parse_algorithm(value);
    } else if (qual == "seed") {
      cfg.seed = static_cast<uint64_t>(parse_int(qual, value));
    } else if (qual == "epochs") {
      cfg.epochs = parse_int(qual, value);
    } else if (qual == "out") {
      cfg.out_dir = value;
    } else if (qual == "arch.name") {
      cfg.arch.name = parse_arch_name(value);
    } else if (qual == "arch.width_multiplier") {
      cfg.arch.width_multiplier = parse_rational(value);
    } else if (qual == "arch.classes") {
      cfg.arch.classes = parse_int(qual, value);
    } else if (qual == "init.kind") {
      cfg.init.kind = parse_init_kind(value);
    } else if (qual == "init.scaled") {
      cfg.init.scaled = parse_bool(qual, value);
    } else if (qual == "popup.k") {
      cfg.k = parse_keep(value);
    } else if (qual == "popup.score_abs_clamp") {
      cfg.score_abs_clamp = parse_bool(qual, value);
    } else if (qual == "optimizer.kind") {
      if (value == "sgd") {
        cfg.optimizer.kind = OptimizerKind::Sgd;
      } else if (value == "adam") {
        cfg.optimizer.kind = OptimizerKind::Adam;
      } else {
        throw ConfigError("optimizer.kind must be sgd or adam, got '" + value + "'");
      }
      optimizer_kind_set = true;
    } else if (qual == "optimizer.lr") {
      cfg.optimizer.lr = parse_double(qual, value);
    } else if (qual == "optimizer.momentum") {
      cfg.optimizer.momentum = parse_double(qual, value);
    } else if (qual == "optimizer.weight_decay") {
      cfg.optimizer.weight_decay = parse_double(qual, value);
    } else if (qual == "optimizer.cosine") {
      cfg.optimizer.cosine = parse_bool(qual, value);
      cosine_set = true;
    } else if (qual == "dataset.kind") {
      if (value != "blobs" && value != "cifar10") {
        throw ConfigError("dataset.kind must be blobs or cifar10, got '" + value + "'");
      }
      cfg.dataset.kind = value;
    } else if (qual == "dataset.data_dir") {
      cfg.dataset.data_dir = value;
    } else if (qual == "dataset.batch_size") {
      cfg.dataset.batch_size = parse_int(qual, value);
    } else if (qual == "dataset.augment") {
      cfg.dataset.augment = parse_bool(qual, value);
    } else if (qual == "dataset.blob_classes") {
      cfg.dataset.blob_classes = parse_int(qual, value);
    } else if (qual == "dataset.blob_dim") {
      cfg.dataset.blob_dim = parse_int(qual, value);
    } else if (qual == "dataset.blob_per_class") {
      cfg.dataset.blob_per_class = parse_int(qual, value);
    } else if (qual == "dataset.blob_spread") {
      cfg.dataset.blob_spread = parse_double(qual, value);
    } else if (qual == "sweep.axis") {
      cfg.sweep.axis = value;
    } else if (qual == "sweep.values") {
      cfg.sweep.values = split_list(value);
    } else if (qual == "sweep.seeds_per_point") {
      cfg.sweep.seeds_per_point = parse_int(qual, value);
    } else if (qual == "sweep.dense_lr") {
      cfg.sweep.dense_lr = parse_double(qual, value);
    } else {
      // Unknown keys are errors: they are almost always sweep typos.
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + qual + "'");
    }
  }

  if (!cosine_set && optimizer_kind_set && cfg.optimizer.kind == OptimizerKind::Adam) {
    cfg.optimizer.cosine = false;  // constant learning rate under Adam
  }
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.arch.classes < 2) throw ConfigError("arch.classes must be >= 2");
  if (cfg.dataset.batch_size < 1) throw ConfigError("dataset.batch_size must be >= 1");
  if (cfg.init.scaled) cfg.init.k = cfg.k;
  return cfg;
}

TrainConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "algorithm = " << algorithm_name(cfg.algorithm) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "out = " << cfg.out_dir << "\n";
  os << "\n[arch]\n";
  os << "name = " << arch_name_str(cfg.arch.name) << "\n";
  os << "width_multiplier = " << cfg.arch.width_multiplier.num << "/"
     << cfg.arch.width_multiplier.den << "\n";
  os << "classes = " << cfg.arch.classes << "\n";
  os << "\n[init]\n";
  os << "kind = " << init_kind_name(cfg.init.kind) << "\n";
  os << "scaled = " << (cfg.init.scaled ? "true" : "false") << "\n";
  os << "\n[popup]\n";
  os << "k = " << cfg.k << "\n";
  os << "score_abs_clamp = " << (cfg.score_abs_clamp ? "true" : "false") << "\n";
  os << "\n[optimizer]\n";
  os << "kind = " << (cfg.optimizer.kind == OptimizerKind::Sgd ? "sgd" : "adam") << "\n";
  os << "lr = " << cfg.optimizer.lr << "\n";
  os << "momentum = " << cfg.optimizer.momentum << "\n";
  os << "weight_decay = " << cfg.optimizer.weight_decay << "\n";
  os << "cosine = " << (cfg.optimizer.cosine ? "true" : "false") << "\n";
  os << "\n[dataset]\n";
  os << "kind = " << cfg.dataset.kind << "\n";
  os << "data_dir = " << cfg.dataset.data_dir << "\n";
  os << "batch_size = " << cfg.dataset.batch_size << "\n";
  os << "augment = " << (cfg.dataset.augment ? "true" : "false") << "\n";
  os << "blob_classes = " << cfg.dataset.blob_classes << "\n";
  os << "blob_dim = " << cfg.dataset.blob_dim << "\n";
  os << "blob_per_class = " << cfg.dataset.blob_per_class << "\n";
  os << "blob_spread = " << cfg.dataset.blob_spread << "\n";
  if (!cfg.sweep.axis.empty()) {
    os << "\n[sweep]\n";
    os << "axis = " << cfg.sweep.axis << "\n";
    os << "values = ";
    for (size_t i = 0; i < cfg.sweep.values.size(); ++i) {
      os << (i ? "," : "") << cfg.sweep.values[i];
    }
    os << "\n";
    os << "seeds_per_point = " << cfg.sweep.seeds_per_point << "\n";
    os << "dense_lr = " << cfg.sweep.dense_lr << "\n";
  }
  return os.str();
}

uint64_t config_hash(const TrainConfig& cfg) { return fnv1a64(serialize_config(cfg)); }

std::string resolve_data_dir(const DatasetConfig& ds) {
  if (!ds.data_dir.empty()) return ds.data_dir;
  if (const char* env = std::getenv("EDGEPOP_DATA_DIR")) return env;
  return "";
}

}  // namespace edgepop
