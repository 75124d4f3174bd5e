#include "slq/config.hpp"

#include <fstream>
#include <sstream>

namespace slq {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" +
                      value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" +
                      value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" +
                      value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + value + "'");
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  trainer.validate();
  if (data.n_pretrain < 0 || data.n_adapt < 0 || data.n_eval < 0) {
    throw ConfigError("data sizes must be non-negative");
  }
  double mix_total = 0;
  for (double p : data.dim_mix) {
    if (p < 0) throw ConfigError("data.dim_mix entries must be non-negative");
    mix_total += p;
  }
  if (std::abs(mix_total - 1.0) > 1e-6) {
    throw ConfigError("data.dim_mix must sum to 1");
  }
  data.tier_enum();
  readout.init_enum();
  variant_from_name(readout.variant);
  pooling_from_name(readout.pooling);
  if (readout.n_queries < 1) throw ConfigError("readout.n_queries must be >= 1");
  if (readout.n_queries > kQuerySlotReserve) {
    throw ConfigError("readout.n_queries exceeds the reserved query slots");
  }
  if (eval.k_list.empty()) throw ConfigError("eval.k_list must be nonempty");
  for (int k : eval.k_list) {
    if (k < 1) throw ConfigError("eval.k_list entries must be >= 1");
  }
  if (pretrain.learning_rate <= 0 || pretrain.total_steps < 0 ||
      pretrain.batch_size < 1) {
    throw ConfigError("trainer pretrain knobs out of range");
  }
  // Prompt prefix words must exist in the vocabulary.
  for (const auto& word : readout.prompt_prefix) Vocab::instance().id(word);
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      if (section != "backbone" && section != "data" && section != "trainer" &&
          section != "readout" && section != "eval" && section != "output") {
        throw ConfigError("config: unknown section '" + section + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full = section + "." + key;

    if (section == "backbone") {
      if (key == "d_model") cfg.backbone.d_model = to_int(full, value);
      else if (key == "n_layers") cfg.backbone.n_layers = to_int(full, value);
      else if (key == "n_heads") cfg.backbone.n_heads = to_int(full, value);
      else if (key == "vocab_size") cfg.backbone.vocab_size = to_int(full, value);
      else if (key == "max_seq_len") cfg.backbone.max_seq_len = to_int(full, value);
      else if (key == "patch_grid") cfg.backbone.patch_grid = to_int(full, value);
      else if (key == "ffn_mult") cfg.backbone.ffn_mult = to_int(full, value);
      else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "data") {
      if (key == "tier") cfg.data.tier = value;
      else if (key == "n_pretrain") cfg.data.n_pretrain = to_int(full, value);
      else if (key == "n_adapt") cfg.data.n_adapt = to_int(full, value);
      else if (key == "n_eval") cfg.data.n_eval = to_int(full, value);
      else if (key == "seed") cfg.data.seed = to_u64(full, value);
      else if (key == "dim_mix") {
        const auto parts = split_list(value);
        if (parts.size() != 6) {
          throw ConfigError("config: data.dim_mix needs 6 proportions");
        }
        for (std::size_t i = 0; i < 6; ++i) {
          cfg.data.dim_mix[i] = to_double(full, parts[i]);
        }
      } else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "trainer") {
      if (key == "learning_rate") cfg.trainer.learning_rate = to_double(full, value);
      else if (key == "warmup_ratio") cfg.trainer.warmup_ratio = to_double(full, value);
      else if (key == "schedule") cfg.trainer.schedule = value;
      else if (key == "total_steps") cfg.trainer.total_steps = to_int(full, value);
      else if (key == "batch_size") cfg.trainer.batch_size = to_int(full, value);
      else if (key == "seed") cfg.trainer.seed = to_u64(full, value);
      else if (key == "weight_decay") cfg.trainer.weight_decay = to_double(full, value);
      else if (key == "beta1") cfg.trainer.beta1 = to_double(full, value);
      else if (key == "beta2") cfg.trainer.beta2 = to_double(full, value);
      else if (key == "adam_eps") cfg.trainer.adam_eps = to_double(full, value);
      else if (key == "grad_clip") cfg.trainer.grad_clip = to_double(full, value);
      else if (key == "pretrain_lr") cfg.pretrain.learning_rate = to_double(full, value);
      else if (key == "pretrain_steps") cfg.pretrain.total_steps = to_int(full, value);
      else if (key == "pretrain_batch_size") cfg.pretrain.batch_size = to_int(full, value);
      else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "readout") {
      if (key == "variant") cfg.readout.variant = value;
      else if (key == "n_queries") cfg.readout.n_queries = to_int(full, value);
      else if (key == "pooling") cfg.readout.pooling = value;
      else if (key == "init") cfg.readout.init = value;
      else if (key == "prompt_prefix") cfg.readout.prompt_prefix = split_list(value);
      else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "eval") {
      if (key == "k_list") {
        cfg.eval.k_list.clear();
        for (const auto& item : split_list(value)) {
          cfg.eval.k_list.push_back(to_int(full, item));
        }
      } else if (key == "geometry") {
        cfg.eval.geometry = to_bool(full, value);
      } else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "output") {
      if (key == "dir") cfg.output_dir = value;
      else throw ConfigError("config: unknown key '" + full + "'");
    } else {
      throw ConfigError("config: key '" + key + "' appears before any section");
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[backbone]\n";
  out << "d_model = " << cfg.backbone.d_model << "\n";
  out << "n_layers = " << cfg.backbone.n_layers << "\n";
  out << "n_heads = " << cfg.backbone.n_heads << "\n";
  out << "vocab_size = " << cfg.backbone.vocab_size << "\n";
  out << "max_seq_len = " << cfg.backbone.max_seq_len << "\n";
  out << "patch_grid = " << cfg.backbone.patch_grid << "\n";
  out << "ffn_mult = " << cfg.backbone.ffn_mult << "\n";
  out << "\n[data]\n";
  out << "tier = " << cfg.data.tier << "\n";
  out << "n_pretrain = " << cfg.data.n_pretrain << "\n";
  out << "n_adapt = " << cfg.data.n_adapt << "\n";
  out << "n_eval = " << cfg.data.n_eval << "\n";
  out << "seed = " << cfg.data.seed << "\n";
  out << "dim_mix = ";
  for (std::size_t i = 0; i < 6; ++i) {
    if (i) out << ",";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", cfg.data.dim_mix[i]);
    out << buf;
  }
  out << "\n";
  out << "\n[trainer]\n";
  char num[48];
  std::snprintf(num, sizeof(num), "%g", cfg.trainer.learning_rate);
  out << "learning_rate = " << num << "\n";
  std::snprintf(num, sizeof(num), "%g", cfg.trainer.warmup_ratio);
  out << "warmup_ratio = " << num << "\n";
  out << "schedule = " << cfg.trainer.schedule << "\n";
  out << "total_steps = " << cfg.trainer.total_steps << "\n";
  out << "batch_size = " << cfg.trainer.batch_size << "\n";
  out << "seed = " << cfg.trainer.seed << "\n";
  std::snprintf(num, sizeof(num), "%g", cfg.trainer.weight_decay);
  out << "weight_decay = " << num << "\n";
  std::snprintf(num, sizeof(num), "%g", cfg.trainer.beta1);
  out << "beta1 = " << num << "\n";
  std::snprintf(num, sizeof(num), "%g", cfg.trainer.beta2);
  out << "beta2 = " << num << "\n";
  std::snprintf(num, sizeof(num), "%g", cfg.trainer.adam_eps);
  out << "adam_eps = " << num << "\n";
  std::snprintf(num, sizeof(num), "%g", cfg.trainer.grad_clip);
  out << "grad_clip = " << num << "\n";
  std::snprintf(num, sizeof(num), "%g", cfg.pretrain.learning_rate);
  out << "pretrain_lr = " << num << "\n";
  out << "pretrain_steps = " << cfg.pretrain.total_steps << "\n";
  out << "pretrain_batch_size = " << cfg.pretrain.batch_size << "\n";
  out << "\n[readout]\n";
  out << "variant = " << cfg.readout.variant << "\n";
  out << "n_queries = " << cfg.readout.n_queries << "\n";
  out << "pooling = " << cfg.readout.pooling << "\n";
  out << "init = " << cfg.readout.init << "\n";
  out << "prompt_prefix = ";
  for (std::size_t i = 0; i < cfg.readout.prompt_prefix.size(); ++i) {
    if (i) out << ",";
    out << cfg.readout.prompt_prefix[i];
  }
  out << "\n";
  out << "\n[eval]\n";
  out << "k_list = ";
  for (std::size_t i = 0; i < cfg.eval.k_list.size(); ++i) {
    if (i) out << ",";
    out << cfg.eval.k_list[i];
  }
  out << "\n";
  out << "geometry = " << (cfg.eval.geometry ? "true" : "false") << "\n";
  out << "\n[output]\n";
  out << "dir = " << cfg.output_dir << "\n";
  return out.str();
}

}  // namespace slq
