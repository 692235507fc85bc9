#include "pcdiff/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pcdiff/error.hpp"

namespace pcdiff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw std::invalid_argument("bad boolean for " + key + ": '" + value + "'");
}

std::vector<std::uint32_t> parse_widths(const std::string& key, const std::string& value) {
  std::vector<std::uint32_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::uint32_t>(key, trim(item)));
  if (out.empty()) throw std::invalid_argument(key + " needs at least one width");
  return out;
}

std::string join(const std::vector<std::uint32_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "mode",       "label_encoding", "beta_only",    "num_classes",   "latent_dim",
      "time_dim",   "encoder_widths", "decoder_widths", "beta_start",  "beta_end",
      "num_steps",  "batch_size",     "max_steps",    "learning_rate", "lambda_kl",
      "seed",       "checkpoint_every", "sampler"};
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "mode") {
    if (value == "guided") model.mode = DiffusionMode::Guided;
    else if (value == "unguided") model.mode = DiffusionMode::Unguided;
    else throw std::invalid_argument("mode must be guided or unguided, got '" + value + "'");
  } else if (key == "label_encoding") {
    if (value == "centered") model.label_encoding = LabelEncoding::Centered;
    else if (value == "raw") model.label_encoding = LabelEncoding::Raw;
    else throw std::invalid_argument("label_encoding must be centered or raw, got '" + value + "'");
  } else if (key == "beta_only") {
    model.beta_only = parse_bool(key, value);
  } else if (key == "num_classes") {
    model.num_classes = parse_number<std::uint32_t>(key, value);
  } else if (key == "latent_dim") {
    model.latent_dim = parse_number<std::uint32_t>(key, value);
  } else if (key == "time_dim") {
    model.time_dim = parse_number<std::uint32_t>(key, value);
  } else if (key == "encoder_widths") {
    model.encoder_widths = parse_widths(key, value);
  } else if (key == "decoder_widths") {
    model.decoder_widths = parse_widths(key, value);
  } else if (key == "beta_start") {
    model.schedule.beta_start = parse_number<double>(key, value);
  } else if (key == "beta_end") {
    model.schedule.beta_end = parse_number<double>(key, value);
  } else if (key == "num_steps") {
    model.schedule.num_steps = parse_number<std::size_t>(key, value);
  } else if (key == "batch_size") {
    train.batch_size = parse_number<std::size_t>(key, value);
  } else if (key == "max_steps") {
    train.max_steps = parse_number<std::size_t>(key, value);
  } else if (key == "learning_rate") {
    train.learning_rate = parse_number<double>(key, value);
  } else if (key == "lambda_kl") {
    train.lambda_kl = parse_number<double>(key, value);
  } else if (key == "seed") {
    train.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "checkpoint_every") {
    train.checkpoint_every = parse_number<std::size_t>(key, value);
  } else if (key == "sampler") {
    const auto v = parse_sampler(value);
    if (!v) throw std::invalid_argument("sampler must be paper-direct or ancestral, got '" + value + "'");
    sampler = *v;
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
  explicit_keys.insert(key);
}

std::string RunConfig::render() const {
  std::ostringstream os;
  os << "mode = " << mode_name(model.mode) << "\n"
     << "label_encoding = " << encoding_name(model.label_encoding) << "\n"
     << "beta_only = " << (model.beta_only ? "true" : "false") << "\n"
     << "num_classes = " << model.num_classes << "\n"
     << "latent_dim = " << model.latent_dim << "\n"
     << "time_dim = " << model.time_dim << "\n"
     << "encoder_widths = " << join(model.encoder_widths) << "\n"
     << "decoder_widths = " << join(model.decoder_widths) << "\n"
     << "beta_start = " << g17(model.schedule.beta_start) << "\n"
     << "beta_end = " << g17(model.schedule.beta_end) << "\n"
     << "num_steps = " << model.schedule.num_steps << "\n"
     << "batch_size = " << train.batch_size << "\n"
     << "max_steps = " << train.max_steps << "\n"
     << "learning_rate = " << g17(train.learning_rate) << "\n"
     << "lambda_kl = " << g17(train.lambda_kl) << "\n"
     << "seed = " << train.seed << "\n"
     << "checkpoint_every = " << train.checkpoint_every << "\n"
     << "sampler = " << sampler_name(sampler) << "\n";
  return os.str();
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void apply_config_text(RunConfig& config, const std::string& text) {
  for (const auto& [k, v] : parse_config_text(text)) config.set(k, v);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig config;
  apply_config_text(config, ss.str());
  return config;
}

}  // namespace pcdiff
