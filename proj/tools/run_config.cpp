#include "run_config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace invlens::cli {

namespace {

const std::map<std::string, std::string>& schema() {
  static const std::map<std::string, std::string> keys{
      {"run.dir", "runs"},
      {"data.train", ""},
      {"data.seed", "7"},
      {"data.count", "10000"},
      {"ae.checkpoint", ""},
      {"ae.latent", "64"},
      {"ae.encoder_hidden", "512,256"},
      {"ae.decoder_hidden", "256,512"},
      {"ae.gamma_per_pixel", "true"},
      {"ae.steps", "2000"},
      {"ae.batch", "64"},
      {"ae.lr", "0.001"},
      {"ae.gamma_lr", "0.01"},
      {"ae.seed", "1"},
      {"classifier.checkpoint", ""},
      {"classifier.hidden", "256,128,64"},
      {"classifier.steps", "2000"},
      {"classifier.batch", "64"},
      {"classifier.lr", "0.001"},
      {"classifier.checkpoints", "20"},
      {"classifier.heldout", "1000"},
      {"classifier.seed", "2"},
      {"cinn.dir", ""},
      {"cinn.tap", "tap2"},
      {"cinn.checkpoint", "final"},
      {"cinn.blocks", "20"},
      {"cinn.hidden_width", "512"},
      {"cinn.hidden_depth", "2"},
      {"cinn.embed_hidden", "128"},
      {"cinn.embed_out", "32"},
      {"cinn.clamp", "2"},
      {"cinn.steps", "2000"},
      {"cinn.batch", "64"},
      {"cinn.lr", "0.0001"},
      {"cinn.final_lr_fraction", "1"},
      {"cinn.init_batch", "512"},
      {"cinn.seed", "3"},
      {"sinn.checkpoint", ""},
      {"sinn.concept_dims", "8,8,8"},
      {"sinn.rho", "0.9"},
      {"sinn.blocks", "12"},
      {"sinn.hidden_width", "512"},
      {"sinn.hidden_depth", "2"},
      {"sinn.clamp", "2"},
      {"sinn.steps", "2000"},
      {"sinn.batch", "64"},
      {"sinn.lr", "0.0001"},
      {"sinn.final_lr_fraction", "1"},
      {"sinn.init_batch", "512"},
      {"sinn.seed", "4"},
      {"sample.count", "8"},
      {"sample.draws", "8"},
      {"sample.seed", "5"},
      {"metrics.n_outer", "200"},
      {"metrics.n_inner", "50"},
      {"metrics.inputs", "20"},
      {"metrics.samples", "50"},
      {"metrics.seed", "11"},
      {"metrics.kind", "explained-by-invariances"},
      {"metrics.factor", "all"},
      {"attack.eps", "0.1"},
      {"attack.count", "200"},
      {"attack.grid", "8"},
      {"attack.target", "runner-up"},
      {"modify.src", "0"},
      {"modify.donor", "1"},
      {"modify.factor", "bg"},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigError::ConfigError(std::size_t line_no, std::string k, const std::string& message)
    : std::runtime_error(line_no ? "line " + std::to_string(line_no) + ": " + message : message),
      line(line_no),
      key(std::move(k)) {}

MissingInput::MissingInput(std::string p) : std::runtime_error("missing input: " + p), path(std::move(p)) {}

RunConfig::RunConfig() : values_(schema()) {}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, line, "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, line, "expected 'key = value', got '" + line + "'");
    const std::string name = trim(line.substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    if (!schema().count(key)) throw ConfigError(line_no, key, "unknown key '" + key + "'");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(0, "", "cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!schema().count(key)) throw ConfigError(0, key, "unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(0, key, "unknown key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  const std::string& v = get(key);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(0, key, "key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(0, key, "key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t RunConfig::seed(const std::string& key) const { return count(key); }

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(0, key, "key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::size_t> RunConfig::sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
      throw ConfigError(0, key, "key '" + key + "': expected a comma-separated size list, got '" + get(key) + "'");
    out.push_back(v);
  }
  return out;
}

std::string RunConfig::path(const std::string& key) const {
  const std::string& v = get(key);
  if (!v.empty()) return v;
  const std::filesystem::path dir = get("run.dir");
  if (key == "data.train") return (dir / "data" / "train.gly").string();
  if (key == "ae.checkpoint") return (dir / "train-ae" / "ae.ckpt").string();
  if (key == "classifier.checkpoint") return (dir / "train-classifier" / "probe.ckpt").string();
  if (key == "cinn.dir") return (dir / "train-cinn").string();
  if (key == "sinn.checkpoint") return (dir / "train-sinn" / "sinn.ckpt").string();
  throw ConfigError(0, key, "key '" + key + "' is not a path");
}

std::string RunConfig::text() const {
  std::string out, section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

}  // namespace invlens::cli
