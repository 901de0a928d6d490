#include "raincap/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>

#include "raincap/harness/checkpoint.hpp"

namespace raincap::harness {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class N>
N parse_number(std::string_view key, std::string_view v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("config: cannot parse '" + std::string(v) + "' for " + std::string(key));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + std::string(key) + " expects true or false, got '" + std::string(v) + "'");
}

std::array<int, 4> parse_widths(std::string_view key, std::string_view v) {
  std::array<int, 4> out{};
  std::size_t i = 0;
  while (true) {
    const auto comma = v.find(',');
    if (i == 4) throw ConfigError("config: " + std::string(key) + " takes exactly four widths");
    out[i++] = parse_number<int>(key, trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (i != 4) throw ConfigError("config: " + std::string(key) + " takes exactly four widths");
  return out;
}

std::string fmt(double v) {
  // shortest text that parses back to the same double
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(const std::array<int, 4>& w) {
  return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]) + "," + std::to_string(w[3]);
}

struct Field {
  std::function<void(std::string_view)> set;
  std::function<std::string()> get;
};

template <class N>
Field number(const char* key, N& ref) {
  return {[key, &ref](std::string_view v) { ref = parse_number<N>(key, v); },
          [&ref] {
            if constexpr (std::is_floating_point_v<N>) return fmt(ref);
            else return std::to_string(ref);
          }};
}

std::map<std::string, Field> fields_of(ExperimentConfig& c) {
  std::map<std::string, Field> f;
  f["seed"] = number("seed", c.seed);
  f["count"] = number("count", c.count);
  f["out"] = {[&c](std::string_view v) { c.out = std::string(v); }, [&c] { return c.out; }};

  f["rain.layers_min"] = number("rain.layers_min", c.rain.layers_min);
  f["rain.layers_max"] = number("rain.layers_max", c.rain.layers_max);
  f["rain.density_min"] = number("rain.density_min", c.rain.density_min);
  f["rain.density_max"] = number("rain.density_max", c.rain.density_max);
  f["rain.sigma_min"] = number("rain.sigma_min", c.rain.sigma_min);
  f["rain.sigma_max"] = number("rain.sigma_max", c.rain.sigma_max);
  f["rain.length_min"] = number("rain.length_min", c.rain.length_min);
  f["rain.length_max"] = number("rain.length_max", c.rain.length_max);
  f["rain.angle_min"] = number("rain.angle_min", c.rain.angle_min);
  f["rain.angle_max"] = number("rain.angle_max", c.rain.angle_max);
  f["rain.atmosphere_min"] = number("rain.atmosphere_min", c.rain.atmosphere_min);
  f["rain.atmosphere_max"] = number("rain.atmosphere_max", c.rain.atmosphere_max);
  f["rain.beta_min"] = number("rain.beta_min", c.rain.beta_min);
  f["rain.beta_max"] = number("rain.beta_max", c.rain.beta_max);

  f["guided.radius"] = number("guided.radius", c.guided_radius);
  f["guided.eps"] = number("guided.eps", c.guided_eps);

  f["irs.patch"] = number("irs.patch", c.irs.patch);
  f["irs.batch"] = number("irs.batch", c.irs.batch);
  f["irs.epochs"] = number("irs.epochs", c.irs.epochs);
  f["irs.lr"] = number("irs.lr", c.irs.lr);
  f["irs.widths"] = {[&c](std::string_view v) { c.irs.widths = parse_widths("irs.widths", v); },
                     [&c] { return fmt(c.irs.widths); }};

  f["cap.grid"] = number("cap.grid", c.dims.grid);
  f["cap.attention"] = number("cap.attention", c.dims.attention);
  f["cap.hidden"] = number("cap.hidden", c.dims.hidden);
  f["cap.embed"] = number("cap.embed", c.dims.embed);
  f["cap.widths"] = {[&c](std::string_view v) { c.dims.widths = parse_widths("cap.widths", v); },
                     [&c] { return fmt(c.dims.widths); }};
  f["cap.steps"] = number("cap.steps", c.cap.steps);
  f["cap.batch"] = number("cap.batch", c.cap.batch);
  f["cap.lr"] = number("cap.lr", c.cap.lr);
  f["cap.max_len"] = number("cap.max_len", c.cap.max_len);

  f["svfm.epochs"] = number("svfm.epochs", c.svfm.epochs);
  f["svfm.batch"] = number("svfm.batch", c.svfm.batch);
  f["svfm.lr"] = number("svfm.lr", c.svfm.lr);
  f["svfm.update_irs"] = {[&c](std::string_view v) { c.svfm.update_irs = parse_bool("svfm.update_irs", v); },
                          [&c] { return std::string(c.svfm.update_irs ? "true" : "false"); }};
  f["nic_s.epochs"] = number("nic_s.epochs", c.nic_s_epochs);
  return f;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  irs.epochs = 100;
  cap.steps = 600;
  cap.batch = 50;
  svfm.epochs = 40;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  auto f = fields_of(*this);
  const auto it = f.find(std::string(key));
  if (it == f.end()) throw ConfigError("config: unknown key '" + std::string(key) + "'");
  it->second.set(trim(value));
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig c;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> ExperimentConfig::keys() const {
  auto copy = *this;
  std::vector<std::string> out;
  for (const auto& [k, f] : fields_of(copy)) out.push_back(k);
  return out;
}

std::string ExperimentConfig::canonical() const {
  auto copy = *this;
  std::string out;
  for (const auto& [k, f] : fields_of(copy))
    if (k != "out") out += k + "=" + f.get() + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(canonical())); }

void ExperimentConfig::validate() const {
  auto wrap = [](const auto& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  };
  if (count < 1) throw ConfigError("config: count must be >= 1");
  if (nic_s_epochs < 1) throw ConfigError("config: nic_s.epochs must be >= 1");
  if (guided_radius < 1 || !(guided_eps > 0)) throw ConfigError("config: guided filter needs radius >= 1 and eps > 0");
  for (int w : dims.widths)
    if (w < 1) throw ConfigError("config: cap.widths must be positive");
  if (dims.grid < 1 || dims.attention < 1 || dims.hidden < 1 || dims.embed < 1)
    throw ConfigError("config: caption dims must be positive");
  wrap([&] { rain.validate(); });
  wrap([&] { irs_config().validate(); });
  wrap([&] { cap.validate(); });
  wrap([&] { svfm_config().validate(); });
}

irs::IrsTrainConfig ExperimentConfig::irs_config() const {
  auto c = irs;
  c.guided_radius = guided_radius;
  c.guided_eps = guided_eps;
  c.dataset_size = count;
  return c;
}

svfm::SvfmTrainConfig ExperimentConfig::svfm_config() const {
  auto c = svfm;
  c.guided_radius = guided_radius;
  c.guided_eps = guided_eps;
  return c;
}

svfm::SvfmTrainConfig ExperimentConfig::nic_s_config() const {
  auto c = svfm_config();
  c.epochs = nic_s_epochs;
  return c;
}

}  // namespace raincap::harness
