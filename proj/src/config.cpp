#include "anchorstream/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace anchorstream {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a real number, got '" + value + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + value + "'");
}

// %.17g survives a round-trip through parse_double bit-exactly, so an
// echoed config reproduces the run that wrote it.
std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> pairs;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line is not 'key = value'", line_no);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("config line has an empty key", line_no);
    if (value.empty()) throw ParseError("config key '" + key + "' has an empty value", line_no);
    if (pairs.count(key) != 0) {
      throw ParseError("config key '" + key + "' appears twice", line_no);
    }
    pairs[key] = value;
  }
  return pairs;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::string to_string(Protocol p) {
  return p == Protocol::one_pass ? "one_pass" : "multi_pass";
}
std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::filtered: return "filtered";
    case Strategy::no_filter: return "no_filter";
    case Strategy::soft_assignment: return "soft_assignment";
  }
  throw ConfigError("unknown strategy tag");
}
std::string to_string(AnchorMode m) {
  return m == AnchorMode::source_stats ? "source_stats" : "classifier_prototypes";
}
std::string to_string(KlForm f) {
  return f == KlForm::standard ? "standard" : "paper_printed";
}
std::string to_string(GaForm f) { return f == GaForm::kld ? "kld" : "l2"; }
std::string to_string(CountPer c) { return c == CountPer::inner ? "inner" : "outer"; }

namespace {

Protocol protocol_from(const std::string& v) {
  if (v == "one_pass") return Protocol::one_pass;
  if (v == "multi_pass") return Protocol::multi_pass;
  throw ConfigError("protocol must be one_pass or multi_pass, got '" + v + "'");
}
Strategy strategy_from(const std::string& v) {
  if (v == "filtered") return Strategy::filtered;
  if (v == "no_filter") return Strategy::no_filter;
  if (v == "soft_assignment") return Strategy::soft_assignment;
  throw ConfigError("strategy must be filtered, no_filter or soft_assignment, got '" + v + "'");
}
AnchorMode anchor_mode_from(const std::string& v) {
  if (v == "source_stats") return AnchorMode::source_stats;
  if (v == "classifier_prototypes") return AnchorMode::classifier_prototypes;
  throw ConfigError("anchor_mode must be source_stats or classifier_prototypes, got '" + v + "'");
}
KlForm kl_form_from(const std::string& v) {
  if (v == "standard") return KlForm::standard;
  if (v == "paper_printed") return KlForm::paper_printed;
  throw ConfigError("kl_form must be standard or paper_printed, got '" + v + "'");
}
GaForm ga_form_from(const std::string& v) {
  if (v == "kld") return GaForm::kld;
  if (v == "l2") return GaForm::l2;
  throw ConfigError("ga_form must be kld or l2, got '" + v + "'");
}
CountPer count_per_from(const std::string& v) {
  if (v == "inner") return CountPer::inner;
  if (v == "outer") return CountPer::outer;
  throw ConfigError("count_per must be inner or outer, got '" + v + "'");
}

}  // namespace

EngineConfig apply_config_pairs(EngineConfig base,
                                const std::map<std::string, std::string>& pairs) {
  for (const auto& [key, value] : pairs) {
    if (key == "batch_size") base.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "queue_capacity") base.queue_capacity = static_cast<int>(parse_int(key, value));
    else if (key == "inner_epochs") base.inner_epochs = static_cast<int>(parse_int(key, value));
    else if (key == "ema_xi") base.ema_xi = parse_double(key, value);
    else if (key == "tau_tc") base.tau_tc = parse_double(key, value);
    else if (key == "tau_pp") base.tau_pp = parse_double(key, value);
    else if (key == "clip_global") base.clip_global = parse_int(key, value);
    else if (key == "clip_cluster") base.clip_cluster = parse_int(key, value);
    else if (key == "lambda_global") base.lambda_global = parse_double(key, value);
    else if (key == "lr") base.lr = parse_double(key, value);
    else if (key == "momentum") base.momentum = parse_double(key, value);
    else if (key == "seed") base.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "protocol") base.protocol = protocol_from(value);
    else if (key == "passes") base.passes = static_cast<int>(parse_int(key, value));
    else if (key == "strategy") base.strategy = strategy_from(value);
    else if (key == "anchor_mode") base.anchor_mode = anchor_mode_from(value);
    else if (key == "kl_form") base.kl_form = kl_form_from(value);
    else if (key == "ga_form") base.ga_form = ga_form_from(value);
    else if (key == "count_per") base.count_per = count_per_from(value);
    else if (key == "freeze_head") base.freeze_head = parse_bool(key, value);
    else if (key == "ridge") base.ridge = parse_double(key, value);
    else if (key == "prototype_cov_scale") base.prototype_cov_scale = parse_double(key, value);
    else if (key == "adapt") base.adapt = parse_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  base.validate();
  return base;
}

std::map<std::string, std::string> config_to_map(const EngineConfig& config) {
  std::map<std::string, std::string> m;
  m["batch_size"] = std::to_string(config.batch_size);
  m["queue_capacity"] = std::to_string(config.queue_capacity);
  m["inner_epochs"] = std::to_string(config.inner_epochs);
  m["ema_xi"] = format_double(config.ema_xi);
  m["tau_tc"] = format_double(config.tau_tc);
  m["tau_pp"] = format_double(config.tau_pp);
  m["clip_global"] = std::to_string(config.clip_global);
  m["clip_cluster"] = std::to_string(config.clip_cluster);
  m["lambda_global"] = format_double(config.lambda_global);
  m["lr"] = format_double(config.lr);
  m["momentum"] = format_double(config.momentum);
  m["seed"] = std::to_string(config.seed);
  m["protocol"] = to_string(config.protocol);
  m["passes"] = std::to_string(config.passes);
  m["strategy"] = to_string(config.strategy);
  m["anchor_mode"] = to_string(config.anchor_mode);
  m["kl_form"] = to_string(config.kl_form);
  m["ga_form"] = to_string(config.ga_form);
  m["count_per"] = to_string(config.count_per);
  m["freeze_head"] = config.freeze_head ? "true" : "false";
  m["ridge"] = format_double(config.ridge);
  m["prototype_cov_scale"] = format_double(config.prototype_cov_scale);
  m["adapt"] = config.adapt ? "true" : "false";
  return m;
}

}  // namespace anchorstream
