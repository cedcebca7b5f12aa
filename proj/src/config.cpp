#include "mglow/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "mglow/errors.hpp"

namespace mglow {

namespace {

enum class Kind { Int, U64, Real, Bool, Enum, Grid, IntList, Text };

struct KeySpec {
  const char* key;
  const char* def;
  Kind kind;
  double lo = -INFINITY, hi = INFINITY;
  std::vector<std::string> choices = {};
};

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s = {
      {"source.manifold", "spd", Kind::Enum, 0, 0, {"sphere", "positive_reals", "spd"}},
      {"source.n", "3", Kind::Int, 1, 4096},
      {"source.chart", "default", Kind::Enum, 0, 0, {"default", "pole_log", "scalar_log", "cholesky", "matrix_log"}},
      {"source.pole", "uniform", Kind::Enum, 0, 0, {"uniform", "first"}},
      {"target.manifold", "sphere", Kind::Enum, 0, 0, {"sphere", "positive_reals", "spd"}},
      {"target.n", "12", Kind::Int, 1, 4096},
      {"target.chart", "default", Kind::Enum, 0, 0, {"default", "pole_log", "scalar_log", "cholesky", "matrix_log"}},
      {"target.pole", "uniform", Kind::Enum, 0, 0, {"uniform", "first"}},
      {"data.generator", "paired", Kind::Enum, 0, 0, {"paired", "texture"}},
      {"data.grid", "4x4x4", Kind::Grid},
      {"data.count", "80", Kind::Int, 2, 1e7},
      {"data.train_fraction", "0.8", Kind::Real, 0, 1},
      {"data.noise", "0.02", Kind::Real, 0, 10},
      {"data.smoothness", "0.5", Kind::Real, 0, 1},
      {"data.spread", "0.5", Kind::Real, 0, 5},
      {"data.plant", "true", Kind::Bool},
      {"data.plant_effect", "3", Kind::Real, 0, 100},
      {"data.seed", "1", Kind::U64},
      {"data.dir", "", Kind::Text},
      {"arch.levels", "2", Kind::Int, 1, 16},
      {"arch.blocks_per_level", "2", Kind::Int, 1, 64},
      {"arch.squeeze", "true", Kind::Bool},
      {"arch.hidden", "64,64", Kind::IntList},
      {"arch.coupling", "channel", Kind::Enum, 0, 0, {"channel", "slice"}},
      {"arch.tau", "1", Kind::Int, 1, 1024},
      {"arch.share", "true", Kind::Bool},
      {"arch.actnorm", "channel", Kind::Enum, 0, 0, {"channel", "location"}},
      {"arch.scale_bound", "3", Kind::Real, 1e-3, 50},
      {"arch.conv_init", "1", Kind::Real, 0, 100},
      {"arch.sigma0", "0", Kind::Real, 0, 100},
      {"arch.transfer_hidden", "128", Kind::Int, 1, 65536},
      {"arch.transfer_blocks", "3", Kind::Int, 0, 64},
      {"optim.lr", "0.001", Kind::Real, 0, 10},
      {"optim.beta1", "0.9", Kind::Real, 0, 1},
      {"optim.beta2", "0.999", Kind::Real, 0, 1},
      {"optim.eps", "1e-8", Kind::Real, 0, 1},
      {"optim.clip", "100", Kind::Real, 0, 1e12},
      {"train.steps", "2000", Kind::Int, 0, 1e9},
      {"train.batch", "8", Kind::Int, 1, 1e6},
      {"train.init_batch", "32", Kind::Int, 1, 1e6},
      {"train.checkpoint_every", "500", Kind::Int, 0, 1e9},
      {"train.source_weight", "1", Kind::Real, 0, 1e6},
      {"train.target_weight", "1", Kind::Real, 0, 1e6},
      {"train.detach_source", "false", Kind::Bool},
      {"train.boundary_weight", "10", Kind::Real, 0, 1e9},
      {"train.boundary_fraction", "0.5", Kind::Real, 0.01, 0.99},
      {"eval.n_perm", "1000", Kind::Int, 100, 1e8},
      {"eval.alpha", "0.05", Kind::Real, 0, 1},
      {"eval.k", "0", Kind::Int, 0, 1e6},
      {"eval.subsets", "10", Kind::Int, 1, 1e6},
      {"eval.dominance_threshold", "0.8", Kind::Real, 0, 1},
      {"eval.recon_ratio_threshold", "0.7", Kind::Real, 0, 1e6},
      {"eval.bh", "false", Kind::Bool},
      {"gen.temperature", "0", Kind::Real, 0, 100},
      {"gen.checkpoint", "", Kind::Text},
      {"gen.repeats", "1", Kind::Int, 1, 1e6},
      {"gen.split", "test", Kind::Enum, 0, 0, {"train", "test", "all"}},
      {"run.seed", "1", Kind::U64},
      {"run.threads", "0", Kind::Int, 0, 4096},
      {"run.out", "run", Kind::Text},
      {"check.fault", "none", Kind::Enum, 0, 0, {"none", "no_scale_clamp"}},
  };
  return s;
}

const KeySpec& spec_of(const std::string& key) {
  for (const auto& k : schema())
    if (key == k.key) return k;
  throw ValidationError("unknown config key '" + key + "'");
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ValidationError("config key '" + key + "': invalid value '" + value + "' (" + why + ")");
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

void check_value(const KeySpec& k, const std::string& v) {
  switch (k.kind) {
    case Kind::Int: {
      long long x;
      if (!parse_number(v, x)) bad(k.key, v, "expected an integer");
      if (x < k.lo || x > k.hi) bad(k.key, v, "out of range");
      break;
    }
    case Kind::U64: {
      std::uint64_t x;
      if (!parse_number(v, x)) bad(k.key, v, "expected an unsigned 64-bit integer");
      break;
    }
    case Kind::Real: {
      double x;
      if (!parse_number(v, x) || !std::isfinite(x)) bad(k.key, v, "expected a finite number");
      if (x < k.lo || x > k.hi) bad(k.key, v, "out of range");
      break;
    }
    case Kind::Bool:
      if (v != "true" && v != "false") bad(k.key, v, "expected true or false");
      break;
    case Kind::Enum: {
      bool ok = false;
      std::string list;
      for (const auto& c : k.choices) {
        ok = ok || c == v;
        list += (list.empty() ? "" : ", ") + c;
      }
      if (!ok) bad(k.key, v, "expected one of " + list);
      break;
    }
    case Kind::Grid: {
      const auto parts = split(v, 'x');
      if (parts.empty() || parts.size() > 3) bad(k.key, v, "expected 1 to 3 extents like 4x4x4");
      for (const auto& p : parts) {
        int e;
        if (!parse_number(p, e) || e < 1) bad(k.key, v, "extents must be positive integers");
      }
      break;
    }
    case Kind::IntList: {
      if (v.empty()) break;
      for (const auto& p : split(v, ',')) {
        int e;
        if (!parse_number(trim(p), e) || e < 1) bad(k.key, v, "expected comma-separated positive integers");
      }
      break;
    }
    case Kind::Text:
      break;
  }
}

void flatten(const YAML::Node& node, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string k = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? k : prefix + "." + k, out);
    }
  } else if (node.IsSequence()) {
    // Sequences become comma lists, or "x"-joined for grids.
    const char sep = prefix == "data.grid" ? 'x' : ',';
    std::string joined;
    for (const auto& item : node) joined += (joined.empty() ? "" : std::string(1, sep)) + item.as<std::string>();
    out.emplace_back(prefix, joined);
  } else if (node.IsScalar()) {
    out.emplace_back(prefix, node.as<std::string>());
  } else if (node.IsNull()) {
    out.emplace_back(prefix, "");
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : schema()) values_[k.key] = k.def;
}

RunConfig RunConfig::from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("config is not valid YAML: ") + e.what());
  }
  RunConfig c;
  if (root.IsNull()) return c;
  if (!root.IsMap()) throw ValidationError("config must be a mapping of keys to values");
  std::vector<std::pair<std::string, std::string>> kv;
  flatten(root, "", kv);
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_yaml(ss.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec& k = spec_of(key);
  const std::string v = trim(value);
  check_value(k, v);
  values_[key] = v;
}

void RunConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError("override '" + assignment + "' must look like key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& RunConfig::get(const std::string& key) const {
  spec_of(key);
  return values_.at(key);
}

long long RunConfig::get_int(const std::string& key) const {
  long long x = 0;
  parse_number(get(key), x);
  return x;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t x = 0;
  parse_number(get(key), x);
  return x;
}

double RunConfig::get_real(const std::string& key) const {
  double x = 0;
  parse_number(get(key), x);
  return x;
}

bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

Extents RunConfig::get_grid(const std::string& key) const {
  Extents e;
  for (const auto& p : split(get(key), 'x')) {
    int x = 0;
    parse_number(p, x);
    e.push_back(x);
  }
  return e;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  if (get(key).empty()) return out;
  for (const auto& p : split(get(key), ',')) {
    int x = 0;
    parse_number(trim(p), x);
    out.push_back(x);
  }
  return out;
}

void RunConfig::validate() const {
  const std::string gen = get("data.generator");
  auto expect = [&](const std::string& key, const std::string& want) {
    if (get(key) != want)
      throw ValidationError("config key '" + key + "': generator '" + gen + "' needs " + want + ", got '" + get(key) +
                            "'");
  };
  if (gen == "paired") {
    expect("source.manifold", "spd");
    expect("target.manifold", "sphere");
    if (get_int("source.n") != 3) throw ValidationError("config key 'source.n': the paired generator produces Spd(3)");
    const auto n = get_int("target.n");
    if (n < 4 || n % 2 != 0)
      throw ValidationError("config key 'target.n': the paired generator needs an even direction count >= 4");
  } else {
    expect("source.manifold", "spd");
    expect("target.manifold", "positive_reals");
    if (get_int("source.n") != 3) throw ValidationError("config key 'source.n': the texture generator produces Spd(3)");
    const Extents g = get_grid("data.grid");
    if (g.size() != 2 || g[0] < 8 || g[1] < 8)
      throw ValidationError("config key 'data.grid': the texture generator needs a 2-D grid of at least 8x8");
  }
  for (const char* side : {"source", "target"}) {
    const std::string s(side);
    const std::string man = get(s + ".manifold"), chart = get(s + ".chart");
    const bool ok = chart == "default" || (man == "sphere" && chart == "pole_log") ||
                    (man == "positive_reals" && chart == "scalar_log") ||
                    (man == "spd" && (chart == "cholesky" || chart == "matrix_log"));
    if (!ok) throw ValidationError("config key '" + s + ".chart': chart '" + chart + "' does not fit " + man);
    if (man == "positive_reals" && get_int(s + ".n") != 1)
      throw ValidationError("config key '" + s + ".n': positive_reals has n = 1");
    if ((man == "sphere" || man == "spd") && get_int(s + ".n") < 2)
      throw ValidationError("config key '" + s + ".n': " + man + " needs n >= 2");
  }
  const double f = get_real("data.train_fraction");
  if (!(f > 0.0 && f < 1.0)) throw ValidationError("config key 'data.train_fraction': must lie strictly in (0, 1)");
  const double a = get_real("eval.alpha");
  if (!(a > 0.0 && a < 1.0)) throw ValidationError("config key 'eval.alpha': must lie strictly in (0, 1)");
  if (get_int_list("arch.hidden").empty()) throw ValidationError("config key 'arch.hidden': needs at least one width");
  if (get("run.out").empty()) throw ValidationError("config key 'run.out': output directory must be set");
}

std::string RunConfig::to_yaml() const {
  YAML::Emitter out;
  out << YAML::BeginMap;
  for (const auto& [k, v] : values_) out << YAML::Key << k << YAML::Value << v;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> k;
  for (const auto& s : schema()) k.push_back(s.key);
  return k;
}

}  // namespace mglow
