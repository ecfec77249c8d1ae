#include "cdnet/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

namespace cdnet {

bool operator==(const PathConfig& a, const PathConfig& b) {
  return a.data == b.data && a.out == b.out && a.ckpt == b.ckpt;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.base_dim == b.base_dim && a.stage_depths == b.stage_depths &&
         a.stage_heads == b.stage_heads && a.window == b.window &&
         a.decoder_depth == b.decoder_depth && a.pool_sizes == b.pool_sizes &&
         a.input_h == b.input_h && a.input_w == b.input_w &&
         a.rel_bias == b.rel_bias && a.head_kind == b.head_kind;
}

bool operator==(const LossConfig& a, const LossConfig& b) {
  return a.boundary_weight == b.boundary_weight &&
         a.ssim_patch == b.ssim_patch && a.ssim_eps == b.ssim_eps &&
         a.alpha == b.alpha && a.prob_clamp == b.prob_clamp;
}

bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.lr0 == b.lr0 && a.momentum == b.momentum &&
         a.weight_decay == b.weight_decay && a.batch == b.batch &&
         a.epochs == b.epochs && a.lr_step == b.lr_step &&
         a.lr_factor == b.lr_factor && a.head_lr_mult == b.head_lr_mult &&
         a.lr_mode == b.lr_mode && a.seed == b.seed;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.model == b.model && a.loss == b.loss && a.train == b.train &&
         a.paths == b.paths;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = v.empty() ? 0.0 : std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    throw DataError("config key '" + key + "': bad number '" + v + "'");
  return d;
}

int64_t to_i64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long d = v.empty() ? 0 : std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw DataError("config key '" + key + "': bad integer '" + v + "'");
  return d;
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  if (v.empty() || v[0] == '-')
    throw DataError("config key '" + key + "': bad unsigned '" + v + "'");
  const unsigned long long d = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size())
    throw DataError("config key '" + key + "': bad unsigned '" + v + "'");
  return d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw DataError("config key '" + key + "': expected true or false, got '" +
                  v + "'");
}

std::vector<std::string> split_commas(const std::string& key,
                                      const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (cur.empty())
      throw DataError("config key '" + key + "': empty list entry in '" + v +
                      "'");
    out.push_back(cur);
  }
  return out;
}

template <typename T, typename Fmt>
std::string join(const T& xs, Fmt fmt) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ",";
    out += fmt(x);
  }
  return out;
}

struct Binding {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Field access goes through one mutable-reference accessor per key; get()
// borrows it via const_cast for read-only formatting.
const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    std::vector<Binding> v;
    auto field = [](auto ref, const RunConfig& c) -> decltype(auto) {
      return ref(const_cast<RunConfig&>(c));
    };
    auto add_double = [&](const char* key, auto ref) {
      v.push_back({key,
                   [=](const RunConfig& c) { return fmt_double(field(ref, c)); },
                   [=](RunConfig& c, const std::string& s) {
                     ref(c) = to_double(key, s);
                   }});
    };
    auto add_int = [&](const char* key, auto ref) {
      v.push_back({key,
                   [=](const RunConfig& c) {
                     return std::to_string(field(ref, c));
                   },
                   [=](RunConfig& c, const std::string& s) {
                     ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(
                         to_i64(key, s));
                   }});
    };
    auto add_bool = [&](const char* key, auto ref) {
      v.push_back({key,
                   [=](const RunConfig& c) {
                     return field(ref, c) ? std::string("true")
                                          : std::string("false");
                   },
                   [=](RunConfig& c, const std::string& s) {
                     ref(c) = to_bool(key, s);
                   }});
    };
    auto add_string = [&](const char* key, auto ref) {
      v.push_back({key,
                   [=](const RunConfig& c) { return field(ref, c); },
                   [=](RunConfig& c, const std::string& s) { ref(c) = s; }});
    };
    auto add_ints = [&](const char* key, auto ref) {
      v.push_back({key,
                   [=](const RunConfig& c) {
                     return join(field(ref, c),
                                 [](int x) { return std::to_string(x); });
                   },
                   [=](RunConfig& c, const std::string& s) {
                     std::vector<int> xs;
                     for (const auto& tok : split_commas(key, s))
                       xs.push_back(static_cast<int>(to_i64(key, tok)));
                     ref(c) = xs;
                   }});
    };
    auto add_doubles5 = [&](const char* key, auto ref) {
      v.push_back({key,
                   [=](const RunConfig& c) {
                     return join(field(ref, c), fmt_double);
                   },
                   [=](RunConfig& c, const std::string& s) {
                     const auto toks = split_commas(key, s);
                     if (toks.size() != 5)
                       throw DataError("config key '" + std::string(key) +
                                       "': expected 5 entries, got " +
                                       std::to_string(toks.size()));
                     for (size_t i = 0; i < 5; ++i)
                       ref(c)[i] = to_double(key, toks[i]);
                   }});
    };

    add_int("model.base_dim",
            [](RunConfig& c) -> int64_t& { return c.model.base_dim; });
    add_ints("model.stage_depths",
             [](RunConfig& c) -> std::vector<int>& { return c.model.stage_depths; });
    add_ints("model.stage_heads",
             [](RunConfig& c) -> std::vector<int>& { return c.model.stage_heads; });
    add_int("model.window", [](RunConfig& c) -> int& { return c.model.window; });
    add_int("model.decoder_depth",
            [](RunConfig& c) -> int& { return c.model.decoder_depth; });
    add_ints("model.pool_sizes",
             [](RunConfig& c) -> std::vector<int>& { return c.model.pool_sizes; });
    add_int("model.input_h",
            [](RunConfig& c) -> int64_t& { return c.model.input_h; });
    add_int("model.input_w",
            [](RunConfig& c) -> int64_t& { return c.model.input_w; });
    add_bool("model.rel_bias",
             [](RunConfig& c) -> bool& { return c.model.rel_bias; });
    add_string("model.head_kind",
               [](RunConfig& c) -> std::string& { return c.model.head_kind; });

    add_double("loss.boundary_weight",
               [](RunConfig& c) -> double& { return c.loss.boundary_weight; });
    add_int("loss.ssim_patch",
            [](RunConfig& c) -> int& { return c.loss.ssim_patch; });
    add_double("loss.ssim_eps",
               [](RunConfig& c) -> double& { return c.loss.ssim_eps; });
    add_doubles5("loss.alpha", [](RunConfig& c) -> std::array<double, 5>& {
      return c.loss.alpha;
    });
    add_double("loss.prob_clamp",
               [](RunConfig& c) -> double& { return c.loss.prob_clamp; });

    add_double("train.lr0", [](RunConfig& c) -> double& { return c.train.lr0; });
    add_double("train.momentum",
               [](RunConfig& c) -> double& { return c.train.momentum; });
    add_double("train.weight_decay",
               [](RunConfig& c) -> double& { return c.train.weight_decay; });
    add_int("train.batch", [](RunConfig& c) -> int& { return c.train.batch; });
    add_int("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
    add_int("train.lr_step",
            [](RunConfig& c) -> int& { return c.train.lr_step; });
    add_double("train.lr_factor",
               [](RunConfig& c) -> double& { return c.train.lr_factor; });
    add_double("train.head_lr_mult",
               [](RunConfig& c) -> double& { return c.train.head_lr_mult; });
    v.push_back(
        {"train.lr_mode",
         [](const RunConfig& c) {
           return std::string(c.train.lr_mode == LrMode::kInitial ? "initial"
                                                                  : "compound");
         },
         [](RunConfig& c, const std::string& s) {
           if (s == "compound")
             c.train.lr_mode = LrMode::kCompound;
           else if (s == "initial")
             c.train.lr_mode = LrMode::kInitial;
           else
             throw DataError(
                 "config key 'train.lr_mode': expected compound or initial, "
                 "got '" +
                 s + "'");
         }});
    v.push_back({"train.seed",
                 [](const RunConfig& c) { return std::to_string(c.train.seed); },
                 [](RunConfig& c, const std::string& s) {
                   c.train.seed = to_u64("train.seed", s);
                 }});

    add_string("paths.data",
               [](RunConfig& c) -> std::string& { return c.paths.data; });
    add_string("paths.out",
               [](RunConfig& c) -> std::string& { return c.paths.out; });
    add_string("paths.ckpt",
               [](RunConfig& c) -> std::string& { return c.paths.ckpt; });
    return v;
  }();
  return table;
}

const Binding& binding_for(const std::string& key) {
  static const std::map<std::string, const Binding*> index = [] {
    std::map<std::string, const Binding*> m;
    for (const auto& b : bindings()) m[b.key] = &b;
    return m;
  }();
  const auto it = index.find(key);
  if (it == index.end()) throw DataError("unknown config key '" + key + "'");
  return *it->second;
}

}  // namespace

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& b : bindings()) out += b.key + " = " + b.get(cfg) + "\n";
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("config line " + std::to_string(lineno) +
                      ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw DataError("config line " + std::to_string(lineno) + ": empty key");
    binding_for(key).set(cfg, value);
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw DataError("override '" + assignment + "': expected key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  binding_for(key).set(cfg, value);
}

}  // namespace cdnet
