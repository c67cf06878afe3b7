#include "fednnu/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fednnu/error.hpp"

namespace fednnu {
namespace {

using json = nlohmann::json;

json parse(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Reads fields out of one JSON object, tracking which keys were consumed so
// leftovers can be reported.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(key, "required field is missing");
    return j_.at(key);
  }

  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const std::string where = key.empty() ? (path_.empty() ? std::string("config") : path_) : at(key.c_str());
    throw ConfigError(where + ": " + what);
  }

  std::uint64_t u64(const char* key, std::uint64_t max = std::numeric_limits<std::uint64_t>::max()) {
    const json& v = raw(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      fail(key, "expected a non-negative integer");
    }
    const auto x = v.get<std::uint64_t>();
    if (x > max) fail(key, "value " + std::to_string(x) + " out of range");
    return x;
  }
  std::uint32_t u32(const char* key) {
    return static_cast<std::uint32_t>(u64(key, std::numeric_limits<std::uint32_t>::max()));
  }
  double num(const char* key) {
    const json& v = raw(key);
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }
  bool boolean(const char* key) {
    const json& v = raw(key);
    if (!v.is_boolean()) fail(key, "expected true or false");
    return v.get<bool>();
  }
  std::string str(const char* key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }
  template <typename T>
  std::array<T, 2> pair(const char* key) {
    const json& v = raw(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      fail(key, "expected a 2-element numeric array");
    }
    if constexpr (std::is_integral_v<T>) {
      for (const auto& e : v) {
        if (!e.is_number_unsigned() || e.get<std::uint64_t>() > std::numeric_limits<T>::max()) {
          fail(key, "expected non-negative integers");
        }
      }
    }
    return {v[0].get<T>(), v[1].get<T>()};
  }

  // Throws on keys that were never read.
  void done() const {
    for (const auto& [k, _] : j_.items()) {
      if (seen_.count(k) == 0) fail(k, "unknown field");
    }
  }

  template <typename F>
  auto optional(const char* key, F&& read, decltype(read()) fallback) {
    seen_.insert(key);
    return has(key) ? read() : fallback;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json spacing_json(const Spacing& s) { return json::array({s[0], s[1]}); }

json center_json(const SyntheticCenterSpec& s) {
  return json{{"center_id", s.center_id},
              {"image_size", json::array({s.image_size[0], s.image_size[1]})},
              {"spacing", spacing_json(s.spacing)},
              {"intensity_bias", s.intensity_bias},
              {"noise_std", s.noise_std},
              {"num_cases", s.num_cases},
              {"seed", s.seed}};
}

SyntheticCenterSpec read_center(Fields& f, const std::string& path) {
  SyntheticCenterSpec s;
  s.center_id = f.u32("center_id");
  s.image_size = f.pair<std::uint32_t>("image_size");
  s.spacing = f.optional("spacing", [&] { return f.pair<double>("spacing"); }, Spacing{1.0, 1.0});
  s.intensity_bias = f.optional("intensity_bias", [&] { return f.num("intensity_bias"); }, 0.0);
  s.noise_std = f.optional("noise_std", [&] { return f.num("noise_std"); }, 0.0);
  s.num_cases = f.u32("num_cases");
  s.seed = f.optional("seed", [&] { return f.u64("seed"); }, std::uint64_t{0});
  with_path(path, [&] {
    s.validate();
    return 0;
  });
  return s;
}

json plan_json(const TrainingPlan& p) {
  return json{{"target_spacing", spacing_json(p.target_spacing)},
              {"patch_size", json::array({p.patch_size[0], p.patch_size[1]})},
              {"num_stages", p.num_stages},
              {"features_per_stage", p.features_per_stage},
              {"batch_size", p.batch_size},
              {"intensity_mean", p.intensity_mean},
              {"intensity_std", p.intensity_std}};
}

DistanceUnits units_from_string(Fields& f, const char* key) {
  const std::string s = f.str(key);
  if (s == "pixels") return DistanceUnits::Pixels;
  if (s == "mm") return DistanceUnits::Physical;
  f.fail(key, "expected \"pixels\" or \"mm\", got \"" + s + "\"");
}

std::uint64_t read_budget(Fields& f) {
  const std::uint64_t mib = f.u64("memory_budget_mib", std::numeric_limits<std::uint64_t>::max() / kMiB);
  if (mib == 0) f.fail("memory_budget_mib", "must be positive");
  return mib * kMiB;
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string fingerprint_to_json(const NodeFingerprint& fp) {
  const Fingerprint& f = fp.fingerprint;
  json shapes = json::array();
  for (const auto& s : f.shapes_after_crop) shapes.push_back(json::array({s[0], s[1]}));
  json spacings = json::array();
  for (const auto& s : f.spacings) spacings.push_back(spacing_json(s));
  return dump(json{{"node_id", fp.node_id},
                   {"num_cases", f.num_cases},
                   {"shapes_after_crop", shapes},
                   {"spacings", spacings},
                   {"intensity_mean", f.intensity_mean},
                   {"intensity_std", f.intensity_std}});
}

NodeFingerprint fingerprint_from_json(std::string_view text) {
  const json j = parse(text);
  Fields f(j, "");
  NodeFingerprint out;
  out.node_id = f.u32("node_id");
  Fingerprint& fp = out.fingerprint;
  fp.num_cases = f.u32("num_cases");
  fp.intensity_mean = f.num("intensity_mean");
  fp.intensity_std = f.num("intensity_std");
  const json& shapes = f.raw("shapes_after_crop");
  const json& spacings = f.raw("spacings");
  if (!shapes.is_array()) f.fail("shapes_after_crop", "expected an array");
  if (!spacings.is_array()) f.fail("spacings", "expected an array");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const json& s = shapes[i];
    if (!s.is_array() || s.size() != 2 || !s[0].is_number_unsigned() || !s[1].is_number_unsigned()) {
      f.fail("shapes_after_crop[" + std::to_string(i) + "]", "expected [h, w]");
    }
    fp.shapes_after_crop.push_back({s[0].get<std::uint32_t>(), s[1].get<std::uint32_t>()});
  }
  for (std::size_t i = 0; i < spacings.size(); ++i) {
    const json& s = spacings[i];
    if (!s.is_array() || s.size() != 2 || !s[0].is_number() || !s[1].is_number()) {
      f.fail("spacings[" + std::to_string(i) + "]", "expected [sy, sx]");
    }
    fp.spacings.push_back({s[0].get<double>(), s[1].get<double>()});
  }
  f.done();
  with_path("fingerprint", [&] {
    fp.validate();
    return 0;
  });
  return out;
}

std::string plan_to_json(const TrainingPlan& plan) { return dump(plan_json(plan)); }

TrainingPlan plan_from_json(std::string_view text) {
  const json j = parse(text);
  Fields f(j, "");
  TrainingPlan p;
  p.target_spacing = f.pair<double>("target_spacing");
  p.patch_size = f.pair<std::uint32_t>("patch_size");
  p.num_stages = f.u32("num_stages");
  const json& feats = f.raw("features_per_stage");
  if (!feats.is_array()) f.fail("features_per_stage", "expected an array");
  for (const auto& v : feats) {
    if (!v.is_number_unsigned()) f.fail("features_per_stage", "expected non-negative integers");
    p.features_per_stage.push_back(v.get<std::uint32_t>());
  }
  p.batch_size = f.u32("batch_size");
  p.intensity_mean = f.num("intensity_mean");
  p.intensity_std = f.num("intensity_std");
  f.done();
  with_path("plan", [&] {
    p.validate();
    return 0;
  });
  return p;
}

std::string center_spec_to_json(const SyntheticCenterSpec& spec) { return dump(center_json(spec)); }

SyntheticCenterSpec center_spec_from_json(std::string_view text) {
  const json j = parse(text);
  Fields f(j, "");
  SyntheticCenterSpec s = read_center(f, "center");
  f.done();
  return s;
}

ExperimentConfig config_from_json(std::string_view text) {
  const json j = parse(text);
  Fields f(j, "");
  ExperimentConfig c;

  if (f.has("arm") && f.has("arms")) f.fail("arms", "give either arm or arms, not both");
  auto read_arm = [&](const json& v, const std::string& key) {
    if (!v.is_string()) f.fail(key, "expected an arm name");
    try {
      return arm_from_string(v.get<std::string>());
    } catch (const Error& e) {
      f.fail(key, e.what());
    }
  };
  if (f.has("arm")) {
    c.arms = {read_arm(f.raw("arm"), "arm")};
  } else if (f.has("arms")) {
    const json& arms = f.raw("arms");
    if (!arms.is_array()) f.fail("arms", "expected an array of arm names");
    c.arms.clear();
    for (std::size_t i = 0; i < arms.size(); ++i) c.arms.push_back(read_arm(arms[i], "arms[" + std::to_string(i) + "]"));
  }

  const json& centers = f.raw("centers");
  if (!centers.is_array()) f.fail("centers", "expected an array of center objects");
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const std::string path = "centers[" + std::to_string(i) + "]";
    Fields cf(centers[i], path);
    c.centers.push_back(read_center(cf, path));
    c.budgets.push_back(cf.optional("memory_budget_mib", [&] { return read_budget(cf); }, 8 * kGiB));
    cf.done();
  }

  c.rounds = f.optional("rounds", [&] { return f.u32("rounds"); }, c.rounds);
  c.lr = f.optional("lr", [&] { return f.num("lr"); }, c.lr);
  c.seed = f.optional("seed", [&] { return f.u64("seed"); }, c.seed);
  if (f.has("matching")) {
    try {
      c.matching = match_mode_from_string(f.str("matching"));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      f.fail("matching", e.what());
    }
  }
  c.weighted = f.optional("weighted", [&] { return f.boolean("weighted"); }, c.weighted);
  if (f.has("shared_init")) c.shared_init = f.boolean("shared_init");
  c.epochs_per_round = f.optional("epochs_per_round", [&] { return f.u32("epochs_per_round"); }, c.epochs_per_round);
  c.test_fraction = f.optional("test_fraction", [&] { return f.num("test_fraction"); }, c.test_fraction);
  if (f.has("transport")) {
    try {
      c.transport = carrier_from_string(f.str("transport"));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      f.fail("transport", e.what());
    }
  }
  c.address = f.optional("address", [&] { return f.str("address"); }, c.address);
  if (f.has("latency")) {
    Fields lf(f.raw("latency"), "latency");
    c.latency.seed = lf.optional("seed", [&] { return lf.u64("seed"); }, std::uint64_t{0});
    c.latency.max_delay = lf.optional("max_delay", [&] { return lf.u32("max_delay"); }, std::uint32_t{0});
    lf.done();
  }
  if (f.has("hd95_units")) c.hd95_units = units_from_string(f, "hd95_units");
  c.output = f.optional("output", [&] { return f.str("output"); }, c.output);
  c.timeout_s = f.optional("timeout_s", [&] { return f.u32("timeout_s"); }, c.timeout_s);
  f.done();
  c.validate();
  return c;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json arms = json::array();
  for (Arm a : cfg.arms) arms.push_back(to_string(a));
  json centers = json::array();
  for (std::size_t i = 0; i < cfg.centers.size(); ++i) {
    json c = center_json(cfg.centers[i]);
    c["memory_budget_mib"] = cfg.budget_for(cfg.centers[i].center_id) / kMiB;
    centers.push_back(c);
  }
  json j{{"arms", arms},
         {"centers", centers},
         {"rounds", cfg.rounds},
         {"lr", cfg.lr},
         {"seed", cfg.seed},
         {"matching", to_string(cfg.matching)},
         {"weighted", cfg.weighted},
         {"epochs_per_round", cfg.epochs_per_round},
         {"test_fraction", cfg.test_fraction},
         {"transport", to_string(cfg.transport)},
         {"address", cfg.address},
         {"latency", {{"seed", cfg.latency.seed}, {"max_delay", cfg.latency.max_delay}}},
         {"hd95_units", to_string(cfg.hd95_units)},
         {"output", cfg.output},
         {"timeout_s", cfg.timeout_s}};
  if (cfg.shared_init) j["shared_init"] = *cfg.shared_init;
  return dump(j);
}

ServeConfig serve_config_from_json(std::string_view text) {
  const json j = parse(text);
  Fields f(j, "");
  ServeConfig s;
  const std::string strategy = f.str("strategy");
  if (strategy == "ffe") {
    s.federation.strategy = Strategy::FfeFedAvg;
  } else if (strategy == "asym") {
    s.federation.strategy = Strategy::AsymFedAvg;
  } else {
    f.fail("strategy", "expected \"ffe\" or \"asym\", got \"" + strategy + "\"");
  }
  s.federation.expected_nodes = f.u32("expected_nodes");
  if (s.federation.expected_nodes == 0) f.fail("expected_nodes", "must be >= 1");
  s.federation.total_rounds = f.u32("rounds");
  if (f.has("matching")) {
    try {
      s.federation.matching = match_mode_from_string(f.str("matching"));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      f.fail("matching", e.what());
    }
  }
  s.federation.weighted = f.optional("weighted", [&] { return f.boolean("weighted"); }, false);
  const std::uint32_t timeout = f.optional("timeout_s", [&] { return f.u32("timeout_s"); }, std::uint32_t{600});
  if (timeout == 0) f.fail("timeout_s", "must be >= 1");
  s.federation.timeout = Millis(std::uint64_t{timeout} * 1000);
  s.address = f.optional("address", [&] { return f.str("address"); }, s.address);
  f.done();
  return s;
}

NodeConfig node_config_from_json(std::string_view text) {
  const json j = parse(text);
  Fields f(j, "");
  NodeConfig n;
  Fields cf(f.raw("center"), "center");
  n.center = read_center(cf, "center");
  n.memory_budget = cf.optional("memory_budget_mib", [&] { return read_budget(cf); }, n.memory_budget);
  cf.done();
  n.lr = f.optional("lr", [&] { return f.num("lr"); }, n.lr);
  if (!std::isfinite(n.lr) || n.lr < 0.0) f.fail("lr", "must be finite and >= 0");
  n.seed = f.optional("seed", [&] { return f.u64("seed"); }, n.seed);
  n.shared_init = f.optional("shared_init", [&] { return f.boolean("shared_init"); }, n.shared_init);
  n.epochs_per_round = f.optional("epochs_per_round", [&] { return f.u32("epochs_per_round"); }, n.epochs_per_round);
  if (n.epochs_per_round == 0) f.fail("epochs_per_round", "must be >= 1");
  n.test_fraction = f.optional("test_fraction", [&] { return f.num("test_fraction"); }, n.test_fraction);
  if (!(n.test_fraction > 0.0 && n.test_fraction < 1.0)) f.fail("test_fraction", "must be in (0, 1)");
  if (f.has("hd95_units")) n.hd95_units = units_from_string(f, "hd95_units");
  n.timeout_s = f.optional("timeout_s", [&] { return f.u32("timeout_s"); }, n.timeout_s);
  if (n.timeout_s == 0) f.fail("timeout_s", "must be >= 1");
  f.done();
  return n;
}

std::string report_to_json(const MetricsReport& report) {
  json arms = json::array();
  for (const auto& a : report.arms) {
    json centers = json::array();
    for (const auto& c : a.centers) {
      json hd = c.eval.hd95_undefined == c.eval.n_eval ? json(nullptr) : json(c.eval.hd95);
      centers.push_back(json{{"center_id", c.center_id},
                             {"dsc", c.eval.dsc},
                             {"hd95", hd},
                             {"hd95_undefined", c.eval.hd95_undefined},
                             {"n_eval", c.eval.n_eval}});
    }
    json plans = json::array();
    for (const auto& [id, p] : a.plans) {
      json pj = plan_json(p);
      pj["node_id"] = id;
      plans.push_back(pj);
    }
    arms.push_back(json{{"arm", to_string(a.arm)},
                        {"mean_dsc", a.mean_dsc()},
                        {"messages_sent", a.messages_sent},
                        {"centers", centers},
                        {"plans", plans}});
  }
  return dump(json{{"rounds", report.rounds},
                   {"seed", report.seed},
                   {"hd95_units", to_string(report.units)},
                   {"arms", arms}});
}

std::string report_to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "center_id";
  for (const auto& a : report.arms) os << "," << to_string(a.arm) << "_dsc," << to_string(a.arm) << "_hd95";
  os << ",best_privacy_preserving\n";

  std::vector<NodeId> ids;
  if (!report.arms.empty()) {
    for (const auto& c : report.arms.front().centers) ids.push_back(c.center_id);
  }
  auto best = [&](auto&& dsc_of) {
    std::string name = "-";
    double top = -1.0;
    for (const auto& a : report.arms) {
      if (a.arm == Arm::Centralized) continue;
      const double d = dsc_of(a);
      if (d > top) {
        top = d;
        name = to_string(a.arm);
      }
    }
    return name;
  };
  for (NodeId id : ids) {
    os << id;
    for (const auto& a : report.arms) {
      const auto& c = a.center(id);
      os << "," << fixed(c.eval.dsc) << ",";
      if (c.eval.hd95_undefined == c.eval.n_eval) {
        os << "nan";
      } else {
        os << fixed(c.eval.hd95);
      }
    }
    os << "," << best([&](const ArmResult& a) { return a.center(id).eval.dsc; }) << "\n";
  }
  os << "mean";
  for (const auto& a : report.arms) {
    double hd = 0.0;
    std::size_t n = 0;
    for (const auto& c : a.centers) {
      if (c.eval.hd95_undefined != c.eval.n_eval) {
        hd += c.eval.hd95;
        ++n;
      }
    }
    os << "," << fixed(a.mean_dsc()) << "," << (n ? fixed(hd / static_cast<double>(n)) : std::string("nan"));
  }
  os << "," << best([](const ArmResult& a) { return a.mean_dsc(); }) << "\n";
  return os.str();
}

}  // namespace fednnu
