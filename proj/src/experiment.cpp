// Copyright 2026 The FedSketch Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedsketch/experiment.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "fedsketch/errors.hpp"

namespace fedsketch {
namespace {

namespace fs = std::filesystem;
using boost::property_tree::ptree;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Collects typed values from one section and records every failure.
class SectionReader {
 public:
  SectionReader(std::string section, std::vector<std::string>& errors)
      : section_(std::move(section)), errors_(errors) {}

  std::string name(const std::string& key) const { return section_ + "." + key; }

  void fail(const std::string& key, const std::string& message) {
    errors_.push_back(name(key) + ": " + message);
  }

  void read_int(const std::string& key, const std::string& raw, std::int64_t& out) {
    const std::string v = trim(raw);
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
      fail(key, "expected an integer, got '" + v + "'");
      return;
    }
    out = value;
  }

  void read_uint(const std::string& key, const std::string& raw, std::uint64_t& out) {
    const std::string v = trim(raw);
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
      fail(key, "expected a non-negative integer, got '" + v + "'");
      return;
    }
    out = value;
  }

  void read_double(const std::string& key, const std::string& raw, double& out) {
    const std::string v = trim(raw);
    char* end = nullptr;
    errno = 0;
    const double value = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(value)) {
      fail(key, "expected a finite number, got '" + v + "'");
      return;
    }
    out = value;
  }

  void read_bool(const std::string& key, const std::string& raw, bool& out) {
    const std::string v = lower(trim(raw));
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
      out = true;
    } else if (v == "false" || v == "0" || v == "no" || v == "off") {
      out = false;
    } else {
      fail(key, "expected a boolean, got '" + v + "'");
    }
  }

 private:
  std::string section_;
  std::vector<std::string>& errors_;
};

using Handler = std::function<void(SectionReader&, const std::string& key, const std::string&)>;
using HandlerTable = std::map<std::string, Handler>;

HandlerTable problem_handlers(ProblemSection& s) {
  return {
      {"family", [&s](SectionReader&, auto&, auto& v) { s.family = lower(trim(v)); }},
      {"d", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.d); }},
      {"n", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.n); }},
      {"n_per_device",
       [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.n_per_device); }},
      {"p", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.p); }},
      {"partition", [&s](SectionReader&, auto&, auto& v) { s.partition = lower(trim(v)); }},
      {"heterogeneity",
       [&s](SectionReader& r, auto& k, auto& v) { r.read_double(k, v, s.heterogeneity); }},
      {"cond", [&s](SectionReader& r, auto& k, auto& v) { r.read_double(k, v, s.cond); }},
      {"classes", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.classes); }},
      {"classes_per_device",
       [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.classes_per_device); }},
      {"separation",
       [&s](SectionReader& r, auto& k, auto& v) { r.read_double(k, v, s.separation); }},
      {"reg", [&s](SectionReader& r, auto& k, auto& v) { r.read_double(k, v, s.reg); }},
      {"csv_path", [&s](SectionReader&, auto&, auto& v) { s.csv_path = trim(v); }},
      {"seed", [&s](SectionReader& r, auto& k, auto& v) { r.read_uint(k, v, s.seed); }},
  };
}

HandlerTable fed_handlers(FedSection& s) {
  return {
      {"algorithm",
       [&s](SectionReader&, auto&, auto& v) {
         std::string a = trim(v);
         std::transform(a.begin(), a.end(), a.begin(),
                        [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
         s.algorithm = a;
       }},
      {"variant",
       [&s](SectionReader&, auto&, auto& v) {
         std::string a = trim(v);
         std::transform(a.begin(), a.end(), a.begin(),
                        [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
         s.variant = a;
       }},
      {"k",
       [&s](SectionReader& r, auto& k, auto& v) {
         std::int64_t value = 0;
         r.read_int(k, v, value);
         s.k = value;
       }},
      {"rounds", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.rounds); }},
      {"tau", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.tau); }},
      {"eta",
       [&s](SectionReader& r, auto& k, auto& v) {
         if (lower(trim(v)) == "auto") {
           s.eta.reset();
           return;
         }
         double value = 0.0;
         r.read_double(k, v, value);
         s.eta = value;
       }},
      {"gamma",
       [&s](SectionReader& r, auto& k, auto& v) {
         double value = 0.0;
         r.read_double(k, v, value);
         s.gamma = value;
       }},
      {"batch",
       [&s](SectionReader& r, auto& k, auto& v) {
         if (lower(trim(v)) == "full") {
           s.batch = 0;
           return;
         }
         r.read_int(k, v, s.batch);
       }},
      {"lr_regime", [&s](SectionReader&, auto&, auto& v) { s.lr_regime = lower(trim(v)); }},
      {"seed", [&s](SectionReader& r, auto& k, auto& v) { r.read_uint(k, v, s.seed); }},
      {"synchronized_batches",
       [&s](SectionReader& r, auto& k, auto& v) { r.read_bool(k, v, s.synchronized_batches); }},
      {"debug_checks",
       [&s](SectionReader& r, auto& k, auto& v) { r.read_bool(k, v, s.debug_checks); }},
  };
}

HandlerTable sketch_handlers(SketchSection& s) {
  return {
      {"m", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.m); }},
      {"t", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.t); }},
      {"heavy_budget",
       [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.heavy_budget); }},
      {"value_mode",
       [&s](SectionReader&, auto&, auto& v) {
         std::string a = trim(v);
         std::transform(a.begin(), a.end(), a.begin(),
                        [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
         s.value_mode = a;
       }},
  };
}

HandlerTable output_handlers(OutputSection& s) {
  return {
      {"dir", [&s](SectionReader&, auto&, auto& v) { s.dir = trim(v); }},
      {"name", [&s](SectionReader&, auto&, auto& v) { s.name = trim(v); }},
      {"wall_clock",
       [&s](SectionReader& r, auto& k, auto& v) { r.read_bool(k, v, s.wall_clock); }},
  };
}

HandlerTable privacy_handlers(PrivacySection& s) {
  return {
      {"l", [&s](SectionReader& r, auto& k, auto& v) { r.read_int(k, v, s.l); }},
      {"sigma", [&s](SectionReader& r, auto& k, auto& v) { r.read_double(k, v, s.sigma); }},
      {"C", [&s](SectionReader& r, auto& k, auto& v) { r.read_double(k, v, s.C); }},
      {"alpha", [&s](SectionReader& r, auto& k, auto& v) { r.read_double(k, v, s.alpha); }},
  };
}

void read_section(const std::string& section, const ptree& node, const HandlerTable& handlers,
                  std::set<std::string>& seen, std::vector<std::string>& errors) {
  SectionReader reader(section, errors);
  for (const auto& [key, child] : node) {
    if (!child.empty()) {
      reader.fail(key, "nested keys are not supported");
      continue;
    }
    const auto it = handlers.find(key);
    if (it == handlers.end()) {
      reader.fail(key, "unknown key");
      continue;
    }
    seen.insert(section + "." + key);
    it->second(reader, key, child.data());
  }
}

template <typename F>
bool parses(F&& f) {
  try {
    f();
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void validate(const ExperimentConfig& c, const std::set<std::string>& seen,
              std::vector<std::string>& errors) {
  auto err = [&errors](const std::string& key, const std::string& message) {
    errors.push_back(key + ": " + message);
  };

  for (const char* key : {"fed.rounds", "fed.eta"}) {
    if (!seen.contains(key)) err(key, "required key is missing");
  }

  const ProblemSection& pr = c.problem;
  const bool csv = pr.family == "csv";
  const bool logistic = pr.family == "logistic";
  if (pr.family != "quadratic" && !logistic && !csv) {
    err("problem.family", "expected quadratic, logistic or csv, got '" + pr.family + "'");
  }
  if (!csv && pr.d < 1) err("problem.d", "must be >= 1");
  if (pr.p < 1) err("problem.p", "must be >= 1");
  if (pr.family == "quadratic") {
    if (pr.n_per_device < 1) err("problem.n_per_device", "must be >= 1");
    if (!(pr.cond >= 1.0)) err("problem.cond", "must be >= 1");
    if (!(pr.heterogeneity >= 0.0)) err("problem.heterogeneity", "must be >= 0");
  }
  if (pr.partition != "homogeneous" && pr.partition != "heterogeneous") {
    err("problem.partition", "expected homogeneous or heterogeneous, got '" + pr.partition + "'");
  }
  if (logistic || csv) {
    if (logistic && pr.n < 1) err("problem.n", "must be >= 1");
    if (logistic && pr.p > pr.n) err("problem.p", "must be <= problem.n");
    if (logistic && pr.classes < 2) err("problem.classes", "must be >= 2");
    if (pr.classes_per_device < 1) err("problem.classes_per_device", "must be >= 1");
    if (logistic && pr.partition == "heterogeneous" &&
        pr.p * pr.classes_per_device < pr.classes) {
      err("problem.classes_per_device",
          "problem.p * problem.classes_per_device must cover problem.classes");
    }
    if (!(pr.reg >= 0.0)) err("problem.reg", "must be >= 0");
    if (!(pr.separation >= 0.0)) err("problem.separation", "must be >= 0");
  }
  if (csv && pr.csv_path.empty()) err("problem.csv_path", "required when problem.family = csv");

  const FedSection& f = c.fed;
  std::optional<Algorithm> algorithm;
  if (!parses([&] { algorithm = parse_algorithm(f.algorithm); })) {
    err("fed.algorithm", "expected FEDSKETCH, FEDSKETCHGATE or FEDSGD, got '" + f.algorithm + "'");
  }
  if (!parses([&] { (void)parse_variant(f.variant); })) {
    err("fed.variant", "expected PRIVIX or HEAPRIX, got '" + f.variant + "'");
  }
  if (!parses([&] { (void)parse_regime(f.lr_regime); })) {
    err("fed.lr_regime", "expected nonconvex, pl or convex, got '" + f.lr_regime + "'");
  }
  if (f.k) {
    if (*f.k < 1) err("fed.k", "must be >= 1");
    if (*f.k > pr.p) {
      err("fed.k", "must be <= problem.p (k=" + std::to_string(*f.k) +
                       ", p=" + std::to_string(pr.p) + ")");
    }
    if (algorithm == Algorithm::kFedSketchGate && *f.k != pr.p) {
      err("fed.k", "FEDSKETCHGATE requires k == problem.p");
    }
  }
  if (f.rounds < 0) err("fed.rounds", "must be >= 0");
  if (f.tau < 1) err("fed.tau", "must be >= 1");
  if (f.eta && !(*f.eta > 0.0)) err("fed.eta", "must be > 0");
  if (f.gamma && !(*f.gamma > 0.0)) err("fed.gamma", "must be > 0");
  if (f.batch < 0) err("fed.batch", "must be >= 0 (0 = full pass)");

  const SketchSection& s = c.sketch;
  if (s.m < 1) err("sketch.m", "must be >= 1");
  if (s.t < 1) err("sketch.t", "must be >= 1");
  if (s.heavy_budget < 1) err("sketch.heavy_budget", "must be >= 1");
  if (!parses([&] { (void)parse_value_mode(s.value_mode); })) {
    err("sketch.value_mode", "expected ORACLE or ESTIMATE, got '" + s.value_mode + "'");
  }

  if (c.output.name.empty()) err("output.name", "must not be empty");
  if (c.output.name.find_first_of("/\\") != std::string::npos) {
    err("output.name", "must not contain path separators");
  }
  if (c.output.dir.empty()) err("output.dir", "must not be empty");

  if (c.privacy) {
    const PrivacySection& pv = *c.privacy;
    if (!seen.contains("privacy.l")) err("privacy.l", "required key is missing");
    if (pv.l <= std::max<std::int64_t>(2, s.m)) err("privacy.l", "must exceed max(2, sketch.m)");
    if (s.m < 2) err("sketch.m", "privacy requires m >= 2");
    if (!(pv.sigma > 0.0)) err("privacy.sigma", "must be > 0");
    if (!(pv.alpha > 0.0)) err("privacy.alpha", "must be > 0");
    if (!(pv.C >= 0.0)) err("privacy.C", "must be >= 0");
  }

  if (c.repeats < 1) err("repeats", "must be >= 1");
}

ExperimentConfig parse_tree(const ptree& tree) {
  ExperimentConfig config;
  std::vector<std::string> errors;
  std::set<std::string> seen;

  PrivacySection privacy;
  bool has_privacy = false;
  const std::map<std::string, std::function<HandlerTable()>> sections = {
      {"problem", [&] { return problem_handlers(config.problem); }},
      {"fed", [&] { return fed_handlers(config.fed); }},
      {"sketch", [&] { return sketch_handlers(config.sketch); }},
      {"output", [&] { return output_handlers(config.output); }},
      {"privacy",
       [&] {
         has_privacy = true;
         return privacy_handlers(privacy);
       }},
  };

  for (const auto& [key, node] : tree) {
    const auto section = sections.find(key);
    if (section != sections.end()) {
      read_section(key, node, section->second(), seen, errors);
      continue;
    }
    if (!node.empty()) {
      errors.push_back(key + ": unknown section");
    } else if (key == "repeats") {
      SectionReader top("", errors);
      const std::string v = trim(node.data());
      std::int64_t value = 0;
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
      if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
        errors.push_back("repeats: expected an integer, got '" + v + "'");
      } else {
        config.repeats = value;
      }
    } else {
      errors.push_back(key + ": unknown key");
    }
  }
  if (has_privacy) config.privacy = privacy;

  validate(config, seen, errors);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return config;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({"syntax: line " + std::to_string(e.line()) + ": " + e.message()});
  }
  return parse_tree(tree);
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "repeats = " << c.repeats << "\n";

  const ProblemSection& p = c.problem;
  out << "\n[problem]\n"
      << "family = " << p.family << "\n"
      << "d = " << p.d << "\n"
      << "n = " << p.n << "\n"
      << "n_per_device = " << p.n_per_device << "\n"
      << "p = " << p.p << "\n"
      << "partition = " << p.partition << "\n"
      << "heterogeneity = " << format_double(p.heterogeneity) << "\n"
      << "cond = " << format_double(p.cond) << "\n"
      << "classes = " << p.classes << "\n"
      << "classes_per_device = " << p.classes_per_device << "\n"
      << "separation = " << format_double(p.separation) << "\n"
      << "reg = " << format_double(p.reg) << "\n";
  if (!p.csv_path.empty()) out << "csv_path = " << p.csv_path << "\n";
  out << "seed = " << p.seed << "\n";

  const FedSection& f = c.fed;
  out << "\n[fed]\n"
      << "algorithm = " << f.algorithm << "\n"
      << "variant = " << f.variant << "\n";
  if (f.k) out << "k = " << *f.k << "\n";
  out << "rounds = " << f.rounds << "\n"
      << "tau = " << f.tau << "\n"
      << "eta = " << (f.eta ? format_double(*f.eta) : std::string("auto")) << "\n";
  if (f.gamma) out << "gamma = " << format_double(*f.gamma) << "\n";
  out << "batch = " << f.batch << "\n"
      << "lr_regime = " << f.lr_regime << "\n"
      << "seed = " << f.seed << "\n"
      << "synchronized_batches = " << (f.synchronized_batches ? "true" : "false") << "\n"
      << "debug_checks = " << (f.debug_checks ? "true" : "false") << "\n";

  const SketchSection& s = c.sketch;
  out << "\n[sketch]\n"
      << "m = " << s.m << "\n"
      << "t = " << s.t << "\n"
      << "heavy_budget = " << s.heavy_budget << "\n"
      << "value_mode = " << s.value_mode << "\n";

  out << "\n[output]\n"
      << "dir = " << c.output.dir << "\n"
      << "name = " << c.output.name << "\n"
      << "wall_clock = " << (c.output.wall_clock ? "true" : "false") << "\n";

  if (c.privacy) {
    out << "\n[privacy]\n"
        << "l = " << c.privacy->l << "\n"
        << "sigma = " << format_double(c.privacy->sigma) << "\n"
        << "C = " << format_double(c.privacy->C) << "\n"
        << "alpha = " << format_double(c.privacy->alpha) << "\n";
  }
  return out.str();
}

ProblemInstance build_problem(const ExperimentConfig& config) {
  const ProblemSection& p = config.problem;
  if (p.family == "quadratic") {
    QuadraticOptions options;
    options.dim = p.d;
    options.n_per_device = p.n_per_device;
    options.devices = p.p;
    options.cond = p.cond;
    options.heterogeneity = p.heterogeneity;
    options.seed = p.seed;
    return make_quadratic(options);
  }

  std::shared_ptr<const Dataset> data;
  if (p.family == "logistic") {
    data = std::make_shared<const Dataset>(
        make_logistic(p.d, p.n, p.classes, p.seed, p.separation));
  } else if (p.family == "csv") {
    data = std::make_shared<const Dataset>(load_csv_dataset(p.csv_path));
  } else {
    throw ConfigError({"problem.family: unsupported family '" + p.family + "'"});
  }
  if (p.p > static_cast<std::int64_t>(data->size())) {
    throw ConfigError({"problem.p: exceeds the number of samples"});
  }

  Partition partition = p.partition == "heterogeneous"
                            ? partition_heterogeneous(*data, p.p, p.classes_per_device, p.seed)
                            : partition_homogeneous(*data, p.p, p.seed);
  auto problem = std::make_shared<const LogisticProblem>(data, p.reg);
  return {problem, std::move(partition)};
}

namespace {

std::int64_t effective_k(const ExperimentConfig& config) {
  return config.fed.k.value_or(config.problem.p);
}

}  // namespace

ResolvedRates resolve_rates(const ExperimentConfig& config, const Problem& problem) {
  const Algorithm algorithm = parse_algorithm(config.fed.algorithm);
  const Variant variant = parse_variant(config.fed.variant);
  const auto d = static_cast<std::int64_t>(problem.dim());
  const std::int64_t k = effective_k(config);

  ResolvedRates out;
  out.omega = algorithm == Algorithm::kFedSgd ? 0.0 : omega_for(variant, config.sketch.m, d);
  out.smoothness = problem.smoothness();

  if (config.fed.eta) {
    out.eta = *config.fed.eta;
    out.gamma = config.fed.gamma.value_or(1.0);
  } else {
    if (!out.smoothness) {
      throw ConfigError({"fed.eta: auto needs a problem with a known smoothness constant"});
    }
    TheoryParams params;
    params.L = out.smoothness;
    params.omega = out.omega;
    params.k = k;
    params.tau = config.fed.tau;
    params.gamma = config.fed.gamma;
    params.pl_constant = problem.pl_constant();
    if (config.fed.rounds >= 1) params.R = config.fed.rounds;
    const LearningRates rates = recommended_lr(parse_regime(config.fed.lr_regime), params);
    out.eta = rates.eta;
    out.gamma = rates.gamma;
    out.automatic = true;
    out.clamped = rates.clamped;
  }

  if (out.smoothness) {
    const double L = *out.smoothness;
    out.stepsize_lhs = stepsize_lhs(out.eta, out.gamma, config.fed.tau, L, out.omega, k);
    out.stepsize_ok = stepsize_ok(out.eta, out.gamma, config.fed.tau, L, out.omega, k);
    out.max_eta = max_local_lr(out.gamma, config.fed.tau, L, out.omega, k);
  }
  return out;
}

FedConfig make_fed_config(const ExperimentConfig& config, const Problem& problem,
                          std::uint64_t seed) {
  const ResolvedRates rates = resolve_rates(config, problem);
  FedConfig fc;
  fc.p = config.problem.p;
  fc.k = effective_k(config);
  fc.rounds = config.fed.rounds;
  fc.tau = config.fed.tau;
  fc.eta = rates.eta;
  fc.gamma = rates.gamma;
  fc.batch = config.fed.batch;
  fc.algorithm = parse_algorithm(config.fed.algorithm);
  fc.variant = parse_variant(config.fed.variant);
  fc.sketch.kind = fc.variant == Variant::kHeaprix ? CompressorKind::kHeaprix
                                                   : CompressorKind::kPrivix;
  fc.sketch.buckets = config.sketch.m;
  fc.sketch.rows = config.sketch.t;
  fc.sketch.heavy_budget = config.sketch.heavy_budget;
  fc.sketch.value_mode = parse_value_mode(config.sketch.value_mode);
  fc.master_seed = seed;
  fc.synchronized_batches = config.fed.synchronized_batches;
  fc.debug_checks = config.fed.debug_checks;
  return fc;
}

void write_metrics_csv(const std::filesystem::path& path, const RoundTrace& initial,
                       const std::vector<RoundTrace>& rounds, bool wall_clock) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kCsvHeader << "\n";
  std::int64_t cumulative = 0;
  auto row = [&](const RoundTrace& t) {
    cumulative += t.bytes_uplink + t.bytes_downlink;
    out << t.round << ',' << format_double(t.loss) << ',' << format_double(t.grad_norm) << ','
        << (t.accuracy ? format_double(*t.accuracy) : std::string()) << ',' << t.bytes_uplink
        << ',' << t.bytes_downlink << ',' << cumulative << ','
        << format_double(wall_clock ? t.wall_time : 0.0) << "\n";
  };
  row(initial);
  for (const RoundTrace& t : rounds) row(t);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

nlohmann::ordered_json config_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["repeats"] = c.repeats;
  j["problem"] = {{"family", c.problem.family},
                  {"d", c.problem.d},
                  {"n", c.problem.n},
                  {"n_per_device", c.problem.n_per_device},
                  {"p", c.problem.p},
                  {"partition", c.problem.partition},
                  {"heterogeneity", c.problem.heterogeneity},
                  {"cond", c.problem.cond},
                  {"classes", c.problem.classes},
                  {"classes_per_device", c.problem.classes_per_device},
                  {"separation", c.problem.separation},
                  {"reg", c.problem.reg},
                  {"csv_path", c.problem.csv_path},
                  {"seed", c.problem.seed}};
  j["fed"] = {{"algorithm", c.fed.algorithm},
              {"variant", c.fed.variant},
              {"k", c.fed.k ? nlohmann::ordered_json(*c.fed.k) : nlohmann::ordered_json()},
              {"rounds", c.fed.rounds},
              {"tau", c.fed.tau},
              {"eta", c.fed.eta ? nlohmann::ordered_json(*c.fed.eta) : "auto"},
              {"gamma", optional_json(c.fed.gamma)},
              {"batch", c.fed.batch},
              {"lr_regime", c.fed.lr_regime},
              {"seed", c.fed.seed},
              {"synchronized_batches", c.fed.synchronized_batches},
              {"debug_checks", c.fed.debug_checks}};
  j["sketch"] = {{"m", c.sketch.m},
                 {"t", c.sketch.t},
                 {"heavy_budget", c.sketch.heavy_budget},
                 {"value_mode", c.sketch.value_mode}};
  j["output"] = {{"dir", c.output.dir}, {"name", c.output.name},
                 {"wall_clock", c.output.wall_clock}};
  if (c.privacy) {
    j["privacy"] = {{"l", c.privacy->l},
                    {"sigma", c.privacy->sigma},
                    {"C", c.privacy->C},
                    {"alpha", c.privacy->alpha}};
  } else {
    j["privacy"] = nullptr;
  }
  return j;
}

nlohmann::ordered_json trace_json(const RoundTrace& t, std::int64_t cumulative) {
  return {{"round", t.round},
          {"loss", t.loss},
          {"grad_norm", t.grad_norm},
          {"train_accuracy", optional_json(t.accuracy)},
          {"cumulative_bytes", cumulative}};
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config,
                                std::optional<std::filesystem::path> output_dir) {
  const ProblemInstance instance = build_problem(config);
  const Problem& problem = *instance.problem;
  const ResolvedRates rates = resolve_rates(config, problem);
  const auto d = static_cast<std::int64_t>(problem.dim());

  ExperimentResult result;
  if (rates.stepsize_ok && !*rates.stepsize_ok) {
    result.warnings.push_back("step-size condition violated: lhs = " +
                              format_double(*rates.stepsize_lhs) + " > 1");
  }
  if (rates.clamped) {
    result.warnings.push_back("recommended eta exceeded the step-size bound and was clamped");
  }
  const bool sketched = parse_algorithm(config.fed.algorithm) != Algorithm::kFedSgd;
  if (sketched && is_uncompressed_regime(config.sketch.m, d)) {
    result.warnings.push_back("sketch.m exceeds the model dimension; no compression");
  }

  const fs::path dir = output_dir.value_or(fs::path(config.output.dir));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
  for (std::int64_t rep = 0; rep < config.repeats; ++rep) {
    const std::uint64_t seed = config.fed.seed + static_cast<std::uint64_t>(rep);
    const FedConfig fc = make_fed_config(config, problem, seed);
    fc.validate(problem, instance.partition);

    const auto start = std::chrono::steady_clock::now();
    Simulator sim(fc, instance.problem, instance.partition);
    std::vector<RoundTrace> traces;
    traces.reserve(static_cast<std::size_t>(fc.rounds) + 1);
    const RoundTrace initial = sim.snapshot();
    std::vector<RoundTrace> rounds;
    rounds.reserve(static_cast<std::size_t>(fc.rounds));
    for (std::int64_t r = 0; r < fc.rounds; ++r) rounds.push_back(sim.step());
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path csv = dir / (config.output.name + "_rep" + std::to_string(rep) + ".csv");
    write_metrics_csv(csv, initial, rounds, config.output.wall_clock);

    std::int64_t cumulative = 0;
    for (const RoundTrace& t : rounds) cumulative += t.bytes_uplink + t.bytes_downlink;
    const RoundTrace& last = rounds.empty() ? initial : rounds.back();
    runs.push_back({{"repeat", rep},
                    {"seed", seed},
                    {"csv", csv.filename().string()},
                    {"final", trace_json(last, cumulative)},
                    {"wall_seconds", seconds}});
    seeds.push_back(seed);

    traces.push_back(initial);
    traces.insert(traces.end(), rounds.begin(), rounds.end());
    result.traces.push_back(std::move(traces));
    result.csv_files.push_back(csv);
  }

  nlohmann::ordered_json analysis;
  analysis["omega"] = rates.omega;
  analysis["eta"] = rates.eta;
  analysis["gamma"] = rates.gamma;
  analysis["eta_source"] = rates.automatic ? "auto" : "config";
  analysis["eta_clamped"] = rates.clamped;
  analysis["smoothness"] = optional_json(rates.smoothness);
  analysis["stepsize_lhs"] = optional_json(rates.stepsize_lhs);
  analysis["stepsize_ok"] =
      rates.stepsize_ok ? nlohmann::ordered_json(*rates.stepsize_ok) : nlohmann::ordered_json();
  analysis["max_local_lr"] = optional_json(rates.max_eta);
  analysis["uncompressed_regime"] = sketched && is_uncompressed_regime(config.sketch.m, d);
  analysis["model_dim"] = d;
  if (config.privacy) {
    const PrivacySection& pv = *config.privacy;
    const PrivacyResult priv =
        privacy_epsilon(config.sketch.t, config.sketch.m, pv.l, pv.sigma, pv.C, pv.alpha);
    analysis["privacy"] = {{"feasible", priv.feasible},
                           {"q", priv.q},
                           {"budget", priv.budget},
                           {"epsilon", priv.feasible ? nlohmann::ordered_json(priv.epsilon)
                                                     : nlohmann::ordered_json()}};
  } else {
    analysis["privacy"] = nullptr;
  }

  nlohmann::ordered_json summary;
  summary["format"] = "fedsketch-summary/1";
  summary["warning"] = !result.warnings.empty();
  summary["warnings"] = result.warnings;
  summary["seeds"] = seeds;
  summary["runs"] = runs;
  summary["analysis"] = analysis;
  summary["config"] = config_json(config);
  summary["config_ini"] = serialize_config(config);

  result.summary_file = dir / (config.output.name + "_summary.json");
  std::ofstream out(result.summary_file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + result.summary_file.string());
  out << summary.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + result.summary_file.string());
  return result;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": empty file");
  if (trim(line) != kCsvHeader) {
    throw SchemaError(path.string() + ": column schema mismatch, expected '" +
                      std::string(kCsvHeader) + "'");
  }

  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected 8 columns");
    }
    auto num = [&](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || end != s.c_str() + s.size()) {
        throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                          s + "'");
      }
      return v;
    };
    auto integer = [&](const std::string& s) {
      std::int64_t v = 0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": bad integer '" +
                          s + "'");
      }
      return v;
    };
    MetricsRow row;
    row.round = integer(cells[0]);
    row.loss = num(cells[1]);
    row.grad_norm = num(cells[2]);
    if (!cells[3].empty()) row.accuracy = num(cells[3]);
    row.bytes_up = integer(cells[4]);
    row.bytes_down = integer(cells[5]);
    row.cumulative_bytes = integer(cells[6]);
    row.wall_seconds = num(cells[7]);
    rows.push_back(row);
  }
  if (rows.empty()) throw SchemaError(path.string() + ": no data rows");
  return rows;
}

CompareReport compare(const std::filesystem::path& run_a, const std::filesystem::path& run_b,
                      std::optional<double> target_loss) {
  const std::vector<MetricsRow> a = read_metrics_csv(run_a);
  const std::vector<MetricsRow> b = read_metrics_csv(run_b);

  CompareReport report;
  std::map<std::int64_t, const MetricsRow*> by_round;
  for (const MetricsRow& row : b) by_round[row.round] = &row;
  for (const MetricsRow& ra : a) {
    const auto it = by_round.find(ra.round);
    if (it == by_round.end()) continue;
    const MetricsRow& rb = *it->second;
    report.rows.push_back({ra.round, ra.loss, rb.loss, ra.grad_norm, rb.grad_norm,
                           ra.cumulative_bytes, rb.cumulative_bytes});
  }
  report.final_a = a.back();
  report.final_b = b.back();
  report.target_loss = target_loss.value_or(std::max(a.back().loss, b.back().loss));

  auto bytes_to = [&](const std::vector<MetricsRow>& rows) -> std::optional<std::int64_t> {
    for (const MetricsRow& row : rows) {
      if (row.loss <= report.target_loss) return row.cumulative_bytes;
    }
    return std::nullopt;
  };
  report.bytes_to_target_a = bytes_to(a);
  report.bytes_to_target_b = bytes_to(b);
  return report;
}

std::string CompareReport::to_text() const {
  std::ostringstream out;
  auto g = [](double v) { return format_double(v); };
  auto bytes = [](const std::optional<std::int64_t>& v) {
    return v ? std::to_string(*v) : std::string("not reached");
  };

  out << "round,loss_a,loss_b,loss_delta,grad_norm_a,grad_norm_b,grad_norm_delta,"
         "cumulative_bytes_a,cumulative_bytes_b\n";
  for (const CompareRow& r : rows) {
    out << r.round << ',' << g(r.loss_a) << ',' << g(r.loss_b) << ',' << g(r.loss_delta())
        << ',' << g(r.grad_norm_a) << ',' << g(r.grad_norm_b) << ',' << g(r.grad_norm_delta())
        << ',' << r.cumulative_bytes_a << ',' << r.cumulative_bytes_b << "\n";
  }

  auto acc = [&](const std::optional<double>& v) { return v ? g(*v) : std::string("n/a"); };
  out << "\nfinal metrics\n"
      << "metric,a,b\n"
      << "round," << final_a.round << ',' << final_b.round << "\n"
      << "loss," << g(final_a.loss) << ',' << g(final_b.loss) << "\n"
      << "grad_norm," << g(final_a.grad_norm) << ',' << g(final_b.grad_norm) << "\n"
      << "train_accuracy," << acc(final_a.accuracy) << ',' << acc(final_b.accuracy) << "\n"
      << "cumulative_bytes," << final_a.cumulative_bytes << ',' << final_b.cumulative_bytes
      << "\n"
      << "\nbytes to loss <= " << g(target_loss) << "\n"
      << "a," << bytes(bytes_to_target_a) << "\n"
      << "b," << bytes(bytes_to_target_b) << "\n";
  return out.str();
}

}  // namespace fedsketch
