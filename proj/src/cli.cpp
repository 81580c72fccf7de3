#include "hallu/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "hallu/bounds.hpp"
#include "hallu/coinflip.hpp"
#include "hallu/constructions.hpp"
#include "hallu/detector.hpp"
#include "hallu/embeddings.hpp"
#include "hallu/errors.hpp"
#include "hallu/kernels.hpp"
#include "hallu/regions.hpp"

namespace hallu::cli {

namespace fs = std::filesystem;

std::uint64_t config_hash(const Json& config) { return fnv1a(config.dump()); }

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const char* env, const Json& config,
                           std::string* source) {
  auto set_source = [&](const char* s) {
    if (source != nullptr) *source = s;
  };
  if (flag) {
    set_source("flag");
    return *flag;
  }
  if (env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const std::string text(env);
      if (text.front() == '-') throw std::invalid_argument("negative");
      const auto v = std::stoull(text, &used, 10);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      set_source("env");
      return v;
    } catch (const std::exception&) {
      throw InputError(std::string("HALLU_SEED is not an unsigned 64-bit integer: ") + env);
    }
  }
  if (config.is_object() && config.contains("seed")) {
    const Json& s = config.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
      throw InputError("config seed must be a nonnegative integer");
    }
    set_source("config");
    return s.get<std::uint64_t>();
  }
  set_source("default");
  return 0;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

/// Relative paths in a config are resolved against the config file's directory.
std::string resolve_path(const RunConfig& rc, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute() || rc.config_path.empty()) return p;
  return (fs::path(rc.config_path).parent_path() / p).lexically_normal().string();
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Json envelope(const RunConfig& rc, const std::string& command, const Timer& timer, Json outputs) {
  return {{"schema", "v1"},
          {"command", command},
          {"config_hash", hex64(rc.config_hash)},
          {"seed", rc.seed},
          {"seed_source", rc.seed_source},
          {"outputs", std::move(outputs)},
          {"timing", {{"wall_seconds", timer.seconds()}, {"workers", kernels::max_workers()}}}};
}

fs::path out_dir(const RunConfig& rc) {
  std::error_code ec;
  fs::create_directories(rc.out, ec);
  if (ec || !fs::is_directory(rc.out)) throw InputError("output directory is not writable: " + rc.out);
  return fs::path(rc.out);
}

// ---------------------------------------------------------------- construct

enum class Theorem { ExactOptimum, MultiInput, EpsilonBall, Tilted, CrossEntropy };

Theorem theorem_from(const Json& entry) {
  const auto name = required<std::string>(entry, "theorem");
  static const std::map<std::string, Theorem> names{
      {"5.1", Theorem::ExactOptimum},   {"exact-optimum", Theorem::ExactOptimum},
      {"5.3", Theorem::MultiInput},     {"multi-input", Theorem::MultiInput},
      {"5.2", Theorem::EpsilonBall},    {"epsilon-ball", Theorem::EpsilonBall},
      {"5.4", Theorem::Tilted},         {"tilted", Theorem::Tilted},
      {"D", Theorem::CrossEntropy},     {"cross-entropy", Theorem::CrossEntropy},
  };
  const auto it = names.find(name);
  if (it == names.end()) throw InputError("unknown theorem \"" + name + "\"");
  return it->second;
}

std::vector<double> weights_of(const Json& entry) {
  const Vector w = vector_from_json(entry.contains("weights") ? entry.at("weights") : Json(), "weights");
  return {w.data(), w.data() + w.size()};
}

ExactOptimumSpec exact_spec(const Json& entry) {
  ExactOptimumSpec spec;
  spec.delta = required<double>(entry, "delta");
  spec.weights = weights_of(entry);
  const Json comps = optional_field<Json>(entry, "components", Json::array());
  int dim = optional_field<int>(entry, "dim", 0);
  if (dim <= 0) {
    dim = 1;
    if (!comps.empty() && comps.front().contains("mean")) dim = static_cast<int>(comps.front().at("mean").size());
  }
  spec.dim = dim;
  const std::size_t need = spec.weights.empty() ? 0 : spec.weights.size() - 1;
  if (comps.empty()) {
    for (std::size_t i = 0; i < need; ++i) spec.covariances.push_back(GaussianComponent::isotropic(Vector::Zero(dim), 1.0));
  } else {
    if (comps.size() != need && comps.size() != spec.weights.size()) {
      throw InputError("components must list N-1 (or N) covariances");
    }
    for (std::size_t i = 0; i < need; ++i) {
      const Json& c = comps.at(i);
      if (!c.contains("cov")) throw_missing_field("cov");
      spec.covariances.push_back(covariance_from_json(c.at("cov"), Vector::Zero(dim)));
    }
  }
  return spec;
}

EpsilonBallSpec ball_spec(const Json& entry, std::uint64_t seed, std::size_t index) {
  EpsilonBallSpec spec;
  spec.delta = required<double>(entry, "delta");
  spec.epsilon = optional_field<double>(entry, "epsilon", 0.0);
  spec.weights = weights_of(entry);
  spec.dim = optional_field<int>(entry, "dim", 1);
  spec.scale = optional_field<double>(entry, "scale", 1.0);
  spec.ball_samples = optional_field<std::size_t>(entry, "ball_samples", 1000);
  spec.seed = derive_seed(seed, "construct", index);
  return spec;
}

void check_delta(double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("delta must lie in (0, 1], got " + std::to_string(delta));
}

double max_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

Json to_json(const ConstructionReport& r) {
  Json j{{"kind", r.kind},
         {"feasible", r.feasible},
         {"delta", r.delta},
         {"claimed_optimum", vector_to_json(r.claimed_optimum)},
         {"estimator_value", vector_to_json(r.estimator_value)},
         {"per_state_density", r.per_state_density},
         {"max_density", max_of(r.per_state_density)},
         {"passed", r.passed},
         {"note", r.note}};
  if (r.mixture) j["mixture"] = mixture_to_json(*r.mixture);
  return j;
}

Json to_json(const EpsilonBallReport& r) {
  return {{"center", to_json(r.center)},
          {"required_norm", r.required_norm},
          {"min_mean_norm", r.min_mean_norm},
          {"analytic_ball_bound", r.analytic_ball_bound},
          {"max_sampled_density", r.max_sampled_density},
          {"ball_samples", r.ball_samples},
          {"ball_passed", r.ball_passed},
          {"passed", r.passed}};
}

struct Outcome {
  Json report;
  bool feasible = true;
  bool passed = true;
};

Outcome run_entry(const Json& entry, std::uint64_t seed, std::size_t index) {
  if (!entry.is_object()) throw InputError("construction spec must be a JSON object");
  Outcome o;
  switch (theorem_from(entry)) {
    case Theorem::ExactOptimum: {
      const auto spec = exact_spec(entry);
      check_delta(spec.delta);
      const auto r = construct_exact_optimum(spec);
      o.report = to_json(r);
      o.feasible = r.feasible;
      o.passed = r.passed;
      break;
    }
    case Theorem::MultiInput: {
      std::vector<ExactOptimumSpec> specs;
      for (const auto& input : required<Json>(entry, "inputs")) {
        specs.push_back(exact_spec(input));
        check_delta(specs.back().delta);
      }
      o.report = {{"kind", "multi-input"}, {"inputs", Json::array()}};
      for (const auto& r : construct_multi_input(specs)) {
        o.report["inputs"].push_back(to_json(r));
        o.feasible = o.feasible && r.feasible;
        o.passed = o.passed && r.passed;
      }
      o.report["passed"] = o.passed;
      break;
    }
    case Theorem::EpsilonBall: {
      const auto spec = ball_spec(entry, seed, index);
      check_delta(spec.delta);
      Vector center;
      if (entry.contains("center")) center = vector_from_json(entry.at("center"), "center");
      const auto r = construct_epsilon_ball(spec, center);
      o.report = to_json(r);
      o.report["kind"] = "epsilon-ball";
      o.feasible = r.center.feasible;
      o.passed = r.passed;
      break;
    }
    case Theorem::Tilted: {
      const auto spec = ball_spec(entry, seed, index);
      check_delta(spec.delta);
      TiltedFamily family;
      family.base_input = vector_from_json(required<Json>(entry, "base_input"), "base_input");
      for (const auto& h : required<Json>(entry, "hints")) family.hints.push_back(vector_from_json(h, "hints"));
      family.lipschitz = optional_field<double>(entry, "lipschitz", 1.0);
      const auto r = construct_tilted(family, spec);
      Json hints = Json::array();
      for (const auto& h : r.hints) {
        hints.push_back({{"hint", h.hint},
                         {"applicable", h.applicable},
                         {"shift_norm", h.shift_norm},
                         {"estimate", vector_to_json(h.estimate)},
                         {"per_state_density", h.per_state_density},
                         {"hallucinates", h.hallucinates}});
      }
      o.report = {{"kind", "tilted"}, {"epsilon", r.epsilon}, {"ball", to_json(r.ball)}, {"hints", hints}, {"passed", r.passed}};
      o.feasible = r.ball.center.feasible;
      o.passed = r.passed;
      break;
    }
    case Theorem::CrossEntropy: {
      const double delta = required<double>(entry, "delta");
      check_delta(delta);
      const int states = entry.contains("states") ? required<int>(entry, "states")
                                                  : static_cast<int>(weights_of(entry).size());
      const int classes = optional_field<int>(entry, "classes", states);
      const auto r = construct_crossentropy(states, classes, delta);
      o.report = {{"kind", "cross-entropy"},
                  {"states", r.states},
                  {"classes", r.classes},
                  {"delta", r.delta},
                  {"variance_bound", r.variance_bound},
                  {"density_at_bound", r.density_at_bound},
                  {"bound_passed", r.bound_passed},
                  {"variance_used", r.variance_used},
                  {"prediction", vector_to_json(r.prediction.entries())},
                  {"distance_sq", r.distance_sq},
                  {"per_state_density", r.per_state_density},
                  {"max_density", max_of(r.per_state_density)},
                  {"passed", r.passed}};
      o.passed = r.passed;
      break;
    }
  }
  return o;
}

int cmd_construct(const RunConfig& rc) {
  const Timer timer;
  const Json& cfg = rc.config;
  const Json entries = cfg.contains("constructions") ? cfg.at("constructions") : Json::array({cfg});
  if (!entries.is_array() || entries.empty()) throw InputError("no constructions in the spec");
  Json reports = Json::array();
  bool feasible = true;
  bool passed = true;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto o = run_entry(entries[i], rc.seed, i);
    reports.push_back(o.report);
    feasible = feasible && o.feasible;
    passed = passed && o.passed;
  }
  const auto dir = out_dir(rc);
  write_json_file((dir / "construct.json").string(),
                  envelope(rc, "construct", timer, {{"constructions", reports}, {"all_passed", passed && feasible}}));
  std::cout << "construct: " << entries.size() << " construction(s), " << (passed && feasible ? "all passed" : "FAILED")
            << " -> " << (dir / "construct.json").string() << '\n';
  if (!feasible) std::cerr << "construct: at least one construction is infeasible\n";
  return passed && feasible ? kOk : kInfeasible;
}

// ---------------------------------------------------------------- bound

SpreadVariant variant_from(const std::string& name) {
  if (name == "statement") return SpreadVariant::Statement;
  if (name == "proof") return SpreadVariant::Proof;
  throw InputError("d variant must be \"statement\" or \"proof\", got \"" + name + "\"");
}

Json to_json(const Frequency& f) {
  return {{"hits", f.hits}, {"trials", f.trials}, {"rate", f.rate}, {"wilson_lower", f.lower}, {"wilson_upper", f.upper}};
}

std::size_t parse_verify(const std::string& text) {
  std::string value = text;
  if (value.rfind("trials=", 0) == 0) value = value.substr(7);
  try {
    std::size_t used = 0;
    const long long n = std::stoll(value, &used);
    if (used != value.size() || n <= 0) throw std::invalid_argument("bad");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw InputError("--verify expects trials=<positive integer>, got \"" + text + "\"");
  }
}

int cmd_bound(const RunConfig& rc, const std::string& verify, const std::string& d_variant) {
  const Timer timer;
  const Json& cfg = rc.config;
  BoundInputs in;
  in.weights = weights_of(cfg);
  for (const auto& law : required<Json>(cfg, "mean_laws")) {
    MeanLaw m;
    m.family = family_from_name(optional_field<std::string>(law, "family", "gaussian"));
    m.mu0 = optional_field<double>(law, "mu0", 0.0);
    m.param = required<double>(law, "param");
    in.mean_laws.push_back(m);
  }
  in.r_x = required<double>(cfg, "r_x");
  in.delta = required<double>(cfg, "delta");
  in.variant = variant_from(d_variant.empty() ? optional_field<std::string>(cfg, "d_variant", "statement") : d_variant);
  in.validate();

  const auto report = hallucination_lower_bound(in);
  Json states = Json::array();
  for (std::size_t i = 0; i < report.states.size(); ++i) {
    const auto& s = report.states[i];
    states.push_back({{"state", i},
                      {"variance", in.mean_laws[i].variance()},
                      {"feasible", s.alpha.feasible},
                      {"alpha", s.alpha.alpha},
                      {"alpha_max", s.alpha.alpha_max},
                      {"theta", s.alpha.theta},
                      {"P", s.alpha.P},
                      {"K", s.K}});
  }
  Json out{{"d", report.d},
           {"d_variant", in.variant == SpreadVariant::Proof ? "proof" : "statement"},
           {"states", states},
           {"feasible", report.feasible},
           {"product_bound", report.product_bound ? Json(*report.product_bound) : Json(nullptr)}};

  int code = kOk;
  if (!report.feasible) {
    for (const auto& s : states) {
      if (!s.at("feasible").get<bool>()) {
        std::cerr << "bound: state " << s.at("state") << " infeasible (alpha_max " << s.at("alpha_max") << " <= 1)\n";
      }
    }
    code = kInfeasible;
  }

  const std::string verify_arg = !verify.empty() ? verify
                                  : cfg.contains("verify_trials")
                                      ? std::to_string(required<long long>(cfg, "verify_trials"))
                                      : std::string();
  if (!verify_arg.empty() && code == kOk) {
    McOptions mc;
    mc.trials = parse_verify(verify_arg);
    mc.component_variance = required<double>(cfg, "component_variance");
    mc.seed = derive_seed(rc.seed, "bound-verify");
    const auto v = mc_verify_bound(in, mc);
    const bool ok = v.hallucination.rate >= *report.product_bound;
    out["verification"] = {{"component_variance", mc.component_variance},
                           {"covering_radius", v.covering_radius},
                           {"geometric", to_json(v.geometric)},
                           {"hallucination", to_json(v.hallucination)},
                           {"frequency_exceeds_bound", ok},
                           {"wilson_lower_exceeds_bound", v.hallucination.lower >= *report.product_bound}};
    if (!ok) code = kInfeasible;
  }

  const auto dir = out_dir(rc);
  write_json_file((dir / "bound.json").string(), envelope(rc, "bound", timer, out));
  std::cout << "bound: d=" << report.d << " product=";
  if (report.product_bound) {
    std::cout << *report.product_bound;
  } else {
    std::cout << "infeasible";
  }
  std::cout << " -> " << (dir / "bound.json").string() << '\n';
  return code;
}

// ---------------------------------------------------------------- coinflip

LatentCoinTask task_from(const Json& cfg) {
  if (cfg.contains("coins")) {
    const auto coins = required<std::vector<double>>(cfg, "coins");
    return make_subset_task(CoinSet(coins, optional_field<bool>(cfg, "allow_repeats", false)),
                            required<std::vector<std::vector<std::size_t>>>(cfg, "subsets"),
                            required<std::vector<double>>(cfg, "probabilities"));
  }
  const auto n = optional_field<std::size_t>(cfg, "n", 20);
  return make_two_latent_task(n, optional_field<double>(cfg, "p_low", 0.05), optional_field<double>(cfg, "p_high", 0.95));
}

int cmd_coinflip(const RunConfig& rc) {
  const Timer timer;
  const Json& cfg = rc.config;
  const auto task = task_from(cfg);
  const double delta = optional_field<double>(cfg, "delta", 0.01);
  check_delta(delta);
  const auto flips = optional_field<std::size_t>(cfg, "flips", 20000);
  const auto data = generate_dataset(task, flips, derive_seed(rc.seed, "coinflip-data"));

  TrainConfig tc;
  const Json train = optional_field<Json>(cfg, "train", Json::object());
  tc.epochs = optional_field<int>(train, "epochs", tc.epochs);
  tc.learning_rate = optional_field<double>(train, "learning_rate", tc.learning_rate);
  tc.batch_size = optional_field<std::size_t>(train, "batch_size", tc.batch_size);
  tc.validation_fraction = optional_field<double>(train, "validation_fraction", tc.validation_fraction);
  tc.seed = derive_seed(rc.seed, "coinflip-train");
  const auto result = train_estimator(task, data, tc);

  const auto demo = hallucination_demo(task, delta);
  const auto label = task.encode(0);
  const double trained = result.model.predict(label);
  const long trained_rounded = round_half_even(trained);
  std::vector<double> trained_pmf;
  bool trained_hallucinates = true;
  for (std::size_t i = 0; i < task.states().size(); ++i) {
    if (task.encode(i) != label) continue;
    const auto& pmf = task.state_pmf(i);
    const double f = trained_rounded >= 0 && static_cast<std::size_t>(trained_rounded) < pmf.size()
                         ? pmf[static_cast<std::size_t>(trained_rounded)]
                         : 0.0;
    trained_pmf.push_back(f);
    trained_hallucinates = trained_hallucinates && f <= delta;
  }

  const auto& rows = result.trace.rows;
  const double initial = rows.front().loss;
  const double final_loss = rows.back().loss;
  const auto dir = out_dir(rc);
  write_text(dir / "trace.csv", trace_csv(result.trace));
  if (optional_field<bool>(cfg, "write_dataset", false)) write_text(dir / "dataset.csv", dataset_csv(data));
  Json verdict{{"delta", delta},
               {"flips", flips},
               {"bayes", {{"prediction", demo.prediction}, {"rounded", demo.rounded}, {"per_state_pmf", demo.per_state_pmf},
                          {"hallucinates", demo.hallucinates}}},
               {"trained", {{"prediction", trained}, {"rounded", trained_rounded}, {"per_state_pmf", trained_pmf},
                            {"hallucinates", trained_hallucinates}}},
               {"training", {{"initial_loss", initial}, {"final_loss", final_loss},
                             {"relative_drop", initial > 0.0 ? (initial - final_loss) / initial : 0.0},
                             {"epochs", tc.epochs}, {"train_rows", result.train_rows},
                             {"validation_rows", result.validation_rows}}},
               {"trace", "trace.csv"}};
  write_json_file((dir / "verdict.json").string(), envelope(rc, "coinflip", timer, verdict));
  std::cout << "coinflip: prediction " << demo.prediction << " rounds to " << demo.rounded << ", "
            << (demo.hallucinates ? "hallucinates" : "does not hallucinate") << " at delta " << delta << " -> "
            << (dir / "verdict.json").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- detector

EmbeddingMatrix load_embeddings(const RunConfig& rc, const Json& spec) {
  const std::string path = resolve_path(rc, required<std::string>(spec, "embeddings"));
  if (fs::path(path).extension() == ".csv") return load_embedding_csv(path);
  return load_emb1_with_manifest(path, resolve_path(rc, optional_field<std::string>(spec, "manifest", "")));
}

std::string bundle_dir(const RunConfig& rc) {
  const auto p = optional_field<std::string>(rc.config, "bundle", "");
  return p.empty() ? (fs::path(rc.out) / "bundle").string() : resolve_path(rc, p);
}

/// Maps each matrix label onto the bundle's class order by name.
std::vector<int> class_map(const EmbeddingMatrix& m, const std::vector<std::string>& classes) {
  std::vector<int> map;
  for (const auto& name : m.classes) {
    const auto it = std::find(classes.begin(), classes.end(), name);
    map.push_back(it == classes.end() ? -1 : static_cast<int>(it - classes.begin()));
  }
  return map;
}

Matrix class_rows(const EmbeddingMatrix& m, const std::vector<int>& map, int bundle_class) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (map[static_cast<std::size_t>(m.labels[r])] == bundle_class) rows.push_back(r);
  }
  return m.select(rows).data;
}

GmmOptions gmm_options(const Json& cfg) {
  const Json g = optional_field<Json>(cfg, "gmm", Json::object());
  GmmOptions o;
  o.components = optional_field<int>(g, "components", o.components);
  o.max_iter = optional_field<int>(g, "max_iter", o.max_iter);
  o.tol = optional_field<double>(g, "tol", o.tol);
  o.reg = optional_field<double>(g, "reg", o.reg);
  const auto cov = optional_field<std::string>(g, "covariance", "diag");
  if (cov == "diag") {
    o.covariance = GmmCovariance::Diagonal;
  } else if (cov == "full") {
    o.covariance = GmmCovariance::Full;
  } else {
    throw InputError("gmm covariance must be \"diag\" or \"full\"");
  }
  return o;
}

double percentile_of(const Json& cfg, double fallback) { return optional_field<double>(cfg, "percentile", fallback); }

std::vector<ClassThreshold> calibrate_all(const DetectorBundle& b, const EmbeddingMatrix& calib, double percentile) {
  const auto map = class_map(calib, b.classes);
  const Matrix z = b.pipeline.transform(calib.data);
  EmbeddingMatrix projected = calib;
  projected.data = z;
  std::vector<ClassThreshold> out;
  for (std::size_t c = 0; c < b.models.size(); ++c) {
    const Matrix rows = class_rows(projected, map, static_cast<int>(c));
    if (rows.rows() == 0) throw InputError("no calibration rows for class \"" + b.classes[c] + "\"");
    out.push_back(calibrate(b.models[c], rows, percentile));
  }
  return out;
}

int detector_fit(const RunConfig& rc) {
  const Timer timer;
  const Json& cfg = rc.config;
  const auto matrix = load_embeddings(rc, cfg);
  const double fraction = optional_field<double>(cfg, "train_fraction", 0.8);
  const auto [train, calib] = split(matrix, fraction, derive_seed(rc.seed, "detector-split"));

  PcaTarget target;
  const Json pca = optional_field<Json>(cfg, "pca", Json::object());
  target.components = optional_field<int>(pca, "components", 0);
  target.variance_fraction = optional_field<double>(pca, "variance_fraction", 0.0);
  if (target.components <= 0 && target.variance_fraction <= 0.0) {
    const auto limit = std::min<Eigen::Index>(static_cast<Eigen::Index>(train.rows()) - 1, train.data.cols());
    target.components = static_cast<int>(std::min<Eigen::Index>(50, limit));
  }
  DetectorBundle b;
  b.pipeline = fit_preprocess(train.data, target);
  b.classes = matrix.classes;
  const auto options = gmm_options(cfg);
  EmbeddingMatrix projected = train;
  projected.data = b.pipeline.transform(train.data);
  const auto identity = class_map(projected, b.classes);
  Json fits = Json::array();
  for (std::size_t c = 0; c < b.classes.size(); ++c) {
    GmmOptions o = options;
    o.seed = derive_seed(rc.seed, "detector-gmm", c);
    b.models.push_back(fit_gmm(class_rows(projected, identity, static_cast<int>(c)), o));
    const auto& m = b.models.back();
    bool monotone = true;
    for (std::size_t t = 1; t < m.loglik_trace.size(); ++t) monotone = monotone && m.loglik_trace[t] >= m.loglik_trace[t - 1] - 1e-9;
    fits.push_back({{"class", b.classes[c]},
                    {"iterations", m.iterations},
                    {"converged", m.converged},
                    {"reseeds", m.reseeds},
                    {"final_loglik", m.loglik_trace.back()},
                    {"loglik_nondecreasing", monotone}});
  }
  const double percentile = percentile_of(cfg, 10.0);
  b.thresholds = calibrate_all(b, calib, percentile);
  b.manifest = {{"schema", "v1"},
                {"seed", rc.seed},
                {"config_hash", hex64(rc.config_hash)},
                {"source", matrix.source},
                {"classes", b.classes},
                {"train_fraction", fraction},
                {"train_rows", train.rows()},
                {"calibration_rows", calib.rows()},
                {"input_dim", b.pipeline.input_dim()},
                {"pca_components", b.pipeline.output_dim()},
                {"explained_fraction", b.pipeline.explained_fraction},
                {"gmm", {{"components", options.components}, {"max_iter", options.max_iter}, {"tol", options.tol},
                         {"reg", options.reg}, {"covariance", options.covariance == GmmCovariance::Full ? "full" : "diag"}}},
                {"percentile", percentile}};
  const std::string dir = bundle_dir(rc);
  write_bundle(dir, b);
  const auto out = out_dir(rc);
  write_json_file((out / "fit.json").string(), envelope(rc, "detector fit", timer, {{"bundle", dir}, {"classes", fits}}));
  std::cout << "detector fit: " << b.classes.size() << " class model(s), q=" << b.pipeline.output_dim() << " -> " << dir
            << '\n';
  return kOk;
}

int detector_calibrate(const RunConfig& rc) {
  const Timer timer;
  const Json& cfg = rc.config;
  const std::string dir = bundle_dir(rc);
  DetectorBundle b = read_bundle(dir, false);
  EmbeddingMatrix calib;
  if (cfg.contains("calibration")) {
    calib = load_embeddings(rc, cfg.at("calibration"));
  } else {
    const auto matrix = load_embeddings(rc, cfg);
    calib = split(matrix, optional_field<double>(cfg, "train_fraction", 0.8), derive_seed(rc.seed, "detector-split")).second;
  }
  const double percentile = percentile_of(cfg, b.manifest.value("percentile", 10.0));
  b.thresholds = calibrate_all(b, calib, percentile);
  write_json_file((fs::path(dir) / "thresholds.json").string(), thresholds_to_json(b.classes, b.thresholds));
  Json cut = Json::array();
  for (std::size_t c = 0; c < b.classes.size(); ++c) {
    cut.push_back({{"class", b.classes[c]}, {"cutoff", b.thresholds[c].cutoff}, {"count", b.thresholds[c].count}});
  }
  const auto out = out_dir(rc);
  write_json_file((out / "calibrate.json").string(),
                  envelope(rc, "detector calibrate", timer, {{"bundle", dir}, {"percentile", percentile}, {"thresholds", cut}}));
  std::cout << "detector calibrate: percentile " << percentile << " -> " << (fs::path(dir) / "thresholds.json").string()
            << '\n';
  return kOk;
}

Json detection_summary(const DetectorBundle& b, const EmbeddingMatrix& m, const DetectionReport& r) {
  Json j{{"samples", r.in_hcdr.size()}, {"hallucination_rate", r.hallucination_rate}};
  if (m.classes.size() == 1 && m.classes.front() == "unlabeled") return j;
  const auto map = class_map(m, b.classes);
  Json per = Json::array();
  for (std::size_t c = 0; c < b.classes.size(); ++c) {
    std::size_t n = 0;
    std::size_t inside = 0;
    for (std::size_t s = 0; s < m.rows(); ++s) {
      if (map[static_cast<std::size_t>(m.labels[s])] != static_cast<int>(c)) continue;
      ++n;
      inside += r.in_hdr[s][c];
    }
    if (n > 0) {
      per.push_back({{"class", b.classes[c]}, {"samples", n}, {"inside_own_hdr_rate", static_cast<double>(inside) / n}});
    }
  }
  j["per_class"] = per;
  return j;
}

int detector_detect(const RunConfig& rc) {
  const Timer timer;
  const auto b = read_bundle(bundle_dir(rc), true);
  const auto m = load_embeddings(rc, required<Json>(rc.config, "inputs"));
  const auto r = detect(b.models, b.thresholds, b.pipeline, m.data, b.classes);
  const auto out = out_dir(rc);
  std::ostringstream csv;
  csv.precision(17);
  csv << "row";
  for (const auto& c : b.classes) csv << ",log_density_" << c << ",in_hdr_" << c;
  csv << ",in_hcdr\n";
  for (std::size_t s = 0; s < r.in_hcdr.size(); ++s) {
    csv << s;
    for (std::size_t c = 0; c < b.classes.size(); ++c) {
      csv << ',' << r.log_density(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c)) << ','
          << static_cast<int>(r.in_hdr[s][c]);
    }
    csv << ',' << static_cast<int>(r.in_hcdr[s]) << '\n';
  }
  write_text(out / "detect.csv", csv.str());
  write_json_file((out / "detect.json").string(),
                  envelope(rc, "detector detect", timer, {{"summary", detection_summary(b, m, r)}, {"rows", "detect.csv"}}));
  std::cout << "detector detect: " << r.in_hcdr.size() << " sample(s), hallucination rate " << r.hallucination_rate
            << " -> " << (out / "detect.json").string() << '\n';
  return kOk;
}

int detector_report(const RunConfig& rc) {
  const Timer timer;
  const auto b = read_bundle(bundle_dir(rc), true);
  std::vector<TracePoint> points;
  Json summaries = Json::array();
  for (const auto& cp : required<Json>(rc.config, "checkpoints")) {
    const auto m = load_embeddings(rc, cp);
    const auto r = detect(b.models, b.thresholds, b.pipeline, m.data, b.classes);
    TracePoint p;
    p.checkpoint = required<int>(cp, "checkpoint");
    p.hallucination_rate = r.hallucination_rate;
    p.training_loss = optional_field<double>(cp, "training_loss", std::numeric_limits<double>::quiet_NaN());
    points.push_back(p);
    Json s = detection_summary(b, m, r);
    s["checkpoint"] = p.checkpoint;
    summaries.push_back(s);
  }
  const auto out = out_dir(rc);
  write_text(out / "hallucination_rate.csv", hallucination_rate_trace(points));
  write_json_file((out / "report.json").string(),
                  envelope(rc, "detector report", timer, {{"checkpoints", summaries}, {"trace", "hallucination_rate.csv"}}));
  std::cout << "detector report: " << points.size() << " checkpoint(s) -> " << (out / "hallucination_rate.csv").string()
            << '\n';
  return kOk;
}

// ---------------------------------------------------------------- hdr

Json intervals_json(const GridRegion& r) {
  Json arr = Json::array();
  for (const auto& [lo, hi] : r.intervals()) arr.push_back({lo, hi});
  return arr;
}

int cmd_hdr_plot(const RunConfig& rc) {
  const Timer timer;
  const Json& cfg = rc.config;
  const auto mixture = mixture_from_json(cfg.contains("mixture") ? cfg.at("mixture") : cfg);
  if (mixture.dim() > 2) throw InputError("plot data needs a 1-D or 2-D mixture");
  GridOptions go;
  go.sigmas = optional_field<double>(cfg, "sigmas", go.sigmas);
  go.cells_1d = optional_field<int>(cfg, "cells", go.cells_1d);
  go.cells_2d = optional_field<int>(cfg, "cells", go.cells_2d);
  const double mass = optional_field<double>(cfg, "mass", 0.9);
  if (!(mass > 0.0 && mass <= 1.0)) throw InputError("mass must lie in (0, 1]");
  const auto marginal = hdr_grid(mixture, mass, go);

  HcdrRegions hcdr;
  Json state_info = Json::array();
  if (cfg.contains("delta")) {
    const double delta = required<double>(cfg, "delta");
    check_delta(delta);
    hcdr = hcdr_from_delta(mixture, delta);
  } else {
    std::vector<double> masses(mixture.size(), mass);
    if (cfg.contains("state_mass")) {
      const Json& sm = cfg.at("state_mass");
      masses = sm.is_array() ? required<std::vector<double>>(cfg, "state_mass")
                             : std::vector<double>(mixture.size(), required<double>(cfg, "state_mass"));
    }
    hcdr = hcdr_from_mass(mixture, masses, go, 200000, derive_seed(rc.seed, "hdr-plot"));
  }

  const Grid grid = default_grid(mixture, go);
  const std::size_t k = mixture.size();
  GridRegion hdr_cells{grid, std::vector<std::uint8_t>(grid.size(), 0)};
  GridRegion union_cells{grid, std::vector<std::uint8_t>(grid.size(), 0)};
  std::vector<GridRegion> state_cells(k, GridRegion{grid, std::vector<std::uint8_t>(grid.size(), 0)});
  std::ostringstream csv;
  csv.precision(12);
  csv << (grid.dims == 1 ? "x" : "x,y") << ",density,in_hdr";
  for (std::size_t i = 0; i < k; ++i) csv << ",in_state_" << i;
  csv << ",in_hcdr\n";
  for (std::size_t cell = 0; cell < grid.size(); ++cell) {
    const Vector x = grid.center(cell);
    const double f = mixture_density(mixture, x);
    const bool in_hdr = marginal.region.admits(f);
    const auto in_state = hcdr.state_membership(mixture, x);
    bool in_union = false;
    for (int a = 0; a < grid.dims; ++a) csv << x(a) << ',';
    csv << f << ',' << (in_hdr ? 1 : 0);
    for (std::size_t i = 0; i < k; ++i) {
      csv << ',' << (in_state[i] ? 1 : 0);
      state_cells[i].member[cell] = in_state[i] ? 1 : 0;
      in_union = in_union || in_state[i];
    }
    csv << ',' << (in_union ? 1 : 0) << '\n';
    hdr_cells.member[cell] = in_hdr ? 1 : 0;
    union_cells.member[cell] = in_union ? 1 : 0;
  }
  const auto out = out_dir(rc);
  write_text(out / "hdr.csv", csv.str());

  Json summary{{"mass", mass},
               {"hdr_threshold", marginal.region.threshold},
               {"hdr_achieved_mass", marginal.achieved_mass},
               {"grid_cells", grid.size()},
               {"csv", "hdr.csv"}};
  for (std::size_t i = 0; i < k; ++i) {
    Json s{{"state", i}, {"region", region_kind(hcdr.per_state[i])}};
    if (const auto* t = std::get_if<ThresholdRegion>(&hcdr.per_state[i])) s["threshold"] = t->threshold;
    if (const auto* e = std::get_if<EllipsoidRegion>(&hcdr.per_state[i])) s["level"] = e->level;
    if (grid.dims == 1) s["intervals"] = intervals_json(state_cells[i]);
    state_info.push_back(s);
  }
  summary["states"] = state_info;
  if (grid.dims == 1) {
    summary["hdr_intervals"] = intervals_json(hdr_cells);
    summary["hcdr_intervals"] = intervals_json(union_cells);
  }
  write_json_file((out / "hdr.json").string(), envelope(rc, "hdr plot-data", timer, summary));
  std::cout << "hdr plot-data: " << grid.size() << " cells -> " << (out / "hdr.csv").string() << '\n';
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"hallu: delta-hallucination constructions, bounds and detectors"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  int workers = 0;
  std::string out;
  app.add_option("--config", config_path, "JSON config or spec file");
  app.add_option("--seed", seed_flag, "master seed (overrides HALLU_SEED and the config)");
  app.add_option("--workers", workers, "worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_option("--out", out, "output directory");

  auto* construct = app.add_subcommand("construct", "build and verify hallucination witnesses");
  auto* bound = app.add_subcommand("bound", "evaluate the hallucination lower bound");
  std::string verify;
  std::string d_variant;
  bound->add_option("--verify", verify, "Monte-Carlo verification, trials=<n>");
  bound->add_option("--d-variant", d_variant, "statement or proof");
  auto* coinflip = app.add_subcommand("coinflip", "coin-flip simulation, training and verdict");
  auto* detector = app.add_subcommand("detector", "HCDR detector over embedding files");
  detector->require_subcommand(1);
  detector->fallthrough();
  auto* fit = detector->add_subcommand("fit", "fit pipeline, class models and thresholds");
  auto* calib = detector->add_subcommand("calibrate", "recompute class thresholds");
  auto* det = detector->add_subcommand("detect", "score embeddings against the bundle");
  auto* rep = detector->add_subcommand("report", "hallucination rate over checkpoints");
  auto* hdr = app.add_subcommand("hdr", "highest-density region data");
  hdr->require_subcommand(1);
  hdr->fallthrough();
  auto* plot = hdr->add_subcommand("plot-data", "CSV grid with HDR and HCDR membership");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    RunConfig rc;
    rc.config_path = config_path;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw InputError("config file not found: " + config_path);
      rc.config = read_json_file(config_path);
      if (!rc.config.is_object()) throw InputError("config must be a JSON object");
    }
    rc.config_hash = config_hash(rc.config);
    rc.seed = resolve_seed(seed_flag, std::getenv("HALLU_SEED"), rc.config, &rc.seed_source);
    rc.workers = workers > 0 ? workers : optional_field<int>(rc.config, "workers", 0);
    rc.out = !out.empty() ? out : optional_field<std::string>(rc.config, "out", "run");
    kernels::set_workers(rc.workers);

    if (construct->parsed()) return cmd_construct(rc);
    if (bound->parsed()) return cmd_bound(rc, verify, d_variant);
    if (coinflip->parsed()) return cmd_coinflip(rc);
    if (fit->parsed()) return detector_fit(rc);
    if (calib->parsed()) return detector_calibrate(rc);
    if (det->parsed()) return detector_detect(rc);
    if (rep->parsed()) return detector_report(rc);
    if (plot->parsed()) return cmd_hdr_plot(rc);
    return kInvalid;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return kInfeasible;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing: " << e.what() << '\n';
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "unexpected: " << e.what() << '\n';
    return kUnexpected;
  }
}

}  // namespace hallu::cli
