// scglr: command-line front end for fitting, prediction, simulation studies,
// cross-validation and correlation-scatterplot export.

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scglr/data_model.hpp"
#include "scglr/error.hpp"
#include "scglr/evaluation.hpp"
#include "scglr/mixed_scglr.hpp"
#include "scglr/model_io.hpp"
#include "scglr/parallel.hpp"
#include "scglr/simulation.hpp"
#include "scglr/text.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNotConverged = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;
  std::string config;
  std::string data;
  std::string roles;
  std::string model;
  std::string out;
  int K = 2;
  double s = 0.5;
  double l = 4.0;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  int folds = 5;
  std::string k_grid = "0,1,2,3,4,5";
  std::string s_grid = "0.5";
  std::string l_grid = "4";
  std::string metric = "auto";
  bool marginal = false;
  std::string taus = "0.5,0.9";
  int replicates = 50;
  bool study_cv = false;
  std::string plane = "1,2";
  double threshold = 0.8;
  int max_iterations = 200;
  double tolerance = 1e-6;
  bool no_intercept = false;
};

// ---- configuration --------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Applies keys of the --config JSON to settings whose flag was not given.
void apply_config_file(RunConfig& cfg, CLI::App& sub) {
  if (cfg.config.empty()) return;
  json j;
  try {
    j = json::parse(read_file(cfg.config));
  } catch (const json::exception& e) {
    throw UsageError("config '" + cfg.config + "': " + e.what());
  }
  if (!j.is_object()) throw UsageError("config '" + cfg.config + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option(flag);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError("config field '" + key + "' is not an option of '" + cfg.command + "'");
    }
    if (opt->count() > 0) continue;  // flags win
    std::vector<std::string> tokens;
    try {
      if (value.is_array()) {
        std::string joined;
        for (const auto& v : value) {
          if (!joined.empty()) joined += ',';
          joined += v.is_string() ? v.get<std::string>() : v.dump();
        }
        tokens.push_back(joined);
      } else if (value.is_boolean()) {
        if (!value.get<bool>()) continue;
        tokens.push_back("true");
      } else {
        tokens.push_back(value.is_string() ? value.get<std::string>() : value.dump());
      }
      opt->add_result(tokens);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError("config field '" + key + "': " + e.what());
    }
  }
}

// Comma-separated list; an empty list is a usage error naming the flag.
template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) throw UsageError(std::string(flag) + " has an empty entry");
    item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof())
      throw UsageError(std::string(flag) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string(flag) + " is empty");
  return out;
}

std::string content_hash(const std::string& path) {
  if (path.empty()) return "";
  return scglr::fnv1a_hex(read_file(path));
}

// Everything that determines the numerical output; threads and paths do not.
std::string config_hash(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["data"] = content_hash(c.data);
  j["roles"] = content_hash(c.roles);
  j["model"] = content_hash(c.model);
  j["K"] = c.K;
  j["s"] = c.s;
  j["l"] = c.l;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["folds"] = c.folds;
  j["k_grid"] = c.k_grid;
  j["s_grid"] = c.s_grid;
  j["l_grid"] = c.l_grid;
  j["metric"] = c.metric;
  j["marginal"] = c.marginal;
  j["taus"] = c.taus;
  j["replicates"] = c.replicates;
  j["study_cv"] = c.study_cv;
  j["plane"] = c.plane;
  j["threshold"] = c.threshold;
  j["max_iterations"] = c.max_iterations;
  j["tolerance"] = c.tolerance;
  j["intercept"] = !c.no_intercept;
  return scglr::fnv1a_hex(j.dump());
}

std::string csv_header(const scglr::RunMetadata& meta) {
  return "# scglr " + meta.tool_version + "\n# config_hash: " + meta.config_hash +
         "\n# seed: " + std::to_string(meta.seed) + "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw scglr::Error("cannot write '" + path.string() + "'");
  out << text;
  spdlog::info("wrote {}", path.string());
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

void check_hyper(const RunConfig& c) {
  if (c.K < 0) throw UsageError("--K must be nonnegative");
  if (!(c.s >= 0.0 && c.s <= 1.0)) throw UsageError("--s must lie in [0, 1]");
  if (!(c.l >= 1.0)) throw UsageError("--l must be >= 1");
  if (c.max_iterations < 1) throw UsageError("--max-iterations must be positive");
  if (!(c.tolerance > 0.0)) throw UsageError("--tolerance must be positive");
}

scglr::FitOptions fit_options(const RunConfig& c) {
  scglr::FitOptions o;
  o.max_outer_iterations = c.max_iterations;
  o.tolerance = c.tolerance;
  o.intercept = !c.no_intercept;
  o.threads = scglr::resolve_threads(c.threads);
  if (c.seed) o.ping.seed = *c.seed;
  return o;
}

scglr::LoadedData load(const RunConfig& c, std::span<const std::string> labels = {},
                       bool require_responses = true) {
  require(c.data, "--data");
  require(c.roles, "--roles");
  const auto roles = scglr::ColumnRoles::from_file(c.roles);
  return scglr::load_dataset(scglr::read_csv(c.data), roles, labels, require_responses);
}

std::optional<scglr::Weighting> weighting_of(const scglr::LoadedData& d) {
  if (d.weights.size() == 0) return std::nullopt;
  const double total = d.weights.sum();
  if (!(total > 0.0)) throw scglr::InvalidInput("weight column sums to zero");
  return scglr::Weighting{d.weights / total,
                          Eigen::MatrixXd::Identity(d.dataset.p(), d.dataset.p())};
}

// ---- outputs --------------------------------------------------------------

std::string coefficients_csv(const scglr::FitResult& f, const scglr::RunMetadata& meta) {
  std::ostringstream os;
  os << csv_header(meta) << "response,term,standardized,original\n";
  for (const auto& r : f.responses) {
    const auto name = scglr::csv_field(r.name);
    Eigen::Index t0 = 0;
    if (f.intercept) {
      os << name << ",(Intercept)," << scglr::format_double(r.state.delta(0)) << ','
         << scglr::format_double(r.intercept_original) << '\n';
      t0 = 1;
    }
    for (std::size_t j = 0; j < f.x_names.size(); ++j)
      os << name << ',' << scglr::csv_field(f.x_names[j]) << ','
         << scglr::format_double(r.beta_standardized(static_cast<Eigen::Index>(j))) << ','
         << scglr::format_double(r.beta_original(static_cast<Eigen::Index>(j))) << '\n';
    for (std::size_t j = 0; j < f.t_names.size(); ++j) {
      const double v = r.state.delta(t0 + static_cast<Eigen::Index>(j));
      os << name << ',' << scglr::csv_field(f.t_names[j]) << ',' << scglr::format_double(v) << ','
         << scglr::format_double(v) << '\n';
    }
  }
  return os.str();
}

std::string random_effects_csv(const scglr::FitResult& f, const scglr::RunMetadata& meta) {
  std::ostringstream os;
  os << csv_header(meta) << "response,group,xi,sigma2,dispersion\n";
  for (const auto& r : f.responses)
    for (std::size_t g = 0; g < f.group_labels.size(); ++g)
      os << scglr::csv_field(r.name) << ',' << scglr::csv_field(f.group_labels[g]) << ','
         << scglr::format_double(r.state.xi(static_cast<Eigen::Index>(g))) << ','
         << scglr::format_double(r.state.sigma2) << ','
         << scglr::format_double(r.family.kind == scglr::FamilyKind::Gaussian ? r.state.dispersion
                                                                              : 1.0)
         << '\n';
  return os.str();
}

std::string diagnostics_csv(const scglr::FitResult& f, const scglr::RunMetadata& meta) {
  std::ostringstream os;
  os << csv_header(meta);
  if (!f.stop_reason.empty()) os << "# stopped: " << f.stop_reason << '\n';
  os << "component,outer_iterations,converged,ping_monotone,criterion_decreased,criterion,change\n";
  if (f.num_components() == 0) {
    os << "0," << f.null_iterations << ',' << (f.null_converged ? 1 : 0) << ",1,0,NA,NA\n";
    return os.str();
  }
  for (std::size_t h = 0; h < f.diagnostics.size(); ++h) {
    const auto& d = f.diagnostics[h];
    os << h + 1 << ',' << d.outer_iterations << ',' << (d.converged ? 1 : 0) << ','
       << (d.ping_monotone ? 1 : 0) << ',' << (d.criterion_decreased ? 1 : 0) << ','
       << scglr::format_double(d.criterion_trace.empty() ? 0.0 : d.criterion_trace.back()) << ','
       << scglr::format_double(d.change_trace.empty() ? 0.0 : d.change_trace.back()) << '\n';
  }
  return os.str();
}

int report_convergence(const scglr::FitResult& f) {
  if (!f.stop_reason.empty())
    spdlog::warn("extraction stopped early: {}", f.stop_reason);
  if (!f.converged()) {
    spdlog::warn("fit did not reach the stability threshold");
    return kExitNotConverged;
  }
  return kExitOk;
}

void write_fit(const fs::path& dir, const scglr::FitResult& f, const scglr::RunMetadata& meta) {
  write_text(dir / "model.json", scglr::model_to_json(f, meta));
  write_text(dir / "coefficients.csv", coefficients_csv(f, meta));
  write_text(dir / "random_effects.csv", random_effects_csv(f, meta));
  write_text(dir / "diagnostics.csv", diagnostics_csv(f, meta));
}

// ---- commands -------------------------------------------------------------

int cmd_fit(const RunConfig& c, const scglr::RunMetadata& meta) {
  check_hyper(c);
  const auto loaded = load(c);
  if (c.K > loaded.dataset.p())
    throw UsageError("--K must not exceed the number of X columns (" +
                     std::to_string(loaded.dataset.p()) + ")");
  const scglr::FitResult f = scglr::fit(loaded.dataset, c.K, scglr::CriterionConfig{c.l, c.s},
                                        fit_options(c), weighting_of(loaded));
  const fs::path dir = c.out.empty() ? fs::path("scglr-fit") : fs::path(c.out);
  write_fit(dir, f, meta);
  std::cout << "components: " << f.num_components() << " of " << c.K
            << "\nconverged: " << (f.converged() ? "yes" : "no") << '\n';
  for (const auto& r : f.responses)
    std::cout << r.name << " (" << r.family.name() << "): sigma2 = "
              << scglr::format_double(r.state.sigma2) << '\n';
  return report_convergence(f);
}

int cmd_predict(const RunConfig& c, const scglr::RunMetadata& meta) {
  require(c.model, "--model");
  const scglr::FitResult f = scglr::load_model(c.model);
  const auto loaded = load(c, f.group_labels, false);
  const auto& d = loaded.dataset;
  std::optional<std::span<const int>> groups;
  if (!c.marginal) groups = std::span<const int>(d.groups);
  const scglr::Prediction pr = scglr::predict(f, d.X, d.T, groups);
  std::ostringstream os;
  os << csv_header(meta) << "row";
  for (const auto& r : f.responses) os << ',' << scglr::csv_field("eta_" + r.name);
  for (const auto& r : f.responses) os << ',' << scglr::csv_field("mu_" + r.name);
  os << '\n';
  for (Eigen::Index i = 0; i < pr.eta.rows(); ++i) {
    os << i + 1;
    for (Eigen::Index k = 0; k < pr.eta.cols(); ++k) os << ',' << scglr::format_double(pr.eta(i, k));
    for (Eigen::Index k = 0; k < pr.mu.cols(); ++k) os << ',' << scglr::format_double(pr.mu(i, k));
    os << '\n';
  }
  write_text(c.out.empty() ? fs::path("predictions.csv") : fs::path(c.out), os.str());
  return kExitOk;
}

scglr::CvPlan cv_plan(const RunConfig& c) {
  if (c.folds < 2) throw UsageError("--folds must be at least 2");
  scglr::CvPlan plan;
  plan.folds = c.folds;
  plan.k_grid = parse_list<int>(c.k_grid, "--k-grid");
  plan.s_grid = parse_list<double>(c.s_grid, "--s-grid");
  plan.l_grid = parse_list<double>(c.l_grid, "--l-grid");
  for (int K : plan.k_grid)
    if (K < 0) throw UsageError("--k-grid values must be nonnegative");
  for (double s : plan.s_grid)
    if (!(s >= 0.0 && s <= 1.0)) throw UsageError("--s-grid values must lie in [0, 1]");
  for (double l : plan.l_grid)
    if (!(l >= 1.0)) throw UsageError("--l-grid values must be >= 1");
  plan.seed = *c.seed;
  plan.conditional = !c.marginal;
  plan.threads = scglr::resolve_threads(c.threads);
  if (c.metric == "auto")
    plan.metric = scglr::CvMetric::Auto;
  else if (c.metric == "mean")
    plan.metric = scglr::CvMetric::AveNrmse;
  else if (c.metric == "sd")
    plan.metric = scglr::CvMetric::AveNrmseSd;
  else
    throw UsageError("--metric must be auto, mean or sd");
  return plan;
}

int cmd_cv(const RunConfig& c, const scglr::RunMetadata& meta) {
  if (!c.seed) throw UsageError("--seed is required for cv");
  check_hyper(c);
  const scglr::CvPlan plan = cv_plan(c);
  const auto loaded = load(c);
  if (loaded.weights.size() > 0)
    spdlog::warn("the weight column is ignored by cross-validation folds");
  scglr::FitOptions opts = fit_options(c);
  const scglr::CvResult res = scglr::cross_validate(loaded.dataset, plan, opts);
  const fs::path dir = c.out.empty() ? fs::path("scglr-cv") : fs::path(c.out);
  write_text(dir / "cv.csv", csv_header(meta) + scglr::cv_table_csv(res));

  json sel;
  sel["meta"] = {{"tool_version", meta.tool_version},
                 {"config_hash", meta.config_hash},
                 {"seed", meta.seed}};
  sel["metric"] = res.metric_name;
  sel["folds"] = plan.folds;
  sel["best"] = {{"K", res.best.K}, {"s", res.best.s}, {"l", res.best.l}, {"value", res.best.metric}};
  write_text(dir / "selection.json", sel.dump(2) + "\n");

  const scglr::FitResult f =
      scglr::fit(loaded.dataset, res.best.K, scglr::CriterionConfig{res.best.l, res.best.s}, opts,
                 weighting_of(loaded));
  write_fit(dir, f, meta);
  std::cout << "selected K = " << res.best.K << ", s = " << scglr::format_double(res.best.s)
            << ", l = " << scglr::format_double(res.best.l) << " (" << res.metric_name << " "
            << scglr::format_double(res.best.metric) << ")\n";
  return report_convergence(f);
}

int cmd_simulate(const RunConfig& c, const scglr::RunMetadata& meta) {
  if (!c.seed) throw UsageError("--seed is required for simulate");
  check_hyper(c);
  if (c.replicates < 1) throw UsageError("--replicates must be positive");
  const auto taus = parse_list<double>(c.taus, "--taus");
  for (double t : taus)
    if (!(t >= 0.0 && t < 1.0)) throw UsageError("--taus values must lie in [0, 1)");
  std::vector<scglr::EstimatorSpec> est;
  scglr::EstimatorSpec lmm;
  lmm.kind = scglr::EstimatorKind::Lmm;
  est.push_back(lmm);
  scglr::EstimatorSpec mixed;
  mixed.K = c.K;
  mixed.s = c.s;
  mixed.l = c.l;
  est.push_back(mixed);
  if (c.study_cv) {
    scglr::EstimatorSpec cv = mixed;
    cv.cv = cv_plan(c);
    cv.cv->threads = 1;
    est.push_back(cv);
  }
  scglr::StudyOptions so;
  so.seed = *c.seed;
  so.threads = scglr::resolve_threads(c.threads);
  so.fit = fit_options(c);
  const scglr::StudyTable table = scglr::run_study(taus, c.replicates, est, so);
  const fs::path dir = c.out.empty() ? fs::path("scglr-sim") : fs::path(c.out);
  write_text(dir / "replicates.csv", csv_header(meta) + scglr::study_rows_csv(table));
  const std::string summary = scglr::study_summary_csv(table);
  write_text(dir / "summary.csv", csv_header(meta) + summary);
  std::cout << summary;
  return kExitOk;
}

int cmd_plotdata(const RunConfig& c, const scglr::RunMetadata& meta) {
  require(c.model, "--model");
  const auto plane = parse_list<int>(c.plane, "--plane");
  if (plane.size() != 2) throw UsageError("--plane takes two component indices");
  const scglr::FitResult f = scglr::load_model(c.model);
  const auto K = static_cast<int>(f.num_components());
  for (int a : plane)
    if (a < 1 || a > K)
      throw UsageError("--plane index " + std::to_string(a) + " outside 1.." + std::to_string(K));
  if (plane[0] == plane[1]) throw UsageError("--plane indices must differ");
  const auto loaded = load(c, f.group_labels, false);
  const auto rows =
      scglr::correlation_scatterplot_data(f, loaded.dataset, plane[0], plane[1], c.threshold);
  write_text(c.out.empty() ? fs::path("scatterplot.csv") : fs::path(c.out),
             csv_header(meta) + scglr::scatterplot_csv(rows));
  return kExitOk;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("scglr");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("SCGLR_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Supervised component regression for grouped GLMMs"};
  app.set_version_flag("--version", std::string(scglr::kToolVersion));
  app.require_subcommand(1);

  RunConfig cfg;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", cfg.config, "JSON file of option values (flags win)");
    sub->add_option("--threads", cfg.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", cfg.out, "Output directory or file");
    sub->add_option("--seed", cfg.seed, "Random seed");
  };
  const auto data_opts = [&](CLI::App* sub) {
    sub->add_option("--data", cfg.data, "CSV data file");
    sub->add_option("--roles", cfg.roles, "JSON column roles");
  };
  const auto fit_opts = [&](CLI::App* sub) {
    sub->add_option("--K", cfg.K, "Number of components");
    sub->add_option("--s", cfg.s, "Trade-off between structure and fit, in [0,1]");
    sub->add_option("--l", cfg.l, "Bundle locality exponent (>= 1)");
    sub->add_option("--max-iterations", cfg.max_iterations, "Outer iterations per component");
    sub->add_option("--tolerance", cfg.tolerance, "Stability threshold");
    sub->add_flag("--no-intercept", cfg.no_intercept, "Do not add an intercept column to T");
  };
  const auto cv_opts = [&](CLI::App* sub) {
    sub->add_option("--folds", cfg.folds, "Number of folds");
    sub->add_option("--k-grid", cfg.k_grid, "Candidate K values, comma separated");
    sub->add_option("--s-grid", cfg.s_grid, "Candidate s values, comma separated");
    sub->add_option("--l-grid", cfg.l_grid, "Candidate l values, comma separated");
    sub->add_option("--metric", cfg.metric, "auto, mean (AveNRMSE) or sd");
    sub->add_flag("--marginal", cfg.marginal, "Predict held-out rows without random effects");
  };

  auto* fit = app.add_subcommand("fit", "Fit a model");
  common(fit);
  data_opts(fit);
  fit_opts(fit);

  auto* predict = app.add_subcommand("predict", "Predict from a saved model");
  common(predict);
  data_opts(predict);
  predict->add_option("--model", cfg.model, "Model JSON");
  predict->add_flag("--marginal", cfg.marginal, "Leave out the predicted random effects");

  auto* simulate = app.add_subcommand("simulate", "Run the two-response simulation study");
  common(simulate);
  fit_opts(simulate);
  simulate->add_option("--taus", cfg.taus, "Within-bundle correlation levels, comma separated");
  simulate->add_option("--replicates", cfg.replicates, "Replicates per tau");
  simulate->add_flag("--cv", cfg.study_cv, "Add an estimator tuned by cross-validation");
  cv_opts(simulate);

  auto* cv = app.add_subcommand("cv", "Select K, s and l by cross-validation, then refit");
  common(cv);
  data_opts(cv);
  fit_opts(cv);
  cv_opts(cv);

  auto* plot = app.add_subcommand("plotdata", "Export correlation scatterplot data");
  common(plot);
  data_opts(plot);
  plot->add_option("--model", cfg.model, "Model JSON");
  plot->add_option("--plane", cfg.plane, "Two component indices, e.g. 1,2");
  plot->add_option("--threshold", cfg.threshold, "Minimum plane cosine for X variables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    cfg.command = sub->get_name();
    apply_config_file(cfg, *sub);

    scglr::RunMetadata meta;
    meta.config_hash = config_hash(cfg);
    meta.seed = cfg.seed.value_or(scglr::PingOptions{}.seed);
    spdlog::info("{} (config {}, seed {})", cfg.command, meta.config_hash, meta.seed);

    if (cfg.command == "fit") return cmd_fit(cfg, meta);
    if (cfg.command == "predict") return cmd_predict(cfg, meta);
    if (cfg.command == "simulate") return cmd_simulate(cfg, meta);
    if (cfg.command == "cv") return cmd_cv(cfg, meta);
    return cmd_plotdata(cfg, meta);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}
