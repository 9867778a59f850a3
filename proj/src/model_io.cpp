#include "scglr/model_io.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace scglr {

namespace {

using nlohmann::json;

json vec(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd to_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

// Matrices are stored as an array of columns.
json mat(const MatrixXd& m) {
  json cols = json::array();
  for (Index c = 0; c < m.cols(); ++c) cols.push_back(vec(m.col(c)));
  return cols;
}

MatrixXd to_mat(const json& j, Index rows) {
  MatrixXd m(rows, static_cast<Index>(j.size()));
  for (std::size_t c = 0; c < j.size(); ++c) {
    const VectorXd col = to_vec(j[c]);
    if (col.size() != rows) throw InvalidInput("model: matrix column has the wrong length");
    m.col(static_cast<Index>(c)) = col;
  }
  return m;
}

}  // namespace

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string model_to_json(const FitResult& fit, const RunMetadata& meta) {
  json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["meta"] = {{"tool_version", meta.tool_version},
               {"config_hash", meta.config_hash},
               {"seed", meta.seed}};
  j["config"] = {{"l", fit.config.l}, {"s", fit.config.s}};
  j["requested_components"] = fit.requested_components;
  j["num_components"] = fit.num_components();
  j["stop_reason"] = fit.stop_reason;
  j["converged"] = fit.converged();
  j["intercept"] = fit.intercept;
  j["random_effect"] = fit.random_effect;
  j["x_names"] = fit.x_names;
  j["t_names"] = fit.t_names;
  j["group_labels"] = fit.group_labels;
  j["standardization"] = {{"centers", vec(fit.standardization.centers)},
                          {"scales", vec(fit.standardization.scales)}};
  j["unit_weights"] = vec(fit.unit_weights);
  j["metric"] = mat(fit.metric);
  j["loadings"] = mat(fit.components.loadings);

  json responses = json::array();
  for (const auto& r : fit.responses) {
    responses.push_back({{"name", r.name},
                         {"family", std::string(r.family.name())},
                         {"dispersion", r.family.dispersion},
                         {"gamma", vec(r.state.gamma)},
                         {"delta", vec(r.state.delta)},
                         {"xi", vec(r.state.xi)},
                         {"sigma2", r.state.sigma2},
                         {"sigma2_floored", r.state.sigma2_floored},
                         {"beta_standardized", vec(r.beta_standardized)},
                         {"beta_original", vec(r.beta_original)},
                         {"intercept_original", r.intercept_original}});
  }
  j["responses"] = responses;

  json diags = json::array();
  for (const auto& d : fit.diagnostics) {
    diags.push_back({{"outer_iterations", d.outer_iterations},
                     {"converged", d.converged},
                     {"criterion_decreased", d.criterion_decreased},
                     {"ping_monotone", d.ping_monotone},
                     {"criterion_trace", d.criterion_trace},
                     {"change_trace", d.change_trace}});
  }
  j["diagnostics"] = diags;
  j["null_model"] = {{"iterations", fit.null_iterations}, {"converged", fit.null_converged}};
  return j.dump(2) + "\n";
}

FitResult model_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("model: ") + e.what());
  }
  if (j.value("format", std::string()) != kModelFormat)
    throw InvalidInput("model: not a mixed-scglr model document");
  if (j.value("version", 0) != kModelVersion)
    throw InvalidInput("model: unsupported version " + std::to_string(j.value("version", 0)));
  FitResult fit;
  try {
    fit.config.l = j.at("config").at("l").get<double>();
    fit.config.s = j.at("config").at("s").get<double>();
    fit.requested_components = j.at("requested_components").get<int>();
    fit.stop_reason = j.at("stop_reason").get<std::string>();
    fit.intercept = j.at("intercept").get<bool>();
    fit.random_effect = j.at("random_effect").get<bool>();
    fit.x_names = j.at("x_names").get<std::vector<std::string>>();
    fit.t_names = j.at("t_names").get<std::vector<std::string>>();
    fit.group_labels = j.at("group_labels").get<std::vector<std::string>>();
    fit.standardization.centers = to_vec(j.at("standardization").at("centers"));
    fit.standardization.scales = to_vec(j.at("standardization").at("scales"));
    fit.unit_weights = to_vec(j.at("unit_weights"));
    const auto p = static_cast<Index>(fit.x_names.size());
    fit.metric = to_mat(j.at("metric"), p);
    fit.components.loadings = to_mat(j.at("loadings"), p);
    for (const auto& r : j.at("responses")) {
      ResponseFit rf;
      rf.name = r.at("name").get<std::string>();
      rf.family = Family::from_name(r.at("family").get<std::string>());
      rf.family.dispersion = r.at("dispersion").get<double>();
      rf.state.gamma = to_vec(r.at("gamma"));
      rf.state.delta = to_vec(r.at("delta"));
      rf.state.xi = to_vec(r.at("xi"));
      rf.state.sigma2 = r.at("sigma2").get<double>();
      rf.state.sigma2_floored = r.at("sigma2_floored").get<bool>();
      rf.state.dispersion = rf.family.dispersion;
      rf.beta_standardized = to_vec(r.at("beta_standardized"));
      rf.beta_original = to_vec(r.at("beta_original"));
      rf.intercept_original = r.at("intercept_original").get<double>();
      fit.responses.push_back(std::move(rf));
    }
    for (const auto& d : j.at("diagnostics")) {
      ComponentDiagnostics cd;
      cd.outer_iterations = d.at("outer_iterations").get<int>();
      cd.converged = d.at("converged").get<bool>();
      cd.criterion_decreased = d.at("criterion_decreased").get<bool>();
      cd.ping_monotone = d.at("ping_monotone").get<bool>();
      cd.criterion_trace = d.at("criterion_trace").get<std::vector<double>>();
      cd.change_trace = d.at("change_trace").get<std::vector<double>>();
      fit.diagnostics.push_back(std::move(cd));
    }
    fit.null_iterations = j.at("null_model").at("iterations").get<int>();
    fit.null_converged = j.at("null_model").at("converged").get<bool>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("model: ") + e.what());
  }
  return fit;
}

void save_model(const std::string& path, const FitResult& fit, const RunMetadata& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out << model_to_json(fit, meta);
}

FitResult load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open model '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace scglr
