#include "scglr/data_model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <json.hpp>
#include <sstream>

namespace scglr {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

double parse_number(const std::string& cell, std::size_t row, std::string_view column) {
  std::string_view s(cell);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) {
    throw InvalidInput("row " + std::to_string(row + 1) + ", column '" + std::string(column) +
                       "': missing or non-numeric value '" + cell + "'");
  }
  return value;
}

}  // namespace

// ---- Family ---------------------------------------------------------------

Family Family::gaussian(double dispersion) {
  if (!(dispersion > 0.0)) throw InvalidInput("Gaussian dispersion must be positive");
  return Family{FamilyKind::Gaussian, dispersion};
}

Family Family::poisson() { return Family{FamilyKind::Poisson, 1.0}; }

Family Family::from_name(std::string_view name) {
  const auto n = lower(name);
  if (n == "gaussian" || n == "normal") return gaussian();
  if (n == "poisson") return poisson();
  throw InvalidInput("unknown family '" + std::string(name) + "' (expected gaussian or poisson)");
}

std::string_view Family::name() const {
  return kind == FamilyKind::Gaussian ? "gaussian" : "poisson";
}

double Family::link(double mu) const {
  return kind == FamilyKind::Gaussian ? mu : std::log(mu);
}

double Family::inverse_link(double eta) const {
  return kind == FamilyKind::Gaussian ? eta : std::exp(eta);
}

double Family::link_derivative(double mu) const {
  return kind == FamilyKind::Gaussian ? 1.0 : 1.0 / mu;
}

double Family::variance(double mu) const {
  return kind == FamilyKind::Gaussian ? dispersion : mu;
}

// ---- Weighting ------------------------------------------------------------

Weighting Weighting::uniform(Index n, Index p) {
  return Weighting{VectorXd::Constant(n, 1.0 / static_cast<double>(n)),
                   MatrixXd::Identity(p, p)};
}

bool Weighting::metric_is_identity() const {
  return metric.isIdentity(0.0);
}

void Weighting::validate(Index n, Index p) const {
  if (unit_weights.size() != n)
    throw InvalidInput("unit weights: expected " + std::to_string(n) + " entries");
  if ((unit_weights.array() < 0.0).any() || !unit_weights.allFinite())
    throw InvalidInput("unit weights must be finite and nonnegative");
  if (!(unit_weights.sum() > 0.0)) throw InvalidInput("unit weights sum to zero");
  if (metric.rows() != p || metric.cols() != p)
    throw InvalidInput("metric A must be " + std::to_string(p) + "x" + std::to_string(p));
  if (!metric.isApprox(metric.transpose(), 1e-12))
    throw InvalidInput("metric A must be symmetric");
  Eigen::LLT<MatrixXd> llt(metric);
  if (llt.info() != Eigen::Success)
    throw RankDeficiency("metric A is not positive definite");
}

// ---- Dataset --------------------------------------------------------------

void Dataset::finalize() {
  if (T.rows() == 0 && T.cols() == 0) T.resize(X.rows(), 0);
  auto fill = [](std::vector<std::string>& names, Index count, const char* prefix) {
    if (names.empty())
      for (Index j = 0; j < count; ++j) names.push_back(prefix + std::to_string(j + 1));
  };
  fill(response_names, Y.cols(), "y");
  fill(x_names, X.cols(), "x");
  fill(t_names, T.cols(), "t");
  if (families.empty()) families.assign(static_cast<std::size_t>(Y.cols()), Family::gaussian());
  if (group_labels.empty() && !groups.empty()) {
    const int N = *std::max_element(groups.begin(), groups.end());
    for (int g = 1; g <= N; ++g) group_labels.push_back(std::to_string(g));
  }
  validate();
}

void Dataset::validate() const {
  const Index rows = X.rows();
  if (Y.rows() != rows || T.rows() != rows || static_cast<Index>(groups.size()) != rows)
    throw InvalidInput("Y, X, T and groups must have the same number of rows");
  if (Y.cols() < 1) throw InvalidInput("at least one response is required");
  if (X.cols() < 1) throw InvalidInput("the X block needs at least one column");
  if (static_cast<Index>(families.size()) != Y.cols())
    throw InvalidInput("one family per response is required");
  if (static_cast<Index>(response_names.size()) != Y.cols() ||
      static_cast<Index>(x_names.size()) != X.cols() ||
      static_cast<Index>(t_names.size()) != T.cols())
    throw InvalidInput("column name lists do not match the matrix widths");
  const int N = num_groups();
  if (N < 2) throw InvalidInput("at least two groups are required");
  std::vector<int> counts(static_cast<std::size_t>(N), 0);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int g = groups[i];
    if (g < 1 || g > N)
      throw InvalidInput("row " + std::to_string(i + 1) + ": group " + std::to_string(g) +
                         " outside 1.." + std::to_string(N));
    ++counts[static_cast<std::size_t>(g - 1)];
  }
  for (int g = 0; g < N; ++g)
    if (counts[static_cast<std::size_t>(g)] == 0)
      throw InvalidInput("group '" + group_labels[static_cast<std::size_t>(g)] + "' is empty");
  if (!Y.allFinite() || !X.allFinite() || !T.allFinite())
    throw InvalidInput("missing or non-finite values are not supported");
  for (Index k = 0; k < Y.cols(); ++k) {
    if (families[static_cast<std::size_t>(k)].kind == FamilyKind::Poisson &&
        (Y.col(k).array() < 0.0).any())
      throw InvalidInput("response '" + response_names[static_cast<std::size_t>(k)] +
                         "' is Poisson but has negative values");
  }
}

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out;
  const auto m = static_cast<Index>(rows.size());
  out.Y.resize(m, Y.cols());
  out.X.resize(m, X.cols());
  out.T.resize(m, T.cols());
  out.groups.resize(rows.size());
  for (Index i = 0; i < m; ++i) {
    const Index src = rows[static_cast<std::size_t>(i)];
    out.Y.row(i) = Y.row(src);
    out.X.row(i) = X.row(src);
    out.T.row(i) = T.row(src);
    out.groups[static_cast<std::size_t>(i)] = groups[static_cast<std::size_t>(src)];
  }
  out.families = families;
  out.response_names = response_names;
  out.x_names = x_names;
  out.t_names = t_names;
  out.group_labels = group_labels;
  return out;
}

// ---- Standardization ------------------------------------------------------

MatrixXd Standardization::apply(const MatrixXd& X) const {
  if (X.cols() != centers.size())
    throw InvalidInput("X has " + std::to_string(X.cols()) + " columns, model expects " +
                       std::to_string(centers.size()));
  MatrixXd out(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j)
    out.col(j) = (X.col(j).array() - centers(j)) / scales(j);
  return out;
}

StandardizedX standardize(const MatrixXd& X, const VectorXd& w) {
  if (w.size() != X.rows()) throw InvalidInput("standardize: weight length mismatch");
  const VectorXd wn = w / w.sum();
  Standardization tr{VectorXd(X.cols()), VectorXd(X.cols())};
  for (Index j = 0; j < X.cols(); ++j) {
    const double mean = wn.dot(X.col(j));
    const double var = (wn.array() * (X.col(j).array() - mean).square()).sum();
    const double scale = std::sqrt(var);
    if (!(scale > 1e-12 * (1.0 + std::abs(mean))))
      throw InvalidInput("X column " + std::to_string(j + 1) + " is constant");
    tr.centers(j) = mean;
    tr.scales(j) = scale;
  }
  return {tr.apply(X), tr};
}

StandardizedX standardize(const MatrixXd& X) {
  return standardize(X, VectorXd::Constant(X.rows(), 1.0 / static_cast<double>(X.rows())));
}

MatrixXd build_indicator(std::span<const int> groups, int num_groups) {
  MatrixXd U = MatrixXd::Zero(static_cast<Index>(groups.size()), num_groups);
  std::vector<bool> seen(static_cast<std::size_t>(num_groups), false);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int g = groups[i];
    if (g < 1 || g > num_groups)
      throw InvalidInput("group label " + std::to_string(g) + " outside 1.." +
                         std::to_string(num_groups));
    U(static_cast<Index>(i), g - 1) = 1.0;
    seen[static_cast<std::size_t>(g - 1)] = true;
  }
  for (int g = 0; g < num_groups; ++g)
    if (!seen[static_cast<std::size_t>(g)])
      throw InvalidInput("group " + std::to_string(g + 1) + " has no rows");
  return U;
}

// ---- CSV ------------------------------------------------------------------

Index CsvTable::column(std::string_view name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<Index>(j);
  throw InvalidInput("column '" + std::string(name) + "' not found in CSV header");
}

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool any = false;
  std::size_t line = 1;
  auto end_record = [&] {
    fields.push_back(std::move(field));
    field.clear();
    const bool blank = fields.size() == 1 && fields.front().empty();
    const bool comment = !fields.front().empty() && fields.front().front() == '#';
    if (!blank && !comment) {
      if (table.header.empty()) {
        table.header = std::move(fields);
      } else {
        if (fields.size() != table.header.size())
          throw InvalidInput("CSV line " + std::to_string(line) + ": expected " +
                             std::to_string(table.header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        table.rows.push_back(std::move(fields));
      }
    }
    fields.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"': quoted = true; any = true; break;
      case ',': fields.push_back(std::move(field)); field.clear(); any = true; break;
      case '\r': break;
      case '\n': end_record(); ++line; break;
      default: field.push_back(c); any = true;
    }
  }
  if (quoted) throw InvalidInput("CSV: unterminated quoted field");
  if (any || !field.empty()) end_record();
  if (table.header.empty()) throw InvalidInput("CSV: missing header row");
  return table;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

ColumnRoles ColumnRoles::from_json_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("roles: ") + e.what());
  }
  ColumnRoles roles;
  try {
    if (!j.contains("responses")) throw InvalidInput("roles: missing field 'responses'");
    for (const auto& r : j.at("responses")) {
      roles.responses.push_back(
          {r.at("column").get<std::string>(),
           Family::from_name(r.value("family", std::string("gaussian")))});
    }
    if (!j.contains("x")) throw InvalidInput("roles: missing field 'x'");
    roles.x = j.at("x").get<std::vector<std::string>>();
    if (j.contains("t")) roles.t = j.at("t").get<std::vector<std::string>>();
    if (!j.contains("group")) throw InvalidInput("roles: missing field 'group'");
    roles.group = j.at("group").get<std::string>();
    if (j.contains("weight")) roles.weight = j.at("weight").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("roles: ") + e.what());
  }
  if (roles.x.empty()) throw InvalidInput("roles: field 'x' must list at least one column");
  return roles;
}

ColumnRoles ColumnRoles::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open roles file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

LoadedData load_dataset(const CsvTable& table, const ColumnRoles& roles,
                        std::span<const std::string> known_group_labels,
                        bool require_responses) {
  const auto n = static_cast<Index>(table.rows.size());
  if (n == 0) throw InvalidInput("CSV has no data rows");
  auto numeric_block = [&](const std::vector<std::string>& names) {
    MatrixXd M(n, static_cast<Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
      const Index c = table.column(names[j]);
      for (Index i = 0; i < n; ++i)
        M(i, static_cast<Index>(j)) =
            parse_number(table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)],
                         static_cast<std::size_t>(i), names[j]);
    }
    return M;
  };

  LoadedData out;
  Dataset& d = out.dataset;
  std::vector<std::string> response_cols;
  for (const auto& r : roles.responses) {
    response_cols.push_back(r.column);
    d.families.push_back(r.family);
  }
  if (require_responses) {
    d.Y = numeric_block(response_cols);
  } else {
    d.Y = MatrixXd::Zero(n, static_cast<Index>(response_cols.size()));
  }
  d.X = numeric_block(roles.x);
  d.T = numeric_block(roles.t);
  d.response_names = response_cols;
  d.x_names = roles.x;
  d.t_names = roles.t;

  const Index gc = table.column(roles.group);
  std::vector<std::string> raw(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    raw[static_cast<std::size_t>(i)] = table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(gc)];

  std::map<std::string, int> index;
  if (known_group_labels.empty()) {
    std::vector<std::string> labels = raw;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    for (std::size_t g = 0; g < labels.size(); ++g) index[labels[g]] = static_cast<int>(g + 1);
    d.group_labels = labels;
  } else {
    for (std::size_t g = 0; g < known_group_labels.size(); ++g)
      index[known_group_labels[g]] = static_cast<int>(g + 1);
    d.group_labels.assign(known_group_labels.begin(), known_group_labels.end());
  }
  d.groups.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto it = index.find(raw[i]);
    // 0 marks a label unseen at training time (only possible for prediction).
    d.groups[i] = it == index.end() ? 0 : it->second;
  }

  if (!roles.weight.empty()) out.weights = numeric_block({roles.weight}).col(0);
  if (known_group_labels.empty()) d.finalize();
  return out;
}

}  // namespace scglr
