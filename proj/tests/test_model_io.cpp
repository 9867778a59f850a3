#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "scglr/model_io.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace scglr;
namespace t = scglr::testing;

namespace {

FitResult sample_fit() {
  t::PoissonDesign pd;
  pd.groups = 6;
  pd.per_group = 10;
  pd.noise = 3;
  pd.responses = 2;
  pd.seed = 21;
  static const Dataset d = t::poisson_dataset(pd);
  return fit(d, 2, CriterionConfig{4.0, 0.5});
}

}  // namespace

TEST(ModelIo, RoundTripPreservesPredictions) {
  const FitResult f = sample_fit();
  const FitResult g = model_from_json(model_to_json(f, RunMetadata{"", "abc", 7}));
  EXPECT_EQ(g.components.loadings, f.components.loadings);
  EXPECT_EQ(g.standardization.centers, f.standardization.centers);
  EXPECT_EQ(g.standardization.scales, f.standardization.scales);
  ASSERT_EQ(g.responses.size(), f.responses.size());
  for (std::size_t k = 0; k < f.responses.size(); ++k) {
    EXPECT_EQ(g.responses[k].state.gamma, f.responses[k].state.gamma);
    EXPECT_EQ(g.responses[k].state.delta, f.responses[k].state.delta);
    EXPECT_EQ(g.responses[k].state.xi, f.responses[k].state.xi);
    EXPECT_EQ(g.responses[k].state.sigma2, f.responses[k].state.sigma2);
    EXPECT_EQ(g.responses[k].family.kind, f.responses[k].family.kind);
  }
  std::mt19937_64 rng(1);
  const MatrixXd X = t::random_matrix(rng, 9, f.components.loadings.rows());
  const std::vector<int> groups{1, 2, 3, 4, 5, 6, 1, 2, 3};
  const auto a = predict(f, X, MatrixXd(9, 0), std::span<const int>(groups));
  const auto b = predict(g, X, MatrixXd(9, 0), std::span<const int>(groups));
  EXPECT_EQ(a.mu, b.mu);
}

TEST(ModelIo, SerializationIsStable) {
  const FitResult f = sample_fit();
  const RunMetadata meta{"", "deadbeef", 3};
  const std::string once = model_to_json(f, meta);
  EXPECT_EQ(model_to_json(model_from_json(once), meta), once);
  EXPECT_EQ(model_to_json(sample_fit(), meta), once);
}

TEST(ModelIo, FileRoundTrip) {
  const FitResult f = sample_fit();
  const auto path = (std::filesystem::temp_directory_path() / "scglr_model_io_test.json").string();
  save_model(path, f, RunMetadata{});
  const FitResult g = load_model(path);
  EXPECT_EQ(g.components.loadings, f.components.loadings);
  std::remove(path.c_str());
  EXPECT_THROW(load_model(path), InvalidInput);
}

TEST(ModelIo, RejectsForeignDocuments) {
  EXPECT_THROW(model_from_json("{}"), InvalidInput);
  EXPECT_THROW(model_from_json("[1,2"), InvalidInput);
  EXPECT_THROW(model_from_json(R"({"format":"mixed-scglr-model","version":99})"), InvalidInput);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
