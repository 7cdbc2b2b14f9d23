#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trajpred/models.hpp"

namespace trajpred {

struct GpHyperparameters {
  double length_scale = 0.2;
  double signal_variance = 1.0;  // in units of the standardized objective
  double noise_variance = 1e-6;  // likewise
};

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;  // latent function variance, original units
};

/// Zero-mean GP on standardized objectives with a squared-exponential
/// kernel. Inputs live in the unit hypercube.
class GaussianProcess {
 public:
  // Fits kernel hyperparameters by maximizing the log marginal likelihood
  // over a fixed grid unless `fixed` is given.
  static GaussianProcess fit(const Eigen::MatrixXd& points, const Eigen::VectorXd& objectives,
                             std::optional<GpHyperparameters> fixed = std::nullopt);

  GpPrediction predict(const Eigen::VectorXd& x) const;
  const GpHyperparameters& hyperparameters() const { return hyper_; }
  double log_marginal_likelihood() const { return lml_; }
  double jitter() const { return jitter_; }
  // Noise variance in original objective units.
  double noise_variance() const { return hyper_.noise_variance * scale_ * scale_; }

 private:
  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
  bool factorize();

  Eigen::MatrixXd points_;
  Eigen::VectorXd targets_;  // standardized
  double offset_ = 0.0;
  double scale_ = 1.0;
  GpHyperparameters hyper_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;
  double lml_ = 0.0;
  double jitter_ = 0.0;
};

/// Closed-form expected improvement for minimization. Zero when sigma is
/// zero and mean >= best.
double expected_improvement(double mean, double sigma, double best);
double expected_improvement(const GaussianProcess& gp, const Eigen::VectorXd& x, double best);

enum class TrialStatus { kCompleted, kFailed };

struct Trial {
  Eigen::VectorXd point;  // normalized [0,1]^d
  double objective = 0.0;
  TrialStatus status = TrialStatus::kCompleted;
  double wall_seconds = 0.0;
  std::string error;
};

struct BayesOptions {
  std::size_t budget = 20;
  std::size_t initial = 3;
  std::size_t pool = 512;
  std::uint64_t seed = 0;
};

struct BayesResult {
  std::vector<Trial> trials;
  std::size_t incumbent = 0;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

/// Minimizes `objective` over [0,1]^dim: `initial` scrambled-Halton points,
/// then argmax-EI over a fresh seeded candidate pool per trial. Objective
/// exceptions mark a trial failed.
BayesResult bayes_minimize(const Objective& objective, int dim, const BayesOptions& options);

struct SearchSpace {
  double lr_min = 1e-5;
  double lr_max = 1e-2;
  int embed_min = 4;
  int embed_max = 64;
  int hidden_min = 4;
  int hidden_max = 64;

  void validate() const;
  std::string describe() const;
};

struct HyperConfig {
  double learning_rate = 1e-3;
  int embed_dim = 16;
  int hidden_dim = 32;
};

HyperConfig decode(const SearchSpace& space, const Eigen::VectorXd& point);

// Optima reported for the Brisbane data, shipped as named presets.
std::optional<HyperConfig> preset(const std::string& name);
std::vector<std::string> preset_names();

struct SearchOptions {
  std::size_t budget = 10;
  int epochs_per_trial = 10;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  ModelConfig base;  // kind and ARNN extras; dimensions come from the search
};

struct SearchResult {
  BayesResult bayes;
  std::vector<HyperConfig> configs;  // decoded, per trial
  SearchSpace space;
  ModelKind kind = ModelKind::kRnn;

  const Trial& best() const { return bayes.trials[bayes.incumbent]; }
  const HyperConfig& best_config() const { return configs[bayes.incumbent]; }
};

/// Each trial trains a fresh model for `epochs_per_trial` epochs and scores
/// the mean per-step cross-entropy on `validation`.
SearchResult search(const SearchSpace& space, const Vocabulary& vocab, std::span<const TrainingSample> train,
                    std::span<const TrainingSample> validation, const SearchOptions& options);

void write_history(std::ostream& out, const SearchResult& result, std::uint64_t seed);

}  // namespace trajpred
