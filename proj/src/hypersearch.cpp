#include "trajpred/hypersearch.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "trajpred/error.hpp"
#include "trajpred/rng.hpp"

namespace trajpred {

namespace {

constexpr double kPi = 3.14159265358979323846;

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double radical_inverse(std::uint64_t index, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base);
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

constexpr std::uint64_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

}  // namespace

double GaussianProcess::kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  const double d2 = (a - b).squaredNorm();
  return hyper_.signal_variance * std::exp(-0.5 * d2 / (hyper_.length_scale * hyper_.length_scale));
}

bool GaussianProcess::factorize() {
  const auto n = points_.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = kernel(points_.row(i).transpose(), points_.row(j).transpose());
    }
  }
  k.diagonal().array() += hyper_.noise_variance;
  jitter_ = 0.0;
  for (double jitter = 0.0; jitter <= 1e-4 * (1 + 1e-9); jitter = jitter == 0.0 ? 1e-8 : jitter * 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    chol_.compute(kj);
    if (chol_.info() == Eigen::Success) {
      jitter_ = jitter;
      alpha_ = chol_.solve(targets_);
      const Eigen::MatrixXd l = chol_.matrixL();
      lml_ = -0.5 * targets_.dot(alpha_) - l.diagonal().array().log().sum() -
             0.5 * static_cast<double>(n) * std::log(2.0 * kPi);
      return true;
    }
  }
  return false;
}

GaussianProcess GaussianProcess::fit(const Eigen::MatrixXd& points, const Eigen::VectorXd& objectives,
                                     std::optional<GpHyperparameters> fixed) {
  if (points.rows() < 1 || points.rows() != objectives.size()) throw Error("gp_fit: need at least one observation");
  if (!points.allFinite() || !objectives.allFinite()) throw Error("gp_fit: non-finite data");
  GaussianProcess gp;
  gp.points_ = points;
  gp.offset_ = objectives.mean();
  const double var = (objectives.array() - gp.offset_).square().mean();
  gp.scale_ = var > 0.0 ? std::sqrt(var) : 1.0;
  gp.targets_ = (objectives.array() - gp.offset_) / gp.scale_;

  if (fixed) {
    gp.hyper_ = *fixed;
    if (!gp.factorize()) throw Error("gp_fit: kernel matrix is singular");
    return gp;
  }

  static constexpr double kLengths[] = {0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0};
  static constexpr double kSignals[] = {0.25, 1.0, 4.0};
  static constexpr double kNoises[] = {1e-6, 1e-4, 1e-2, 1e-1};
  double best = -std::numeric_limits<double>::infinity();
  std::optional<GpHyperparameters> chosen;
  for (double l : kLengths) {
    for (double s : kSignals) {
      for (double nv : kNoises) {
        gp.hyper_ = {l, s, nv};
        if (gp.factorize() && gp.lml_ > best) {
          best = gp.lml_;
          chosen = gp.hyper_;
        }
      }
    }
  }
  if (!chosen) throw Error("gp_fit: kernel matrix is singular");
  gp.hyper_ = *chosen;
  gp.factorize();
  return gp;
}

GpPrediction GaussianProcess::predict(const Eigen::VectorXd& x) const {
  const auto n = points_.rows();
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks(i) = kernel(points_.row(i).transpose(), x);
  const Eigen::VectorXd v = chol_.matrixL().solve(ks);
  GpPrediction p;
  p.mean = offset_ + scale_ * ks.dot(alpha_);
  p.variance = std::max(0.0, hyper_.signal_variance - v.squaredNorm()) * scale_ * scale_;
  return p;
}

double expected_improvement(double mean, double sigma, double best) {
  if (!(sigma > 0.0)) return std::max(0.0, best - mean);
  const double z = (best - mean) / sigma;
  return std::max(0.0, (best - mean) * normal_cdf(z) + sigma * normal_pdf(z));
}

double expected_improvement(const GaussianProcess& gp, const Eigen::VectorXd& x, double best) {
  const auto p = gp.predict(x);
  return expected_improvement(p.mean, std::sqrt(p.variance), best);
}

BayesResult bayes_minimize(const Objective& objective, int dim, const BayesOptions& options) {
  if (dim < 1 || dim > static_cast<int>(std::size(kPrimes))) throw Error("search: unsupported dimension");
  if (options.budget < 1) throw Error("search: budget must be positive");
  Rng rng(options.seed);
  Eigen::VectorXd shift(dim);
  for (int d = 0; d < dim; ++d) shift(d) = uniform01(rng);

  BayesResult result;
  auto evaluate = [&](const Eigen::VectorXd& x) {
    Trial t;
    t.point = x;
    const auto start = std::chrono::steady_clock::now();
    try {
      t.objective = objective(x);
      if (!std::isfinite(t.objective)) throw Error("non-finite objective");
    } catch (const std::exception& e) {
      t.status = TrialStatus::kFailed;
      t.error = e.what();
    }
    t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.trials.push_back(std::move(t));
  };

  for (std::size_t i = 0; i < options.budget; ++i) {
    std::vector<const Trial*> done;
    for (const auto& t : result.trials) {
      if (t.status == TrialStatus::kCompleted) done.push_back(&t);
    }
    if (i < options.initial || done.empty()) {
      // Scrambled Halton point (random shift modulo 1).
      Eigen::VectorXd x(dim);
      for (int d = 0; d < dim; ++d) {
        x(d) = std::fmod(radical_inverse(i + 1, kPrimes[d]) + shift(d), 1.0);
      }
      evaluate(x);
      continue;
    }
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(done.size()), dim);
    Eigen::VectorXd ys(static_cast<Eigen::Index>(done.size()));
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < done.size(); ++k) {
      pts.row(static_cast<Eigen::Index>(k)) = done[k]->point.transpose();
      ys(static_cast<Eigen::Index>(k)) = done[k]->objective;
      best = std::min(best, done[k]->objective);
    }
    const auto gp = GaussianProcess::fit(pts, ys);
    Eigen::VectorXd arg(dim);
    double best_ei = -1.0;
    Eigen::VectorXd x(dim);
    for (std::size_t c = 0; c < options.pool; ++c) {
      for (int d = 0; d < dim; ++d) x(d) = uniform01(rng);
      const double ei = expected_improvement(gp, x, best);
      if (ei > best_ei) {
        best_ei = ei;
        arg = x;
      }
    }
    evaluate(arg);
  }

  bool any = false;
  for (std::size_t i = 0; i < result.trials.size(); ++i) {
    const auto& t = result.trials[i];
    if (t.status != TrialStatus::kCompleted) continue;
    if (!any || t.objective < result.trials[result.incumbent].objective) result.incumbent = i;
    any = true;
  }
  if (!any) throw Error("search: all trials failed");
  return result;
}

void SearchSpace::validate() const {
  if (!(lr_min > 0.0) || !(lr_max >= lr_min)) throw Error("search space: bad learning-rate range");
  if (embed_min < 1 || embed_max < embed_min) throw Error("search space: bad embedding range");
  if (hidden_min < 1 || hidden_max < hidden_min) throw Error("search space: bad hidden range");
}

std::string SearchSpace::describe() const {
  std::ostringstream s;
  s << "learning_rate=[" << lr_min << "," << lr_max << "](log) embed_dim=[" << embed_min << "," << embed_max
    << "] hidden_dim=[" << hidden_min << "," << hidden_max << "]";
  return s.str();
}

HyperConfig decode(const SearchSpace& space, const Eigen::VectorXd& p) {
  if (p.size() != 3) throw Error("search point must be 3-dimensional");
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  HyperConfig c;
  const double lo = std::log10(space.lr_min);
  const double hi = std::log10(space.lr_max);
  c.learning_rate = std::pow(10.0, lo + clamp01(p(0)) * (hi - lo));
  c.embed_dim = static_cast<int>(std::lround(space.embed_min + clamp01(p(1)) * (space.embed_max - space.embed_min)));
  c.hidden_dim =
      static_cast<int>(std::lround(space.hidden_min + clamp01(p(2)) * (space.hidden_max - space.hidden_min)));
  return c;
}

std::optional<HyperConfig> preset(const std::string& name) {
  if (name == "paper-rnn") return HyperConfig{6.216234e-05, 413, 854};
  if (name == "paper-arnn") return HyperConfig{5.842804e-04, 659, 574};
  return std::nullopt;
}

std::vector<std::string> preset_names() { return {"paper-rnn", "paper-arnn"}; }

SearchResult search(const SearchSpace& space, const Vocabulary& vocab, std::span<const TrainingSample> train_set,
                    std::span<const TrainingSample> validation, const SearchOptions& options) {
  space.validate();
  if (options.budget < 3) throw Error("search: budget must be at least 3");
  if (train_set.empty() || validation.empty()) throw Error("search: need training and validation samples");
  SearchResult result;
  result.space = space;
  result.kind = options.base.kind;
  std::uint64_t trial_index = 0;
  auto objective = [&](const Eigen::VectorXd& x) {
    const HyperConfig hc = decode(space, x);
    result.configs.push_back(hc);
    ModelConfig cfg = options.base;
    cfg.embed_dim = hc.embed_dim;
    cfg.hidden_dim = hc.hidden_dim;
    const std::uint64_t trial_seed = derive_seed(options.seed, 0x7472ULL, trial_index++);
    SequenceModel model(cfg, vocab, trial_seed);
    TrainOptions to;
    to.learning_rate = hc.learning_rate;
    to.epochs = options.epochs_per_trial;
    to.clip_norm = options.clip_norm;
    to.seed = splitmix64(trial_seed);
    train(model, train_set, to);
    return mean_step_loss(model, validation);
  };
  BayesOptions bo;
  bo.budget = options.budget;
  bo.seed = options.seed;
  result.bayes = bayes_minimize(objective, 3, bo);
  return result;
}

void write_history(std::ostream& out, const SearchResult& r, std::uint64_t seed) {
  out << "# model=" << to_string(r.kind) << " seed=" << seed << " space " << r.space.describe() << '\n';
  out << "trial,learning_rate,embed_dim,hidden_dim,objective,wall_seconds,status,incumbent\n";
  char buf[64];
  for (std::size_t i = 0; i < r.bayes.trials.size(); ++i) {
    const auto& t = r.bayes.trials[i];
    const auto& c = r.configs[i];
    out << i << ',';
    std::snprintf(buf, sizeof buf, "%.9g", c.learning_rate);
    out << buf << ',' << c.embed_dim << ',' << c.hidden_dim << ',';
    std::snprintf(buf, sizeof buf, "%.17g", t.objective);
    out << (t.status == TrialStatus::kCompleted ? buf : "nan") << ',';
    std::snprintf(buf, sizeof buf, "%.3f", t.wall_seconds);
    out << buf << ',' << (t.status == TrialStatus::kCompleted ? "completed" : "failed") << ','
        << (i == r.bayes.incumbent ? 1 : 0) << '\n';
  }
}

}  // namespace trajpred
