#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "trajpred/rng.hpp"

namespace trajpred {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NamedParam {
  std::string name;
  Matrix value;
};

// Ordered name -> matrix store. Insertion order is the serialization and
// optimizer iteration order, so identical construction gives identical bytes.
class ModelParams {
 public:
  Matrix& add(std::string name, Eigen::Index rows, Eigen::Index cols);
  bool contains(std::string_view name) const;
  Matrix& operator[](std::string_view name);
  const Matrix& operator[](std::string_view name) const;

  std::vector<NamedParam>& entries() { return entries_; }
  const std::vector<NamedParam>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  ModelParams zeros_like() const;
  void set_zero();
  double squared_norm() const;
  bool all_finite() const;
  void scale(double factor);
  // this += other, entry by entry; shapes must match.
  void accumulate(const ModelParams& other);
  bool same_layout(const ModelParams& other) const;

 private:
  std::size_t index_of(std::string_view name) const;
  std::vector<NamedParam> entries_;
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
void init_uniform(Matrix& m, std::size_t fan_in, Rng& rng);

Vector sigmoid(const Vector& z);
Vector softmax(const Vector& logits);

struct CrossEntropy {
  double loss = 0.0;
  Vector grad;  // d loss / d logits = softmax - onehot
};

CrossEntropy softmax_cross_entropy(const Vector& logits, Eigen::Index label);

// Gate blocks are laid out [input | forget | cell | output] along the
// 4*d_h axis of w_x [d_in x 4d_h], w_h [d_h x 4d_h] and b [4d_h x 1].
struct LstmWeights {
  const Matrix& w_x;
  const Matrix& w_h;
  const Matrix& b;
};

struct LstmGrads {
  Matrix& w_x;
  Matrix& w_h;
  Matrix& b;
};

struct LstmCache {
  Vector x, h_prev, c_prev;
  Vector i, f, g, o;
  Vector c, tanh_c, h;
};

LstmCache lstm_forward(const Vector& x, const Vector& h_prev, const Vector& c_prev, const LstmWeights& w);

struct LstmState {
  Vector h;
  Vector c;
};

LstmState lstm_step(const Vector& x, const Vector& h, const Vector& c, const LstmWeights& w);

struct LstmInputGrads {
  Vector dx, dh_prev, dc_prev;
};

/// Backpropagates dL/dh and dL/dc of one step; weight gradients accumulate
/// into `grads`.
LstmInputGrads lstm_backward(const LstmCache& cache, const Vector& dh, const Vector& dc,
                             const LstmWeights& w, LstmGrads grads);

void init_lstm(Matrix& w_x, Matrix& w_h, Matrix& b, Rng& rng);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  ModelParams m;
  ModelParams v;

  static AdamState for_params(const ModelParams& params);
};

/// One bias-corrected Adam step applied in place. Throws "diverged" on a
/// non-finite gradient before touching anything.
void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state, double lr);

// Rescales grads to global L2 norm `max_norm` if above it. Returns the norm
// before clipping.
double clip_global_norm(ModelParams& grads, double max_norm);

using LossFn = std::function<double(const ModelParams&)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of this many per
  // parameter entry.
  std::size_t max_coords_per_entry = 0;
  std::uint64_t seed = 0;
  // Lower bound on the relative-error denominator. Central differences carry
  // roughly 1e-11 of roundoff, so near-zero gradients are compared in
  // absolute terms below this scale.
  double denominator_floor = 1e-6;
};

/// Max over coordinates of |a - n| / max(floor, |a| + |n|) between analytic
/// gradients and central differences of `loss`.
double grad_check(const LossFn& loss, const ModelParams& analytic, const ModelParams& params,
                  const GradCheckOptions& options = {});

}  // namespace trajpred
