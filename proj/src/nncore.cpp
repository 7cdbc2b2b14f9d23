#include "trajpred/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trajpred/error.hpp"

namespace trajpred {

Matrix& ModelParams::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  entries_.push_back({std::move(name), Matrix::Zero(rows, cols)});
  return entries_.back().value;
}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return entries_.size();
}

bool ModelParams::contains(std::string_view name) const { return index_of(name) < entries_.size(); }

Matrix& ModelParams::operator[](std::string_view name) {
  const std::size_t i = index_of(name);
  if (i == entries_.size()) throw Error("unknown parameter '" + std::string(name) + "'");
  return entries_[i].value;
}

const Matrix& ModelParams::operator[](std::string_view name) const {
  const std::size_t i = index_of(name);
  if (i == entries_.size()) throw Error("unknown parameter '" + std::string(name) + "'");
  return entries_[i].value;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  for (const auto& e : entries_) z.add(e.name, e.value.rows(), e.value.cols());
  return z;
}

void ModelParams::set_zero() {
  for (auto& e : entries_) e.value.setZero();
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) s += e.value.squaredNorm();
  return s;
}

bool ModelParams::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const auto& e) { return e.value.allFinite(); });
}

void ModelParams::scale(double factor) {
  for (auto& e : entries_) e.value *= factor;
}

bool ModelParams::same_layout(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
  }
  return true;
}

void ModelParams::accumulate(const ModelParams& other) {
  if (!same_layout(other)) throw Error("parameter layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].value += other.entries_[i].value;
}

void init_uniform(Matrix& m, std::size_t fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform(rng, -s, s);
  }
}

Vector sigmoid(const Vector& z) {
  return z.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Vector softmax(const Vector& logits) {
  const double max = logits.maxCoeff();
  Vector p = (logits.array() - max).exp().matrix();
  p /= p.sum();
  return p;
}

CrossEntropy softmax_cross_entropy(const Vector& logits, Eigen::Index label) {
  if (label < 0 || label >= logits.size()) {
    throw Error("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                " classes");
  }
  const double max = logits.maxCoeff();
  const Vector shifted = logits.array() - max;
  const double log_z = std::log(shifted.array().exp().sum());
  CrossEntropy ce;
  ce.loss = log_z - shifted(label);
  ce.grad = (shifted.array() - log_z).exp().matrix();
  ce.grad(label) -= 1.0;
  return ce;
}

namespace {

void check_lstm_shapes(const Vector& x, const Vector& h, const Vector& c, const LstmWeights& w) {
  const Eigen::Index dh = h.size();
  if (c.size() != dh || w.w_h.rows() != dh || w.w_h.cols() != 4 * dh || w.w_x.cols() != 4 * dh ||
      w.w_x.rows() != x.size() || w.b.rows() != 4 * dh || w.b.cols() != 1) {
    throw Error("lstm: shape mismatch");
  }
}

}  // namespace

LstmCache lstm_forward(const Vector& x, const Vector& h_prev, const Vector& c_prev, const LstmWeights& w) {
  check_lstm_shapes(x, h_prev, c_prev, w);
  const Eigen::Index dh = h_prev.size();
  const Vector z = w.w_x.transpose() * x + w.w_h.transpose() * h_prev + w.b.col(0);
  LstmCache k;
  k.x = x;
  k.h_prev = h_prev;
  k.c_prev = c_prev;
  k.i = sigmoid(z.segment(0, dh));
  k.f = sigmoid(z.segment(dh, dh));
  k.g = z.segment(2 * dh, dh).array().tanh();
  k.o = sigmoid(z.segment(3 * dh, dh));
  k.c = k.f.cwiseProduct(c_prev) + k.i.cwiseProduct(k.g);
  k.tanh_c = k.c.array().tanh();
  k.h = k.o.cwiseProduct(k.tanh_c);
  return k;
}

LstmState lstm_step(const Vector& x, const Vector& h, const Vector& c, const LstmWeights& w) {
  auto k = lstm_forward(x, h, c, w);
  return {std::move(k.h), std::move(k.c)};
}

LstmInputGrads lstm_backward(const LstmCache& k, const Vector& dh, const Vector& dc_in, const LstmWeights& w,
                             LstmGrads grads) {
  const Eigen::Index d = k.h.size();
  const Vector d_o = dh.cwiseProduct(k.tanh_c);
  const Vector dc = dc_in + dh.cwiseProduct(k.o).cwiseProduct((1.0 - k.tanh_c.array().square()).matrix());
  Vector dz(4 * d);
  dz.segment(0, d) = dc.cwiseProduct(k.g).cwiseProduct(k.i.cwiseProduct((1.0 - k.i.array()).matrix()));
  dz.segment(d, d) = dc.cwiseProduct(k.c_prev).cwiseProduct(k.f.cwiseProduct((1.0 - k.f.array()).matrix()));
  dz.segment(2 * d, d) = dc.cwiseProduct(k.i).cwiseProduct((1.0 - k.g.array().square()).matrix());
  dz.segment(3 * d, d) = d_o.cwiseProduct(k.o.cwiseProduct((1.0 - k.o.array()).matrix()));

  grads.w_x.noalias() += k.x * dz.transpose();
  grads.w_h.noalias() += k.h_prev * dz.transpose();
  grads.b.col(0) += dz;

  LstmInputGrads out;
  out.dx = w.w_x * dz;
  out.dh_prev = w.w_h * dz;
  out.dc_prev = dc.cwiseProduct(k.f);
  return out;
}

void init_lstm(Matrix& w_x, Matrix& w_h, Matrix& b, Rng& rng) {
  const auto fan_in = static_cast<std::size_t>(w_x.rows() + w_h.rows());
  init_uniform(w_x, fan_in, rng);
  init_uniform(w_h, fan_in, rng);
  const Eigen::Index dh = w_h.rows();
  b.setZero();
  b.block(dh, 0, dh, 1).setOnes();
}

AdamState AdamState::for_params(const ModelParams& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw Error("adam: learning rate must be positive");
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v)) {
    throw Error("adam: parameter layout mismatch");
  }
  if (!grads.all_finite()) throw Error("diverged");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  auto& pe = params.entries();
  const auto& ge = grads.entries();
  auto& me = state.m.entries();
  auto& ve = state.v.entries();
  for (std::size_t k = 0; k < pe.size(); ++k) {
    auto& m = me[k].value;
    auto& v = ve[k].value;
    const auto& g = ge[k].value;
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    pe[k].value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.epsilon);
  }
}

double clip_global_norm(ModelParams& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

double grad_check(const LossFn& loss, const ModelParams& analytic, const ModelParams& params,
                  const GradCheckOptions& options) {
  if (!params.same_layout(analytic)) throw Error("grad_check: layout mismatch");
  ModelParams probe = params;
  Rng rng(options.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = probe.entries()[k].value;
    const auto& grad = analytic.entries()[k].value;
    const auto n = static_cast<std::size_t>(value.size());
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_entry > 0 && n > options.max_coords_per_entry) {
      for (std::size_t i = 0; i < options.max_coords_per_entry; ++i) {
        std::swap(coords[i], coords[i + uniform_index(rng, n - i)]);
      }
      coords.resize(options.max_coords_per_entry);
    }
    for (std::size_t idx : coords) {
      double& x = value.data()[idx];
      const double saved = x;
      x = saved + options.epsilon;
      const double up = loss(probe);
      x = saved - options.epsilon;
      const double down = loss(probe);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double a = grad.data()[idx];
      const double rel = std::abs(a - numeric) / std::max(options.denominator_floor, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace trajpred
