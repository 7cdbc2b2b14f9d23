#include "trajpred/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "trajpred/error.hpp"

namespace trajpred {

std::string to_string(ModelKind kind) { return kind == ModelKind::kRnn ? "rnn" : "arnn"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "rnn") return ModelKind::kRnn;
  if (s == "arnn") return ModelKind::kArnn;
  throw Error("unknown model kind '" + s + "' (expected rnn or arnn)");
}

Vocabulary::Vocabulary(std::vector<CellId> cells) : cells_(std::move(cells)) {
  std::sort(cells_.begin(), cells_.end());
  cells_.erase(std::unique(cells_.begin(), cells_.end()), cells_.end());
  if (!cells_.empty() && cells_.front() < 1) throw Error("vocabulary: cells must be positive");
}

Vocabulary Vocabulary::from_sequences(std::span<const SequenceRecord* const> records) {
  std::set<CellId> seen;
  for (const auto* r : records) {
    for (CellId c : r->sequence.cells()) seen.insert(c);
  }
  return Vocabulary(std::vector<CellId>(seen.begin(), seen.end()));
}

bool Vocabulary::contains(CellId token) const {
  return token == kStartToken || token == kEndToken || std::binary_search(cells_.begin(), cells_.end(), token);
}

Eigen::Index Vocabulary::index_of(CellId token) const {
  if (token == kStartToken) return 0;
  if (token == kEndToken) return 1;
  const auto it = std::lower_bound(cells_.begin(), cells_.end(), token);
  if (it == cells_.end() || *it != token) throw Error("unknown token " + token_to_string(token));
  return static_cast<Eigen::Index>(it - cells_.begin()) + 2;
}

CellId Vocabulary::token_at(Eigen::Index index) const {
  if (index == 0) return kStartToken;
  if (index == 1) return kEndToken;
  if (index < 0 || index >= size()) throw Error("token index out of range");
  return cells_[static_cast<std::size_t>(index - 2)];
}

SequenceModel::SequenceModel(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.embed_dim < 1 || config_.hidden_dim < 1 || config_.d_f() < 1 || config_.d_a() < 1) {
    throw Error("model dimensions must be positive");
  }
  const Eigen::Index v = vocab_.size();
  const Eigen::Index de = config_.embed_dim;
  const Eigen::Index dh = config_.hidden_dim;
  const Eigen::Index df = config_.d_f();
  const Eigen::Index da = config_.d_a();
  const bool arnn = config_.kind == ModelKind::kArnn;
  if (arnn && vocab_.cells().empty()) throw Error("arnn needs at least one active cell");
  const Eigen::Index d_in = de + (arnn ? df : 0);

  Rng rng(seed);
  // A one-hot row has a single active input.
  init_uniform(params_.add("embedding", v, de), 1, rng);
  auto& wx = params_.add("lstm.w_x", d_in, 4 * dh);
  auto& wh = params_.add("lstm.w_h", dh, 4 * dh);
  auto& b = params_.add("lstm.b", 4 * dh, 1);
  init_lstm(wx, wh, b, rng);
  init_uniform(params_.add("decoder.w", dh, v), static_cast<std::size_t>(dh), rng);
  params_.add("decoder.b", v, 1);
  if (arnn) {
    const Eigen::Index n = traffic_cells();
    init_uniform(params_.add("traffic.w", kTrafficWindowMinutes, df), kTrafficWindowMinutes, rng);
    if (config_.cell_identity) init_uniform(params_.add("traffic.cell", n, df), kTrafficWindowMinutes, rng);
    init_uniform(params_.add("attention.w", dh, da), static_cast<std::size_t>(dh), rng);
    init_uniform(params_.add("attention.u", df, da), static_cast<std::size_t>(df), rng);
    init_uniform(params_.add("attention.v", da, 1), static_cast<std::size_t>(da), rng);
    init_uniform(params_.add("init.w_h", df, dh), static_cast<std::size_t>(df), rng);
    init_uniform(params_.add("init.w_c", df, dh), static_cast<std::size_t>(df), rng);
  }
}

void SequenceModel::check_traffic(const TrafficStateTensor* traffic) const {
  if (config_.kind == ModelKind::kRnn) return;
  if (traffic == nullptr) throw Error("arnn requires a traffic state tensor");
  if (traffic->rows() != traffic_cells() || traffic->cols() != kTrafficWindowMinutes) {
    throw Error("traffic tensor shape mismatch: expected [" + std::to_string(traffic_cells()) + "," +
                std::to_string(kTrafficWindowMinutes) + "], got [" + std::to_string(traffic->rows()) + "," +
                std::to_string(traffic->cols()) + "]");
  }
}

TrafficContext SequenceModel::prepare(const ModelParams& p, const TrafficStateTensor& traffic) const {
  TrafficContext ctx;
  Matrix z = traffic * p["traffic.w"];
  if (config_.cell_identity) z += p["traffic.cell"];
  ctx.features = z.array().tanh();
  ctx.projected = ctx.features * p["attention.u"];
  return ctx;
}

Matrix SequenceModel::encode_traffic(const TrafficStateTensor& traffic) const {
  if (config_.kind != ModelKind::kArnn) throw Error("encode_traffic: not an arnn model");
  check_traffic(&traffic);
  return prepare(params_, traffic).features;
}

LstmState SequenceModel::init_state(const ModelParams& p, const TrafficContext* ctx) const {
  const Eigen::Index dh = config_.hidden_dim;
  if (ctx == nullptr) return {Vector::Zero(dh), Vector::Zero(dh)};
  const Vector pooled = ctx->features.colwise().mean().transpose();
  return {(p["init.w_h"].transpose() * pooled).array().tanh(), (p["init.w_c"].transpose() * pooled).array().tanh()};
}

LstmState SequenceModel::attention_init_state(const Matrix& features) const {
  if (config_.kind != ModelKind::kArnn) throw Error("attention_init_state: not an arnn model");
  if (features.cols() != config_.d_f() || features.rows() < 1) throw Error("feature shape mismatch");
  TrafficContext ctx{features, Matrix()};
  return init_state(params_, &ctx);
}

AttentionOutput SequenceModel::attend(const ModelParams& p, const Vector& s_prev, const TrafficContext& ctx,
                                      Matrix* tanh_cache) const {
  const Vector q = p["attention.w"].transpose() * s_prev;
  Matrix a = (ctx.projected.rowwise() + q.transpose()).array().tanh();
  const Vector scores = a * p["attention.v"].col(0);
  AttentionOutput out;
  out.alpha = softmax(scores);
  out.context = ctx.features.transpose() * out.alpha;
  if (tanh_cache != nullptr) *tanh_cache = std::move(a);
  return out;
}

AttentionOutput SequenceModel::attention_step(const Vector& s_prev, const Matrix& features) const {
  if (config_.kind != ModelKind::kArnn) throw Error("attention_step: not an arnn model");
  if (s_prev.size() != config_.hidden_dim || features.cols() != config_.d_f() || features.rows() < 1) {
    throw Error("attention_step: shape mismatch");
  }
  TrafficContext ctx{features, features * params_["attention.u"]};
  return attend(params_, s_prev, ctx, nullptr);
}

Vector SequenceModel::step_input(const ModelParams& p, Eigen::Index token, const Vector* context) const {
  const Eigen::Index de = config_.embed_dim;
  if (context == nullptr) return p["embedding"].row(token).transpose();
  Vector x(de + context->size());
  x.head(de) = p["embedding"].row(token).transpose();
  x.tail(context->size()) = *context;
  return x;
}

ForwardResult SequenceModel::forward(std::span<const CellId> x, const TrafficStateTensor* traffic) const {
  check_traffic(traffic);
  const bool arnn = config_.kind == ModelKind::kArnn;
  std::optional<TrafficContext> ctx;
  if (arnn) ctx = prepare(params_, *traffic);
  LstmState s = init_state(params_, ctx ? &*ctx : nullptr);
  const LstmWeights w{params_["lstm.w_x"], params_["lstm.w_h"], params_["lstm.b"]};

  ForwardResult r;
  r.probs.reserve(x.size());
  if (arnn) r.attention.resize(static_cast<Eigen::Index>(x.size()), traffic_cells());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Eigen::Index tok = vocab_.index_of(x[i]);
    Vector input;
    if (arnn) {
      const auto att = attend(params_, s.h, *ctx, nullptr);
      r.attention.row(static_cast<Eigen::Index>(i)) = att.alpha.transpose();
      input = step_input(params_, tok, &att.context);
    } else {
      input = step_input(params_, tok, nullptr);
    }
    s = lstm_step(input, s.h, s.c, w);
    r.probs.push_back(softmax(params_["decoder.w"].transpose() * s.h + params_["decoder.b"].col(0)));
  }
  return r;
}

struct SequenceModel::Step {
  Eigen::Index token = 0;
  LstmCache lstm;
  Vector dlogits;
  Vector alpha;
  Matrix att_tanh;
};

double SequenceModel::loss(const ModelParams& p, std::span<const CellId> x, std::span<const CellId> y,
                           const TrafficStateTensor* traffic, ModelParams* grads) const {
  if (x.size() != y.size() || x.empty()) throw Error("loss: X and Y must be non-empty and aligned");
  check_traffic(traffic);
  if (!p.same_layout(params_)) throw Error("loss: parameter layout mismatch");
  if (grads != nullptr && !grads->same_layout(params_)) throw Error("loss: gradient layout mismatch");
  const bool arnn = config_.kind == ModelKind::kArnn;
  const Eigen::Index de = config_.embed_dim;
  const Eigen::Index dh = config_.hidden_dim;

  std::optional<TrafficContext> ctx;
  if (arnn) ctx = prepare(p, *traffic);
  const LstmState s0 = init_state(p, ctx ? &*ctx : nullptr);
  const LstmWeights w{p["lstm.w_x"], p["lstm.w_h"], p["lstm.b"]};
  const Matrix& w_dec = p["decoder.w"];

  std::vector<Step> steps(x.size());
  double total = 0.0;
  Vector h = s0.h;
  Vector c = s0.c;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Step& st = steps[i];
    st.token = vocab_.index_of(x[i]);
    Vector input;
    if (arnn) {
      const auto att = attend(p, h, *ctx, grads ? &st.att_tanh : nullptr);
      st.alpha = att.alpha;
      input = step_input(p, st.token, &att.context);
    } else {
      input = step_input(p, st.token, nullptr);
    }
    st.lstm = lstm_forward(input, h, c, w);
    h = st.lstm.h;
    c = st.lstm.c;
    auto ce = softmax_cross_entropy(w_dec.transpose() * h + p["decoder.b"].col(0), vocab_.index_of(y[i]));
    total += ce.loss;
    st.dlogits = std::move(ce.grad);
  }
  if (!std::isfinite(total)) throw Error("diverged: non-finite loss");
  if (grads == nullptr) return total;

  ModelParams& g = *grads;
  Matrix& g_emb = g["embedding"];
  LstmGrads lg{g["lstm.w_x"], g["lstm.w_h"], g["lstm.b"]};
  Matrix& g_dec_w = g["decoder.w"];
  Matrix& g_dec_b = g["decoder.b"];
  Matrix d_features;
  if (arnn) d_features = Matrix::Zero(ctx->features.rows(), ctx->features.cols());

  Vector dh_next = Vector::Zero(dh);
  Vector dc_next = Vector::Zero(dh);
  for (std::size_t r = steps.size(); r-- > 0;) {
    const Step& st = steps[r];
    g_dec_w.noalias() += st.lstm.h * st.dlogits.transpose();
    g_dec_b.col(0) += st.dlogits;
    const Vector dh_step = w_dec * st.dlogits + dh_next;
    auto back = lstm_backward(st.lstm, dh_step, dc_next, w, lg);
    g_emb.row(st.token) += back.dx.head(de).transpose();
    dc_next = std::move(back.dc_prev);
    dh_next = std::move(back.dh_prev);
    if (arnn) {
      // context = F^T alpha, alpha = softmax(A v), A = tanh(F U + 1 (W^T s)^T)
      const Vector dctx = back.dx.tail(back.dx.size() - de);
      const Matrix& f = ctx->features;
      d_features.noalias() += st.alpha * dctx.transpose();
      const Vector dalpha = f * dctx;
      const Vector dscore = st.alpha.cwiseProduct((dalpha.array() - st.alpha.dot(dalpha)).matrix());
      g["attention.v"].col(0).noalias() += st.att_tanh.transpose() * dscore;
      const Matrix dpre = (dscore * p["attention.v"].col(0).transpose()).cwiseProduct(
          (1.0 - st.att_tanh.array().square()).matrix());
      const Vector dq = dpre.colwise().sum().transpose();
      g["attention.w"].noalias() += st.lstm.h_prev * dq.transpose();
      dh_next.noalias() += p["attention.w"] * dq;
      g["attention.u"].noalias() += f.transpose() * dpre;
      d_features.noalias() += dpre * p["attention.u"].transpose();
    }
  }

  if (arnn) {
    const Matrix& f = ctx->features;
    const Vector pooled = f.colwise().mean().transpose();
    const Vector dpre_h = dh_next.cwiseProduct((1.0 - s0.h.array().square()).matrix());
    const Vector dpre_c = dc_next.cwiseProduct((1.0 - s0.c.array().square()).matrix());
    g["init.w_h"].noalias() += pooled * dpre_h.transpose();
    g["init.w_c"].noalias() += pooled * dpre_c.transpose();
    const Vector dpooled = p["init.w_h"] * dpre_h + p["init.w_c"] * dpre_c;
    d_features.rowwise() += dpooled.transpose() / static_cast<double>(f.rows());
    const Matrix dz = d_features.cwiseProduct((1.0 - f.array().square()).matrix());
    g["traffic.w"].noalias() += traffic->transpose() * dz;
    if (config_.cell_identity) g["traffic.cell"] += dz;
  }
  return total;
}

GenerationResult SequenceModel::generate(std::span<const CellId> prefix, const TrafficStateTensor* traffic,
                                         std::uint64_t seed, std::size_t max_len) const {
  if (prefix.empty() || prefix.front() != kStartToken) throw Error("prefix must start with #start");
  if (std::find(prefix.begin(), prefix.end(), kEndToken) != prefix.end()) throw Error("prefix contains #end");
  if (max_len <= prefix.size()) throw Error("max_len must exceed the prefix length");
  check_traffic(traffic);
  const bool arnn = config_.kind == ModelKind::kArnn;
  std::optional<TrafficContext> ctx;
  if (arnn) ctx = prepare(params_, *traffic);
  LstmState s = init_state(params_, ctx ? &*ctx : nullptr);
  const LstmWeights w{params_["lstm.w_x"], params_["lstm.w_h"], params_["lstm.b"]};

  GenerationResult out;
  out.tokens.assign(prefix.begin(), prefix.end());
  std::vector<Eigen::Index> consumed_rows;
  std::vector<Vector> attention_rows;
  Rng rng(seed);
  std::size_t next = 0;  // index of the next token to feed
  while (true) {
    const Eigen::Index tok = vocab_.index_of(out.tokens[next]);
    Vector input;
    if (arnn) {
      auto att = attend(params_, s.h, *ctx, nullptr);
      input = step_input(params_, tok, &att.context);
      attention_rows.push_back(std::move(att.alpha));
    } else {
      input = step_input(params_, tok, nullptr);
    }
    s = lstm_step(input, s.h, s.c, w);
    ++next;
    if (next < out.tokens.size()) continue;  // still consuming the prefix

    Vector probs = softmax(params_["decoder.w"].transpose() * s.h + params_["decoder.b"].col(0));
    // #start is never a valid continuation; draw from the rest.
    const double mass = 1.0 - probs(0);
    double u = uniform01(rng) * mass;
    Eigen::Index pick = probs.size() - 1;
    for (Eigen::Index k = 1; k < probs.size(); ++k) {
      if (u < probs(k)) {
        pick = k;
        break;
      }
      u -= probs(k);
    }
    out.probs.push_back(std::move(probs));
    const CellId token = vocab_.token_at(pick);
    out.tokens.push_back(token);
    if (token == kEndToken) {
      out.terminated = true;
      break;
    }
    if (out.tokens.size() >= max_len) break;
  }
  if (arnn) {
    out.attention.resize(static_cast<Eigen::Index>(attention_rows.size()), traffic_cells());
    for (std::size_t i = 0; i < attention_rows.size(); ++i) {
      out.attention.row(static_cast<Eigen::Index>(i)) = attention_rows[i].transpose();
    }
  }
  return out;
}

Checkpoint SequenceModel::to_checkpoint() const {
  Checkpoint ck;
  ck.params = params_;
  auto& m = ck.metadata;
  m["model"] = {{"kind", to_string(config_.kind)},
                {"embed_dim", config_.embed_dim},
                {"hidden_dim", config_.hidden_dim},
                {"feature_dim", config_.d_f()},
                {"attention_dim", config_.d_a()},
                {"cell_identity", config_.cell_identity},
                {"vocab_cells", vocab_.cells()}};
  return ck;
}

SequenceModel SequenceModel::from_checkpoint(const Checkpoint& ck) {
  if (!ck.metadata.contains("model")) throw Error("checkpoint has no model metadata");
  const auto& m = ck.metadata.at("model");
  ModelConfig cfg;
  cfg.kind = model_kind_from_string(m.at("kind").get<std::string>());
  cfg.embed_dim = m.at("embed_dim").get<int>();
  cfg.hidden_dim = m.at("hidden_dim").get<int>();
  cfg.feature_dim = m.at("feature_dim").get<int>();
  cfg.attention_dim = m.at("attention_dim").get<int>();
  cfg.cell_identity = m.at("cell_identity").get<bool>();
  SequenceModel model(cfg, Vocabulary(m.at("vocab_cells").get<std::vector<CellId>>()), 0);
  if (!model.params_.same_layout(ck.params)) throw Error("checkpoint parameters do not match the model layout");
  model.params_ = ck.params;
  return model;
}

ForwardResult rnn_forward(std::span<const CellId> x, const SequenceModel& model) {
  if (model.kind() != ModelKind::kRnn) throw Error("rnn_forward: not an rnn model");
  return model.forward(x, nullptr);
}

ForwardResult arnn_forward(std::span<const CellId> x, const TrafficStateTensor& traffic,
                           const SequenceModel& model) {
  if (model.kind() != ModelKind::kArnn) throw Error("arnn_forward: not an arnn model");
  return model.forward(x, &traffic);
}

namespace {

const TrafficStateTensor* traffic_of(const SequenceModel& model, const TrainingSample& s) {
  return model.kind() == ModelKind::kArnn ? &s.traffic : nullptr;
}

}  // namespace

TrainReport train(SequenceModel& model, std::span<const TrainingSample> samples, const TrainOptions& options) {
  if (samples.empty()) throw Error("train: empty dataset");
  if (options.epochs < 0) throw Error("train: epochs must be non-negative");
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  AdamState adam = AdamState::for_params(model.params());
  ModelParams grads = model.params().zeros_like();
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(options.seed);

  TrainReport report;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      grads.set_zero();
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = samples[order[k]];
        double l = 0.0;
        try {
          l = model.loss(s.xy.x, s.xy.y, traffic_of(model, s), &grads);
        } catch (const Error& e) {
          throw Error(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                      std::to_string(k));
        }
        epoch_loss += l;
        epoch_steps += s.xy.y.size();
      }
      if (!grads.all_finite()) {
        throw Error("diverged: non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(start));
      }
      if (options.clip_norm > 0.0 && clip_global_norm(grads, options.clip_norm) > options.clip_norm) {
        ++report.clipped_updates;
      }
      adam_update(model.params(), grads, adam, options.learning_rate);
    }
    const double mean = epoch_loss / static_cast<double>(epoch_steps);
    report.epoch_loss.push_back(mean);
    if (options.on_epoch) options.on_epoch(epoch, mean);
  }
  return report;
}

double mean_step_loss(const SequenceModel& model, std::span<const TrainingSample> samples) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& s : samples) {
    total += model.loss(s.xy.x, s.xy.y, traffic_of(model, s));
    steps += s.xy.y.size();
  }
  if (steps == 0) throw Error("mean_step_loss: no samples");
  return total / static_cast<double>(steps);
}

std::size_t default_max_len(std::size_t reference_tokens) { return std::min<std::size_t>(4 * reference_tokens, 100); }

}  // namespace trajpred
