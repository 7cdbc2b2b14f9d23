#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajpred/cellspace.hpp"
#include "trajpred/checkpoint.hpp"
#include "trajpred/corpus.hpp"
#include "trajpred/nncore.hpp"

namespace trajpred {

enum class ModelKind { kRnn, kArnn };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

// Token table: index 0 is #start, 1 is #end, then the active cells in
// ascending cell order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<CellId> cells);

  // Active cells of the training split.
  static Vocabulary from_sequences(std::span<const SequenceRecord* const> records);

  Eigen::Index size() const { return static_cast<Eigen::Index>(cells_.size()) + 2; }
  const std::vector<CellId>& cells() const { return cells_; }
  bool contains(CellId token) const;
  Eigen::Index index_of(CellId token) const;
  CellId token_at(Eigen::Index index) const;

 private:
  std::vector<CellId> cells_;
};

struct ModelConfig {
  ModelKind kind = ModelKind::kRnn;
  int embed_dim = 16;
  int hidden_dim = 32;
  int feature_dim = 0;    // 0 -> hidden_dim
  int attention_dim = 0;  // 0 -> hidden_dim
  // Learned per-cell term added to the traffic projection. Without it every
  // cell is encoded by its accumulation values alone.
  bool cell_identity = true;

  int d_f() const { return feature_dim > 0 ? feature_dim : hidden_dim; }
  int d_a() const { return attention_dim > 0 ? attention_dim : hidden_dim; }
};

// Per-cell traffic features and their attention projection, computed once
// per trajectory.
struct TrafficContext {
  Matrix features;   // [N x d_f]
  Matrix projected;  // features * U_a, [N x d_a]
};

struct AttentionOutput {
  Vector alpha;    // [N], sums to 1
  Vector context;  // [d_f]
};

struct ForwardResult {
  std::vector<Vector> probs;  // one distribution per input token
  Matrix attention;           // [steps x N]; empty for the baseline
};

struct GenerationResult {
  std::vector<CellId> tokens;  // prefix followed by sampled tokens
  std::vector<Vector> probs;   // distribution each sampled token was drawn from
  Matrix attention;            // one row per consumed token (ARNN only)
  bool terminated = false;     // ended by sampling #end
};

class SequenceModel {
 public:
  SequenceModel(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed);

  ModelKind kind() const { return config_.kind; }
  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  // Rows of the traffic tensor the ARNN expects (one per active cell).
  Eigen::Index traffic_cells() const { return static_cast<Eigen::Index>(vocab_.cells().size()); }

  Matrix encode_traffic(const TrafficStateTensor& traffic) const;
  LstmState attention_init_state(const Matrix& features) const;
  AttentionOutput attention_step(const Vector& s_prev, const Matrix& features) const;

  ForwardResult forward(std::span<const CellId> x, const TrafficStateTensor* traffic = nullptr) const;

  /// Summed cross-entropy over the targets under `params` (same layout as
  /// this model). Gradients are added into `grads` when given.
  double loss(const ModelParams& params, std::span<const CellId> x, std::span<const CellId> y,
              const TrafficStateTensor* traffic, ModelParams* grads) const;
  double loss(std::span<const CellId> x, std::span<const CellId> y, const TrafficStateTensor* traffic,
              ModelParams* grads = nullptr) const {
    return loss(params_, x, y, traffic, grads);
  }

  GenerationResult generate(std::span<const CellId> prefix, const TrafficStateTensor* traffic,
                            std::uint64_t seed, std::size_t max_len) const;

  Checkpoint to_checkpoint() const;
  static SequenceModel from_checkpoint(const Checkpoint& ck);

 private:
  struct Step;
  TrafficContext prepare(const ModelParams& p, const TrafficStateTensor& traffic) const;
  AttentionOutput attend(const ModelParams& p, const Vector& s_prev, const TrafficContext& ctx,
                         Matrix* tanh_cache) const;
  LstmState init_state(const ModelParams& p, const TrafficContext* ctx) const;
  Vector step_input(const ModelParams& p, Eigen::Index token, const Vector* context) const;
  void check_traffic(const TrafficStateTensor* traffic) const;

  ModelConfig config_;
  Vocabulary vocab_;
  ModelParams params_;
};

ForwardResult rnn_forward(std::span<const CellId> x, const SequenceModel& model);
ForwardResult arnn_forward(std::span<const CellId> x, const TrafficStateTensor& traffic,
                           const SequenceModel& model);

struct TrainingSample {
  XYSample xy;
  TrafficStateTensor traffic;  // empty for the baseline
};

struct TrainOptions {
  double learning_rate = 1e-3;
  int epochs = 10;
  std::size_t batch_size = 1;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;  // shuffling
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // running mean per-step cross-entropy
  std::size_t clipped_updates = 0;
};

/// Teacher-forced training with Adam. Throws on a non-finite loss, naming
/// the epoch and step.
TrainReport train(SequenceModel& model, std::span<const TrainingSample> samples, const TrainOptions& options);

// Mean per-step cross-entropy over all targets of the samples.
double mean_step_loss(const SequenceModel& model, std::span<const TrainingSample> samples);

std::size_t default_max_len(std::size_t reference_tokens);

}  // namespace trajpred
