#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hierolm/corpus.hpp"
#include "hierolm/model.hpp"
#include "hierolm/optimizer.hpp"
#include "json.hpp"

namespace hierolm {

struct TrainConfig {
  Architecture architecture = Architecture::kLstm;
  std::size_t embed_size = 1024;
  std::size_t hidden_size = 1024;
  std::size_t context_order = 2;
  double dropout = 0.0;
  std::size_t batch_size = 32;
  double initial_lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t patience_epochs = 5;
  double decay_factor = 0.5;
  std::size_t max_decays = 5;
  double grad_clip_norm = 5.0;  // <= 0 disables clipping
  double improvement_threshold = 1e-4;
  std::uint64_t seed = 1;
  std::size_t max_epochs = 200;
  std::size_t min_count = 1;
  std::uint64_t split_seed = 1;
  SplitRatios split_ratios;
  std::size_t eval_batch_size = 64;

  void validate() const;
  ModelDims dims(std::size_t vocab_size) const;

  /// Assigns one field from its text form. Keys match the JSON names.
  /// Throws InvalidArgument for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Learning-rate decay on a stalled validation metric. A value counts as an
/// improvement when it beats the best so far by more than `threshold`.
class PlateauSchedule {
 public:
  PlateauSchedule(double initial_lr, std::size_t patience, double factor, std::size_t max_decays,
                  double threshold);
  explicit PlateauSchedule(const TrainConfig& config)
      : PlateauSchedule(config.initial_lr, config.patience_epochs, config.decay_factor, config.max_decays,
                        config.improvement_threshold) {}

  struct Outcome {
    bool improved = false;
    bool decayed = false;
    bool stop = false;
  };

  Outcome observe(double metric);

  double lr() const noexcept { return lr_; }
  double best() const noexcept { return best_; }
  std::size_t decay_count() const noexcept { return decays_; }
  std::size_t epochs_since_improvement() const noexcept { return stalled_; }
  bool finished() const noexcept { return decays_ >= max_decays_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  std::size_t max_decays_;
  double threshold_;
  double best_;
  std::size_t stalled_ = 0;
  std::size_t decays_ = 0;
};

/// Sentence indices per batch for one epoch: seeded shuffle, stable sort by
/// length, consecutive chunks, then a seeded shuffle of the chunk order.
std::vector<std::vector<std::size_t>> plan_batches(std::span<const EncodedSentence> split, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch);

std::vector<Batch> make_batches(std::span<const EncodedSentence> split, std::size_t batch_size, std::uint64_t seed,
                                std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;          // rate used during the epoch
  double train_loss = 0.0;  // token-weighted mean NLL
  double val_ppl = 0.0;
  std::size_t decay_count = 0;  // after this epoch's schedule update
  bool improved = false;

  nlohmann::json to_json() const;
};

struct TrainState {
  std::size_t epoch = 0;
  double current_lr = 0.0;
  double best_val_perplexity = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improvement = 0;
  std::size_t decay_count = 0;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  /// Replaces validation perplexity; called after every epoch including 0.
  std::function<double(std::size_t epoch, const LanguageModel<float>& model)> validation_metric;
  /// Receives one JSON object per line per epoch.
  std::ostream* metrics = nullptr;
  /// Skips the gradient updates. Used to exercise the schedule alone.
  bool skip_updates = false;
};

struct TrainResult {
  std::unique_ptr<LanguageModel<float>> model;  // best validation perplexity
  TrainState state;
  Optimizer<float> optimizer{OptimizerKind::kAdam};
};

/// Epoch 0 evaluates the freshly initialized model and seeds the best
/// validation perplexity; epochs 1.. train. Stops when the schedule has
/// decayed max_decays times or after max_epochs.
TrainResult train(const TrainConfig& config, const DatasetSplit& data, std::size_t vocab_size,
                  const TrainHooks& hooks = {});

/// Split, train-only vocabulary and encoded splits for a corpus under the
/// config's split_seed, split_ratios and min_count.
struct PreparedCorpus {
  SplitIndices split;
  Vocabulary vocab;
  DatasetSplit data;
};

PreparedCorpus prepare_corpus(std::span<const Sentence> sentences, const TrainConfig& config);

struct SweepGrid {
  std::vector<std::size_t> embed_sizes;
  std::vector<std::size_t> hidden_sizes;
  std::vector<double> dropouts;

  std::size_t points() const;
};

struct SweepRow {
  std::size_t point = 0;
  std::size_t embed_size = 0;
  std::size_t hidden_size = 0;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double best_val_perplexity = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double test_perplexity = 0.0;
  double test_macro_f1 = 0.0;

  nlohmann::json to_json() const;
};

/// Trains one model per grid point in embed, hidden, dropout order. Point i
/// trains with seed derive_seed(base.seed, i). Rows are sorted by test
/// accuracy descending, ties by point index. Empty axes fall back to the base
/// config value.
std::vector<SweepRow> sweep(const TrainConfig& base, const SweepGrid& grid, const DatasetSplit& data,
                            std::size_t vocab_size, std::ostream* log = nullptr);

std::string sweep_tsv(std::span<const SweepRow> rows);
nlohmann::json sweep_json(std::span<const SweepRow> rows);

}  // namespace hierolm
