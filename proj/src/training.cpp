#include "hierolm/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "hierolm/error.hpp"
#include "hierolm/evaluation.hpp"
#include "hierolm/ops.hpp"

namespace hierolm {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  N value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size())
    throw Error(ErrorCode::kInvalidArgument, "bad value for " + std::string(key) + ": '" + std::string(text) + "'");
  return value;
}

SplitRatios parse_ratios(std::string_view text) {
  std::vector<unsigned> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ',' || text[i] == ':') {
      parts.push_back(parse_number<unsigned>("split_ratios", text.substr(start, i - start)));
      start = i + 1;
    }
  }
  if (parts.size() != 3) throw Error(ErrorCode::kInvalidArgument, "split_ratios needs three values");
  return {parts[0], parts[1], parts[2]};
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (embed_size < 1 || hidden_size < 1 || context_order < 1) fail("model sizes must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (batch_size < 1 || eval_batch_size < 1) fail("batch sizes must be >= 1");
  if (!(initial_lr > 0.0)) fail("initial_lr must be positive");
  if (patience_epochs < 1) fail("patience_epochs must be >= 1");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) fail("decay_factor must be in (0, 1)");
  if (max_decays < 1) fail("max_decays must be >= 1");
  if (!(improvement_threshold >= 0.0)) fail("improvement_threshold must be >= 0");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (min_count < 1) fail("min_count must be >= 1");
  if (split_ratios.train == 0 || split_ratios.validation == 0 || split_ratios.test == 0)
    fail("split ratios must be positive");
}

ModelDims TrainConfig::dims(std::size_t vocab_size) const {
  return ModelDims{vocab_size, embed_size, hidden_size, context_order};
}

void TrainConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "architecture" || key == "arch") {
    architecture = parse_architecture(value);
  } else if (key == "embed_size") {
    embed_size = parse_number<std::size_t>(key, value);
  } else if (key == "hidden_size") {
    hidden_size = parse_number<std::size_t>(key, value);
  } else if (key == "context_order") {
    context_order = parse_number<std::size_t>(key, value);
  } else if (key == "dropout") {
    dropout = parse_number<double>(key, value);
  } else if (key == "batch_size") {
    batch_size = parse_number<std::size_t>(key, value);
  } else if (key == "initial_lr" || key == "lr") {
    initial_lr = parse_number<double>(key, value);
  } else if (key == "optimizer") {
    optimizer = parse_optimizer(value);
  } else if (key == "patience_epochs") {
    patience_epochs = parse_number<std::size_t>(key, value);
  } else if (key == "decay_factor") {
    decay_factor = parse_number<double>(key, value);
  } else if (key == "max_decays") {
    max_decays = parse_number<std::size_t>(key, value);
  } else if (key == "grad_clip_norm") {
    grad_clip_norm = parse_number<double>(key, value);
  } else if (key == "improvement_threshold") {
    improvement_threshold = parse_number<double>(key, value);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "max_epochs") {
    max_epochs = parse_number<std::size_t>(key, value);
  } else if (key == "min_count") {
    min_count = parse_number<std::size_t>(key, value);
  } else if (key == "split_seed") {
    split_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "split_ratios") {
    split_ratios = parse_ratios(value);
  } else if (key == "eval_batch_size") {
    eval_batch_size = parse_number<std::size_t>(key, value);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown training option '" + std::string(key) + "'");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"architecture", architecture_name(architecture)},
          {"embed_size", embed_size},
          {"hidden_size", hidden_size},
          {"context_order", context_order},
          {"dropout", dropout},
          {"batch_size", batch_size},
          {"initial_lr", initial_lr},
          {"optimizer", optimizer_name(optimizer)},
          {"patience_epochs", patience_epochs},
          {"decay_factor", decay_factor},
          {"max_decays", max_decays},
          {"grad_clip_norm", grad_clip_norm},
          {"improvement_threshold", improvement_threshold},
          {"seed", seed},
          {"max_epochs", max_epochs},
          {"min_count", min_count},
          {"split_seed", split_seed},
          {"split_ratios", {split_ratios.train, split_ratios.validation, split_ratios.test}},
          {"eval_batch_size", eval_batch_size}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kParseError, "training config must be a JSON object");
  TrainConfig config;
  for (const auto& [key, value] : j.items()) {
    if (value.is_string()) {
      config.set(key, value.get<std::string>());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + v.dump();
      config.set(key, joined);
    } else {
      config.set(key, value.dump());
    }
  }
  return config;
}

PlateauSchedule::PlateauSchedule(double initial_lr, std::size_t patience, double factor, std::size_t max_decays,
                                 double threshold)
    : lr_(initial_lr),
      patience_(patience),
      factor_(factor),
      max_decays_(max_decays),
      threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {}

PlateauSchedule::Outcome PlateauSchedule::observe(double metric) {
  Outcome out;
  if (std::isinf(best_) ? metric < best_ : metric < best_ - threshold_) {
    best_ = metric;
    stalled_ = 0;
    out.improved = true;
  } else if (++stalled_ >= patience_) {
    lr_ *= factor_;
    ++decays_;
    stalled_ = 0;
    out.decayed = true;
  }
  out.stop = finished();
  return out;
}

std::vector<std::vector<std::size_t>> plan_batches(std::span<const EncodedSentence> split, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (split.empty()) throw Error(ErrorCode::kEmptySplit, "cannot batch an empty split");
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return split[a].size() < split[b].size(); });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  rng.shuffle(std::span<std::vector<std::size_t>>(batches));
  return batches;
}

std::vector<Batch> make_batches(std::span<const EncodedSentence> split, std::size_t batch_size, std::uint64_t seed,
                                std::size_t epoch) {
  std::vector<Batch> out;
  for (const auto& indices : plan_batches(split, batch_size, seed, epoch)) {
    std::vector<const EncodedSentence*> rows;
    rows.reserve(indices.size());
    for (std::size_t i : indices) rows.push_back(&split[i]);
    out.push_back(Batch::from_sentences(std::span<const EncodedSentence* const>(rows)));
  }
  return out;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},     {"lr", lr}, {"train_loss", train_loss}, {"val_ppl", val_ppl},
          {"decay_count", decay_count}, {"improved", improved}};
}

TrainResult train(const TrainConfig& config, const DatasetSplit& data, std::size_t vocab_size,
                  const TrainHooks& hooks) {
  config.validate();
  if (data.train.empty()) throw Error(ErrorCode::kEmptySplit, "training split is empty");
  if (data.validation.empty() && !hooks.validation_metric)
    throw Error(ErrorCode::kEmptySplit, "validation split is empty");

  auto model = make_model<float>(config.architecture, config.dims(vocab_size), InitOptions{derive_seed(config.seed, 0)});
  TrainResult result;
  result.optimizer = Optimizer<float>(config.optimizer);
  PlateauSchedule schedule(config);
  Rng dropout_rng(derive_seed(config.seed, 2));
  const std::uint64_t batch_seed = derive_seed(config.seed, 1);
  const EvalOptions eval_options{config.eval_batch_size, true};

  auto validation = [&](std::size_t epoch) {
    if (hooks.validation_metric) return hooks.validation_metric(epoch, *model);
    return evaluate(*model, std::span<const EncodedSentence>(data.validation), eval_options).perplexity;
  };

  TrainState& state = result.state;
  Matrix<float> logits;
  for (std::size_t epoch = 0; epoch <= config.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.lr = schedule.lr();
    if (epoch == 0) {
      record.train_loss = hooks.skip_updates
                              ? 0.0
                              : evaluate(*model, std::span<const EncodedSentence>(data.train), eval_options).mean_nll;
    } else if (!hooks.skip_updates) {
      double loss_sum = 0.0;
      std::size_t count = 0;
      for (const Batch& batch : make_batches(data.train, config.batch_size, batch_seed, epoch)) {
        const ForwardOptions fwd{true, config.dropout, &dropout_rng};
        auto cache = model->forward(batch, fwd, logits);
        const auto targets = batch.targets();
        const auto mask = batch.mask();
        const auto xent = softmax_xent(logits, std::span<const std::int32_t>(targets),
                                       std::span<const std::uint8_t>(mask), Reduction::kMean, true);
        model->zero_grad();
        model->backward(*cache, xent.dlogits);
        result.optimizer.step(std::span<Parameter<float>>(model->parameters()), schedule.lr(),
                              config.grad_clip_norm);
        loss_sum += xent.loss_sum;
        count += xent.count;
      }
      record.train_loss = loss_sum / static_cast<double>(count);
    }
    record.val_ppl = validation(epoch);
    const auto outcome = schedule.observe(record.val_ppl);
    record.improved = outcome.improved;
    record.decay_count = schedule.decay_count();

    state.epoch = epoch;
    state.current_lr = schedule.lr();
    state.decay_count = schedule.decay_count();
    state.epochs_since_improvement = schedule.epochs_since_improvement();
    state.best_val_perplexity = schedule.best();
    if (outcome.improved) {
      state.best_epoch = epoch;
      result.model = model->clone();
    }
    state.history.push_back(record);
    if (hooks.metrics) *hooks.metrics << record.to_json().dump() << '\n' << std::flush;
    if (outcome.stop) break;
  }
  return result;
}

PreparedCorpus prepare_corpus(std::span<const Sentence> sentences, const TrainConfig& config) {
  PreparedCorpus out;
  out.split = split_dataset(sentences.size(), config.split_ratios, config.split_seed);
  const auto train_sentences = select(sentences, std::span<const std::size_t>(out.split.train));
  out.vocab = Vocabulary::build(train_sentences, config.min_count);
  out.data = encode_split(sentences, out.split, out.vocab);
  return out;
}

std::size_t SweepGrid::points() const {
  return std::max<std::size_t>(1, embed_sizes.size()) * std::max<std::size_t>(1, hidden_sizes.size()) *
         std::max<std::size_t>(1, dropouts.size());
}

nlohmann::json SweepRow::to_json() const {
  return {{"point", point},
          {"embed_size", embed_size},
          {"hidden_size", hidden_size},
          {"dropout", dropout},
          {"seed", seed},
          {"epochs", epochs},
          {"best_val_perplexity", best_val_perplexity},
          {"train_accuracy", train_accuracy},
          {"test_accuracy", test_accuracy},
          {"test_perplexity", test_perplexity},
          {"test_macro_f1", test_macro_f1}};
}

std::vector<SweepRow> sweep(const TrainConfig& base, const SweepGrid& grid, const DatasetSplit& data,
                            std::size_t vocab_size, std::ostream* log) {
  const std::vector<std::size_t> embeds = grid.embed_sizes.empty() ? std::vector{base.embed_size} : grid.embed_sizes;
  const std::vector<std::size_t> hiddens =
      grid.hidden_sizes.empty() ? std::vector{base.hidden_size} : grid.hidden_sizes;
  const std::vector<double> dropouts = grid.dropouts.empty() ? std::vector{base.dropout} : grid.dropouts;

  std::vector<SweepRow> rows;
  std::size_t point = 0;
  const EvalOptions eval_options{base.eval_batch_size, true};
  for (std::size_t s : embeds) {
    for (std::size_t d : hiddens) {
      for (double p : dropouts) {
        TrainConfig config = base;
        config.embed_size = s;
        config.hidden_size = d;
        config.dropout = p;
        config.seed = derive_seed(base.seed, point);
        const TrainResult trained = train(config, data, vocab_size);
        SweepRow row;
        row.point = point;
        row.embed_size = s;
        row.hidden_size = d;
        row.dropout = p;
        row.seed = config.seed;
        row.epochs = trained.state.epoch;
        row.best_val_perplexity = trained.state.best_val_perplexity;
        row.train_accuracy = evaluate(*trained.model, std::span<const EncodedSentence>(data.train), eval_options).accuracy;
        if (!data.test.empty()) {
          const EvalReport test = evaluate(*trained.model, std::span<const EncodedSentence>(data.test), eval_options);
          row.test_accuracy = test.accuracy;
          row.test_perplexity = test.perplexity;
          row.test_macro_f1 = test.macro_f1;
        }
        if (log) *log << row.to_json().dump() << '\n' << std::flush;
        rows.push_back(row);
        ++point;
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.test_accuracy > b.test_accuracy; });
  return rows;
}

std::string sweep_tsv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out.precision(6);
  out << "point\tembed_size\thidden_size\tdropout\tseed\tepochs\tbest_val_ppl\ttrain_acc\ttest_acc\ttest_ppl\ttest_f1\n";
  for (const auto& r : rows)
    out << r.point << '\t' << r.embed_size << '\t' << r.hidden_size << '\t' << r.dropout << '\t' << r.seed << '\t'
        << r.epochs << '\t' << r.best_val_perplexity << '\t' << r.train_accuracy << '\t' << r.test_accuracy << '\t'
        << r.test_perplexity << '\t' << r.test_macro_f1 << '\n';
  return out.str();
}

nlohmann::json sweep_json(std::span<const SweepRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back(r.to_json());
  return out;
}

}  // namespace hierolm
