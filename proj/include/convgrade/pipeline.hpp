#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "convgrade/config.hpp"
#include "convgrade/metrics.hpp"
#include "convgrade/model.hpp"

namespace convgrade {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t grad_accum = 2;
  /// Initial learning rate per repeat; repeat i uses lrs[i % size].
  std::vector<double> lrs{3e-3, 1e-3, 3e-4, 1e-4, 3e-5};
  double lr_decay = 0.85;
  std::size_t patience = 4;
  std::size_t max_epochs = 30;
  /// Early stopping is not checked before this many epochs.
  std::size_t min_epochs = 0;
  std::size_t n_seeds = 5;
  std::uint64_t seed = 1;  // repeat i uses seed + i
  /// Start the regressor output bias at the mean training score.
  bool init_bias_to_mean = true;
  std::string stage1_data;  // posttraining corpus; empty skips stage 1
  std::size_t stage1_epochs = 3;
  std::size_t stage2_epochs = 3;
  std::size_t threads = 0;  // 0: CONVGRADE_THREADS, else 1
  std::string cefr;         // "1:A1,..." or empty for the default map
  ModelConfig model;

  void validate() const;
  std::size_t thread_count() const;
  CefrMap cefr_map() const;
};

/// Top-level keys for training, "model." keys for the architecture. Unknown keys are rejected.
TrainConfig read_train_config(const KeyValues& kv);
TrainConfig load_train_config(const std::filesystem::path& path);

struct Dataset {
  std::vector<Conversation> train, dev, test;
};

/// train.jsonl and dev.jsonl are required; test.jsonl is optional.
Dataset load_dataset(const std::filesystem::path& dir, const CorpusOptions& opts = {});
void save_dataset(const std::filesystem::path& dir, const Dataset& d);

/// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// True when the last `patience` epochs all failed to improve on the best earlier loss.
bool should_stop(std::span<const double> val_losses, std::size_t patience);

/// out += scale * sum_i d[w(y_i) (yhat_i - y_i)^2] / d params; returns the summed loss.
/// Items are reduced in fixed-size chunks in a fixed order, so the result does
/// not depend on `threads`. Throws NumericError naming the conversation on a
/// non-finite loss.
double accumulate_gradients(const GradingModel& model, std::span<const PreparedConversation* const> items,
                            const LossWeights& w, double scale, Gradients& out, std::size_t threads = 1,
                            std::optional<std::uint64_t> dropout_seed = std::nullopt);

std::vector<double> predict_all(const GradingModel& model, const std::vector<PreparedConversation>& data,
                                std::size_t threads = 1);
double dataset_loss(const GradingModel& model, const std::vector<PreparedConversation>& data, const LossWeights& w,
                    std::size_t threads = 1);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
  std::size_t steps = 0;
};

struct TrainLog {
  double initial_val_loss = 0;
  std::vector<EpochLog> epochs;
  bool early_stopped = false;
};

void init_output_bias(GradingModel& model, const std::vector<PreparedConversation>& train);

/// Shuffled micro-batches, Adam step every grad_accum micro-batches (and at
/// epoch end), lr decayed per epoch, early stopping on validation loss. The
/// model keeps its last-epoch parameters.
TrainLog train_model(GradingModel& model, const std::vector<PreparedConversation>& train,
                     const std::vector<PreparedConversation>& dev, const TrainConfig& cfg, double lr,
                     std::uint64_t seed, const LossWeights& w);

struct TrainedModel {
  GradingModel model;
  std::optional<TrainLog> stage1;
  TrainLog log;
};

/// Plain training, or posttraining on cfg.stage1_data followed by training on
/// `data` with encoder parameters carried over and graph-side parameters fresh.
TrainedModel two_stage_train(const TrainConfig& cfg, const Dataset& data, std::uint64_t seed, double lr);

struct Evaluation {
  MetricsReport metrics;
  std::vector<double> predictions;  // raw model outputs
};
/// Metrics on clamp(yhat, 1, 9).
Evaluation evaluate(const GradingModel& model, const std::vector<Conversation>& test, const CefrMap& cefr,
                    std::size_t threads = 1);

struct RunRecord {
  std::uint64_t seed = 0;
  double lr = 0;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
  std::optional<TrainLog> stage1;
  TrainLog log;
};

struct SeedRunReport {
  std::string variant;
  std::vector<RunRecord> runs;
  std::vector<std::pair<std::string, MeanStd>> summary;  // over successful runs
  std::size_t failed = 0;
};

/// One train + evaluate per (seed, lr) repeat. Failed runs are recorded and skipped in the summary.
/// When `keep_dir` is set, run i's model is saved to keep_dir/run<i>.
SeedRunReport multi_seed_run(const TrainConfig& cfg, const Dataset& data,
                             const std::optional<std::filesystem::path>& keep_dir = std::nullopt);

struct AblationReport {
  std::vector<SeedRunReport> rows;
  std::size_t failed() const;
};

/// Variant labels from "B,B+C,C+D"; the sequence-only baseline "B" is always first.
std::vector<std::string> parse_subsets(const std::string& list);
/// The nine standard ablation rows.
std::vector<std::string> standard_variants();
AblationReport ablate(const TrainConfig& cfg, const Dataset& data, const std::vector<std::string>& variants);

nlohmann::ordered_json to_json(const TrainLog& log);
nlohmann::ordered_json to_json(const SeedRunReport& r);
nlohmann::ordered_json to_json(const AblationReport& r);
/// Rows are variants, columns the six metrics, cells "mean (std)".
std::string render_table(const AblationReport& r);

}  // namespace convgrade
