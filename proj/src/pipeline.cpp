#include "convgrade/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "convgrade/log.hpp"
#include "convgrade/optim.hpp"

namespace convgrade {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (grad_accum < 1) throw ConfigError("grad_accum must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (n_seeds < 1) throw ConfigError("n_seeds must be at least 1");
  if (lrs.empty()) throw ConfigError("lrs is empty");
  for (double lr : lrs)
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rates must be positive and finite");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (!stage1_data.empty() && stage1_epochs < 1) throw ConfigError("stage1_epochs must be at least 1");
  cefr_map();
  model.validate();
}

std::size_t TrainConfig::thread_count() const {
  if (threads) return threads;
  if (const char* env = std::getenv("CONVGRADE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    log_warn("ignoring CONVGRADE_THREADS='" + std::string(env) + "'");
  }
  return 1;
}

CefrMap TrainConfig::cefr_map() const { return cefr.empty() ? CefrMap() : CefrMap::parse(cefr); }

TrainConfig read_train_config(const KeyValues& kv) {
  TrainConfig c;
  c.batch_size = kv.get_size("batch_size", c.batch_size);
  c.grad_accum = kv.get_size("grad_accum", c.grad_accum);
  c.lrs = kv.get_doubles("lrs", c.lrs);
  c.lr_decay = kv.get_double("lr_decay", c.lr_decay);
  c.patience = kv.get_size("patience", c.patience);
  c.max_epochs = kv.get_size("max_epochs", c.max_epochs);
  c.min_epochs = kv.get_size("min_epochs", c.min_epochs);
  c.n_seeds = kv.get_size("n_seeds", c.n_seeds);
  c.seed = static_cast<std::uint64_t>(kv.get_size("seed", c.seed));
  c.init_bias_to_mean = kv.get_bool("init_bias_to_mean", c.init_bias_to_mean);
  c.stage1_data = kv.get_string("stage1_data", c.stage1_data);
  c.stage1_epochs = kv.get_size("stage1_epochs", c.stage1_epochs);
  c.stage2_epochs = kv.get_size("stage2_epochs", c.stage2_epochs);
  c.threads = kv.get_size("threads", c.threads);
  c.cefr = kv.get_string("cefr", c.cefr);
  c.model = read_model_config(kv, c.model);
  kv.reject_unused();
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) { return read_train_config(KeyValues::load(path)); }

Dataset load_dataset(const std::filesystem::path& dir, const CorpusOptions& opts) {
  auto need = [&](const char* name) {
    const auto p = dir / name;
    if (!std::filesystem::exists(p)) throw ConfigError("data directory " + dir.string() + " lacks " + name);
    return load_corpus(p.string(), opts);
  };
  Dataset d;
  d.train = need("train.jsonl");
  d.dev = need("dev.jsonl");
  if (std::filesystem::exists(dir / "test.jsonl")) d.test = load_corpus((dir / "test.jsonl").string(), opts);
  if (d.train.empty()) throw ConfigError("empty training split in " + dir.string());
  if (d.dev.empty()) throw ConfigError("empty dev split in " + dir.string());
  return d;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  save_corpus((dir / "train.jsonl").string(), d.train);
  save_corpus((dir / "dev.jsonl").string(), d.dev);
  save_corpus((dir / "test.jsonl").string(), d.test);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

bool should_stop(std::span<const double> val_losses, std::size_t patience) {
  if (val_losses.empty()) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_losses.size(); ++i)
    if (val_losses[i] < val_losses[best]) best = i;
  return val_losses.size() - 1 - best >= patience;
}

namespace {

constexpr std::size_t kChunk = 8;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x7F4A7C159E3779B9ULL + (a << 6) + (a >> 2));
  x ^= x >> 31;
  return x * 0xBF58476D1CE4E5B9ULL;
}

}  // namespace

double accumulate_gradients(const GradingModel& model, std::span<const PreparedConversation* const> items,
                            const LossWeights& w, double scale, Gradients& out, std::size_t threads,
                            std::optional<std::uint64_t> dropout_seed) {
  const std::size_t n_chunks = (items.size() + kChunk - 1) / kChunk;
  std::vector<Gradients> partial(n_chunks);
  std::vector<double> losses(items.size(), 0.0);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    Gradients g = model.params().make_gradients();
    for (std::size_t i = c * kChunk; i < std::min(items.size(), (c + 1) * kChunk); ++i) {
      const PreparedConversation& p = *items[i];
      Tape t;
      std::optional<Rng> drop;
      if (dropout_seed) drop.emplace(mix(*dropout_seed, i));
      Var loss = weighted_sq_error(model.forward(t, p, drop ? &*drop : nullptr), p.score, w);
      losses[i] = loss.value()[0];
      if (!std::isfinite(losses[i])) throw NumericError("non-finite loss on conversation '" + p.id + "'");
      t.backward(loss);
      t.accumulate_param_grads(g);
    }
    partial[c] = std::move(g);
  });
  double total = 0;
  for (std::size_t c = 0; c < n_chunks; ++c) out.axpy(scale, partial[c]);
  for (double l : losses) total += l;
  return total;
}

std::vector<double> predict_all(const GradingModel& model, const std::vector<PreparedConversation>& data,
                                std::size_t threads) {
  std::vector<double> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { out[i] = model.predict(data[i]); });
  return out;
}

double dataset_loss(const GradingModel& model, const std::vector<PreparedConversation>& data, const LossWeights& w,
                    std::size_t threads) {
  if (data.empty()) throw ContractError("dataset_loss: empty dataset");
  const auto pred = predict_all(model, data, threads);
  std::vector<int> target;
  for (const auto& p : data) target.push_back(p.score);
  return weighted_mse(pred, target, w);
}

void init_output_bias(GradingModel& model, const std::vector<PreparedConversation>& train) {
  if (train.empty()) throw ContractError("init_output_bias: empty training set");
  double mean = 0;
  for (const auto& p : train) mean += p.score;
  mean /= static_cast<double>(train.size());
  model.params().value(model.regressor().output_bias())[0] = mean;
}

TrainLog train_model(GradingModel& model, const std::vector<PreparedConversation>& train,
                     const std::vector<PreparedConversation>& dev, const TrainConfig& cfg, double lr,
                     std::uint64_t seed, const LossWeights& w) {
  if (train.empty()) throw ContractError("train_model: empty training set");
  if (dev.empty()) throw ContractError("train_model: empty validation set");
  const std::size_t threads = cfg.thread_count();
  ParamStore& store = model.params();
  AdamState adam;
  adam.init(store);
  Rng rng(seed);
  TrainLog log;
  log.initial_val_loss = dataset_loss(model, dev, w, threads);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> vals;
  Gradients g = store.make_gradients();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochLog e;
    e.epoch = epoch;
    e.lr = lr_exponential_decay(lr, static_cast<int>(epoch - 1), cfg.lr_decay);
    adam.lr = e.lr;
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t n_micro = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    double loss_sum = 0;
    for (std::size_t first = 0; first < n_micro; first += cfg.grad_accum) {
      const std::size_t last = std::min(n_micro, first + cfg.grad_accum);
      const std::size_t begin = first * cfg.batch_size;
      const std::size_t end = std::min(order.size(), last * cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      g.zero();
      for (std::size_t mb = first; mb < last; ++mb) {
        std::vector<const PreparedConversation*> items;
        for (std::size_t k = mb * cfg.batch_size; k < std::min(order.size(), (mb + 1) * cfg.batch_size); ++k) {
          items.push_back(&train[order[k]]);
        }
        std::optional<std::uint64_t> drop;
        if (cfg.model.gat.dropout > 0) drop = mix(mix(seed, epoch), mb);
        try {
          loss_sum += accumulate_gradients(model, items, w, scale, g, threads, drop);
        } catch (const NumericError& err) {
          std::string ids;
          for (const auto* p : items) ids += (ids.empty() ? "" : ",") + p->id;
          throw NumericError("epoch " + std::to_string(epoch) + ", micro-batch " + std::to_string(mb) + " [" + ids +
                             "]: " + err.what());
        }
      }
      store.zero_grad();
      store.accumulate(g);
      adam_step(store, adam);
      ++e.steps;
    }
    e.train_loss = loss_sum / static_cast<double>(train.size());
    e.val_loss = dataset_loss(model, dev, w, threads);
    if (!std::isfinite(e.val_loss)) throw NumericError("non-finite validation loss after epoch " + std::to_string(epoch));
    log.epochs.push_back(e);
    vals.push_back(e.val_loss);
    log_info("epoch " + std::to_string(epoch) + " lr=" + std::to_string(e.lr) + " train=" + std::to_string(e.train_loss) +
             " val=" + std::to_string(e.val_loss));
    if (epoch >= cfg.min_epochs && should_stop(vals, cfg.patience)) {
      log.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  return log;
}

namespace {

std::vector<int> scores_of(const std::vector<Conversation>& convs) {
  std::vector<int> s;
  for (const auto& c : convs) s.push_back(c.sst_score);
  return s;
}

Dataset load_stage1(const std::string& path) {
  const std::filesystem::path p(path);
  if (!std::filesystem::exists(p)) throw ConfigError("stage-1 dataset not found: " + path);
  Dataset d;
  if (std::filesystem::is_directory(p)) {
    if (!std::filesystem::exists(p / "train.jsonl")) throw ConfigError("stage-1 directory lacks train.jsonl: " + path);
    d.train = load_corpus((p / "train.jsonl").string());
    if (std::filesystem::exists(p / "dev.jsonl")) d.dev = load_corpus((p / "dev.jsonl").string());
  } else {
    d.train = load_corpus(path);
  }
  if (d.train.empty()) throw ConfigError("stage-1 dataset is empty: " + path);
  return d;
}

}  // namespace

TrainedModel two_stage_train(const TrainConfig& cfg, const Dataset& data, std::uint64_t seed, double lr) {
  cfg.validate();
  if (data.train.empty() || data.dev.empty()) throw ContractError("two_stage_train: train and dev splits are required");
  const LossWeights w = compute_loss_weights(scores_of(data.train));

  if (cfg.stage1_data.empty()) {
    GradingModel model = GradingModel::create(cfg.model, data.train, seed);
    const auto train = model.prepare_all(data.train);
    const auto dev = model.prepare_all(data.dev);
    if (cfg.init_bias_to_mean) init_output_bias(model, train);
    TrainLog log = train_model(model, train, dev, cfg, lr, seed, w);
    return {std::move(model), std::nullopt, std::move(log)};
  }

  const Dataset a = load_stage1(cfg.stage1_data);
  std::vector<Conversation> both = a.train;
  both.insert(both.end(), data.train.begin(), data.train.end());
  const Vocabulary vocab = Vocabulary::build(both, cfg.model.min_count);

  GradingModel first(cfg.model, vocab, seed);
  const auto a_train = first.prepare_all(a.train);
  const auto a_dev = first.prepare_all(a.dev.empty() ? data.dev : a.dev);
  if (cfg.init_bias_to_mean) init_output_bias(first, a_train);
  TrainConfig s1 = cfg;
  s1.max_epochs = cfg.stage1_epochs;
  s1.min_epochs = cfg.stage1_epochs;
  TrainLog log1 = train_model(first, a_train, a_dev, s1, lr, seed, compute_loss_weights(scores_of(a.train)));

  GradingModel second(cfg.model, vocab, mix(seed, 2));
  second.copy_params_from(first, "enc.");
  const auto train = second.prepare_all(data.train);
  const auto dev = second.prepare_all(data.dev);
  if (cfg.init_bias_to_mean) init_output_bias(second, train);
  TrainConfig s2 = cfg;
  s2.min_epochs = std::max(cfg.min_epochs, cfg.stage2_epochs);
  TrainLog log2 = train_model(second, train, dev, s2, lr, mix(seed, 3), w);
  return {std::move(second), std::move(log1), std::move(log2)};
}

Evaluation evaluate(const GradingModel& model, const std::vector<Conversation>& test, const CefrMap& cefr,
                    std::size_t threads) {
  if (test.empty()) throw ContractError("evaluate: empty test set");
  Evaluation ev;
  ev.predictions = predict_all(model, model.prepare_all(test), threads);
  std::vector<double> clamped;
  for (double y : ev.predictions) clamped.push_back(clamp_score(y));
  ev.metrics = compute_metrics(clamped, scores_of(test), cefr);
  if (ev.metrics.pcc_undefined) log_warn("pcc undefined for constant predictions or targets; reported as 0");
  return ev;
}

SeedRunReport multi_seed_run(const TrainConfig& cfg, const Dataset& data,
                             const std::optional<std::filesystem::path>& keep_dir) {
  cfg.validate();
  if (data.test.empty()) throw ContractError("multi_seed_run: the test split is empty");
  SeedRunReport report;
  report.variant = cfg.model.variant();
  report.runs.resize(cfg.n_seeds);
  const std::size_t threads = cfg.thread_count();
  const std::size_t outer = std::min(threads, cfg.n_seeds);
  TrainConfig inner = cfg;
  if (outer > 1) inner.threads = 1;
  else inner.threads = threads;
  const CefrMap cefr = cfg.cefr_map();

  parallel_for(cfg.n_seeds, outer, [&](std::size_t i) {
    RunRecord& run = report.runs[i];
    run.seed = cfg.seed + i;
    run.lr = cfg.lrs[i % cfg.lrs.size()];
    try {
      TrainedModel tm = two_stage_train(inner, data, run.seed, run.lr);
      run.stage1 = std::move(tm.stage1);
      run.log = std::move(tm.log);
      run.metrics = evaluate(tm.model, data.test, cefr, inner.thread_count()).metrics;
      if (keep_dir) tm.model.save(*keep_dir / ("run" + std::to_string(i)));
      run.ok = true;
    } catch (const std::exception& e) {
      run.ok = false;
      run.error = e.what();
      log_warn("variant " + report.variant + " seed " + std::to_string(run.seed) + " failed: " + e.what());
    }
  });

  for (const auto& run : report.runs)
    if (!run.ok) ++report.failed;
  if (report.failed < report.runs.size()) {
    for (const auto& name : metric_names()) {
      std::vector<double> v;
      for (const auto& run : report.runs)
        if (run.ok) v.push_back(metric_value(run.metrics, name));
      report.summary.emplace_back(name, mean_std(v));
    }
  }
  return report;
}

std::size_t AblationReport::failed() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.failed;
  return n;
}

std::vector<std::string> standard_variants() { return {"B", "B+C", "B+D", "B+CD", "B+CDA", "C", "D", "C+D", "C+D+A"}; }

std::vector<std::string> parse_subsets(const std::string& list) {
  std::vector<std::string> out{"B"};
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(std::remove_if(item.begin(), item.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }),
               item.end());
    if (item.empty()) continue;
    ModelConfig probe;
    probe.set_variant(item);
    const std::string label = probe.variant();
    if (std::find(out.begin(), out.end(), label) == out.end()) out.push_back(label);
  }
  return out;
}

AblationReport ablate(const TrainConfig& cfg, const Dataset& data, const std::vector<std::string>& variants) {
  AblationReport report;
  std::vector<std::string> rows = variants;
  if (std::find(rows.begin(), rows.end(), "B") == rows.end()) rows.insert(rows.begin(), "B");
  for (const auto& v : rows) {
    TrainConfig c = cfg;
    c.model.set_variant(v);
    c.model.finalize();
    report.rows.push_back(multi_seed_run(c, data));
  }
  return report;
}

nlohmann::ordered_json to_json(const TrainLog& log) {
  nlohmann::ordered_json j;
  j["initial_val_loss"] = log.initial_val_loss;
  j["early_stopped"] = log.early_stopped;
  auto& epochs = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                      {"steps", e.steps}});
  }
  return j;
}

nlohmann::ordered_json to_json(const SeedRunReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = r.variant;
  j["failed"] = r.failed;
  auto& runs = j["runs"] = nlohmann::ordered_json::array();
  for (const auto& run : r.runs) {
    nlohmann::ordered_json x;
    x["seed"] = run.seed;
    x["lr"] = run.lr;
    x["ok"] = run.ok;
    if (!run.ok) x["error"] = run.error;
    if (run.ok) x["metrics"] = to_json(run.metrics);
    if (run.stage1) x["stage1_log"] = to_json(*run.stage1);
    x["log"] = to_json(run.log);
    runs.push_back(std::move(x));
  }
  auto& summary = j["summary"] = nlohmann::ordered_json::object();
  for (const auto& [name, ms] : r.summary) summary[name] = {{"mean", ms.mean}, {"std", ms.std}, {"cell", ms.str()}};
  return j;
}

nlohmann::ordered_json to_json(const AblationReport& r) {
  nlohmann::ordered_json j;
  auto& rows = j["variants"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  return j;
}

std::string render_table(const AblationReport& r) {
  const std::vector<std::string> headers{"RMSE", "PCC", "Acc@0.5", "Acc@1.0", "MAcc@0.5", "MAcc@1.0"};
  const auto& names = metric_names();
  std::ostringstream os;
  os << std::left << std::setw(10) << "variant";
  for (const auto& h : headers) os << std::right << std::setw(18) << h;
  os << "\n";
  for (const auto& row : r.rows) {
    os << std::left << std::setw(10) << row.variant;
    for (std::size_t k = 0; k < names.size(); ++k) {
      std::string cell = "failed";
      for (const auto& [name, ms] : row.summary) {
        if (name != names[k]) continue;
        cell = ms.str(k < 2 ? 3 : 2);
      }
      os << std::right << std::setw(18) << cell;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace convgrade
