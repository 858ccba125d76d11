#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "convgrade/pipeline.hpp"
#include "fixtures.hpp"

using namespace convgrade;

namespace {

TrainConfig tiny_train() {
  TrainConfig c;
  c.model = fixtures::tiny_model();
  c.batch_size = 4;
  c.grad_accum = 2;
  c.lrs = {3e-3};
  c.max_epochs = 3;
  c.n_seeds = 2;
  c.threads = 1;
  return c;
}

Dataset tiny_data(std::size_t n = 24, std::uint64_t seed = 5) {
  auto all = fixtures::synth(n, seed);
  Dataset d;
  const std::size_t a = n * 2 / 3, b = n * 5 / 6;
  d.train.assign(all.begin(), all.begin() + static_cast<long>(a));
  d.dev.assign(all.begin() + static_cast<long>(a), all.begin() + static_cast<long>(b));
  d.test.assign(all.begin() + static_cast<long>(b), all.end());
  return d;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("convgrade_test_pipeline_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

double max_abs_diff(const Gradients& a, const Gradients& b) {
  double worst = 0;
  for (std::size_t p = 0; p < a.size(); ++p)
    for (std::size_t i = 0; i < a[p].size(); ++i) worst = std::max(worst, std::abs(a[p][i] - b[p][i]));
  return worst;
}

}  // namespace

TEST_CASE("early stopping rule") {
  const std::vector<double> v{1.0, 0.9, 0.95, 0.96, 0.97, 0.98};
  for (std::size_t k = 1; k < v.size(); ++k) CHECK_FALSE(should_stop(std::span(v).first(k), 4));
  CHECK(should_stop(v, 4));
  CHECK_FALSE(should_stop(std::vector<double>{}, 1));
  // Ties do not count as improvement.
  CHECK(should_stop(std::vector<double>{1.0, 1.0}, 1));
}

TEST_CASE("gradient accumulation equals one step on the union") {
  const auto convs = fixtures::synth(12, 6);
  for (const std::string label : {"B+CDA", "B", "C+D", "B+C"}) {
    ModelConfig cfg = fixtures::tiny_model();
    cfg.set_variant(label);
    GradingModel m = GradingModel::create(cfg, convs, 2);
    const auto prepared = m.prepare_all(convs);
    std::vector<const PreparedConversation*> all, b1, b2;
    for (std::size_t i = 0; i < prepared.size(); ++i) {
      all.push_back(&prepared[i]);
      (i < 5 ? b1 : b2).push_back(&prepared[i]);
    }
    std::vector<int> scores;
    for (const auto& p : prepared) scores.push_back(p.score);
    const LossWeights w = compute_loss_weights(scores);
    const double scale = 1.0 / static_cast<double>(all.size());

    Gradients split = m.params().make_gradients();
    const double l1 = accumulate_gradients(m, b1, w, scale, split);
    const double l2 = accumulate_gradients(m, b2, w, scale, split);
    Gradients joint = m.params().make_gradients();
    const double l = accumulate_gradients(m, all, w, scale, joint);
    INFO(label);
    CHECK(max_abs_diff(split, joint) <= 1e-10);
    CHECK(std::abs(l1 + l2 - l) <= 1e-10);

    Gradients threaded = m.params().make_gradients();
    accumulate_gradients(m, all, w, scale, threaded, 3);
    CHECK(max_abs_diff(threaded, joint) == 0.0);
  }
}

TEST_CASE("training is deterministic and follows the schedule") {
  const Dataset d = tiny_data();
  TrainConfig cfg = tiny_train();
  const auto a = two_stage_train(cfg, d, 3, 3e-3);
  const auto b = two_stage_train(cfg, d, 3, 3e-3);
  CHECK(to_json(a.log).dump() == to_json(b.log).dump());
  CHECK_FALSE(a.stage1);
  REQUIRE(a.log.epochs.size() == 3);
  // 16 training conversations, micro-batches of 4, 2 per step: 2 steps per epoch.
  for (const auto& e : a.log.epochs) {
    CHECK(e.steps == 2);
    CHECK(e.lr == doctest::Approx(3e-3 * std::pow(0.85, static_cast<double>(e.epoch - 1))));
  }
  const CefrMap cefr;
  CHECK(to_json(evaluate(a.model, d.test, cefr).metrics).dump() ==
        to_json(evaluate(b.model, d.test, cefr).metrics).dump());
}

TEST_CASE("early stopping never trains past patience") {
  const Dataset d = tiny_data();
  TrainConfig cfg = tiny_train();
  cfg.patience = 1;
  cfg.max_epochs = 12;
  cfg.lrs = {0.3};  // large enough to make validation loss bounce
  const auto r = two_stage_train(cfg, d, 4, 0.3);
  std::vector<double> vals;
  for (const auto& e : r.log.epochs) vals.push_back(e.val_loss);
  for (std::size_t k = 1; k < vals.size(); ++k) CHECK_FALSE(should_stop(std::span(vals).first(k), cfg.patience));
  CHECK((should_stop(vals, cfg.patience) || vals.size() == cfg.max_epochs));
  CHECK(r.log.early_stopped == (vals.size() < cfg.max_epochs));
}

TEST_CASE("bias starts at the training mean") {
  const Dataset d = tiny_data();
  GradingModel m = GradingModel::create(fixtures::tiny_model(), d.train, 1);
  const auto prepared = m.prepare_all(d.train);
  init_output_bias(m, prepared);
  double mean = 0;
  for (const auto& c : d.train) mean += c.sst_score;
  CHECK(m.params().value(m.regressor().output_bias())[0] == doctest::Approx(mean / d.train.size()));
}

TEST_CASE("two-stage training carries the encoder over") {
  const Dataset d = tiny_data();
  const auto dir = scratch("stage1");
  Dataset a = tiny_data(18, 77);
  save_dataset(dir, a);
  TrainConfig cfg = tiny_train();
  cfg.stage1_data = dir.string();
  cfg.stage1_epochs = 2;
  cfg.stage2_epochs = 2;
  cfg.max_epochs = 2;
  const auto r = two_stage_train(cfg, d, 6, 3e-3);
  REQUIRE(r.stage1);
  CHECK(r.stage1->epochs.size() == 2);
  CHECK(r.log.epochs.size() == 2);
  CHECK(std::isfinite(r.log.initial_val_loss));

  // Stage-2 starting encoder differs from a fresh one: stage 1 moved it.
  std::vector<Conversation> both = a.train;
  both.insert(both.end(), d.train.begin(), d.train.end());
  const GradingModel fresh(cfg.model, Vocabulary::build(both), 6);
  const ParamStore& fs = fresh.params();
  double moved = 0;
  for (ParamId i = 0; i < fs.size(); ++i) {
    if (fs.name(i).rfind("enc.", 0) != 0) continue;
    const Tensor& x = r.model.params().value(r.model.params().id(fs.name(i)));
    for (std::size_t k = 0; k < x.size(); ++k) moved += std::abs(x[k] - fs.value(i)[k]);
  }
  CHECK(moved > 0);

  cfg.stage1_data = (dir / "nowhere").string();
  CHECK_THROWS_AS(two_stage_train(cfg, d, 6, 3e-3), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("multi-seed runs and summaries") {
  const Dataset d = tiny_data();
  TrainConfig cfg = tiny_train();
  cfg.max_epochs = 1;
  cfg.lrs = {3e-3, 1e-3};
  const auto dir = scratch("keep");
  const SeedRunReport r = multi_seed_run(cfg, d, dir);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.failed == 0);
  CHECK(r.runs[0].seed == 1);
  CHECK(r.runs[1].seed == 2);
  CHECK(r.runs[1].lr == 1e-3);
  CHECK(r.summary.size() == 6);
  CHECK(std::filesystem::exists(dir / "run1" / "model.ckpt"));

  const GradingModel back = GradingModel::load(dir / "run0");
  const auto ev = evaluate(back, d.test, CefrMap());
  CHECK(to_json(ev.metrics).dump() == to_json(r.runs[0].metrics).dump());

  TrainConfig par = cfg;
  par.threads = 2;
  const SeedRunReport rp = multi_seed_run(par, d);
  CHECK(to_json(rp).dump() == to_json(r).dump());

  TrainConfig one = cfg;
  one.n_seeds = 1;
  const SeedRunReport r1 = multi_seed_run(one, d);
  for (const auto& [name, ms] : r1.summary) CHECK(ms.str().find("(0.000)") != std::string::npos);

  Dataset broken = d;
  broken.test.clear();
  CHECK_THROWS_AS(multi_seed_run(cfg, broken), ContractError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("failed runs are recorded and skipped") {
  Dataset d = tiny_data();
  TrainConfig cfg = tiny_train();
  cfg.max_epochs = 1;
  cfg.n_seeds = 2;
  cfg.lrs = {1e300};  // overflows into non-finite parameters
  const SeedRunReport r = multi_seed_run(cfg, d);
  CHECK(r.failed == 2);
  CHECK(r.summary.empty());
  CHECK_FALSE(r.runs[0].error.empty());
  AblationReport ab;
  ab.rows.push_back(r);
  CHECK(ab.failed() == 2);
  CHECK(render_table(ab).find("failed") != std::string::npos);
}

TEST_CASE("subset parsing and ablation shape") {
  CHECK(parse_subsets("") == std::vector<std::string>{"B"});
  CHECK(parse_subsets("B+C, C+D+A ,CD,B") == std::vector<std::string>{"B", "B+C", "C+D+A", "C+D"});
  CHECK_THROWS_AS(parse_subsets("B+Q"), ConfigError);
  CHECK(standard_variants().size() == 9);

  const Dataset d = tiny_data(18, 8);
  TrainConfig cfg = tiny_train();
  cfg.max_epochs = 1;
  cfg.n_seeds = 1;
  const AblationReport empty = ablate(cfg, d, {});
  REQUIRE(empty.rows.size() == 1);
  CHECK(empty.rows[0].variant == "B");

  const AblationReport r = ablate(cfg, d, standard_variants());
  REQUIRE(r.rows.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) CHECK(r.rows[i].variant == standard_variants()[i]);
  CHECK(r.failed() == 0);
  const std::string table = render_table(r);
  std::istringstream lines(table);
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line);) ++n;
  CHECK(n == 10);
  CHECK(table.find("RMSE") != std::string::npos);
  CHECK(table.find("(0.000)") != std::string::npos);
}

TEST_CASE("train config parsing") {
  std::istringstream ok(
      "batch_size = 8\nlrs = [1e-3, 3e-4]\n[model]\ndim = 8\nvariant = B+CD\n");
  const TrainConfig c = read_train_config(KeyValues::parse(ok, "ok"));
  CHECK(c.batch_size == 8);
  CHECK(c.lrs == std::vector<double>{1e-3, 3e-4});
  CHECK(c.model.dim == 8);
  CHECK(c.model.variant() == "B+CD");

  std::istringstream unknown("batch_sizee = 8\n");
  CHECK_THROWS_AS(read_train_config(KeyValues::parse(unknown, "unknown")), ConfigError);
  std::istringstream zero("patience = 0\n");
  CHECK_THROWS_AS(read_train_config(KeyValues::parse(zero, "zero")), ConfigError);
  CHECK_THROWS_AS(load_train_config("/nonexistent/train.cfg"), ConfigError);
}

TEST_CASE("dataset files") {
  const Dataset d = tiny_data(12, 9);
  const auto dir = scratch("data");
  save_dataset(dir, d);
  const Dataset back = load_dataset(dir);
  CHECK(back.train.size() == d.train.size());
  CHECK(back.test.size() == d.test.size());
  std::filesystem::remove(dir / "dev.jsonl");
  CHECK_THROWS_AS(load_dataset(dir), ConfigError);
  std::filesystem::remove_all(dir);
}
