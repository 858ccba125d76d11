// Command-line front end: corpus generation and checks, graph inspection,
// training, evaluation, ablation and confusion reports.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "convgrade/log.hpp"
#include "convgrade/pipeline.hpp"

namespace fs = std::filesystem;
using namespace convgrade;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

/// A directory means its test split; anything else is a corpus file.
std::vector<Conversation> eval_split(const fs::path& data) {
  if (fs::is_directory(data)) {
    if (!fs::exists(data / "test.jsonl")) throw ConfigError(data.string() + " has no test.jsonl");
    return load_corpus((data / "test.jsonl").string());
  }
  return load_corpus(data.string());
}

void print_metrics(const MetricsReport& r) {
  std::printf("n=%zu rmse=%.4f pcc=%.4f%s acc@0.5=%.2f acc@1.0=%.2f macro_acc@0.5=%.2f macro_acc@1.0=%.2f\n", r.n,
              r.rmse, r.pcc, r.pcc_undefined ? " (undefined)" : "", r.acc05, r.acc10, r.macro05, r.macro10);
}

int cmd_synth(std::size_t n, std::uint64_t seed, double sigma, const std::vector<double>& ratios,
              std::uint64_t split_seed, const fs::path& out) {
  SynthConfig cfg;
  cfg.n_conversations = n;
  cfg.rng_seed = seed;
  cfg.noise_sigma = sigma;
  cfg.validate();
  if (ratios.size() != 3) throw ConfigError("--ratios needs three values");
  const auto convs = synth_generate(cfg);
  const auto s = split_dataset(convs, {ratios[0], ratios[1], ratios[2]}, split_seed);
  save_dataset(out, {s.train, s.dev, s.test});
  std::printf("wrote %zu/%zu/%zu conversations to %s\n", s.train.size(), s.dev.size(), s.test.size(),
              out.string().c_str());
  return 0;
}

int cmd_validate(const std::vector<std::string>& files) {
  int status = 0;
  for (const auto& f : files) {
    try {
      const auto convs = load_corpus(f);
      std::size_t responses = 0;
      for (const auto& c : convs) responses += c.responses.size();
      std::printf("%s: ok, %zu conversations, %zu responses\n", f.c_str(), convs.size(), responses);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "%s: %s\n", f.c_str(), e.what());
      status = 1;
    }
  }
  return status;
}

int cmd_build_graphs(const std::string& file, const std::string& id, bool dump, bool no_interlocutor_spo) {
  GraphOptions opts;
  opts.interlocutor_spo = !no_interlocutor_spo;
  std::size_t seen = 0;
  for (const auto& c : load_corpus(file)) {
    if (!id.empty() && c.id != id) continue;
    ++seen;
    const GraphBundle b = build_bundle(c, opts);
    b.g_c.validate();
    b.g_a.validate();
    b.g_d.validate();
    std::printf("%s: responses=%zu G^c=%zu/%zu G^a=%zu/%zu G^d=%zu/%zu (nodes/edges)\n", c.id.c_str(),
                b.num_responses(), b.g_c.num_nodes(), b.g_c.edges().size(), b.g_a.num_nodes(), b.g_a.edges().size(),
                b.g_d.num_nodes(), b.g_d.edges().size());
    if (dump) {
      dump_graph(std::cout, b.g_c, c.id + " semantic");
      dump_graph(std::cout, b.g_a, c.id + " action");
      dump_graph(std::cout, b.g_d, c.id + " discourse");
    }
  }
  if (!id.empty() && seen == 0) throw ConfigError("no conversation with id '" + id + "' in " + file);
  return 0;
}

int cmd_train(const fs::path& config, const fs::path& data, const fs::path& out) {
  const TrainConfig cfg = load_train_config(config);
  const Dataset d = load_dataset(data);
  const SeedRunReport r = multi_seed_run(cfg, d, out);
  write_text(out / "report.json", to_json(r).dump(2) + "\n");
  for (const auto& run : r.runs) {
    std::printf("seed %llu lr %g: ", static_cast<unsigned long long>(run.seed), run.lr);
    if (run.ok) print_metrics(run.metrics);
    else std::printf("FAILED %s\n", run.error.c_str());
  }
  AblationReport table;
  table.rows.push_back(r);
  std::printf("%s", render_table(table).c_str());
  return r.failed ? 1 : 0;
}

int cmd_evaluate(const fs::path& ckpt, const fs::path& data, const std::string& cefr, const fs::path& json_out,
                 const fs::path& confusion) {
  const GradingModel m = GradingModel::load(ckpt);
  const CefrMap map = cefr.empty() ? CefrMap() : CefrMap::parse(cefr);
  const Evaluation ev = evaluate(m, eval_split(data), map, TrainConfig{}.thread_count());
  print_metrics(ev.metrics);
  std::printf("%s", render_confusion(ev.metrics.confusion).c_str());
  if (!json_out.empty()) {
    auto j = to_json(ev.metrics);
    j["predictions"] = ev.predictions;
    write_text(json_out, j.dump(2) + "\n");
  }
  if (!confusion.empty()) emit_confusion(ev.metrics, confusion);
  return 0;
}

int cmd_ablate(const fs::path& config, const fs::path& data, const std::string& subsets, const fs::path& out) {
  const TrainConfig cfg = load_train_config(config);
  const Dataset d = load_dataset(data);
  const auto variants = subsets == "all" ? standard_variants() : parse_subsets(subsets);
  const AblationReport r = ablate(cfg, d, variants);
  const std::string table = render_table(r);
  std::printf("%s", table.c_str());
  if (!out.empty()) {
    write_text(out / "ablation.json", to_json(r).dump(2) + "\n");
    write_text(out / "ablation.txt", table);
  }
  return r.failed() ? 1 : 0;
}

int cmd_report(const fs::path& metrics, const fs::path& confusion) {
  const MetricsReport r = metrics_from_json(read_json(metrics));
  print_metrics(r);
  std::printf("%s", render_confusion(r.confusion).c_str());
  if (!confusion.empty()) emit_confusion(r, confusion);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversation-level proficiency grading with hierarchical graphs"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Log per-epoch progress");
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus split into train/dev/test");
  std::size_t n = 1000;
  std::uint64_t seed = 1, split_seed = 1;
  double sigma = 0.5;
  std::vector<double> ratios{0.8, 0.1, 0.1};
  fs::path synth_out;
  synth->add_option("-n,--count", n, "Number of conversations")->capture_default_str();
  synth->add_option("--seed", seed, "Generator seed")->capture_default_str();
  synth->add_option("--sigma", sigma, "Score noise standard deviation")->capture_default_str();
  synth->add_option("--ratios", ratios, "train,dev,test fractions")->delimiter(',')->expected(3);
  synth->add_option("--split-seed", split_seed, "Split seed")->capture_default_str();
  synth->add_option("-o,--out", synth_out, "Output directory")->required();

  auto* validate = app.add_subcommand("validate", "Check corpus files");
  std::vector<std::string> files;
  validate->add_option("files", files, "JSONL corpus files")->required()->check(CLI::ExistingFile);

  auto* graphs = app.add_subcommand("build-graphs", "Build the three graphs for each conversation");
  std::string graph_file, graph_id;
  bool dump = false, no_ispo = false;
  graphs->add_option("file", graph_file, "JSONL corpus file")->required()->check(CLI::ExistingFile);
  graphs->add_option("--id", graph_id, "Only this conversation");
  graphs->add_flag("--dump", dump, "Print every node and edge");
  graphs->add_flag("--no-interlocutor-spo", no_ispo, "Skip triples of interlocutor responses");

  auto* train = app.add_subcommand("train", "Train and test one configuration over its seeds");
  fs::path config, data, out;
  train->add_option("-c,--config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  train->add_option("-d,--data", data, "Directory with train/dev/test.jsonl")->required()->check(CLI::ExistingDirectory);
  train->add_option("-o,--out", out, "Output directory for checkpoints and report.json")->required();

  auto* eval = app.add_subcommand("evaluate", "Score a test split with a checkpoint");
  fs::path ckpt, eval_data, json_out, confusion;
  std::string cefr;
  eval->add_option("--ckpt", ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("-d,--data", eval_data, "Data directory (test split) or JSONL file")->required()->check(CLI::ExistingPath);
  eval->add_option("--cefr", cefr, "Score to CEFR map, e.g. 1:A1,2:A1,...");
  eval->add_option("--json", json_out, "Write metrics and predictions as JSON");
  eval->add_option("--confusion", confusion, "Write the confusion matrix CSV (and .txt)");

  auto* abl = app.add_subcommand("ablate", "Train every variant and print the comparison table");
  std::string subsets = "all";
  fs::path abl_config, abl_data, abl_out;
  abl->add_option("-c,--config", abl_config, "key = value config file")->required()->check(CLI::ExistingFile);
  abl->add_option("-d,--data", abl_data, "Directory with train/dev/test.jsonl")->required()->check(CLI::ExistingDirectory);
  abl->add_option("--subsets", subsets, "Comma-separated variants such as B+C,C+D, or 'all'")->capture_default_str();
  abl->add_option("-o,--out", abl_out, "Write ablation.json and ablation.txt here");

  auto* report = app.add_subcommand("report", "Render a saved metrics report");
  fs::path metrics_in, report_confusion;
  report->add_option("--metrics", metrics_in, "JSON written by evaluate --json")->required()->check(CLI::ExistingFile);
  report->add_option("--confusion", report_confusion, "Write the confusion matrix CSV (and .txt)");

  CLI11_PARSE(app, argc, argv);
  set_log_level(quiet ? LogLevel::Quiet : verbose ? LogLevel::Info : LogLevel::Warn);

  try {
    if (*synth) return cmd_synth(n, seed, sigma, ratios, split_seed, synth_out);
    if (*validate) return cmd_validate(files);
    if (*graphs) return cmd_build_graphs(graph_file, graph_id, dump, no_ispo);
    if (*train) return cmd_train(config, data, out);
    if (*eval) return cmd_evaluate(ckpt, eval_data, cefr, json_out, confusion);
    if (*abl) return cmd_ablate(abl_config, abl_data, subsets, abl_out);
    if (*report) return cmd_report(metrics_in, report_confusion);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
