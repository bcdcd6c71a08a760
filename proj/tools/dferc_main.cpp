#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "dferc/analysis.hpp"
#include "dferc/run_config.hpp"

namespace fs = std::filesystem;
using namespace dferc;
using nlohmann::json;

namespace {

int log_level() {
  // DFERC_LOG: silent | info | debug
  const char* env = std::getenv("DFERC_LOG");
  if (!env) return 1;
  std::string v(env);
  if (v == "silent" || v == "0") return 0;
  if (v == "debug" || v == "2") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << "\n";
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return RunConfig::from_file(path);
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw ValidationError("an output directory is required (--out)");
  fs::create_directories(dir);
}

Dataset load_split(const std::string& path, const char* what) {
  if (path.empty()) {
    throw ValidationError(std::string("missing ") + what +
                          " dataset path (flag or config paths section)");
  }
  return load_dataset(path);
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  double acc = 0.0;
  for (double x : xs) acc += (x - r.mean) * (x - r.mean);
  r.stddev = xs.size() > 1 ? std::sqrt(acc / static_cast<double>(xs.size() - 1)) : 0.0;
  return r;
}

void write_metrics_file(const Metrics& m, const std::string& path) {
  std::ofstream out(path);
  out << m.to_json().dump(2) << "\n";
}

std::string metrics_brief(const Metrics& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << "acc=" << m.accuracy
     << " w_f1=" << m.weighted_f1;
  return os.str();
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.data.seed = *seed;
  ensure_dir(out_dir);
  SynthOutput synth = generate_synthetic(cfg.data);
  save_dataset(synth.train, out_dir + "/train.jsonl");
  save_dataset(synth.valid, out_dir + "/valid.jsonl");
  save_dataset(synth.test, out_dir + "/test.jsonl");
  json summary = {{"config", synth_config_to_json(cfg.data)},
                  {"train_dialogues", synth.train.dialogues.size()},
                  {"valid_dialogues", synth.valid.dialogues.size()},
                  {"test_dialogues", synth.test.dialogues.size()},
                  {"train_utterances", synth.train.utterance_count()},
                  {"valid_utterances", synth.valid.utterance_count()},
                  {"test_utterances", synth.test.utterance_count()},
                  {"train_label_histogram", synth.train.label_histogram()}};
  std::ofstream(out_dir + "/gen_summary.json") << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

int cmd_train(const std::string& config_path, std::string train_path, std::string valid_path,
              std::string test_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, const std::string& variant_name) {
  RunConfig cfg = load_config(config_path);
  if (train_path.empty()) train_path = cfg.train_path;
  if (valid_path.empty()) valid_path = cfg.valid_path;
  if (test_path.empty()) test_path = cfg.test_path;
  std::string out = out_dir.empty() ? cfg.out_dir : out_dir;
  ensure_dir(out);
  if (seed) cfg.train.seed = *seed;
  VariantSpec variant = VariantSpec::parse(variant_name);

  Dataset train = load_split(train_path, "train");
  Dataset valid = load_split(valid_path, "valid");

  std::ofstream log(out + "/metrics.jsonl");
  auto on_epoch = [&](const EpochLog& e) {
    json j = {{"epoch", e.epoch},       {"train_loss", e.train_loss}, {"loss_cl", e.loss_cl},
              {"loss_con", e.loss_con}, {"loss_sim", e.loss_sim},     {"loss_emo", e.loss_emo},
              {"valid", e.valid.to_json()}};
    log << j.dump() << "\n";
    std::ostringstream os;
    os << "epoch " << e.epoch << ": loss=" << std::fixed << std::setprecision(4) << e.train_loss
       << " valid " << metrics_brief(e.valid);
    info(os.str());
  };

  TrainResult r = train_model(cfg.model, cfg.train, variant, train, valid, on_epoch);
  save_checkpoint(r.best, out + "/checkpoint.json");

  json summary = {{"variant", variant.name()},
                  {"seed", cfg.train.seed},
                  {"best_epoch", r.best_epoch},
                  {"best_valid", r.best_valid.to_json()}};
  if (!test_path.empty()) {
    DfErcModel best = r.best.restore_model();
    Dataset test = load_split(test_path, "test");
    Metrics test_metrics = evaluate(best, test);
    summary["test"] = test_metrics.to_json();
    info("test " + metrics_brief(test_metrics));
  }
  std::ofstream(out + "/summary.json") << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  DfErcModel model = ckpt.restore_model();
  Dataset ds = load_split(data_path, "eval");
  Metrics m = evaluate(model, ds);
  if (!out_path.empty()) write_metrics_file(m, out_path);
  std::cout << m.to_json().dump(2) << std::endl;
  return 0;
}

int cmd_ablate(const std::string& config_path, std::string train_path, std::string valid_path,
               std::string test_path, const std::string& out_dir,
               std::vector<std::string> variants, std::vector<std::uint64_t> seeds) {
  RunConfig cfg = load_config(config_path);
  if (train_path.empty()) train_path = cfg.train_path;
  if (valid_path.empty()) valid_path = cfg.valid_path;
  if (test_path.empty()) test_path = cfg.test_path;
  std::string out = out_dir.empty() ? cfg.out_dir : out_dir;
  ensure_dir(out);
  if (variants.empty()) variants = VariantSpec::mechanism_names();
  if (seeds.empty()) seeds = cfg.seeds;
  for (const auto& v : variants) VariantSpec::parse(v);  // validate up front

  Dataset train = load_split(train_path, "train");
  Dataset valid = load_split(valid_path, "valid");
  Dataset test = load_split(test_path, "test");

  std::ofstream csv(out + "/ablation.csv");
  csv << "variant,seed,valid_acc,valid_w_f1,test_acc,test_w_f1\n";
  csv << std::setprecision(12);
  auto on_row = [&](const AblationRow& row) {
    csv << row.variant << "," << row.seed << "," << row.valid.accuracy << ","
        << row.valid.weighted_f1 << "," << row.test.accuracy << "," << row.test.weighted_f1
        << "\n";
    csv.flush();
    info("ablate " + row.variant + " seed " + std::to_string(row.seed) + ": test " +
         metrics_brief(row.test));
  };
  auto rows = run_ablation(cfg.model, cfg.train, variants, seeds, train, valid, test, on_row);

  // Per-variant mean rows, and a readable table on stdout.
  std::cout << "variant,seeds,test_acc_mean,test_acc_std,test_w_f1_mean,test_w_f1_std\n";
  for (const auto& vname : variants) {
    std::vector<double> acc, f1;
    for (const auto& row : rows) {
      if (row.variant == vname) {
        acc.push_back(row.test.accuracy);
        f1.push_back(row.test.weighted_f1);
      }
    }
    MeanStd am = mean_std(acc), fm = mean_std(f1);
    csv << vname << ",mean," << am.mean << "," << fm.mean << "," << am.mean << "," << fm.mean
        << "\n";
    std::cout << vname << "," << acc.size() << "," << std::fixed << std::setprecision(4)
              << am.mean << "," << am.stddev << "," << fm.mean << "," << fm.stddev << "\n";
  }
  return 0;
}

int cmd_analyze(const std::string& checkpoint_path, const std::string& data_path,
                const std::string& which, const std::string& out_dir) {
  ensure_dir(out_dir);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  DfErcModel model = ckpt.restore_model();
  Dataset ds = load_split(data_path, "analyze");

  if (which == "similarity_quintiles") {
    EvalDetails details = evaluate_detailed(model, ds);
    std::ofstream out(out_dir + "/similarity_quintiles.csv");
    write_similarity_quintiles_csv(details, ds.manifest.label_space, out);
  } else if (which == "weight_by_ce") {
    EvalDetails details = evaluate_detailed(model, ds);
    std::ofstream out(out_dir + "/weight_by_ce.csv");
    write_weight_by_ce_csv(details, out);
  } else if (which == "tcp_mse") {
    EvalDetails details = evaluate_detailed(model, ds);
    std::ofstream out(out_dir + "/tcp_mse.csv");
    write_tcp_mse_csv(details, out);
  } else if (which == "projections") {
    EvalDetails details = evaluate_detailed(model, ds, true);
    std::ofstream mod_out(out_dir + "/projections_modality.csv");
    write_projection_csv(details.mod_proj, mod_out);
    std::ofstream utt_out(out_dir + "/projections_utterance.csv");
    write_projection_csv(details.utt_proj, utt_out);
  } else {
    throw ValidationError("analyze: --which must be one of similarity_quintiles, weight_by_ce, "
                          "tcp_mse, projections");
  }
  info("analysis '" + which + "' written under " + out_dir);
  return 0;
}

int cmd_sweep(const std::string& config_path, std::string train_path, std::string valid_path,
              std::string test_path, const std::string& out_dir, const std::string& param,
              const std::vector<double>& values, std::vector<std::uint64_t> seeds) {
  RunConfig cfg = load_config(config_path);
  if (train_path.empty()) train_path = cfg.train_path;
  if (valid_path.empty()) valid_path = cfg.valid_path;
  if (test_path.empty()) test_path = cfg.test_path;
  std::string out = out_dir.empty() ? cfg.out_dir : out_dir;
  ensure_dir(out);
  if (values.empty()) throw ValidationError("sweep: --values is required");
  if (seeds.empty()) seeds = cfg.seeds;

  Dataset train = load_split(train_path, "train");
  Dataset valid = load_split(valid_path, "valid");
  Dataset test = load_split(test_path, "test");

  std::ofstream csv(out + "/sweep.csv");
  csv << param << ",test_w_f1_mean,test_w_f1_std\n";
  csv << std::setprecision(12);
  std::cout << param << ",test_w_f1_mean,test_w_f1_std\n";
  for (double v : values) {
    TrainConfig tc = cfg.train;
    apply_train_param(tc, param, v);
    std::vector<double> f1;
    for (std::uint64_t seed : seeds) {
      tc.seed = seed;
      TrainResult r = train_model(cfg.model, tc, VariantSpec{}, train, valid);
      DfErcModel best = r.best.restore_model();
      f1.push_back(evaluate(best, test).weighted_f1);
    }
    MeanStd ms = mean_std(f1);
    csv << v << "," << ms.mean << "," << ms.stddev << "\n";
    csv.flush();
    std::cout << v << "," << std::fixed << std::setprecision(4) << ms.mean << "," << ms.stddev
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DF-ERC: disentanglement and fusion for conversational emotion recognition"};
  app.require_subcommand(1);

  std::string config_path, out_dir, train_path, valid_path, test_path;
  std::string checkpoint_path, data_path, which, variant_name = "full", param;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "generate synthetic dataset splits");
  gen->add_option("--config", config_path, "JSON config file");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "override data seed");

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--train-data", train_path, "train split (JSONL)");
  train->add_option("--valid-data", valid_path, "validation split (JSONL)");
  train->add_option("--test-data", test_path, "optional test split (JSONL)");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--seed", seed, "override train seed");
  train->add_option("--variant", variant_name, "model variant (default: full)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset split (JSONL)")->required();
  eval->add_option("--out", out_dir, "optional metrics output file");

  auto* ablate = app.add_subcommand("ablate", "train and score model variants");
  ablate->add_option("--config", config_path, "JSON config file");
  ablate->add_option("--train-data", train_path, "train split (JSONL)");
  ablate->add_option("--valid-data", valid_path, "validation split (JSONL)");
  ablate->add_option("--test-data", test_path, "test split (JSONL)");
  ablate->add_option("--out", out_dir, "output directory");
  ablate->add_option("--variants", variants, "variant names")->delimiter(',');
  ablate->add_option("--seeds", seeds, "seed list")->delimiter(',');

  auto* analyze = app.add_subcommand("analyze", "emit analysis CSVs for a checkpoint");
  analyze->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  analyze->add_option("--data", data_path, "dataset split (JSONL)")->required();
  analyze->add_option("--which", which, "similarity_quintiles|weight_by_ce|tcp_mse|projections")
      ->required();
  analyze->add_option("--out", out_dir, "output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "sweep one training hyperparameter");
  sweep->add_option("--config", config_path, "JSON config file");
  sweep->add_option("--train-data", train_path, "train split (JSONL)");
  sweep->add_option("--valid-data", valid_path, "validation split (JSONL)");
  sweep->add_option("--test-data", test_path, "test split (JSONL)");
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--param", param, "parameter name, e.g. alpha3")->required();
  sweep->add_option("--values", values, "parameter values")->delimiter(',');
  sweep->add_option("--seeds", seeds, "seed list")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, seed);
    if (train->parsed()) {
      return cmd_train(config_path, train_path, valid_path, test_path, out_dir, seed,
                       variant_name);
    }
    if (eval->parsed()) return cmd_eval(checkpoint_path, data_path, out_dir);
    if (ablate->parsed()) {
      return cmd_ablate(config_path, train_path, valid_path, test_path, out_dir, variants, seeds);
    }
    if (analyze->parsed()) return cmd_analyze(checkpoint_path, data_path, which, out_dir);
    if (sweep->parsed()) {
      return cmd_sweep(config_path, train_path, valid_path, test_path, out_dir, param, values,
                       seeds);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
