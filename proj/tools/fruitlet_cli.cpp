// Command-line front end: dataset synthesis, pre-training, training,
// inference, evaluation and metric export.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fruitlet/checkpoint.hpp"
#include "fruitlet/config.hpp"
#include "fruitlet/dataset.hpp"
#include "fruitlet/error.hpp"
#include "fruitlet/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fruitlet;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;

  RunConfig resolve() const {
    std::optional<fs::path> file;
    if (!config_path.empty()) file = config_path;
    return resolve_config(file, overrides, std::getenv(kSeedEnvVar));
  }
  void log(const std::string& line) const {
    if (!quiet) std::cerr << line << '\n';
  }
  // Overrides and an explicit file state expectations that a checkpoint must meet.
  bool explicit_model_config() const {
    if (!config_path.empty()) return true;
    for (const auto& o : overrides)
      if (o.rfind("model.", 0) == 0) return true;
    return false;
  }
};

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<LabeledClusterPair> load_preprocessed(const fs::path& path, const RunConfig& config) {
  if (!fs::exists(path)) throw DataError("dataset not found: " + path.string());
  std::vector<LabeledClusterPair> pairs = load_pairs(path);
  for (auto& p : pairs) p = preprocess_pair(p, config.filters);
  return pairs;
}

std::unique_ptr<FruitletModel> load_model(const fs::path& path, const Common& common, const RunConfig& config) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  Checkpoint ckpt = load_checkpoint(path);
  auto model = FruitletModel::from_checkpoint(ckpt.config, ckpt.params);
  if (common.explicit_model_config()) check_compatible(config.model, model->config());
  return model;
}

ParamStore load_encoder(const fs::path& path, const ShapeCodecConfig& expected) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.value("kind", "") != "shape_encoder")
    throw DataError(path.string() + " does not hold a pre-trained shape encoder");
  ModelConfig want, got;
  want.codec = expected;
  got.codec = ModelConfig::from_json(json{{"codec", ckpt.config.at("codec")},
                                          {"matcher", ModelConfig{}.to_json()["matcher"]},
                                          {"positional_mode", "median_z"},
                                          {"positional_input_scale", 100.0},
                                          {"ablation", "none"},
                                          {"init_seed", 0}})
                  .codec;
  check_compatible(want, got);
  return std::move(ckpt.params);
}

json shape_encoder_config(const ShapeCodecConfig& codec) {
  ModelConfig m;
  m.codec = codec;
  return {{"kind", "shape_encoder"}, {"codec", m.to_json()["codec"]}};
}

void save_report(const EvalReport& report, const std::string& csv, const std::string& json_path) {
  if (!csv.empty()) {
    auto out = open_output(csv);
    write_report_csv(out, std::span<const EvalReport>(&report, 1));
  }
  if (!json_path.empty()) write_text(json_path, report_to_json(report).dump(2) + "\n");
}

void print_summary(const EvalReport& report) {
  write_report_csv(std::cout, std::span<const EvalReport>(&report, 1));
  if (report.excluded_without_truth)
    std::cerr << "warning: " << report.excluded_without_truth << " pair(s) without ground truth were excluded\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-day fruitlet association: synthesis, training and evaluation"};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", common.overrides, "Override a config key, e.g. train.epochs=5")->take_all();
  app.add_flag("-q,--quiet", common.quiet, "Suppress progress output");

  // synth-gen
  auto* gen = app.add_subcommand("synth-gen", "Generate train/val/test JSON-lines datasets");
  std::string gen_dir;
  std::optional<std::size_t> gen_pairs;
  gen->add_option("-o,--out-dir", gen_dir, "Output directory")->required();
  gen->add_option("-n,--pairs", gen_pairs, "Total pairs, split 60/20/20 (default: split.* keys)");

  // pretrain-shape
  auto* pre = app.add_subcommand("pretrain-shape", "Pre-train the shape encoder on fruitlet clouds");
  std::string pre_train, pre_val, pre_out, pre_history;
  pre->add_option("--train", pre_train, "Training pairs (.jsonl)")->required();
  pre->add_option("--val", pre_val, "Validation pairs (.jsonl)")->required();
  pre->add_option("-o,--out", pre_out, "Encoder checkpoint to write")->required();
  pre->add_option("--history", pre_history, "Per-epoch loss CSV");

  // train
  auto* tr = app.add_subcommand("train", "Train the matcher");
  std::string tr_train, tr_val, tr_out, tr_pretrained, tr_ablation, tr_history;
  tr->add_option("--train", tr_train, "Training pairs (.jsonl)")->required();
  tr->add_option("--val", tr_val, "Validation pairs (.jsonl)")->required();
  tr->add_option("-o,--out", tr_out, "Model checkpoint to write")->required();
  tr->add_option("--pretrained", tr_pretrained, "Encoder checkpoint from pretrain-shape");
  tr->add_option("--ablation", tr_ablation, "none, no_shape, no_pos or no_pretrain");
  tr->add_option("--history", tr_history, "Per-epoch loss and validation F1 CSV");

  // match
  auto* mt = app.add_subcommand("match", "Predict correspondences for a pair file");
  std::string mt_ckpt, mt_pairs, mt_out;
  std::optional<double> mt_tau;
  mt->add_option("--checkpoint", mt_ckpt, "Model checkpoint")->required();
  mt->add_option("--pairs", mt_pairs, "Pairs (.jsonl); ground truth optional")->required();
  mt->add_option("-o,--out", mt_out, "Predictions (.jsonl)")->required();
  mt->add_option("--threshold", mt_tau, "Override the stored match threshold");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a method on labeled pairs");
  std::string ev_method = "transformer", ev_ckpt, ev_pairs, ev_csv, ev_json, ev_tune, ev_name;
  ev->add_option("-m,--method", ev_method, "transformer, icp_assoc or desc_assoc")
      ->check(CLI::IsMember({"transformer", "icp_assoc", "desc_assoc"}));
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint (transformer)");
  ev->add_option("--pairs", ev_pairs, "Labeled pairs (.jsonl)")->required();
  ev->add_option("--csv", ev_csv, "Metrics CSV");
  ev->add_option("--report", ev_json, "Full JSON report with per-pair matches");
  ev->add_option("--tune-on", ev_tune, "Validation pairs for the desc_assoc weight search");
  ev->add_option("--name", ev_name, "Method label written to the outputs");

  // sweep-threshold
  auto* sw = app.add_subcommand("sweep-threshold", "Pick the match threshold on validation pairs");
  std::string sw_ckpt, sw_val, sw_out, sw_curve;
  double sw_lo = 0.01, sw_hi = 0.5, sw_step = 0.01;
  sw->add_option("--checkpoint", sw_ckpt, "Model checkpoint")->required();
  sw->add_option("--val", sw_val, "Validation pairs (.jsonl)")->required();
  sw->add_option("-o,--out", sw_out, "Checkpoint to write with the chosen threshold");
  sw->add_option("--curve", sw_curve, "CSV of threshold against macro F1");
  sw->add_option("--lo", sw_lo, "Lowest threshold")->capture_default_str();
  sw->add_option("--hi", sw_hi, "Highest threshold")->capture_default_str();
  sw->add_option("--step", sw_step, "Threshold step")->capture_default_str();

  // export-metrics
  auto* ex = app.add_subcommand("export-metrics", "Merge JSON reports into comparison tables");
  std::vector<std::string> ex_reports;
  std::string ex_table, ex_gaps, ex_rows;
  ex->add_option("reports", ex_reports, "Reports written by eval --report")->required()->check(CLI::ExistingFile);
  ex->add_option("--table", ex_table, "Overall comparison CSV (stdout when omitted)");
  ex->add_option("--by-day-gap", ex_gaps, "Wide F1-per-day-gap CSV");
  ex->add_option("--rows", ex_rows, "Long CSV: method, day_gap, precision, recall, f1, n_pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const RunConfig config = common.resolve();
    auto log = [&](const std::string& line) { common.log(line); };

    if (*gen) {
      SplitConfig split = config.split;
      if (gen_pairs) {
        if (*gen_pairs < 3) throw UsageError("--pairs must be at least 3");
        split.val = *gen_pairs / 5;
        split.test = *gen_pairs / 5;
        split.train = *gen_pairs - split.val - split.test;
      }
      const fs::path dir = gen_dir;
      std::size_t first = 0;
      for (const auto& [name, count] : {std::pair{"train", split.train}, {"val", split.val}, {"test", split.test}}) {
        const auto pairs = generate_dataset(config.synth, config.seed, first, count);
        first += count;
        fs::create_directories(dir);
        save_pairs(dir / (std::string(name) + ".jsonl"), pairs);
        log("wrote " + std::to_string(count) + " pairs to " + (dir / (std::string(name) + ".jsonl")).string());
      }
      return 0;
    }

    if (*pre) {
      const auto train = load_preprocessed(pre_train, config);
      const auto val = load_preprocessed(pre_val, config);
      PretrainResult details;
      const ParamStore encoder = pretrain_encoder(train, val, config.model.codec, config.pretrain, &details);
      save_checkpoint(pre_out, encoder, shape_encoder_config(config.model.codec));
      if (!pre_history.empty()) {
        auto out = open_output(pre_history);
        out << "epoch,train_loss,val_loss\n";
        for (std::size_t e = 0; e < details.train_loss.size(); ++e)
          out << e + 1 << ',' << details.train_loss[e] << ','
              << (e < details.val_loss.size() ? std::to_string(details.val_loss[e]) : "") << '\n';
      }
      log("best epoch " + std::to_string(details.best_epoch + 1) + "; encoder written to " + pre_out);
      return 0;
    }

    if (*tr) {
      ModelConfig model_config = config.model;
      if (!tr_ablation.empty()) model_config.ablation = parse_ablation(tr_ablation);
      const auto train = load_preprocessed(tr_train, config);
      const auto val = load_preprocessed(tr_val, config);
      FruitletModel model(model_config);
      if (model.uses_shape() && model_config.ablation != Ablation::NoPretrain) {
        if (!tr_pretrained.empty()) {
          model.load_pretrained_encoder(load_encoder(tr_pretrained, model_config.codec));
        } else {
          log("no --pretrained encoder given; pre-training one now");
          model.load_pretrained_encoder(pretrain_encoder(train, val, model_config.codec, config.pretrain));
        }
      } else if (!tr_pretrained.empty()) {
        log("ablation " + std::string(to_string(model_config.ablation)) + " ignores --pretrained");
      }
      const TrainResult result = train_matcher(model, train, val, config.train, log);
      save_checkpoint(tr_out, model.params(), model.checkpoint_config());
      if (!tr_history.empty()) {
        auto out = open_output(tr_history);
        out << "epoch,train_loss,val_f1\n";
        for (std::size_t e = 0; e < result.train_loss.size(); ++e)
          out << e + 1 << ',' << result.train_loss[e] << ',' << result.val_f1[e] << '\n';
      }
      log("best epoch " + std::to_string(result.best_epoch + 1) + " val F1 " + std::to_string(result.best_f1) +
          " tau " + std::to_string(result.best_tau));
      return 0;
    }

    if (*mt) {
      auto model = load_model(mt_ckpt, common, config);
      if (mt_tau) model->set_match_threshold(*mt_tau);
      const auto pairs = load_preprocessed(mt_pairs, config);
      auto out = open_output(mt_out);
      for (const auto& p : pairs) {
        const CorrespondenceSet c = model->match(prepare_pair(p, model->config()));
        json line = {{"cluster_id", p.cluster_id}, {"day_t", p.day_t.day}, {"day_t1", p.day_t1.day},
                     {"matches", json::array()},   {"unmatched_t", c.unmatched_t}, {"unmatched_t1", c.unmatched_t1}};
        for (const auto& [i, j] : c.matches) line["matches"].push_back({i, j});
        out << line.dump() << '\n';
      }
      log("wrote predictions for " + std::to_string(pairs.size()) + " pairs to " + mt_out);
      return 0;
    }

    if (*ev) {
      const auto pairs = load_preprocessed(ev_pairs, config);
      EvalReport report;
      if (ev_method == "transformer") {
        if (ev_ckpt.empty()) throw UsageError("eval --method transformer requires --checkpoint");
        report = evaluate_model(*load_model(ev_ckpt, common, config), pairs);
      } else if (ev_method == "icp_assoc") {
        report = evaluate_baseline(BaselineMethod::IcpAssoc, pairs, config.baselines);
      } else {
        BaselineConfig baselines = config.baselines;
        if (!ev_tune.empty()) {
          const auto tune = load_preprocessed(ev_tune, config);
          std::vector<std::pair<std::vector<PointCloud>, std::vector<PointCloud>>> clouds;
          std::vector<const CorrespondenceSet*> truths;
          for (const auto& p : tune)
            if (p.has_truth) {
              clouds.emplace_back(p.day_t.clouds(), p.day_t1.clouds());
              truths.push_back(&p.truth);
            }
          std::vector<ClusterPairView> views;
          for (std::size_t k = 0; k < clouds.size(); ++k) views.push_back({clouds[k].first, clouds[k].second, truths[k]});
          const std::vector<double> hist_grid{0.0, 0.25, 0.5, 1.0, 2.0, 4.0}, dist_grid{0.25, 0.5, 1.0, 2.0};
          const DescAssocTuning t = tune_desc_assoc(views, hist_grid, dist_grid, baselines.desc_assoc);
          baselines.desc_assoc.w_hist = t.w_hist;
          baselines.desc_assoc.w_dist = t.w_dist;
          log("desc_assoc weights w_hist " + std::to_string(t.w_hist) + " w_dist " + std::to_string(t.w_dist) +
              " (tuning F1 " + std::to_string(t.f1) + ")");
        }
        report = evaluate_baseline(BaselineMethod::DescAssoc, pairs, baselines);
      }
      if (!ev_name.empty()) report.method = ev_name;
      save_report(report, ev_csv, ev_json);
      print_summary(report);
      return 0;
    }

    if (*sw) {
      auto model = load_model(sw_ckpt, common, config);
      const auto val = load_preprocessed(sw_val, config);
      const ThresholdSweep sweep = sweep_model_threshold(*model, val, sw_lo, sw_hi, sw_step);
      std::cout << "tau," << sweep.tau << "\nf1," << sweep.f1 << '\n';
      if (!sw_curve.empty()) {
        auto out = open_output(sw_curve);
        out << "tau,f1\n";
        for (const auto& [tau, f1] : sweep.curve) out << tau << ',' << f1 << '\n';
      }
      if (!sw_out.empty()) {
        model->set_match_threshold(sweep.tau);
        save_checkpoint(sw_out, model->params(), model->checkpoint_config());
      }
      return 0;
    }

    if (*ex) {
      std::vector<EvalReport> reports;
      for (const auto& path : ex_reports) {
        std::ifstream in(path);
        const json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw DataError(path + ": not valid JSON");
        reports.push_back(report_from_json(j));
      }
      if (ex_table.empty()) {
        write_comparison_table(std::cout, reports);
      } else {
        auto out = open_output(ex_table);
        write_comparison_table(out, reports);
      }
      if (!ex_gaps.empty()) {
        auto out = open_output(ex_gaps);
        write_day_gap_curves(out, reports);
      }
      if (!ex_rows.empty()) {
        auto out = open_output(ex_rows);
        write_report_csv(out, reports);
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
