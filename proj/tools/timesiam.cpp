// Command-line front end: pre-train, fine-tune, evaluate, mask inspection,
// reconstruction dumps, and the end-to-end gradient check.
//
// Exit codes: 0 success, 1 configuration error, 2 data/IO error, 3 numeric
// failure (divergence or a failed gradient check).

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "timesiam/timesiam.hpp"

namespace ts = timesiam;

namespace {

struct DataFlags {
  std::string data_path;
  std::string synthetic_kind;  // sine | seasonal-ar; empty = use --data
  int synthetic_length = 2000;
  int synthetic_channels = 3;
};

void add_data_flags(CLI::App* cmd, DataFlags& df) {
  cmd->add_option("--data", df.data_path, "input CSV (header row, optional timestamp column)");
  cmd->add_option("--synthetic", df.synthetic_kind,
                  "generate seeded synthetic data instead of reading --data (sine|seasonal-ar)");
  cmd->add_option("--synthetic-length", df.synthetic_length, "synthetic series length");
  cmd->add_option("--synthetic-channels", df.synthetic_channels, "synthetic channel count");
}

ts::TimeSeriesFrame load_frame(const DataFlags& df, const ts::RunConfig& rc) {
  if (!df.synthetic_kind.empty())
    return ts::make_synthetic(df.synthetic_kind, df.synthetic_length,
                              df.synthetic_channels, rc.seed);
  if (df.data_path.empty())
    throw ts::DataError("missing --data (no input data file; or use --synthetic)");
  return ts::load_csv(df.data_path, rc.timestamp_column);
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;  // --set key=value
  long long seed_flag = -1;
  bool dump = false;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& cf) {
  cmd->add_option("--config", cf.config_path, "config file of key=value lines");
  cmd->add_option("--set", cf.overrides, "override one config key, e.g. --set model.window=48");
  cmd->add_option("--seed", cf.seed_flag, "random seed (overrides the config file)");
  cmd->add_flag("--dump-config", cf.dump, "print the effective config and exit");
}

// Precedence: defaults < config file < --set < --seed < TIMESIAM_SEED.
ts::RunConfig build_config(const ConfigFlags& cf) {
  ts::RunConfig rc;
  if (!cf.config_path.empty()) rc = ts::load_run_config(cf.config_path);
  for (const auto& line : cf.overrides) rc.apply_line(line);
  if (cf.seed_flag >= 0) rc.seed = static_cast<uint64_t>(cf.seed_flag);
  ts::apply_seed_env(rc);
  return rc;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ts::DataError("cannot write file: " + path);
  out << text;
}

// ---------------------------------------------------------------------------
// pretrain

int cmd_pretrain(const ConfigFlags& cf, const DataFlags& df, const std::string& out_path) {
  ts::RunConfig rc = build_config(cf);
  rc.finalize();
  if (cf.dump) {
    std::cout << rc.dump();
    return 0;
  }
  if (out_path.empty()) throw ts::ConfigError("missing --out (checkpoint path)");

  ts::TimeSeriesFrame frame = load_frame(df, rc);
  rc.model.channels = frame.channels();
  // Pre-train on the chronological training slice only.
  ts::TimeSeriesFrame train = frame;
  if (rc.val_ratio > 0 || rc.test_ratio > 0)
    train = ts::chronological_split(frame, rc.train_ratio, rc.val_ratio, rc.test_ratio).train;

  ts::PretrainResult res = ts::pretrain(train, rc.model, rc.pretrain, &std::cout);
  ts::save_checkpoint(out_path, res.model, res.meta);
  std::cout << "checkpoint=" << out_path << " parameters=" << res.model.count_parameters()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneFlags {
  std::string checkpoint;
  std::string test_data;
  std::string out_path;
  std::string report_path;
  std::string csv_path;
  std::string task, mode, fusion, horizons;
};

int cmd_finetune(const ConfigFlags& cf, const DataFlags& df, const FinetuneFlags& ff) {
  ts::RunConfig rc = build_config(cf);
  if (!ff.task.empty()) rc.finetune.task = ts::parse_task(ff.task);
  if (!ff.mode.empty()) rc.finetune.mode = ts::parse_tune_mode(ff.mode);
  if (!ff.fusion.empty()) rc.finetune.fusion = ts::parse_fusion(ff.fusion);
  if (!ff.horizons.empty()) rc.apply("finetune.horizons", ff.horizons);
  rc.finalize();
  if (cf.dump) {
    std::cout << rc.dump();
    return 0;
  }
  if (ff.checkpoint.empty()) throw ts::DataError("missing --checkpoint (pretrained model)");

  ts::LoadedCheckpoint ck = ts::load_checkpoint(ff.checkpoint);
  const ts::ModelConfig& mcfg = ck.model.cfg;
  rc.finetune.validate(mcfg);
  ts::CheckpointMeta meta;
  meta.seed = rc.seed;
  meta.epoch = rc.finetune.epochs;

  std::string report_text, csv_text;
  if (rc.finetune.task == ts::TaskKind::forecast) {
    if (df.data_path.empty() && df.synthetic_kind.empty())
      throw ts::DataError("missing --data (fine-tuning series)");
    ts::TimeSeriesFrame frame = load_frame(df, rc);
    ts::TimeSeriesFrame train, test;
    if (!ff.test_data.empty()) {
      train = frame;
      test = ts::load_csv(ff.test_data, rc.timestamp_column);
    } else {
      auto split = ts::chronological_split(frame, rc.train_ratio, rc.val_ratio,
                                           rc.test_ratio);
      train = std::move(split.train);
      test = std::move(split.test);
    }
    ts::ForecastModel<float> fm;
    fm.model = ck.model;
    ts::ForecastReport rep = ts::finetune_forecast(fm, train, test, rc.finetune, &std::cout);
    if (!ff.out_path.empty()) ts::save_forecast_checkpoint(ff.out_path, fm, rc.finetune, meta);
    report_text = rep.to_text();
    csv_text = rep.csv_header() + "\n" + rep.csv_row() + "\n";
  } else {
    if (df.data_path.empty()) throw ts::DataError("missing --data (labeled windows file)");
    ts::LabeledWindows all = ts::load_labeled_windows(df.data_path);
    ts::LabeledWindows train, test;
    if (!ff.test_data.empty()) {
      train = std::move(all);
      test = ts::load_labeled_windows(ff.test_data);
    } else {
      auto split = ts::split_labeled(all, rc.finetune.test_fraction, rc.seed);
      train = std::move(split.first);
      test = std::move(split.second);
    }
    ts::ClassifyModel<float> cm;
    cm.model = ck.model;
    ts::ClassifyReport rep = ts::finetune_classify(cm, train, test, rc.finetune, &std::cout);
    if (!ff.out_path.empty()) ts::save_classify_checkpoint(ff.out_path, cm, rc.finetune, meta);
    report_text = rep.to_text();
    csv_text = rep.csv_header() + "\n" + rep.csv_row() + "\n";
  }
  std::cout << report_text;
  if (!ff.report_path.empty()) write_text_file(ff.report_path, report_text);
  if (!ff.csv_path.empty()) write_text_file(ff.csv_path, csv_text);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateFlags {
  std::string checkpoint;
  std::string task;
  std::string report_path;
  std::string csv_path;
  std::string pca_path;
  int pca_windows = 8;
};

int cmd_evaluate(const ConfigFlags& cf, const DataFlags& df, const EvaluateFlags& ef) {
  ts::RunConfig rc = build_config(cf);
  rc.finalize();
  if (ef.checkpoint.empty()) throw ts::DataError("missing --checkpoint");

  ts::LoadedCheckpoint ck = ts::load_checkpoint(ef.checkpoint);
  ts::FinetuneConfig fcfg = ts::finetune_config_from_raw(ck.raw);
  if (!ef.task.empty()) fcfg.task = ts::parse_task(ef.task);
  fcfg.seed = rc.seed;

  std::string report_text, csv_text;
  std::vector<ts::Mat> pca_windows;
  ts::SiameseModel<float>* pca_model = nullptr;

  static ts::ForecastModel<float> fm;  // outlive the pca_model pointer
  static ts::ClassifyModel<float> cm;
  if (fcfg.task == ts::TaskKind::forecast) {
    ts::TimeSeriesFrame test = load_frame(df, rc);
    fm = ts::load_forecast_checkpoint(ck, fcfg);
    ts::ForecastReport rep = ts::evaluate_forecast(fm, fcfg, test, &std::cerr);
    report_text = rep.to_text();
    csv_text = rep.csv_header() + "\n" + rep.csv_row() + "\n";
    if (!ef.pca_path.empty()) {
      const int T = fm.model.cfg.window;
      const int n = std::min(ef.pca_windows, std::max(1, test.length() - T + 1));
      const int stride = n > 1 ? (test.length() - T) / (n - 1) : 1;
      for (int i = 0; i < n; ++i) {
        ts::Mat w(T, test.channels());
        for (int t = 0; t < T; ++t)
          for (int c = 0; c < test.channels(); ++c)
            w.at(t, c) = test.values.at(i * stride + t, c);
        pca_windows.push_back(std::move(w));
      }
      pca_model = &fm.model;
    }
  } else {
    if (df.data_path.empty()) throw ts::DataError("missing --data (labeled windows file)");
    ts::LabeledWindows test = ts::load_labeled_windows(df.data_path);
    cm = ts::load_classify_checkpoint(ck);
    ts::ClassifyReport rep = ts::evaluate_classify(cm, fcfg, test);
    report_text = rep.to_text();
    csv_text = rep.csv_header() + "\n" + rep.csv_row() + "\n";
    if (!ef.pca_path.empty()) {
      const int n = std::min<int>(ef.pca_windows, static_cast<int>(test.size()));
      for (int i = 0; i < n; ++i) pca_windows.push_back(test.windows[static_cast<size_t>(i)]);
      pca_model = &cm.model;
    }
  }

  std::cout << report_text;
  if (!ef.report_path.empty()) write_text_file(ef.report_path, report_text);
  if (!ef.csv_path.empty()) write_text_file(ef.csv_path, csv_text);
  if (!ef.pca_path.empty()) {
    ts::PcaResult pca = ts::lineage_diversity_pca(
        *pca_model, pca_windows, pca_model->lineages.count(), rc.seed);
    if (pca.degenerate_second)
      std::cerr << "warning: representation covariance has rank < 2; pc2 set to zero\n";
    write_text_file(ef.pca_path, ts::pca_to_csv(pca));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// mask-demo

int cmd_mask_demo(const ConfigFlags& cf, const std::string& rule, double ratio, int T,
                  int C, double mean_segment) {
  ts::RunConfig rc = build_config(cf);
  rc.finalize();
  ts::MaskSpec spec;
  spec.rule = ts::parse_mask_rule(rule);
  spec.ratio = ratio;
  spec.mean_segment_length = mean_segment;
  spec.validate();
  if (T <= 0 || C <= 0) throw ts::ConfigError("--T and --C must be positive");

  ts::Rng rng = ts::Rng::derive(rc.seed, 7);
  ts::BoolMat mask = ts::make_mask(T, C, spec, rng);
  const int per_unit = static_cast<int>(std::lround(ratio * T));
  std::cout << "rule=" << rule << " ratio=" << ratio << " T=" << T << " C=" << C
            << " masked_per_unit=" << per_unit << "\n";
  for (int t = 0; t < T; ++t) {
    std::cout << "t" << t << " ";
    for (int c = 0; c < C; ++c) std::cout << (mask.at(t, c) ? '#' : '.');
    std::cout << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// reconstruct

int cmd_reconstruct(const ConfigFlags& cf, const DataFlags& df,
                    const std::string& checkpoint, const std::string& out_path,
                    int start) {
  ts::RunConfig rc = build_config(cf);
  rc.finalize();
  if (checkpoint.empty()) throw ts::DataError("missing --checkpoint");
  if (out_path.empty()) throw ts::ConfigError("missing --out (CSV path)");

  ts::LoadedCheckpoint ck = ts::load_checkpoint(checkpoint);
  ts::SiameseModel<float>& model = ck.model;
  ts::TimeSeriesFrame frame = load_frame(df, rc);
  if (frame.channels() != model.cfg.channels)
    throw ts::DataError("data has " + std::to_string(frame.channels()) +
                        " channels, checkpoint expects " +
                        std::to_string(model.cfg.channels));

  ts::Rng rng = ts::Rng::derive(rc.seed, 8);
  ts::SiamesePair pair;
  if (start >= 0)
    pair = ts::make_pair_at(frame, start, model.cfg.window, model.cfg.sampling_range,
                            model.cfg.mask, rng);
  else
    pair = ts::sample_siamese_pair(frame, model.cfg.window, model.cfg.sampling_range,
                                   model.cfg.mask, rng);

  ts::Graph<float> g(false);
  ts::PretrainOutput<float> out = ts::pretrain_forward(g, model, pair, ts::LossMode::all);

  std::ostringstream csv;
  csv.precision(10);
  csv << "section,channel,t,value\n";
  const int T = model.cfg.window;
  for (int c = 0; c < frame.channels(); ++c) {
    for (int t = 0; t < T; ++t)
      csv << "past," << c << "," << t << "," << pair.past.at(t, c) << "\n";
    for (int t = 0; t < T; ++t)
      csv << "masked," << c << "," << t << "," << pair.current_masked.at(t, c) << "\n";
    for (int t = 0; t < T; ++t)
      csv << "reconstruction," << c << "," << t << ","
          << static_cast<double>(out.reconstruction.at(t, c)) << "\n";
    for (int t = 0; t < T; ++t)
      csv << "truth," << c << "," << t << "," << pair.current.at(t, c) << "\n";
  }
  write_text_file(out_path, csv.str());
  std::cout << "distance=" << pair.distance << " current_start=" << pair.current_start
            << " loss=" << static_cast<double>(out.loss.values()[0]) << " out=" << out_path
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& size) {
  if (size != "tiny")
    throw ts::ConfigError("unknown gradcheck size '" + size + "' (only tiny is available)");

  ts::ModelConfig cfg;
  cfg.window = 8;
  cfg.channels = 2;
  cfg.patch_len = 4;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.n_heads = 2;
  cfg.e_layers = 1;
  cfg.d_layers = 1;
  cfg.lineages = 2;
  cfg.sampling_range = 2;
  cfg.dropout = 0.0;  // closures must be deterministic
  cfg.mask.rule = ts::MaskRule::channel_continuous;
  cfg.mask.ratio = 0.25;
  cfg.mask.mean_segment_length = 3;

  ts::SiameseModel<double> model = ts::build_model<double>(cfg, 11);
  ts::TimeSeriesFrame frame = ts::synth_sine(40, cfg.channels, 7);
  ts::Rng rng = ts::Rng::derive(7, 9);
  ts::SiamesePair pair = ts::make_pair_at(frame, 20, cfg.window, cfg.sampling_range,
                                          cfg.mask, rng);

  auto loss_fn = [&]() {
    ts::Graph<double> g(false);
    return ts::pretrain_forward(g, model, pair, ts::LossMode::all).loss.values()[0];
  };
  auto loss_and_backward = [&]() {
    ts::Graph<double> g(false);
    auto out = ts::pretrain_forward(g, model, pair, ts::LossMode::all);
    g.backward(out.loss);
    return out.loss.values()[0];
  };
  auto params = model.named_parameters();

  ts::GradCheckOptions opts;
  opts.step_scale = 1e-5;
  opts.tolerance = 1e-3;
  ts::GradCheckResult res = ts::grad_check<double>(loss_fn, loss_and_backward, params, opts);
  std::cout << "max_rel_err=" << res.max_rel_err << " coords_checked=" << res.coords_checked
            << (res.worst_param.empty() ? "" : " worst=" + res.worst_param) << "\n";
  if (!res.deterministic)
    throw ts::NumericError("gradient check closure is not deterministic");
  if (!res.passed(opts.tolerance))
    throw ts::NumericError("gradient check failed: max relative error " +
                           std::to_string(res.max_rel_err) + " exceeds 0.001");
  std::cout << "gradient check passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese time-series pre-training: masked past-to-current "
               "reconstruction with lineage embeddings"};
  app.require_subcommand(1);

  ConfigFlags cf_pre, cf_ft, cf_ev, cf_mask, cf_rec;
  DataFlags df_pre, df_ft, df_ev, df_rec;
  std::string pre_out;
  FinetuneFlags ff;
  EvaluateFlags ef;
  std::string mask_rule = "channel_continuous";
  double mask_ratio = 0.25, mask_mean_segment = 12.0;
  int mask_T = 96, mask_C = 1;
  std::string rec_checkpoint, rec_out;
  int rec_start = -1;
  std::string gc_size = "tiny";

  CLI::App* pre = app.add_subcommand("pretrain", "pre-train on a series");
  add_config_flags(pre, cf_pre);
  add_data_flags(pre, df_pre);
  pre->add_option("--out", pre_out, "checkpoint output path");

  CLI::App* ft = app.add_subcommand("finetune", "fine-tune a pre-trained checkpoint");
  add_config_flags(ft, cf_ft);
  add_data_flags(ft, df_ft);
  ft->add_option("--checkpoint", ff.checkpoint, "pre-trained checkpoint");
  ft->add_option("--test-data", ff.test_data, "held-out test data (default: split --data)");
  ft->add_option("--task", ff.task, "forecast|classify");
  ft->add_option("--mode", ff.mode, "full|linear-probe");
  ft->add_option("--fusion", ff.fusion, "fixed|extended|single");
  ft->add_option("--horizons", ff.horizons, "comma-separated forecast horizons");
  ft->add_option("--out", ff.out_path, "fine-tuned checkpoint output path");
  ft->add_option("--report", ff.report_path, "metrics report file (key=value lines)");
  ft->add_option("--csv", ff.csv_path, "metrics CSV file");

  CLI::App* ev = app.add_subcommand("evaluate", "evaluate a fine-tuned checkpoint");
  add_config_flags(ev, cf_ev);
  add_data_flags(ev, df_ev);
  ev->add_option("--checkpoint", ef.checkpoint, "fine-tuned checkpoint");
  ev->add_option("--task", ef.task, "forecast|classify (default: stored in checkpoint)");
  ev->add_option("--report", ef.report_path, "metrics report file");
  ev->add_option("--csv", ef.csv_path, "metrics CSV file");
  ev->add_option("--pca", ef.pca_path, "write lineage-representation PCA CSV here");
  ev->add_option("--pca-windows", ef.pca_windows, "windows to project (default 8)");

  CLI::App* md = app.add_subcommand("mask-demo", "print a mask grid for a rule");
  add_config_flags(md, cf_mask);
  md->add_option("--rule", mask_rule, "binomial|channel_binomial|continuous|channel_continuous|mask_last");
  md->add_option("--ratio", mask_ratio, "mask ratio in [0,1]");
  md->add_option("--T", mask_T, "window length");
  md->add_option("--C", mask_C, "channels");
  md->add_option("--mean-segment-length", mask_mean_segment, "mean segment length (continuous rules)");

  CLI::App* rec = app.add_subcommand("reconstruct", "dump past/masked/reconstruction/truth CSV");
  add_config_flags(rec, cf_rec);
  add_data_flags(rec, df_rec);
  rec->add_option("--checkpoint", rec_checkpoint, "pre-trained checkpoint");
  rec->add_option("--out", rec_out, "output CSV path");
  rec->add_option("--start", rec_start, "current-window start index (default: sampled)");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc->add_option("--size", gc_size, "configuration size (tiny)");

  try {
    app.parse(argc, argv);
    if (pre->parsed()) return cmd_pretrain(cf_pre, df_pre, pre_out);
    if (ft->parsed()) return cmd_finetune(cf_ft, df_ft, ff);
    if (ev->parsed()) return cmd_evaluate(cf_ev, df_ev, ef);
    if (md->parsed())
      return cmd_mask_demo(cf_mask, mask_rule, mask_ratio, mask_T, mask_C, mask_mean_segment);
    if (rec->parsed()) return cmd_reconstruct(cf_rec, df_rec, rec_checkpoint, rec_out, rec_start);
    if (gc->parsed()) return cmd_gradcheck(gc_size);
    std::cerr << "error: no subcommand given\n";
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // bad flags are configuration errors
  } catch (const ts::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ts::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ts::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
