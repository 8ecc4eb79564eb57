#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "cascadelab/cli.hpp"
#include "cascadelab/content_hash.hpp"
#include "cascadelab/error.hpp"
#include "cascadelab/metrics.hpp"
#include "cascadelab/random.hpp"

namespace cascadelab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  std::string command;
  RunConfig config;
  std::string config_text;
  std::string config_sha256;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  fs::path out_dir;
  std::string format;
};

struct Report {
  json result;
  std::string table;
  std::string csv;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json provenance(const Context& ctx) {
  return {{"tool", "cascadelab"},
          {"version", CASCADELAB_VERSION},
          {"command", ctx.command},
          {"config_sha256", ctx.config_sha256},
          {"seed", ctx.seed}};
}

std::string provenance_line(const Context& ctx) {
  return "# cascadelab " CASCADELAB_VERSION " " + ctx.command + " config_sha256=" + ctx.config_sha256 +
         " seed=" + std::to_string(ctx.seed) + "\n";
}

std::string join(const std::vector<std::size_t>& values, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? sep : "") + std::to_string(values[i]);
  return s;
}

data::Traffic generate(const GenDataConfig& c, std::uint64_t seed, std::size_t threads) {
  c.validate();
  std::vector<data::StageModel> stages;
  for (std::size_t j = 0; j < c.stage_sizes.size(); ++j) {
    stages.push_back(data::noisy_oracle_stage(c.stage_noise[j], derive_seed(seed, "stage" + std::to_string(j + 1))));
  }
  return data::simulate_traffic(c.pool, c.requests, stages, c.stage_sizes, derive_seed(seed, "traffic"), threads);
}

// simulate

json estimate_json(double k1, const sim::CalibrationEstimate& e) {
  return {{"k1", k1},
          {"cal_1_2", e.cal_1_2},
          {"cal_1_0", e.cal_1_0},
          {"cal_2_0", e.cal_2_0},
          {"stderr_1_2", e.stderr_1_2},
          {"stderr_1_0", e.stderr_1_0},
          {"stderr_2_0", e.stderr_2_0},
          {"mean_true_topk", e.mean_true_topk},
          {"mean_pred_stage1", e.mean_pred_stage1},
          {"mean_pred_stage2", e.mean_pred_stage2}};
}

Report cmd_simulate(const Context& ctx) {
  SimulateConfig c = ctx.config.simulate.value_or(SimulateConfig{});
  c.validate();
  c.base.seed = ctx.seed;
  c.base.k1 = static_cast<std::size_t>(c.k1_values.front());

  using sim::format_sig6;
  const char* panels[] = {"cal_1_2", "cal_1_0", "cal_2_0"};
  std::string panel_csv[3];
  for (int p = 0; p < 3; ++p) panel_csv[p] = std::string("sigma1,sigma2,k1,") + panels[p] + ",stderr\n";
  std::string combined = "sigma1,sigma2,k1,cal_1_2,cal_1_0,cal_2_0,stderr_1_2,stderr_1_0,stderr_2_0\n";
  std::string table = "sigma1  sigma2  k1      cal(1,2)            cal(1,0)            cal(2,0)\n";
  json variants = json::array();

  for (const auto& v : c.variants) {
    auto spec = c.base;
    spec.sigma1 = v.sigma1;
    spec.sigma2 = v.sigma2;
    const auto curve = sim::sweep_two_stage(spec, "k1", c.k1_values, ctx.threads);
    json points = json::array();
    for (std::size_t i = 0; i < curve.sweep_values.size(); ++i) {
      const double k1 = curve.sweep_values[i];
      const auto& e = curve.estimates[i];
      const std::string prefix = format_sig6(v.sigma1) + "," + format_sig6(v.sigma2) + "," + format_sig6(k1) + ",";
      const double cal[] = {e.cal_1_2, e.cal_1_0, e.cal_2_0};
      const double se[] = {e.stderr_1_2, e.stderr_1_0, e.stderr_2_0};
      for (int p = 0; p < 3; ++p) panel_csv[p] += prefix + format_sig6(cal[p]) + "," + format_sig6(se[p]) + "\n";
      combined += prefix + format_sig6(e.cal_1_2) + "," + format_sig6(e.cal_1_0) + "," + format_sig6(e.cal_2_0) + "," +
                  format_sig6(e.stderr_1_2) + "," + format_sig6(e.stderr_1_0) + "," + format_sig6(e.stderr_2_0) + "\n";
      char line[160];
      std::snprintf(line, sizeof line, "%-7s %-7s %-7s %.4f +- %.4f   %.4f +- %.4f   %.4f +- %.4f\n",
                    format_sig6(v.sigma1).c_str(), format_sig6(v.sigma2).c_str(), format_sig6(k1).c_str(), e.cal_1_2,
                    e.stderr_1_2, e.cal_1_0, e.stderr_1_0, e.cal_2_0, e.stderr_2_0);
      table += line;
      points.push_back(estimate_json(k1, e));
    }
    variants.push_back({{"sigma1", v.sigma1}, {"sigma2", v.sigma2}, {"points", points}});
  }
  for (int p = 0; p < 3; ++p) write_file(ctx.out_dir / (std::string(panels[p]) + ".csv"), panel_csv[p]);
  write_file(ctx.out_dir / "combined.csv", combined);

  Report r;
  r.result = {{"spec",
               {{"n", c.base.n},
                {"k2", c.base.k2},
                {"mu", c.base.mu},
                {"sigma", c.base.sigma},
                {"trials", c.base.trials}}},
              {"k1_values", c.k1_values},
              {"variants", variants}};
  write_file(ctx.out_dir / "summary.json", json{{"provenance", provenance(ctx)}, {"summary", r.result}}.dump(2) + "\n");
  r.table = std::move(table);
  r.csv = std::move(combined);
  return r;
}

// gen-data

Report cmd_gen_data(const Context& ctx) {
  const GenDataConfig c = ctx.config.gen_data.value_or(GenDataConfig{});
  const auto traffic = generate(c, ctx.seed, ctx.threads);

  std::ostringstream imp, cons;
  data::write_jsonl(imp, traffic.impression);
  data::write_jsonl(cons, traffic.consideration);
  const std::pair<std::string, std::string> files[] = {{"impression.jsonl", imp.str()},
                                                       {"consideration.jsonl", cons.str()}};
  const std::size_t records[] = {traffic.impression.size(), traffic.consideration.size()};

  json file_info = json::object();
  std::string csv = "file,records,sha256\n";
  std::string table = "file                 records   sha256\n";
  for (int i = 0; i < 2; ++i) {
    write_file(ctx.out_dir / files[i].first, files[i].second);
    const std::string hash = sha256_hex(files[i].second);
    file_info[files[i].first] = {{"records", records[i]}, {"sha256", hash}};
    csv += files[i].first + "," + std::to_string(records[i]) + "," + hash + "\n";
    char line[200];
    std::snprintf(line, sizeof line, "%-20s %-9zu %s\n", files[i].first.c_str(), records[i], hash.c_str());
    table += line;
  }

  Report r;
  r.result = {{"pool", pool_to_json(c.pool)},
              {"requests", c.requests},
              {"stage_sizes", c.stage_sizes},
              {"stage_noise", c.stage_noise},
              {"files", file_info}};
  json manifest = r.result;
  manifest["provenance"] = provenance(ctx);
  write_file(ctx.out_dir / "manifest.json", manifest.dump(2) + "\n");
  r.table = std::move(table);
  r.csv = std::move(csv);
  return r;
}

// train

Report cmd_train(const Context& ctx) {
  TrainCommandConfig c = ctx.config.train.value_or(TrainCommandConfig{});
  data::ImpressionSet set;
  if (!c.impressions.empty()) {
    fs::path path(c.impressions);
    if (path.is_relative()) path = ctx.config.base_dir / path;
    std::istringstream in(read_file(path));
    set = data::read_impression_jsonl(in);
  } else {
    set = generate(c.data, derive_seed(ctx.seed, "data"), ctx.threads).impression;
  }
  if (set.size() < 2) throw ConfigError("train: need at least two impressions");
  if (c.features.empty()) {
    c.features.resize(set.features.cols);
    std::iota(c.features.begin(), c.features.end(), std::size_t{0});
  }
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("train: train_fraction must lie in (0, 1)");
  c.arch.input_dim = c.features.size();
  c.arch.validate();

  const auto [train_rows, holdout_rows] = data::split_indices(set.size(), c.train_fraction, derive_seed(ctx.seed, "split"));
  if (train_rows.empty() || holdout_rows.empty()) throw ConfigError("train: the split leaves an empty part");
  auto project = [&](const std::vector<std::size_t>& rows) {
    auto part = data::subset(set, rows);
    part.features = part.features.select_cols(c.features);
    return part;
  };
  const auto train_set = project(train_rows);
  const auto holdout = project(holdout_rows);

  auto model = model::Predictor::initialized(c.arch, derive_seed(ctx.seed, "init"));
  auto tc = c.train;
  tc.seed = derive_seed(ctx.seed, "train");
  const auto tr = model::train(model, model::Dataset::from_impressions(train_set), tc);

  const std::vector<double> labels(holdout.labels.begin(), holdout.labels.end());
  const auto pred = model.predict_batch(holdout.features);
  const auto ne = metrics::normalized_entropy(labels, pred);
  const auto cal = metrics::calibration_ratio(pred, labels, metrics::ReferenceKind::ground_truth);

  std::ostringstream ckpt;
  model::save_checkpoint(ckpt, model);
  write_file(ctx.out_dir / "model.json", ckpt.str());
  std::string loss_csv = "epoch,loss\n";
  for (std::size_t e = 0; e < tr.loss_history.size(); ++e) {
    char line[64];
    std::snprintf(line, sizeof line, "%zu,%.17g\n", e, tr.loss_history[e]);
    loss_csv += line;
  }
  write_file(ctx.out_dir / "loss_history.csv", loss_csv);

  Report r;
  r.result = {{"records", set.size()},
              {"train_records", train_set.size()},
              {"holdout_records", holdout.size()},
              {"features", c.features},
              {"arch", model::arch_to_json(c.arch)},
              {"train", train_config_to_json(c.train)},
              {"steps", tr.steps},
              {"final_train_loss", tr.loss_history.back()},
              {"holdout_ne", metrics::to_json(ne)},
              {"holdout_calibration", metrics::to_json(cal)}};
  r.table = "records  train  holdout  final_loss    holdout_ne  holdout_calibration\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-8zu %-6zu %-8zu %-13.6f %-11.6f %.6f\n", set.size(), train_set.size(),
                holdout.size(), tr.loss_history.back(), ne.ne, cal.ratio);
  r.table += line;
  r.csv = "records,train_records,holdout_records,final_train_loss,holdout_ne,holdout_calibration\n" +
          std::to_string(set.size()) + "," + std::to_string(train_set.size()) + "," + std::to_string(holdout.size()) +
          "," + num(tr.loss_history.back()) + "," + num(ne.ne) + "," + num(cal.ratio) + "\n";
  return r;
}

// distill

Report cmd_distill(const Context& ctx) {
  auto c = ctx.config.distill.value_or(distill::ExperimentConfig{});
  c.seed = ctx.seed;
  c.threads = ctx.threads;
  const auto result = distill::run_experiment(c);
  const auto& ev = result.evaluation;

  Report r;
  r.result = distill::to_json(result);
  r.table = distill::render_table(ev);
  char line[200];
  std::snprintf(line, sizeof line, "consideration calibration vs truth: baseline %.4f, distilled %.4f; teacher NE %.4f\n",
                result.baseline_truth_calibration, result.distilled_truth_calibration, result.teacher_holdout_ne);
  r.table += line;
  r.csv = "model,impression_calibration,consideration_calibration,impression_ne,impression_ne_change_pct,"
          "consideration_ne,consideration_ne_change_pct\n";
  auto row = [&](const std::string& id, const distill::RegimeScores& s, double imp_change, double cons_change) {
    r.csv += id + "," + num(s.impression_calibration.ratio) + "," + num(s.consideration_calibration.ratio) + "," +
             num(s.impression_ne.ne) + "," + num(imp_change) + "," + num(s.consideration_ne.ne) + "," +
             num(cons_change) + "\n";
  };
  row(ev.baseline_id, ev.baseline, 0.0, 0.0);
  row(ev.candidate_id, ev.candidate, ev.impression_ne_change, ev.consideration_ne_change);
  return r;
}

// ssfs

Report cmd_ssfs(const Context& ctx) {
  auto c = ctx.config.ssfs.value_or(SsfsCommandConfig{});
  auto& p = c.pipeline;
  p.seed = ctx.seed;
  p.threads = ctx.threads;
  p.validate();
  const auto pipeline_data = ssfs::prepare_data(p);

  Report r;
  std::string planted_line;
  json planted = nullptr;
  if (c.verify_planted) {
    const auto check = ssfs::verify_planted_rank(p, pipeline_data, c.planted_permutations);
    planted = {{"feature", check.feature},
               {"impression_rank", check.impression_rank},
               {"mixed_rank", check.mixed_rank},
               {"top_n", check.top_n},
               {"recovered_in_mixed", check.recovered_in_mixed()}};
    planted_line = "planted feature " + std::to_string(check.feature) + ": true rank " +
                   std::to_string(check.impression_rank) + " on impressions, " + std::to_string(check.mixed_rank) +
                   " on the mixed set (top_n " + std::to_string(check.top_n) + ")\n";
  }
  const auto result = ssfs::run_pipeline(p, pipeline_data);

  for (const auto* report : {&result.impression_report, &result.consideration_report}) {
    std::ostringstream csv;
    ssfs::write_importance_csv(csv, *report);
    const char* name = report == &result.impression_report ? "importance_impression.csv" : "importance_consideration.csv";
    write_file(ctx.out_dir / name, csv.str());
  }

  r.result = ssfs::to_json(result);
  r.result["planted_check"] = planted;
  r.table = ssfs::render_table(result) + planted_line;
  r.csv = "strategy,selected,impression_ne,impression_ne_change_pct,consideration_ne,consideration_ne_change_pct\n";
  for (const auto& o : result.outcomes) {
    r.csv += ssfs::to_string(o.strategy) + "," + join(o.selected, " ") + "," + num(o.impression_ne.ne) + "," +
             num(o.impression_ne_change) + "," + num(o.consideration_ne.ne) + "," + num(o.consideration_ne_change) +
             "\n";
  }
  return r;
}

// sslfm

Report cmd_sslfm(const Context& ctx) {
  auto c = ctx.config.sslfm.value_or(sslfm::ExperimentConfig{});
  c.seed = ctx.seed;
  c.threads = ctx.threads;
  const auto result = sslfm::run_experiment(c);

  Report r;
  r.result = sslfm::to_json(result);
  r.table = sslfm::render_table(result);
  r.csv = "variant,impression_ne,impression_ne_change_pct\n";
  for (const auto& o : result.outcomes) {
    r.csv += sslfm::to_string(o.variant) + "," + num(o.impression_ne.ne) + "," + num(o.impression_ne.ne_relative_change) +
             "\n";
  }
  return r;
}

const std::map<std::string, std::pair<std::string, std::function<Report(const Context&)>>>& commands() {
  static const std::map<std::string, std::pair<std::string, std::function<Report(const Context&)>>> table = {
      {"simulate", {"Two-stage calibration sweeps over k1 and noise levels", cmd_simulate}},
      {"gen-data", {"Synthetic impression and consideration JSONL with a manifest", cmd_gen_data}},
      {"train", {"Train a predictor on impressions and save a checkpoint", cmd_train}},
      {"distill", {"Cross-stage distillation on consideration data", cmd_distill}},
      {"ssfs", {"Semi-supervised feature selection", cmd_ssfs}},
      {"sslfm", {"Students with dependent and auxiliary heads on a foundation teacher", cmd_sslfm}},
  };
  return table;
}

int execute(Context& ctx, std::ostream& out) {
  if (ctx.format != "csv" && ctx.format != "json" && ctx.format != "table") {
    throw ConfigError("format must be one of csv, json, table");
  }
  fs::create_directories(ctx.out_dir);
  write_file(ctx.out_dir / "config.json", ctx.config_text);
  const json prov = provenance(ctx);
  write_file(ctx.out_dir / "provenance.json", prov.dump(2) + "\n");

  const Report report = commands().at(ctx.command).second(ctx);
  const std::string report_json = json{{"provenance", prov}, {"result", report.result}}.dump(2) + "\n";
  write_file(ctx.out_dir / "report.json", report_json);
  std::string shown;
  if (ctx.format == "json") {
    shown = report_json;
  } else if (ctx.format == "csv") {
    write_file(ctx.out_dir / "report.csv", report.csv);
    shown = report.csv;
  } else {
    shown = provenance_line(ctx) + report.table;
    write_file(ctx.out_dir / "report.txt", shown);
  }
  out << shown;
  if (!shown.empty() && shown.back() != '\n') out << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-stage ranking experiments: calibration simulation, distillation and semi-supervised learning",
               "cascadelab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CASCADELAB_VERSION);

  std::string config_path, out_dir, format;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::map<std::string, CLI::App*> subs;
  std::map<std::string, CLI::Option*> seed_opts;
  for (const auto& [name, entry] : commands()) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory");
    seed_opts[name] = sub->add_option("--seed", seed, "Root seed; overrides the config");
    sub->add_option("--threads", threads, "Worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber);
    sub->add_option("--format", format, "Report printed and saved besides report.json")
        ->check(CLI::IsMember({"csv", "json", "table"}));
    subs[name] = sub;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  Context ctx;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) ctx.command = name;
  }
  try {
    if (config_path.empty()) {
      ctx.config_text = "{}\n";
    } else {
      ctx.config_text = read_file(config_path);
      ctx.config.base_dir = fs::path(config_path).parent_path();
    }
    const fs::path base = ctx.config.base_dir;
    ctx.config = parse_config(ctx.config_text, base);
    ctx.config_sha256 = sha256_hex(ctx.config_text);
    ctx.seed = seed_opts.at(ctx.command)->count() ? seed : ctx.config.seed;
    ctx.threads = threads;
    ctx.out_dir = !out_dir.empty() ? fs::path(out_dir) : fs::path(ctx.config.out.value_or("cascadelab_out"));
    ctx.format = !format.empty() ? format : ctx.config.format.value_or("table");
    return execute(ctx, out);
  } catch (const std::invalid_argument& e) {
    err << "cascadelab " << ctx.command << ": config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::domain_error& e) {
    err << "cascadelab " << ctx.command << ": config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "cascadelab " << ctx.command << ": error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace cascadelab::cli
