#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "posfuse/experiment.hpp"

namespace fs = std::filesystem;
using namespace posfuse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string scenario_name_of(const Dataset& ds) {
  std::uint8_t mask = 0;
  for (auto i : ds.test_idx) mask |= ds.samples[i].scenario_tag;
  if (mask == 0) return "static";
  std::string name = "dynamic:";
  bool first = true;
  for (std::uint32_t a = 0; a < 8; ++a)
    if (mask & (1u << a)) {
      if (!first) name += ",";
      name += std::to_string(a);
      first = false;
    }
  return name;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << content;
}

int cmd_gen(const std::string& env_path, const std::string& out_path, std::uint32_t n_samples,
            std::uint32_t n_train, std::uint32_t n_val, std::uint32_t n_test, double test_frac,
            const std::string& scenario_text, double atten_db, std::uint32_t window) {
  Environment env = Environment::load(env_path);
  ScenarioSpec scenario = ScenarioSpec::parse(scenario_text, env);
  if (!scenario.is_static()) {
    scenario.atten_db = atten_db;
    scenario.window = window;
  }
  SplitSpec split = n_train > 0 ? SplitSpec::counts(n_train, n_val > 0 ? n_val : n_train / 10, n_test)
                                : SplitSpec::from_total(n_samples, test_frac);
  Dataset ds = gen_dataset(env, split, scenario);
  ds.save(out_path);
  std::cout << "dataset: " << out_path << "\n"
            << "  anchors " << ds.n_anchors << ", antennas " << ds.n_antennas << ", subcarriers "
            << ds.n_subcarriers << "\n"
            << "  samples " << ds.samples.size() << " (train " << ds.train_idx.size() << ", val "
            << ds.val_idx.size() << ", test " << ds.test_idx.size() << ")\n"
            << "  scenario " << scenario.name() << "\n"
            << "  content hash " << hex64(ds.content_hash()) << "\n";
  return kExitOk;
}

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::string& out_path, std::string history_path, bool save_optimizer) {
  Dataset ds = Dataset::load(data_path);
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
  ModelBundle bundle = train(ds, cfg);
  bundle.save(out_path, save_optimizer);
  if (history_path.empty()) history_path = out_path + ".history";
  if (bundle.histories.size() == 1) {
    write_text(history_path + ".csv", history_to_csv(bundle.histories[0]));
  } else {
    for (const auto& h : bundle.histories)
      write_text(history_path + "_a" + std::to_string(h.anchor_id) + ".csv", history_to_csv(h));
  }
  std::cout << "bundle: " << out_path << "\n"
            << "  mode " << train_mode_name(bundle.mode) << ", loss " << loss_mode_name(bundle.loss)
            << ", parameters " << bundle.parameter_count() << "\n"
            << "  best validation loss " << bundle.best_validation_loss() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& static_ref_path, const std::string& out_dir,
             const std::vector<std::string>& fusion_names, std::uint32_t passes, double lambda,
             double alert_limit, std::uint64_t eval_seed, bool skip_ir) {
  ModelBundle bundle = ModelBundle::load(model_path);
  Dataset target = Dataset::load(data_path);
  Dataset static_ref;
  const Dataset* static_ptr = nullptr;
  if (!static_ref_path.empty()) {
    static_ref = Dataset::load(static_ref_path);
    static_ptr = &static_ref;
  }
  EvalOptions opts;
  opts.methods.clear();
  for (const auto& name : fusion_names) opts.methods.push_back(fusion_method_from_name(name));
  opts.passes = passes;
  opts.lambda = lambda;
  opts.alert_limit = alert_limit;
  opts.eval_seed = eval_seed;
  opts.want_integrity_risk = !skip_ir;

  const std::string scenario = scenario_name_of(target);
  MetricsReport report = evaluate_bundle(bundle, target, static_ptr, opts, scenario);

  fs::create_directories(out_dir);
  for (const auto& mr : report.methods) {
    MetricsReport slice = report;
    slice.methods = {mr};
    const std::string stem = fusion_method_name(mr.method);
    write_text(fs::path(out_dir) / ("report_" + stem + ".json"), slice.to_json());
    write_text(fs::path(out_dir) / ("curves_" + stem + ".csv"), curves_to_csv(mr.curves));
    std::cout << stem << ": mean error " << mr.errors.mean_error << " m, AUSE " << mr.curves.ause;
    if (mr.integrity_risk) std::cout << ", IR " << *mr.integrity_risk;
    std::cout << "\n";
  }
  for (const auto& ar : report.per_anchor)
    std::cout << "anchor " << ar.anchor_id << ": mean error " << ar.errors.mean_error << " m\n";
  std::cout << "reports under " << out_dir << " (scenario " << scenario << ")\n";
  return kExitOk;
}

int cmd_matrix(const std::string& spec_path) {
  ExperimentSpec spec = ExperimentSpec::load(spec_path);
  MatrixResult result = run_matrix(spec, std::cout);
  std::cout << "matrix complete: " << result.cells_total << " cells ("
            << result.cells_skipped << " cached, " << result.cells_failed << " failed)\n";
  return result.cells_failed == 0 ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"posfuse: multi-anchor positioning with uncertainty-based fusion"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a synthetic fingerprint dataset");
  std::string gen_env, gen_out, gen_scenario = "static";
  std::uint32_t gen_n = 1000, gen_train = 0, gen_val = 0, gen_test = 0, gen_window = 3;
  double gen_test_frac = 0.0, gen_atten = 20.0;
  gen->add_option("--env", gen_env, "environment JSON file")->required();
  gen->add_option("--out", gen_out, "output dataset file (.pfds)")->required();
  gen->add_option("--n", gen_n, "total sample count (split 90/10 train/val plus --test-frac)");
  gen->add_option("--n-train", gen_train, "explicit train count (with --n-val/--n-test)");
  gen->add_option("--n-val", gen_val, "explicit validation count (default train/10)");
  gen->add_option("--n-test", gen_test, "explicit test count");
  gen->add_option("--test-frac", gen_test_frac, "test fraction of --n");
  gen->add_option("--scenario", gen_scenario, "static | dynamic:<anchor,...>");
  gen->add_option("--atten-db", gen_atten, "dynamic-scenario attenuation (dB)");
  gen->add_option("--window", gen_window, "attenuation window (odd)");

  auto* tr = app.add_subcommand("train", "Train a model bundle on a dataset");
  std::string tr_data, tr_cfg, tr_out, tr_hist;
  bool tr_opt_state = false;
  tr->add_option("--data", tr_data, "dataset file")->required();
  tr->add_option("--config", tr_cfg, "training config JSON");
  tr->add_option("--out", tr_out, "output bundle file (.pfmb)")->required();
  tr->add_option("--history", tr_hist, "history CSV stem");
  tr->add_flag("--save-optimizer", tr_opt_state, "include optimizer state in the bundle");

  auto* ev = app.add_subcommand("eval", "Evaluate a bundle on a dataset");
  std::string ev_model, ev_data, ev_static, ev_out;
  std::vector<std::string> ev_fusions{"avg", "ivw", "sp"};
  std::uint32_t ev_passes = 30;
  std::uint64_t ev_seed = 0;
  double ev_lambda = 0.01, ev_al = 1.0;
  bool ev_skip_ir = false;
  ev->add_option("--model", ev_model, "model bundle file")->required();
  ev->add_option("--data", ev_data, "target dataset file")->required();
  ev->add_option("--static-ref", ev_static, "static dataset for threshold fitting");
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--fusion", ev_fusions, "fusion methods (avg ivw sp)")->delimiter(',');
  ev->add_option("--passes", ev_passes, "MC-dropout forward passes");
  ev->add_option("--lambda", ev_lambda, "spurious-robust lambda");
  ev->add_option("--al", ev_al, "alert limit (m)");
  ev->add_option("--seed", ev_seed, "evaluation RNG seed");
  ev->add_flag("--skip-ir", ev_skip_ir, "skip threshold fitting and integrity risk");

  auto* mx = app.add_subcommand("matrix", "Run a full experiment matrix");
  std::string mx_spec;
  mx->add_option("--spec", mx_spec, "experiment spec JSON")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return cmd_gen(gen_env, gen_out, gen_n, gen_train, gen_val, gen_test, gen_test_frac,
                     gen_scenario, gen_atten, gen_window);
    if (tr->parsed()) return cmd_train(tr_data, tr_cfg, tr_out, tr_hist, tr_opt_state);
    if (ev->parsed())
      return cmd_eval(ev_model, ev_data, ev_static, ev_out, ev_fusions, ev_passes, ev_lambda,
                      ev_al, ev_seed, ev_skip_ir);
    if (mx->parsed()) return cmd_matrix(mx_spec);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
