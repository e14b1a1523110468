#include "posfuse/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace posfuse {

namespace fs = std::filesystem;

namespace {
using Json = nlohmann::ordered_json;

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c == ':' || c == ',' || c == '{' || c == '}') c = '-';
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << content;
  if (!out) throw DataError("short write to file: " + path.string());
}

}  // namespace

unsigned thread_budget() {
  const char* env = std::getenv("POSFUSE_THREADS");
  if (!env) return 0;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (end == env || v < 0) return 0;
  return static_cast<unsigned>(v);
}

void ExperimentSpec::validate(const Environment& env) const {
  if (scenarios.empty()) throw ConfigError("experiment needs at least one scenario");
  if (modes.empty() || losses.empty()) throw ConfigError("experiment needs modes and losses");
  if (fusions.empty()) throw ConfigError("experiment needs at least one fusion method");
  if (train_sizes.empty() || seeds.empty()) throw ConfigError("experiment needs sizes and seeds");
  if (out_dir.empty()) throw ConfigError("experiment needs an output directory");
  if (n_test < 10) throw ConfigError("experiment needs at least 10 test samples");
  for (const auto& s : scenarios) ScenarioSpec::parse(s, env);  // throws on unknown anchors
}

std::string ExperimentSpec::to_json() const {
  Json j;
  j["env"] = env_path;
  j["scenarios"] = scenarios;
  j["modes"] = Json::array();
  for (auto m : modes) j["modes"].push_back(train_mode_name(m));
  j["losses"] = Json::array();
  for (auto l : losses) j["losses"].push_back(loss_mode_name(l));
  j["fusions"] = Json::array();
  for (auto f : fusions) j["fusions"].push_back(fusion_method_name(f));
  j["train_sizes"] = train_sizes;
  j["n_test"] = n_test;
  j["seeds"] = seeds;
  j["out_dir"] = out_dir;
  j["train"] = Json::parse(train_template.to_json());
  j["passes"] = passes;
  j["lambda"] = lambda;
  j["alert_limit"] = alert_limit;
  j["atten_db"] = atten_db;
  j["window"] = window;
  return j.dump(2);
}

ExperimentSpec ExperimentSpec::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid experiment spec JSON: ") + e.what());
  }
  ExperimentSpec spec;
  try {
    spec.env_path = j.at("env").get<std::string>();
    if (j.contains("scenarios")) spec.scenarios = j.at("scenarios").get<std::vector<std::string>>();
    if (j.contains("modes")) {
      spec.modes.clear();
      for (const auto& m : j.at("modes")) spec.modes.push_back(train_mode_from_name(m.get<std::string>()));
    }
    if (j.contains("losses")) {
      spec.losses.clear();
      for (const auto& l : j.at("losses")) spec.losses.push_back(loss_mode_from_name(l.get<std::string>()));
    }
    if (j.contains("fusions")) {
      spec.fusions.clear();
      for (const auto& f : j.at("fusions"))
        spec.fusions.push_back(fusion_method_from_name(f.get<std::string>()));
    }
    if (j.contains("train_sizes"))
      spec.train_sizes = j.at("train_sizes").get<std::vector<std::uint32_t>>();
    if (j.contains("n_test")) spec.n_test = j.at("n_test").get<std::uint32_t>();
    if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    spec.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("train")) spec.train_template = TrainConfig::from_json(j.at("train").dump());
    if (j.contains("passes")) spec.passes = j.at("passes").get<std::uint32_t>();
    if (j.contains("lambda")) spec.lambda = j.at("lambda").get<double>();
    if (j.contains("alert_limit")) spec.alert_limit = j.at("alert_limit").get<double>();
    if (j.contains("atten_db")) spec.atten_db = j.at("atten_db").get<double>();
    if (j.contains("window")) spec.window = j.at("window").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid experiment spec JSON: ") + e.what());
  }
  return spec;
}

ExperimentSpec ExperimentSpec::load(const std::string& path) {
  ExperimentSpec spec = from_json(read_file(path));
  // env path resolves relative to the spec file
  fs::path env(spec.env_path);
  if (env.is_relative()) spec.env_path = (fs::path(path).parent_path() / env).string();
  return spec;
}

namespace {

struct Cell {
  TrainMode mode;
  LossMode loss;
  FusionMethod fusion;
  std::string scenario;
  std::uint32_t size;
  std::uint64_t seed;

  std::string stem() const {
    std::ostringstream out;
    out << train_mode_name(mode) << '-' << loss_mode_name(loss) << '-' << sanitize(scenario)
        << '-' << size << "-s" << seed << '-' << fusion_method_name(fusion);
    return out.str();
  }
};

std::string cell_config_hash(const ExperimentSpec& spec, const Environment& env, const Cell& cell,
                             const TrainConfig& cfg) {
  std::ostringstream key;
  key << hex64(env.descriptor_hash()) << '|' << cell.stem() << '|' << cfg.to_json() << '|'
      << spec.passes << '|' << spec.lambda << '|' << spec.alert_limit << '|' << spec.atten_db
      << '|' << spec.window << '|' << spec.n_test << '|' << kVersion;
  return hex64(fnv1a(key.str()));
}

bool cell_complete(const fs::path& cells_dir, const Cell& cell, const std::string& config_hash) {
  fs::path path = cells_dir / (cell.stem() + ".json");
  if (!fs::exists(path)) return false;
  try {
    Json j = Json::parse(read_file(path));
    return j.at("provenance").at("config_hash").get<std::string>() == config_hash;
  } catch (...) {
    return false;
  }
}

struct CellOutcome {
  bool ok = false;
  std::string error;
  double runtime_s = 0.0;
};

std::string format_seconds(double s) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << s;
  return out.str();
}

}  // namespace

MatrixResult run_matrix(const ExperimentSpec& spec, std::ostream& log) {
  Environment env = Environment::load(spec.env_path);
  env.validate();
  spec.validate(env);

  const fs::path out_dir(spec.out_dir);
  const fs::path cells_dir = out_dir / "cells";
  fs::create_directories(cells_dir);

  const unsigned budget = thread_budget();
  const bool sequential = budget < 2;

  MatrixResult result;
  std::mutex mu;  // guards log, outcomes and result counters
  std::map<std::string, CellOutcome> outcomes;

  struct Group {
    TrainMode mode;
    LossMode loss;
    std::uint32_t size;
    std::uint64_t seed;
    std::vector<Cell> cells;  // pending only
  };

  for (std::uint32_t size : spec.train_sizes) {
    for (std::uint64_t seed : spec.seeds) {
      // pending groups for this (size, seed)
      std::vector<Group> groups;
      for (TrainMode mode : spec.modes)
        for (LossMode loss : spec.losses) {
          Group g{mode, loss, size, seed, {}};
          TrainConfig cfg = spec.train_template;
          cfg.mode = mode;
          cfg.loss = loss;
          cfg.seed = seed;
          for (const auto& scenario : spec.scenarios)
            for (FusionMethod fusion : applicable_fusions(mode, spec.fusions)) {
              Cell cell{mode, loss, fusion, scenario, size, seed};
              ++result.cells_total;
              if (cell_complete(cells_dir, cell, cell_config_hash(spec, env, cell, cfg))) {
                ++result.cells_skipped;
                outcomes[cell.stem()] = CellOutcome{true, "", 0.0};
              } else {
                g.cells.push_back(cell);
              }
            }
          if (!g.cells.empty()) groups.push_back(std::move(g));
        }
      if (groups.empty()) {
        log << "[matrix] size " << size << " seed " << seed << ": all cells cached\n";
        continue;
      }

      Environment run_env = env;
      run_env.seed = RngStream::keyed({env.seed, seed}).next_u64();
      const SplitSpec split = SplitSpec::counts(size, std::max<std::uint32_t>(1, size / 10),
                                                spec.n_test);
      log << "[matrix] size " << size << " seed " << seed << ": generating datasets\n";
      Dataset static_ds = gen_dataset(run_env, split, ScenarioSpec::static_scenario());
      std::map<std::string, Dataset> dynamic_ds;
      for (const auto& name : spec.scenarios) {
        ScenarioSpec sc = ScenarioSpec::parse(name, run_env);
        if (!sc.is_static()) {
          sc.atten_db = spec.atten_db;
          sc.window = spec.window;
          dynamic_ds.emplace(name, gen_dataset(run_env, split, sc));
        }
      }

      auto run_group = [&](const Group& group) {
        TrainConfig cfg = spec.train_template;
        cfg.mode = group.mode;
        cfg.loss = group.loss;
        cfg.seed = group.seed;
        EvalOptions opts;
        opts.methods = spec.fusions;
        opts.passes = spec.passes;
        opts.lambda = spec.lambda;
        opts.alert_limit = spec.alert_limit;
        opts.eval_seed = group.seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          ModelBundle bundle = train(static_ds, cfg);
          EvalRecords static_records = collect_records(bundle, static_ds, opts);
          // scenario -> full report covering every requested method
          std::map<std::string, MetricsReport> reports;
          for (const auto& name : spec.scenarios) {
            const bool is_static = ScenarioSpec::parse(name, run_env).is_static();
            const Dataset& target = is_static ? static_ds : dynamic_ds.at(name);
            EvalRecords target_records =
                is_static ? static_records : collect_records(bundle, target, opts);
            reports.emplace(name, build_report(bundle, target, target_records, &static_records,
                                               opts, name));
          }
          const double elapsed =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          const double reported = sequential ? 0.0 : elapsed;

          std::lock_guard<std::mutex> lock(mu);
          for (const Cell& cell : group.cells) {
            const MetricsReport& full = reports.at(cell.scenario);
            MetricsReport slice = full;
            slice.methods.clear();
            const MethodReport* mr = full.find_method(cell.fusion);
            if (!mr) throw ConfigError("fusion method missing from report");
            slice.methods.push_back(*mr);
            slice.provenance.config_hash = cell_config_hash(spec, env, cell, cfg);
            write_file(cells_dir / (cell.stem() + ".json"), slice.to_json());
            write_file(cells_dir / (cell.stem() + ".curves.csv"), curves_to_csv(mr->curves));
            outcomes[cell.stem()] = CellOutcome{true, "", reported};
          }
          log << "[matrix] " << train_mode_name(group.mode) << '/' << loss_mode_name(group.loss)
              << " size " << group.size << " seed " << group.seed << " done in "
              << format_seconds(elapsed) << " s\n";
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(mu);
          for (const Cell& cell : group.cells) {
            outcomes[cell.stem()] = CellOutcome{false, e.what(), 0.0};
            ++result.cells_failed;
          }
          log << "[matrix] " << train_mode_name(group.mode) << '/' << loss_mode_name(group.loss)
              << " size " << group.size << " seed " << group.seed << " FAILED: " << e.what()
              << "\n";
        }
      };

      if (sequential || groups.size() == 1) {
        for (const auto& g : groups) run_group(g);
      } else {
        std::vector<std::future<void>> futures;
        std::size_t next = 0;
        while (next < groups.size() || !futures.empty()) {
          while (next < groups.size() && futures.size() < budget)
            futures.push_back(std::async(std::launch::async, run_group, std::cref(groups[next++])));
          futures.front().get();
          futures.erase(futures.begin());
        }
      }
    }
  }

  // Summary in canonical order; metrics re-read from the cell reports so
  // cached cells contribute identically to fresh ones.
  std::ostringstream csv;
  csv << "mode,loss,fusion,scenario,n_train,seed,mean_error,ause,integrity_risk,runtime_s,status\n";
  for (TrainMode mode : spec.modes)
    for (LossMode loss : spec.losses)
      for (FusionMethod fusion : applicable_fusions(mode, spec.fusions))
        for (const auto& scenario : spec.scenarios)
          for (std::uint32_t size : spec.train_sizes)
            for (std::uint64_t seed : spec.seeds) {
              Cell cell{mode, loss, fusion, scenario, size, seed};
              csv << train_mode_name(mode) << ',' << loss_mode_name(loss) << ','
                  << fusion_method_name(fusion) << ',' << scenario << ',' << size << ',' << seed
                  << ',';
              auto it = outcomes.find(cell.stem());
              const CellOutcome* outcome = it == outcomes.end() ? nullptr : &it->second;
              if (outcome && outcome->ok) {
                try {
                  Json j = Json::parse(read_file(cells_dir / (cell.stem() + ".json")));
                  const Json& m = j.at("methods").at(0);
                  csv << m.at("errors").at("mean_error").dump() << ','
                      << m.at("ause").dump() << ','
                      << (m.at("integrity_risk").is_null() ? "" : m.at("integrity_risk").dump())
                      << ',' << format_seconds(outcome->runtime_s) << ",ok\n";
                } catch (const std::exception&) {
                  csv << ",,," << format_seconds(0.0) << ",error: unreadable report\n";
                }
              } else if (outcome) {
                std::string msg = outcome->error;
                for (char& c : msg)
                  if (c == ',' || c == '\n') c = ' ';
                csv << ",,," << format_seconds(0.0) << ",error: " << msg << "\n";
              } else {
                csv << ",,," << format_seconds(0.0) << ",missing\n";
              }
            }
  write_file(out_dir / "summary.csv", csv.str());
  log << "[matrix] " << result.cells_total << " cells, " << result.cells_skipped << " cached, "
      << result.cells_failed << " failed\n";
  return result;
}

}  // namespace posfuse
