#include "posfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <sstream>

#include "json.hpp"

namespace posfuse {

namespace {
using Json = nlohmann::ordered_json;
}

std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Early: return "early";
    case TrainMode::Stl: return "stl";
    case TrainMode::Mtl: return "mtl";
  }
  return "unknown";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "early") return TrainMode::Early;
  if (name == "stl") return TrainMode::Stl;
  if (name == "mtl") return TrainMode::Mtl;
  throw ConfigError("unknown training mode '" + name + "'");
}

std::string loss_mode_name(LossMode m) { return m == LossMode::Mse ? "mse" : "nll"; }

LossMode loss_mode_from_name(const std::string& name) {
  if (name == "mse") return LossMode::Mse;
  if (name == "nll") return LossMode::Nll;
  throw ConfigError("unknown loss '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (patience >= epochs) throw ConfigError("patience must be smaller than epochs");
  if (!(lr_initial > 0.0) || !(lr_reduced > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (trunk_layers.empty() || head_layers.empty())
    throw ConfigError("trunk and head need at least one layer");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
}

std::string TrainConfig::to_json() const {
  Json j;
  j["mode"] = train_mode_name(mode);
  j["loss"] = loss_mode_name(loss);
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr_initial"] = lr_initial;
  j["lr_reduced"] = lr_reduced;
  j["patience"] = patience;
  j["seed"] = seed;
  j["trunk_layers"] = trunk_layers;
  j["head_layers"] = head_layers;
  j["dropout"] = dropout;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid training config JSON: ") + e.what());
  }
  TrainConfig cfg;
  try {
    if (j.contains("mode")) cfg.mode = train_mode_from_name(j.at("mode").get<std::string>());
    if (j.contains("loss")) cfg.loss = loss_mode_from_name(j.at("loss").get<std::string>());
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::uint32_t>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::uint32_t>();
    if (j.contains("lr_initial")) cfg.lr_initial = j.at("lr_initial").get<double>();
    if (j.contains("lr_reduced")) cfg.lr_reduced = j.at("lr_reduced").get<double>();
    if (j.contains("patience")) cfg.patience = j.at("patience").get<std::uint32_t>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("trunk_layers"))
      cfg.trunk_layers = j.at("trunk_layers").get<std::vector<std::uint32_t>>();
    if (j.contains("head_layers"))
      cfg.head_layers = j.at("head_layers").get<std::vector<std::uint32_t>>();
    if (j.contains("dropout")) cfg.dropout = j.at("dropout").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid training config JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open training config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string history_to_csv(const ModelHistory& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr\n";
  out.precision(12);
  for (const auto& rec : history.epochs)
    out << rec.epoch << ',' << rec.train_loss << ',' << rec.val_loss << ',' << rec.lr << '\n';
  return out.str();
}

namespace {

void fill_row(Matrix& m, Eigen::Index row, const Fingerprint& fp) {
  for (std::size_t i = 0; i < fp.data.size(); ++i)
    m(row, static_cast<Eigen::Index>(i)) = fp.data[i];
}

void fill_row_concat(Matrix& m, Eigen::Index row, const Sample& sample) {
  Eigen::Index offset = 0;
  for (const auto& fp : sample.fingerprints) {
    for (std::size_t i = 0; i < fp.data.size(); ++i)
      m(row, offset + static_cast<Eigen::Index>(i)) = fp.data[i];
    offset += static_cast<Eigen::Index>(fp.data.size());
  }
}

// One trainable unit: a trunk shared by one or more heads, each head fed
// by its own anchor's fingerprints (or the concatenated fingerprint).
struct TaskInputs {
  std::uint32_t anchor_id = 0;   // stream keying; 0 for the early model
  int fingerprint_index = -1;    // -1: concatenated input
};

Matrix gather_inputs(const Dataset& ds, const std::vector<std::uint32_t>& indices,
                     const TaskInputs& task, std::size_t input_dim) {
  Matrix m(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(input_dim));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Sample& s = ds.samples[indices[r]];
    if (task.fingerprint_index < 0)
      fill_row_concat(m, static_cast<Eigen::Index>(r), s);
    else
      fill_row(m, static_cast<Eigen::Index>(r), s.fingerprints[static_cast<std::size_t>(task.fingerprint_index)]);
  }
  return m;
}

Matrix gather_labels(const Dataset& ds, const std::vector<std::uint32_t>& indices) {
  Matrix m(static_cast<Eigen::Index>(indices.size()), 2);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    m(static_cast<Eigen::Index>(r), 0) = ds.samples[indices[r]].position.x;
    m(static_cast<Eigen::Index>(r), 1) = ds.samples[indices[r]].position.y;
  }
  return m;
}

struct TrainedGroup {
  Trunk trunk;
  std::vector<Head> heads;
  ModelHistory history;
  AdamState optimizer;
};

std::vector<double> group_params(const Trunk& trunk, const std::vector<Head>& heads) {
  std::vector<double> params;
  params.reserve(trunk.mlp.parameter_count());
  append_params(trunk.mlp, params);
  for (const auto& h : heads) append_params(h.mlp, params);
  return params;
}

void set_group_params(Trunk& trunk, std::vector<Head>& heads, std::span<const double> params) {
  std::size_t pos = read_params(trunk.mlp, params);
  for (auto& h : heads) pos += read_params(h.mlp, params.subspan(pos));
}

// Trains one trunk + its heads; tasks[i] feeds heads[i]. Covers all three
// regimes: early and STL have one task, MTL one per anchor.
TrainedGroup train_group(const Dataset& ds, const TrainConfig& cfg,
                         std::uint32_t trunk_slot, const std::vector<TaskInputs>& tasks,
                         std::size_t input_dim) {
  TrainedGroup group;
  {
    auto trunk_rng = RngStream::keyed({cfg.seed, static_cast<std::uint64_t>(StreamKind::WeightInit),
                                       0, trunk_slot});
    group.trunk = make_trunk(static_cast<std::uint32_t>(input_dim), cfg.trunk_layers,
                             cfg.dropout, trunk_rng);
  }
  for (const auto& task : tasks) {
    auto head_rng = RngStream::keyed({cfg.seed, static_cast<std::uint64_t>(StreamKind::WeightInit),
                                      1, task.anchor_id});
    group.heads.push_back(make_head(task.anchor_id, cfg.trunk_layers.back(), cfg.head_layers,
                                    cfg.loss, cfg.dropout, head_rng));
  }
  group.history.anchor_id = tasks.size() == 1 ? tasks[0].anchor_id : 0;

  std::vector<double> params = group_params(group.trunk, group.heads);
  AdamState adam = AdamState::for_size(params.size(), cfg.lr_initial);
  set_group_params(group.trunk, group.heads, params);

  std::vector<Matrix> val_inputs;
  val_inputs.reserve(tasks.size());
  for (const auto& task : tasks) val_inputs.push_back(gather_inputs(ds, ds.val_idx, task, input_dim));
  const Matrix val_labels = gather_labels(ds, ds.val_idx);

  PlateauSchedule schedule(cfg.lr_initial, cfg.lr_reduced, cfg.patience);
  std::vector<double> best_params = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::uint32_t best_epoch = 0;

  const std::size_t n_train = ds.train_idx.size();
  const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::uint32_t> order(ds.train_idx);

  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    adam.lr = schedule.lr();
    auto shuffle_rng = RngStream::keyed({cfg.seed, static_cast<std::uint64_t>(StreamKind::Shuffle),
                                         epoch});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t lo = step * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, n_train);
      std::vector<std::uint32_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                       order.begin() + static_cast<std::ptrdiff_t>(hi));
      const Matrix labels = gather_labels(ds, batch);
      const std::uint64_t global_step =
          static_cast<std::uint64_t>(epoch - 1) * steps_per_epoch + step;

      MlpGrads trunk_grads = MlpGrads::zeros_like(group.trunk.mlp);
      std::vector<MlpGrads> head_grads;
      head_grads.reserve(tasks.size());
      double step_loss = 0.0;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        auto drop_rng = RngStream::keyed({cfg.seed, static_cast<std::uint64_t>(StreamKind::Dropout),
                                          tasks[t].anchor_id, global_step});
        Matrix inputs = gather_inputs(ds, batch, tasks[t], input_dim);
        MlpCache trunk_cache, head_cache;
        Matrix features = mlp_forward(group.trunk.mlp, inputs, true, &drop_rng, &trunk_cache);
        Matrix out = mlp_forward(group.heads[t].mlp, features, true, &drop_rng, &head_cache);
        LossGrad lg = loss_for(cfg.loss, out, labels);
        step_loss += lg.loss;
        MlpGrads hg = MlpGrads::zeros_like(group.heads[t].mlp);
        Matrix d_features = mlp_backward(group.heads[t].mlp, head_cache, lg.d_out, hg);
        head_grads.push_back(std::move(hg));
        mlp_backward(group.trunk.mlp, trunk_cache, d_features, trunk_grads);
      }
      if (!std::isfinite(step_loss))
        throw NumericError("NaN loss at epoch " + std::to_string(epoch) +
                           "; last good epoch " + std::to_string(epoch - 1));
      epoch_loss += step_loss * static_cast<double>(hi - lo);

      std::vector<double> grads;
      grads.reserve(params.size());
      append_grads(trunk_grads, grads);
      for (const auto& hg : head_grads) append_grads(hg, grads);
      try {
        adam_step(params, grads, adam);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                           "; last good epoch " + std::to_string(epoch - 1));
      }
      set_group_params(group.trunk, group.heads, params);
    }
    epoch_loss /= static_cast<double>(n_train);

    double val_loss = 0.0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      Matrix features = mlp_forward(group.trunk.mlp, val_inputs[t], false, nullptr, nullptr);
      Matrix out = mlp_forward(group.heads[t].mlp, features, false, nullptr, nullptr);
      val_loss += loss_for(cfg.loss, out, val_labels).loss;
    }
    if (!std::isfinite(val_loss))
      throw NumericError("NaN validation loss at epoch " + std::to_string(epoch) +
                         "; last good epoch " + std::to_string(epoch - 1));

    group.history.epochs.push_back(EpochRecord{epoch, epoch_loss, val_loss, schedule.lr()});
    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch;
      best_params = params;
    }
    schedule.observe(val_loss);
  }

  group.history.best_val_loss = best_val;
  group.history.best_epoch = best_epoch;
  set_group_params(group.trunk, group.heads, best_params);
  group.optimizer = std::move(adam);
  return group;
}

unsigned env_thread_budget() {
  const char* env = std::getenv("POSFUSE_THREADS");
  if (!env) return 0;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (end == env || v < 0) return 0;
  return static_cast<unsigned>(v);
}

}  // namespace

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : trunks) n += t.mlp.parameter_count();
  for (const auto& h : heads) n += h.mlp.parameter_count();
  return n;
}

double ModelBundle::best_validation_loss() const {
  if (histories.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const auto& h : histories) total += h.best_val_loss;
  return total;
}

ModelBundle train(const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  dataset.validate();
  if (dataset.train_idx.empty() || dataset.val_idx.empty())
    throw DataError("training needs nonempty train and validation splits");
  for (const auto* split : {&dataset.train_idx, &dataset.val_idx})
    for (auto i : *split)
      if (dataset.samples[i].scenario_tag != 0)
        throw DataError("training data must come from the static scenario");

  const std::uint32_t n_anchors = dataset.n_anchors;
  const std::size_t per_anchor_dim = dataset.fingerprint_dim();

  ModelBundle bundle;
  bundle.mode = cfg.mode;
  bundle.loss = cfg.loss;
  bundle.n_anchors = n_anchors;

  if (cfg.mode == TrainMode::Early) {
    bundle.input_dim = static_cast<std::uint32_t>(per_anchor_dim * n_anchors);
    TrainedGroup group = train_group(dataset, cfg, 0, {TaskInputs{0, -1}}, bundle.input_dim);
    bundle.trunks.push_back(std::move(group.trunk));
    bundle.heads.push_back(std::move(group.heads[0]));
    bundle.histories.push_back(std::move(group.history));
    bundle.optimizer_states.push_back(std::move(group.optimizer));
    return bundle;
  }

  bundle.input_dim = static_cast<std::uint32_t>(per_anchor_dim);
  std::vector<std::uint32_t> anchor_ids(n_anchors);
  for (std::uint32_t a = 0; a < n_anchors; ++a)
    anchor_ids[a] = dataset.samples.front().fingerprints[a].anchor_id;

  if (cfg.mode == TrainMode::Mtl) {
    std::vector<TaskInputs> tasks;
    tasks.reserve(n_anchors);
    for (std::uint32_t a = 0; a < n_anchors; ++a)
      tasks.push_back(TaskInputs{anchor_ids[a], static_cast<int>(a)});
    TrainedGroup group = train_group(dataset, cfg, anchor_ids[0], tasks, bundle.input_dim);
    bundle.trunks.push_back(std::move(group.trunk));
    bundle.heads = std::move(group.heads);
    bundle.histories.push_back(std::move(group.history));
    bundle.optimizer_states.push_back(std::move(group.optimizer));
    return bundle;
  }

  // STL: independent per-anchor trainings, parallelizable.
  std::vector<TrainedGroup> groups(n_anchors);
  auto train_anchor = [&](std::uint32_t a) {
    groups[a] = train_group(dataset, cfg, anchor_ids[a],
                            {TaskInputs{anchor_ids[a], static_cast<int>(a)}}, bundle.input_dim);
  };
  unsigned budget = env_thread_budget();
  if (budget >= 2 && n_anchors > 1) {
    std::vector<std::future<void>> futures;
    futures.reserve(n_anchors);
    // bounded fan-out: at most `budget` trainings in flight
    std::uint32_t next = 0;
    while (next < n_anchors || !futures.empty()) {
      while (next < n_anchors && futures.size() < budget)
        futures.push_back(std::async(std::launch::async, train_anchor, next++));
      futures.front().get();
      futures.erase(futures.begin());
    }
  } else {
    for (std::uint32_t a = 0; a < n_anchors; ++a) train_anchor(a);
  }
  for (auto& g : groups) {
    bundle.trunks.push_back(std::move(g.trunk));
    bundle.heads.push_back(std::move(g.heads[0]));
    bundle.histories.push_back(std::move(g.history));
    bundle.optimizer_states.push_back(std::move(g.optimizer));
  }
  return bundle;
}

std::vector<UncertainEstimate> predict_all(const ModelBundle& bundle, const Sample& sample,
                                           std::uint32_t passes, RngStream rng) {
  if (sample.fingerprints.size() != bundle.n_anchors)
    throw DomainError("sample anchor count does not match bundle");
  std::vector<UncertainEstimate> estimates;
  if (bundle.mode == TrainMode::Early) {
    Fingerprint concat;
    concat.anchor_id = 0;
    concat.n_antennas = bundle.n_anchors * sample.fingerprints.front().n_antennas;
    concat.n_subcarriers = sample.fingerprints.front().n_subcarriers;
    concat.data.reserve(bundle.input_dim);
    for (const auto& fp : sample.fingerprints)
      concat.data.insert(concat.data.end(), fp.data.begin(), fp.data.end());
    Prediction p = mcd_predict(bundle.trunks[0], bundle.heads[0], concat, passes, rng.substream(0));
    estimates.push_back(UncertainEstimate{0, p.x, p.y, p.var_x, p.var_y});
    return estimates;
  }
  estimates.reserve(bundle.n_anchors);
  for (std::uint32_t a = 0; a < bundle.n_anchors; ++a) {
    const Trunk& trunk = bundle.mode == TrainMode::Mtl ? bundle.trunks[0] : bundle.trunks[a];
    const Head& head = bundle.heads[a];
    Prediction p = mcd_predict(trunk, head, sample.fingerprints[a], passes, rng.substream(a));
    estimates.push_back(UncertainEstimate{head.anchor_id, p.x, p.y, p.var_x, p.var_y});
  }
  return estimates;
}

namespace {

class Writer {
 public:
  explicit Writer(std::vector<std::byte>& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }

 private:
  std::vector<std::byte>& out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::byte>& in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return read<std::uint16_t>(); }
  std::uint32_t u32() { return read<std::uint32_t>(); }
  std::uint64_t u64() { return read<std::uint64_t>(); }
  float f32() { return read<float>(); }
  double f64() { return read<double>(); }
  bool exhausted() const { return pos_ == in_.size(); }

 private:
  template <typename T>
  T read() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::byte* take(std::size_t n) {
    if (pos_ + n > in_.size()) throw DataError("truncated model bundle");
    const std::byte* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::vector<std::byte>& in_;
  std::size_t pos_ = 0;
};

constexpr char kBundleMagic[4] = {'P', 'F', 'M', 'B'};
constexpr std::uint16_t kBundleVersion = 1;

void write_mlp_arch(Writer& w, const Mlp& mlp) {
  w.u16(static_cast<std::uint16_t>(mlp.layers.size()));
  for (const auto& layer : mlp.layers) {
    w.u32(layer.in_dim());
    w.u32(layer.out_dim());
    w.f32(static_cast<float>(layer.dropout));
  }
}

Mlp read_mlp_arch(Reader& r, bool final_linear) {
  Mlp mlp;
  mlp.final_linear = final_linear;
  std::uint16_t n_layers = r.u16();
  for (std::uint16_t k = 0; k < n_layers; ++k) {
    DenseLayer layer;
    std::uint32_t in = r.u32();
    std::uint32_t out = r.u32();
    layer.dropout = r.f32();
    layer.weights = Matrix::Zero(out, in);
    layer.bias = Vector::Zero(out);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

void write_mlp_params(Writer& w, const Mlp& mlp) {
  for (double v : get_params(mlp)) w.f32(static_cast<float>(v));
}

void read_mlp_params(Reader& r, Mlp& mlp) {
  std::vector<double> params(mlp.parameter_count());
  for (auto& v : params) v = r.f32();
  set_params(mlp, params);
}

}  // namespace

std::vector<std::byte> ModelBundle::serialize(bool include_optimizer_state) const {
  std::vector<std::byte> bytes;
  Writer w(bytes);
  w.raw(kBundleMagic, 4);
  w.u16(kBundleVersion);
  w.u8(static_cast<std::uint8_t>(mode));
  w.u8(static_cast<std::uint8_t>(loss));
  w.u16(static_cast<std::uint16_t>(n_anchors));
  w.u32(input_dim);
  w.u16(static_cast<std::uint16_t>(trunks.size()));
  w.u16(static_cast<std::uint16_t>(heads.size()));
  write_mlp_arch(w, trunks.front().mlp);
  write_mlp_arch(w, heads.front().mlp);
  for (const auto& h : heads) w.u32(h.anchor_id);
  w.u8(include_optimizer_state && !optimizer_states.empty() ? 1 : 0);
  for (const auto& t : trunks) write_mlp_params(w, t.mlp);
  for (const auto& h : heads) write_mlp_params(w, h.mlp);
  if (include_optimizer_state && !optimizer_states.empty()) {
    w.u16(static_cast<std::uint16_t>(optimizer_states.size()));
    for (const auto& s : optimizer_states) {
      w.u64(s.step);
      w.f64(s.lr);
      w.f64(s.beta1);
      w.f64(s.beta2);
      w.f64(s.eps);
      w.u64(s.m.size());
      for (double v : s.m) w.f64(v);
      for (double v : s.v) w.f64(v);
    }
  }
  return bytes;
}

ModelBundle ModelBundle::deserialize(const std::vector<std::byte>& bytes) {
  Reader r(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kBundleMagic, 4) != 0) throw DataError("not a PFMB model bundle");
  if (r.u16() != kBundleVersion) throw DataError("unsupported model bundle version");

  ModelBundle b;
  b.mode = static_cast<TrainMode>(r.u8());
  b.loss = static_cast<LossMode>(r.u8());
  b.n_anchors = r.u16();
  b.input_dim = r.u32();
  std::uint16_t n_trunks = r.u16();
  std::uint16_t n_heads = r.u16();
  Mlp trunk_arch = read_mlp_arch(r, false);
  Mlp head_arch = read_mlp_arch(r, true);
  std::vector<std::uint32_t> head_ids(n_heads);
  for (auto& id : head_ids) id = r.u32();
  bool has_opt = r.u8() != 0;
  for (std::uint16_t i = 0; i < n_trunks; ++i) {
    Trunk t{trunk_arch};
    read_mlp_params(r, t.mlp);
    b.trunks.push_back(std::move(t));
  }
  for (std::uint16_t i = 0; i < n_heads; ++i) {
    Head h{head_ids[i], head_arch};
    read_mlp_params(r, h.mlp);
    b.heads.push_back(std::move(h));
  }
  if (has_opt) {
    std::uint16_t n_states = r.u16();
    for (std::uint16_t i = 0; i < n_states; ++i) {
      AdamState s;
      s.step = r.u64();
      s.lr = r.f64();
      s.beta1 = r.f64();
      s.beta2 = r.f64();
      s.eps = r.f64();
      std::uint64_t n = r.u64();
      s.m.resize(n);
      s.v.resize(n);
      for (auto& v : s.m) v = r.f64();
      for (auto& v : s.v) v = r.f64();
      b.optimizer_states.push_back(std::move(s));
    }
  }
  if (!r.exhausted()) throw DataError("trailing bytes in model bundle");
  return b;
}

void ModelBundle::save(const std::string& path, bool include_optimizer_state) const {
  auto bytes = serialize(include_optimizer_state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model bundle: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to model bundle: " + path);
}

ModelBundle ModelBundle::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open model bundle: " + path);
  std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::byte> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataError("short read from model bundle: " + path);
  return deserialize(bytes);
}

}  // namespace posfuse
