#include "posfuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace posfuse {

Fingerprint to_fingerprint(const CsiTensor& csi, const NormStats& norm) {
  if (!(norm.max > norm.min))
    throw DataError("degenerate normalization stats (max <= min)");
  Fingerprint fp;
  fp.anchor_id = csi.anchor_id;
  fp.n_antennas = csi.n_antennas;
  fp.n_subcarriers = csi.n_subcarriers;
  fp.data.resize(csi.data.size() * 2);
  const double range = norm.max - norm.min;
  for (std::size_t i = 0; i < csi.data.size(); ++i) {
    double re = (csi.data[i].real() - norm.min) / range;
    double im = (csi.data[i].imag() - norm.min) / range;
    fp.data[2 * i] = static_cast<float>(std::clamp(re, 0.0, 1.0));
    fp.data[2 * i + 1] = static_cast<float>(std::clamp(im, 0.0, 1.0));
  }
  return fp;
}

NormStats compute_norm_stats(const std::vector<const CsiTensor*>& tensors) {
  NormStats stats{std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity()};
  for (const CsiTensor* t : tensors)
    for (const auto& v : t->data) {
      stats.min = std::min({stats.min, v.real(), v.imag()});
      stats.max = std::max({stats.max, v.real(), v.imag()});
    }
  return stats;
}

std::string ScenarioSpec::name() const {
  if (is_static()) return "static";
  std::string out = "dynamic:";
  bool first = true;
  for (auto id : changed_anchors) {
    if (!first) out += ",";
    out += std::to_string(id);
    first = false;
  }
  return out;
}

ScenarioSpec ScenarioSpec::dynamic(std::set<std::uint32_t> anchors, double atten_db,
                                   std::uint32_t window) {
  if (anchors.empty()) throw ConfigError("dynamic scenario needs at least one anchor");
  ScenarioSpec s;
  s.kind = ScenarioKind::Dynamic;
  s.changed_anchors = std::move(anchors);
  s.atten_db = atten_db;
  s.window = window;
  return s;
}

ScenarioSpec ScenarioSpec::parse(const std::string& text, const Environment& env) {
  if (text == "static") return static_scenario();
  const std::string prefix = "dynamic";
  if (text.rfind(prefix, 0) != 0)
    throw ConfigError("unknown scenario '" + text + "' (expected static or dynamic:<anchors>)");
  std::string rest = text.size() > prefix.size() ? text.substr(prefix.size()) : "";
  if (!rest.empty() && (rest[0] == ':' || rest[0] == '{')) rest = rest.substr(1);
  if (!rest.empty() && rest.back() == '}') rest.pop_back();
  std::set<std::uint32_t> ids;
  std::stringstream ss(rest);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    const AnchorGeometry* found = nullptr;
    for (const auto& a : env.anchors)
      if (a.label == token || std::to_string(a.id) == token) found = &a;
    if (!found)
      throw ConfigError("scenario names unknown anchor id '" + token + "'");
    ids.insert(found->id);
  }
  if (ids.empty()) throw ConfigError("dynamic scenario needs at least one anchor");
  return dynamic(std::move(ids));
}

std::uint8_t encode_scenario_tag(const ScenarioSpec& s) {
  if (s.is_static()) return 0;
  std::uint8_t mask = 0;
  for (auto id : s.changed_anchors) {
    if (id >= 8) throw DataError("scenario tag encodes at most 8 anchors per dataset");
    mask = static_cast<std::uint8_t>(mask | (1u << id));
  }
  return mask;
}

SplitSpec SplitSpec::from_total(std::uint32_t n_samples, double test_frac) {
  if (test_frac < 0.0 || test_frac >= 1.0) throw ConfigError("test fraction must be in [0, 1)");
  auto n_test = static_cast<std::uint32_t>(std::llround(test_frac * n_samples));
  std::uint32_t pool = n_samples - n_test;
  auto n_val = static_cast<std::uint32_t>(std::llround(0.1 * pool));
  return SplitSpec{pool - n_val, n_val, n_test};
}

void Dataset::validate() const {
  if (train_idx.empty() || val_idx.empty())
    throw DataError("dataset needs nonempty train and validation splits");
  std::unordered_set<std::uint32_t> seen;
  auto check = [&](const std::vector<std::uint32_t>& idx) {
    for (auto i : idx) {
      if (i >= samples.size()) throw DataError("split index out of range");
      if (!seen.insert(i).second) throw DataError("splits are not disjoint");
    }
  };
  check(train_idx);
  check(val_idx);
  check(test_idx);
  // 10%-of-training validation protocol, with slack for integer carving.
  double ratio = static_cast<double>(val_idx.size()) / static_cast<double>(train_idx.size());
  if (ratio < 0.05 || ratio > 0.2)
    throw DataError("validation split must be about 10% of the training split");
  const std::size_t dim = fingerprint_dim();
  for (const auto& s : samples) {
    if (s.fingerprints.size() != n_anchors)
      throw DataError("sample fingerprint count differs from anchor count");
    for (const auto& fp : s.fingerprints)
      if (fp.data.size() != dim) throw DataError("fingerprint shape mismatch");
  }
}

namespace {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::byte>& out) : out_(out) {}
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

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::byte>& in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return read<std::uint16_t>(); }
  std::uint32_t u32() { return read<std::uint32_t>(); }
  std::uint64_t u64() { return read<std::uint64_t>(); }
  float f32() { return read<float>(); }
  double f64() { return read<double>(); }
  bool exhausted() const { return pos_ == in_.size(); }

  template <typename T>
  T read() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

 private:
  const std::byte* take(std::size_t n) {
    if (pos_ + n > in_.size()) throw DataError("truncated dataset file");
    const std::byte* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::vector<std::byte>& in_;
  std::size_t pos_ = 0;
};

constexpr char kDatasetMagic[4] = {'P', 'F', 'D', 'S'};
constexpr std::uint16_t kDatasetVersion = 1;

}  // namespace

std::vector<std::byte> Dataset::serialize() const {
  std::vector<std::byte> bytes;
  ByteWriter w(bytes);
  w.raw(kDatasetMagic, 4);
  w.u16(kDatasetVersion);
  w.u16(static_cast<std::uint16_t>(n_anchors));
  w.u16(static_cast<std::uint16_t>(n_antennas));
  w.u16(static_cast<std::uint16_t>(n_subcarriers));
  w.u32(static_cast<std::uint32_t>(samples.size()));
  w.u64(env_hash);
  for (const auto& s : samples) {
    w.f64(s.position.x);
    w.f64(s.position.y);
    w.u8(s.scenario_tag);
    for (const auto& fp : s.fingerprints)
      for (float v : fp.data) w.f32(v);
  }
  for (const auto* split : {&train_idx, &val_idx, &test_idx}) {
    w.u32(static_cast<std::uint32_t>(split->size()));
    for (auto i : *split) w.u32(i);
  }
  return bytes;
}

Dataset Dataset::deserialize(const std::vector<std::byte>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw DataError("not a PFDS dataset file");
  if (r.u16() != kDatasetVersion) throw DataError("unsupported dataset version");

  Dataset ds;
  ds.n_anchors = r.u16();
  ds.n_antennas = r.u16();
  ds.n_subcarriers = r.u16();
  std::uint32_t n_samples = r.u32();
  ds.env_hash = r.u64();
  const std::size_t dim = ds.fingerprint_dim();
  ds.samples.reserve(n_samples);
  for (std::uint32_t i = 0; i < n_samples; ++i) {
    Sample s;
    s.position.x = r.f64();
    s.position.y = r.f64();
    s.scenario_tag = r.u8();
    s.fingerprints.reserve(ds.n_anchors);
    for (std::uint32_t a = 0; a < ds.n_anchors; ++a) {
      Fingerprint fp;
      fp.anchor_id = a;
      fp.n_antennas = ds.n_antennas;
      fp.n_subcarriers = ds.n_subcarriers;
      fp.data.resize(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        float v = r.f32();
        if (!(v >= 0.0f && v <= 1.0f))
          throw DataError("fingerprint value outside [0, 1]");
        fp.data[k] = v;
      }
      s.fingerprints.push_back(std::move(fp));
    }
    ds.samples.push_back(std::move(s));
  }
  for (auto* split : {&ds.train_idx, &ds.val_idx, &ds.test_idx}) {
    std::uint32_t n = r.u32();
    split->resize(n);
    for (std::uint32_t i = 0; i < n; ++i) (*split)[i] = r.u32();
  }
  if (!r.exhausted()) throw DataError("trailing bytes in dataset file");
  ds.validate();
  return ds;
}

void Dataset::save(const std::string& path) const {
  auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to dataset file: " + path);
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::byte> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataError("short read from dataset file: " + path);
  return deserialize(bytes);
}

std::uint64_t Dataset::content_hash() const { return fnv1a(serialize()); }

Dataset gen_dataset(const Environment& env, const SplitSpec& split,
                    const ScenarioSpec& scenario) {
  env.validate();
  const std::uint32_t n = split.total();
  if (n < 10) throw DomainError("dataset needs at least 10 samples");
  if (split.n_train == 0 || split.n_val == 0)
    throw DomainError("dataset needs nonempty train and validation splits");
  if (!scenario.is_static()) {
    for (auto id : scenario.changed_anchors) {
      bool known = false;
      for (const auto& a : env.anchors) known |= (a.id == id);
      if (!known)
        throw ConfigError("scenario names unknown anchor id '" + std::to_string(id) + "'");
    }
  }

  const std::uint32_t n_anchors = static_cast<std::uint32_t>(env.anchors.size());
  std::vector<Vec2> positions(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto rng = RngStream::keyed({env.seed, static_cast<std::uint64_t>(StreamKind::Position), i});
    positions[i] = {rng.next_uniform(env.bounds.xmin, env.bounds.xmax),
                    rng.next_uniform(env.bounds.ymin, env.bounds.ymax)};
  }

  // CSI first: normalization stats must come from the training split only.
  std::vector<std::vector<CsiTensor>> csi(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    csi[i].reserve(n_anchors);
    for (const auto& anchor : env.anchors) csi[i].push_back(synth_channel(env, anchor, positions[i]));
  }

  Dataset ds;
  ds.n_anchors = n_anchors;
  ds.n_antennas = env.anchors.front().n_antennas;
  ds.n_subcarriers = env.n_subcarriers;
  ds.env_hash = env.descriptor_hash();
  for (std::uint32_t i = 0; i < split.n_train; ++i) ds.train_idx.push_back(i);
  for (std::uint32_t i = split.n_train; i < split.n_train + split.n_val; ++i)
    ds.val_idx.push_back(i);
  for (std::uint32_t i = split.n_train + split.n_val; i < n; ++i) ds.test_idx.push_back(i);

  std::vector<NormStats> stats(n_anchors);
  for (std::uint32_t a = 0; a < n_anchors; ++a) {
    std::vector<const CsiTensor*> train_tensors;
    train_tensors.reserve(ds.train_idx.size());
    for (auto i : ds.train_idx) train_tensors.push_back(&csi[i][a]);
    stats[a] = compute_norm_stats(train_tensors);
  }

  // Deployment-phase change: attenuate the named anchors' test-split CSI.
  const std::uint8_t dynamic_tag = encode_scenario_tag(scenario);
  if (!scenario.is_static())
    for (auto i : ds.test_idx)
      for (std::uint32_t a = 0; a < n_anchors; ++a)
        if (scenario.changed_anchors.count(env.anchors[a].id))
          csi[i][a] = attenuate_strongest(csi[i][a], scenario.atten_db, scenario.window);

  std::unordered_set<std::uint32_t> test_set(ds.test_idx.begin(), ds.test_idx.end());
  ds.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s;
    s.position = positions[i];
    s.scenario_tag = test_set.count(i) ? dynamic_tag : 0;
    s.fingerprints.reserve(n_anchors);
    for (std::uint32_t a = 0; a < n_anchors; ++a)
      s.fingerprints.push_back(to_fingerprint(csi[i][a], stats[a]));
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace posfuse
