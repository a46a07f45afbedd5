#include "fgb/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "fgb/attn_select.hpp"
#include "fgb/learners.hpp"
#include "fgb/optim.hpp"
#include "fgb/sampling.hpp"
#include "fgb/subgrid.hpp"

namespace fgb::harness {

using boosting::BoostState;
using boosting::Ensemble;
using boosting::FeatureView;
using boosting::FullView;
using boosting::RiskKind;
using boosting::RoundHooks;
using boosting::RoundOutcome;
using boosting::SubgridViewDesc;
using boosting::VocabViewDesc;
using learners::CnnConfig;
using learners::CnnWeakLearner;
using learners::TrainConfig;
using learners::TransformerConfig;
using learners::TransformerWeakLearner;
using nlohmann::json;

namespace {

// Stream tags for deriving independent RNG seeds per (run, round, purpose).
constexpr uint64_t kSeedLearnerInit = 0xC0DE;
constexpr uint64_t kSeedShuffle = 0x7EA1;
constexpr uint64_t kSeedDraw = 0xD7A3;
constexpr uint64_t kSeedDiag = 0xD1A6;
constexpr uint64_t kSeedGenerator = 0x6E47;
constexpr uint64_t kSeedBaselineVocab = 0xBA5E;

constexpr int kDiagnosticResamples = 200;

}  // namespace

Variant variant_from_string(const std::string& s) {
  if (s == "single-model") return Variant::SingleModel;
  if (s == "e-ensemble") return Variant::EEnsemble;
  if (s == "subgrid-e-ensemble") return Variant::SubgridEEnsemble;
  if (s == "boost") return Variant::Boost;
  if (s == "subgrid-boost") return Variant::SubgridBoost;
  if (s == "subsequence-boost") return Variant::SubsequenceBoost;
  if (s == "importance-sampling-boost") return Variant::ImportanceSamplingBoost;
  if (s == "subsequence-importance-sampling-boost")
    return Variant::SubsequenceImportanceSamplingBoost;
  if (s == "subsequence-baseline") return Variant::SubsequenceBaseline;
  throw ConfigError("unknown variant '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::SingleModel: return "single-model";
    case Variant::EEnsemble: return "e-ensemble";
    case Variant::SubgridEEnsemble: return "subgrid-e-ensemble";
    case Variant::Boost: return "boost";
    case Variant::SubgridBoost: return "subgrid-boost";
    case Variant::SubsequenceBoost: return "subsequence-boost";
    case Variant::ImportanceSamplingBoost: return "importance-sampling-boost";
    case Variant::SubsequenceImportanceSamplingBoost:
      return "subsequence-importance-sampling-boost";
    case Variant::SubsequenceBaseline: return "subsequence-baseline";
  }
  throw Error("unreachable variant");
}

void ExperimentConfig::validate() const {
  if (nu < 0.0 || nu > 1.0) throw ConfigError("nu must be in [0, 1]");
  if (sigma <= 0.0 || sigma > 1.0) throw ConfigError("sigma must be in (0, 1]");
  if (rho <= 0.0 || rho > 1.0) throw ConfigError("rho must be in (0, 1]");
  if (rounds < 1) throw ConfigError("rounds must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (alpha_max <= 0.0 || line_search_tol <= 0.0)
    throw ConfigError("line search interval and tolerance must be positive");
  if (tf_layers < 1 || tf_heads < 1 || tf_width < 1 || tf_ffn < 1)
    throw ConfigError("transformer extents must be positive");
  if (tf_width % tf_heads != 0)
    throw ConfigError("tf_width must be divisible by tf_heads");
  boosting::risk_kind_from_string(risk);  // throws on bad value
}

void apply_profile(ExperimentConfig& cfg, const std::string& name) {
  if (name == "desk-image") {
    cfg.rounds = 5;
    cfg.nu = 0.1;
    cfg.rho = 0.75;
    cfg.sigma = 0.8;
    cfg.epochs = 15;
    cfg.lr = 1.5e-3;
    cfg.weight_decay = 1e-4;
    cfg.decoupled = false;
    cfg.batch_size = 64;
    cfg.risk = "exponential-pairwise";
  } else if (name == "desk-sequence") {
    cfg.rounds = 4;
    cfg.nu = 0.1;
    cfg.sigma = 0.8;
    cfg.epochs = 5;
    cfg.lr = 1e-3;
    cfg.weight_decay = 0.01;
    cfg.decoupled = true;
    cfg.batch_size = 16;
    cfg.risk = "exponential-pairwise";
    cfg.warmup_ratio = 0.06;
  } else if (name == "reference-image") {
    cfg.rounds = 10;
    cfg.nu = 0.02;
    cfg.rho = 0.9;
    cfg.sigma = 0.8;
    cfg.epochs = 15;
    cfg.lr = 1e-4;
    cfg.weight_decay = 1e-4;
    cfg.decoupled = false;
    cfg.batch_size = 32;
    cfg.risk = "cross-entropy";
  } else if (name == "reference-sequence") {
    cfg.rounds = 6;
    cfg.nu = 0.02;
    cfg.sigma = 0.8;
    cfg.epochs = 5;
    cfg.lr = 1e-5;
    cfg.weight_decay = 0.01;
    cfg.decoupled = true;
    cfg.batch_size = 16;
    cfg.risk = "exponential-pairwise";
    cfg.warmup_ratio = 0.06;
    cfg.tf_layers = 6;
    cfg.tf_heads = 6;
    cfg.tf_width = 48;
    cfg.tf_ffn = 96;
  } else {
    throw ConfigError("unknown profile '" + name + "'");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned value for '" + key + "': " + v);
  }
}

long parse_long(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long out = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for '" + key + "': " + v);
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for '" + key + "': " + v);
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean value for '" + key + "': " + v);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  ExperimentConfig cfg;
  bool seed_seen = false, variant_seen = false;
  // profile first so explicit keys override it
  for (const auto& [k, v] : pairs)
    if (k == "profile") apply_profile(cfg, v);
  for (const auto& [k, v] : pairs) {
    if (k == "profile") continue;
    if (k == "variant") {
      cfg.variant = variant_from_string(v);
      variant_seen = true;
    } else if (k == "rounds") cfg.rounds = static_cast<int>(parse_long(v, k));
    else if (k == "nu") cfg.nu = parse_double(v, k);
    else if (k == "sigma") cfg.sigma = parse_double(v, k);
    else if (k == "rho") cfg.rho = parse_double(v, k);
    else if (k == "epochs") cfg.epochs = static_cast<int>(parse_long(v, k));
    else if (k == "lr") cfg.lr = parse_double(v, k);
    else if (k == "weight_decay") cfg.weight_decay = parse_double(v, k);
    else if (k == "decoupled") cfg.decoupled = parse_bool(v, k);
    else if (k == "batch_size") cfg.batch_size = static_cast<int>(parse_long(v, k));
    else if (k == "seed") {
      cfg.seed = parse_u64(v, k);
      seed_seen = true;
    } else if (k == "risk") cfg.risk = v;
    else if (k == "train_path") cfg.train_path = v;
    else if (k == "test_path") cfg.test_path = v;
    else if (k == "metrics_path") cfg.metrics_path = v;
    else if (k == "checkpoint_dir") cfg.checkpoint_dir = v;
    else if (k == "alpha_max") cfg.alpha_max = parse_double(v, k);
    else if (k == "line_search_tol") cfg.line_search_tol = parse_double(v, k);
    else if (k == "tf_layers") cfg.tf_layers = static_cast<int>(parse_long(v, k));
    else if (k == "tf_heads") cfg.tf_heads = static_cast<int>(parse_long(v, k));
    else if (k == "tf_width") cfg.tf_width = static_cast<int>(parse_long(v, k));
    else if (k == "tf_ffn") cfg.tf_ffn = static_cast<int>(parse_long(v, k));
    else if (k == "warmup_ratio") cfg.warmup_ratio = parse_double(v, k);
    else throw ConfigError("config: unknown key '" + k + "'");
  }
  if (!variant_seen) throw ConfigError("config: missing required key 'variant'");
  if (!seed_seen) throw ConfigError("config: missing required key 'seed'");
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// BKIM image container
// ---------------------------------------------------------------------------

namespace {

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw Error("'" + path + "': truncated reading " + what + " at byte " +
                  std::to_string(pos));
  }
  uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<uint16_t>(
        static_cast<uint8_t>(buf[pos]) |
        (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8));
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    const uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

constexpr uint16_t kImageFormatVersion = 1;

}  // namespace

void save_image_dataset(const LabeledDataset& data, const std::string& path) {
  data.validate();
  check(data.modality == Modality::Image, "save_image_dataset: not image data");
  const std::size_t c = data.image_channels();
  const std::size_t h = data.image_height();
  const std::size_t w = data.image_width();
  check(c <= 0xffff && h <= 0xffff && w <= 0xffff && data.classes <= 0xffff,
        "save_image_dataset: extents exceed the u16 header fields");
  std::string buf;
  buf += "BKIM";
  put_u16(buf, kImageFormatVersion);
  put_u32(buf, static_cast<uint32_t>(data.size()));
  put_u16(buf, static_cast<uint16_t>(c));
  put_u16(buf, static_cast<uint16_t>(h));
  put_u16(buf, static_cast<uint16_t>(w));
  put_u16(buf, static_cast<uint16_t>(data.classes));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (double v : data.image(i).values()) put_f32(buf, static_cast<float>(v));
  for (std::size_t i = 0; i < data.size(); ++i)
    put_u16(buf, static_cast<uint16_t>(data.labels[i] + 1));  // 1-based on disk
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "save_image_dataset: cannot open '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  check(out.good(), "save_image_dataset: write failed for '" + path + "'");
}

LabeledDataset load_image_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_image_dataset: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  ByteReader r{buf, 0, path};
  r.need(4, "magic");
  if (buf.compare(0, 4, "BKIM") != 0)
    throw Error("'" + path + "': bad magic at byte 0");
  r.pos = 4;
  const uint16_t version = r.u16("version");
  if (version != kImageFormatVersion)
    throw Error("'" + path + "': unsupported version " + std::to_string(version));
  const uint32_t n = r.u32("sample count");
  const uint16_t c = r.u16("channel count");
  const uint16_t h = r.u16("height");
  const uint16_t w = r.u16("width");
  const uint16_t classes = r.u16("class count");
  check(n > 0 && c > 0 && h > 0 && w > 0 && classes > 0,
        "'" + path + "': degenerate header extents");

  LabeledDataset data;
  data.modality = Modality::Image;
  data.classes = classes;
  data.samples.reserve(n);
  const std::size_t pixels = static_cast<std::size_t>(c) * h * w;
  for (uint32_t i = 0; i < n; ++i) {
    std::vector<double> vals(pixels);
    for (std::size_t p = 0; p < pixels; ++p) vals[p] = r.f32("pixel data");
    data.samples.emplace_back(Tensor(
        {static_cast<std::size_t>(c), static_cast<std::size_t>(h),
         static_cast<std::size_t>(w)},
        std::move(vals)));
  }
  data.labels.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    const uint16_t raw = r.u16("label");
    if (raw < 1 || raw > classes)
      throw Error("'" + path + "': label " + std::to_string(raw) +
                  " out of range at sample " + std::to_string(i));
    data.labels[i] = raw - 1;
  }
  if (r.pos != buf.size())
    throw Error("'" + path + "': " + std::to_string(buf.size() - r.pos) +
                " trailing bytes at byte " + std::to_string(r.pos));
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// sequence records
// ---------------------------------------------------------------------------

void save_sequence_dataset(const LabeledDataset& data, const std::string& path) {
  data.validate();
  check(data.modality == Modality::Sequence, "save_sequence_dataset: not sequences");
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "save_sequence_dataset: cannot open '" + path + "'");
  for (std::size_t i = 0; i < data.size(); ++i) {
    json rec;
    const auto& toks = data.tokens(i);
    // the leading classification token is implicit on disk
    rec["tokens"] = std::vector<int>(toks.begin() + 1, toks.end());
    rec["label"] = data.labels[i] + 1;
    out << rec.dump() << "\n";
  }
  check(out.good(), "save_sequence_dataset: write failed for '" + path + "'");
}

LabeledDataset load_sequence_dataset(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "load_sequence_dataset: cannot open '" + path + "'");
  LabeledDataset data;
  data.modality = Modality::Sequence;
  int max_label = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
      if (!rec.is_object() || !rec.contains("tokens") || !rec.contains("label"))
        throw std::runtime_error("record needs 'tokens' and 'label' fields");
      std::vector<int> toks = rec["tokens"].get<std::vector<int>>();
      const int label = rec["label"].get<int>();
      if (label < 1) throw std::runtime_error("label must be 1-based positive");
      for (int t : toks)
        if (t < 0) throw std::runtime_error("negative token id");
      if (toks.empty() || toks.front() != kClsToken)
        toks.insert(toks.begin(), kClsToken);
      data.samples.emplace_back(std::move(toks));
      data.labels.push_back(label - 1);
      max_label = std::max(max_label, label);
    } catch (const std::exception& e) {
      throw Error("'" + path + "' line " + std::to_string(line_no) + ": " +
                  e.what());
    }
  }
  check(!data.samples.empty(), "'" + path + "': no records");
  data.classes = max_label;
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// synthetic generators
// ---------------------------------------------------------------------------

PlantedRowsData generate_planted_rows(const PlantedRowsParams& p, uint64_t seed) {
  check(p.signal_rows >= 1 && p.signal_rows <= p.height,
        "generate_planted_rows: bad signal row count");
  check(p.classes >= 2 && p.train_n >= p.classes && p.test_n >= 1,
        "generate_planted_rows: bad sizes");
  Rng rng(mix_seed(seed, kSeedGenerator));

  // signal row subset S, distinct rows
  std::vector<int> rows(p.height);
  std::iota(rows.begin(), rows.end(), 0);
  rng.shuffle(rows);
  std::vector<int> signal(rows.begin(), rows.begin() + p.signal_rows);
  std::sort(signal.begin(), signal.end());

  // class templates: a column blob centered per class on the signal rows
  const double blob_width = std::max(0.8, p.width / 10.0);
  auto template_value = [&](int cls, int col) {
    const double center =
        (static_cast<double>(cls) + 0.5) * p.width / static_cast<double>(p.classes);
    const double d = (col + 0.5) - center;
    return p.amplitude * std::exp(-d * d / (2.0 * blob_width * blob_width));
  };
  std::vector<char> is_signal(p.height, 0);
  for (int r : signal) is_signal[r] = 1;

  auto make_split = [&](int n) {
    LabeledDataset out;
    out.modality = Modality::Image;
    out.classes = p.classes;
    for (int i = 0; i < n; ++i) {
      const int z = i % p.classes;  // deterministic class balance
      std::vector<double> vals(static_cast<std::size_t>(p.channels) * p.height *
                               p.width);
      for (int c = 0; c < p.channels; ++c)
        for (int r = 0; r < p.height; ++r)
          for (int col = 0; col < p.width; ++col) {
            double v = p.noise * rng.normal();
            if (is_signal[r]) v += template_value(z, col);
            // quantize so the float32 container round-trips exactly
            vals[(static_cast<std::size_t>(c) * p.height + r) * p.width + col] =
                static_cast<double>(static_cast<float>(v));
          }
      out.samples.emplace_back(Tensor({static_cast<std::size_t>(p.channels),
                                       static_cast<std::size_t>(p.height),
                                       static_cast<std::size_t>(p.width)},
                                      std::move(vals)));
      out.labels.push_back(z);
    }
    return out;
  };

  PlantedRowsData data;
  data.train = make_split(p.train_n);
  data.test = make_split(p.test_n);
  data.signal_rows = std::move(signal);
  return data;
}

PlantedTokensData generate_planted_tokens(const PlantedTokensParams& p,
                                          uint64_t seed) {
  check(p.vocab >= p.classes * p.planted_per_class + 2,
        "generate_planted_tokens: vocabulary too small for the planted sets");
  check(p.len_min >= 1 && p.len_max >= p.len_min,
        "generate_planted_tokens: bad length range");
  Rng rng(mix_seed(seed, kSeedGenerator, 1));

  // disjoint planted token sets per class, drawn from content ids 1..vocab
  std::vector<int> ids(p.vocab);
  std::iota(ids.begin(), ids.end(), 1);
  rng.shuffle(ids);
  std::vector<std::vector<int>> planted(p.classes);
  std::set<int> planted_all;
  std::size_t next = 0;
  for (int z = 0; z < p.classes; ++z) {
    for (int k = 0; k < p.planted_per_class; ++k) {
      planted[z].push_back(ids[next]);
      planted_all.insert(ids[next]);
      ++next;
    }
    std::sort(planted[z].begin(), planted[z].end());
  }
  std::vector<int> distractors;
  for (int id = 1; id <= p.vocab; ++id)
    if (!planted_all.count(id)) distractors.push_back(id);

  auto make_split = [&](int n) {
    LabeledDataset out;
    out.modality = Modality::Sequence;
    out.classes = p.classes;
    for (int i = 0; i < n; ++i) {
      const int z = i % p.classes;
      const int len =
          p.len_min + static_cast<int>(rng.uniform_index(
                          static_cast<std::size_t>(p.len_max - p.len_min + 1)));
      std::vector<int> toks;
      toks.reserve(len + 1);
      toks.push_back(kClsToken);
      for (int t = 0; t < len; ++t) {
        if (rng.uniform() < p.signal_prob) {
          toks.push_back(planted[z][rng.uniform_index(planted[z].size())]);
        } else {
          toks.push_back(distractors[rng.uniform_index(distractors.size())]);
        }
      }
      out.samples.emplace_back(std::move(toks));
      out.labels.push_back(z);
    }
    return out;
  };

  PlantedTokensData data;
  data.train = make_split(p.train_n);
  data.test = make_split(p.test_n);
  data.planted = planted;

  // Guarantee every content id occurs in the training split so the round-0
  // vocabulary is exactly `vocab` ids. Missing distractors may go anywhere;
  // missing planted ids are injected only into samples of their own class.
  std::set<int> seen;
  for (std::size_t i = 0; i < data.train.size(); ++i)
    for (int t : data.train.tokens(i)) seen.insert(t);
  std::size_t cursor = 0;
  auto inject = [&](int id, int required_class) {
    const std::size_t n = data.train.size();
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t i = (cursor + step) % n;
      if (required_class >= 0 && data.train.labels[i] != required_class) continue;
      auto& toks = std::get<std::vector<int>>(data.train.samples[i]);
      for (std::size_t pos = 1; pos < toks.size(); ++pos) {
        if (planted_all.count(toks[pos])) continue;  // keep planted signal
        toks[pos] = id;
        cursor = (i + 1) % n;
        return;
      }
    }
    throw Error("generate_planted_tokens: could not place token " +
                std::to_string(id));
  };
  for (int id = 1; id <= p.vocab; ++id) {
    if (seen.count(id)) continue;
    int cls = -1;
    for (int z = 0; z < p.classes; ++z)
      if (std::binary_search(planted[z].begin(), planted[z].end(), id)) cls = z;
    inject(id, cls);
  }
  return data;
}

// ---------------------------------------------------------------------------
// experiment execution
// ---------------------------------------------------------------------------

namespace {

double accuracy_of(const Matrix& scores, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows; ++i)
    if (boosting::argmax_label(scores.row(i)) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(scores.rows);
}

void add_scores(Matrix& acc, const boosting::WeakModel& model,
                const FeatureView& view, const LabeledDataset& data,
                double coeff) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample viewed = boosting::apply_view(view, data.samples[i]);
    const auto s = model.score(viewed);
    for (std::size_t k = 0; k < acc.cols; ++k) acc.at(i, k) += coeff * s[k];
  }
}

// Sampling diagnostics computed from the round's residual weights; shared by
// every boosting variant so degenerate configurations emit identical rows.
void fill_diagnostics(RoundMetrics& m, const Matrix& weights, double sigma,
                      uint64_t diag_seed) {
  const auto norms = sampling::row_norms(weights);
  double total = 0.0;
  for (double n : norms) total += n;
  if (total <= 0.0) return;  // converged residuals; leave zeros
  const std::vector<double> uniform(norms.size(), 1.0 / norms.size());
  m.jensen_gap_uniform = sampling::jensen_gap(norms, uniform);
  const auto pstar = sampling::distribution_from_norms(norms);
  sampling::SampleDistribution udist;
  udist.p = uniform;
  udist.norms = norms;
  m.variance_pstar = sampling::estimator_variance(pstar, sigma,
                                                  kDiagnosticResamples, weights,
                                                  diag_seed);
  m.variance_uniform = sampling::estimator_variance(udist, sigma,
                                                    kDiagnosticResamples, weights,
                                                    diag_seed);
}

struct Stopwatch {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

CnnConfig cnn_config_for(const LabeledDataset& train) {
  CnnConfig cfg;
  cfg.in_channels = static_cast<int>(train.image_channels());
  cfg.classes = train.classes;
  return cfg;
}

TransformerConfig tf_config_for(const ExperimentConfig& cfg,
                                const LabeledDataset& train,
                                const LabeledDataset& test) {
  TransformerConfig tc;
  tc.layers = cfg.tf_layers;
  tc.heads = cfg.tf_heads;
  tc.d_model = cfg.tf_width;
  tc.ffn_hidden = cfg.tf_ffn;
  tc.classes = train.classes;
  int max_id = train.max_token_id();
  std::size_t max_len = 0;
  for (std::size_t i = 0; i < train.size(); ++i)
    max_len = std::max(max_len, train.tokens(i).size());
  max_id = std::max(max_id, test.max_token_id());
  for (std::size_t i = 0; i < test.size(); ++i)
    max_len = std::max(max_len, test.tokens(i).size());
  tc.vocab_size = max_id + 1;
  tc.max_len = static_cast<int>(max_len);
  return tc;
}

TrainConfig train_config_for(const ExperimentConfig& cfg, int round,
                             bool sequence_model) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.adam.lr = cfg.lr;
  tc.adam.weight_decay = cfg.weight_decay;
  tc.adam.decoupled = cfg.decoupled;
  tc.seed = mix_seed(cfg.seed, static_cast<uint64_t>(round), kSeedShuffle);
  tc.warmup_ratio = sequence_model ? cfg.warmup_ratio : -1.0;
  return tc;
}

// Boosting variants (plain, subgrid, subsequence, importance sampling and
// the combined form) share this loop; hooks carry the per-variant parts.
ExperimentResult run_boost_family(const ExperimentConfig& cfg,
                                  const LabeledDataset& train,
                                  const LabeledDataset& test) {
  const RiskKind kind = boosting::risk_kind_from_string(cfg.risk);
  const bool image = train.modality == Modality::Image;
  const bool use_subgrid =
      cfg.variant == Variant::SubgridBoost && cfg.rho < 1.0;
  const bool use_subsequence =
      (cfg.variant == Variant::SubsequenceBoost ||
       cfg.variant == Variant::SubsequenceImportanceSamplingBoost) &&
      cfg.sigma < 1.0;
  const bool use_sampling =
      (cfg.variant == Variant::ImportanceSamplingBoost ||
       cfg.variant == Variant::SubsequenceImportanceSamplingBoost) &&
      cfg.sigma < 1.0;

  BoostState bs;
  bs.init(train, cfg.nu, kind);
  Matrix f_test(test.size(), static_cast<std::size_t>(test.classes), 0.0);

  // warm-start handles
  std::shared_ptr<CnnWeakLearner> prev_cnn, basic_cnn;
  std::shared_ptr<TransformerWeakLearner> prev_tf;
  const CnnConfig cnn_cfg = image ? cnn_config_for(train) : CnnConfig{};
  const TransformerConfig tf_cfg =
      image ? TransformerConfig{} : tf_config_for(cfg, train, test);

  // subgrid state: persistent importance grid; the refresh set is P_{t-1}
  // (initially the full grid)
  subgrid::ImportanceGrid grid;
  subgrid::PixelSet refresh_set;
  if (image) {
    grid = subgrid::ImportanceGrid(train.image_height(), train.image_width());
    refresh_set = subgrid::full_pixel_set(grid.height, grid.width);
  }

  // vocabulary state: V_0 = occurring tokens
  attnsel::Vocabulary vocab;
  if (!image) vocab = attnsel::Vocabulary::from_dataset(train);

  double feature_fraction = 1.0;  // set by the view hook each round

  RoundHooks hooks;
  hooks.select_samples =
      [&](int round, const Matrix& weights)
      -> std::optional<std::pair<std::vector<std::size_t>, std::vector<double>>> {
    if (!use_sampling) return std::nullopt;
    const auto dist = sampling::residual_distribution(weights);
    const auto drawn = sampling::draw_subset(
        dist, cfg.sigma,
        mix_seed(cfg.seed, static_cast<uint64_t>(round), kSeedDraw));
    std::vector<double> scales(drawn.indices.size());
    for (std::size_t r = 0; r < drawn.indices.size(); ++r)
      scales[r] = 1.0 / (static_cast<double>(dist.size()) * dist.p[drawn.indices[r]]);
    return std::make_pair(drawn.indices, std::move(scales));
  };

  hooks.build_view = [&](int round, const Matrix& weights,
                         std::span<const std::size_t> subset) -> FeatureView {
    feature_fraction = 1.0;
    if (image) {
      if (!use_subgrid) return FullView{};
      const auto probe = learners::make_probe_model(*prev_cnn, *basic_cnn);
      subgrid::pixel_importance(probe, train, weights, refresh_set, round, grid);
      const auto [row_scores, col_scores] = subgrid::aggregate_rows_cols(grid);
      subgrid::SubgridMask mask =
          subgrid::select_subgrid(row_scores, col_scores, cfg.rho);
      refresh_set = subgrid::mask_pixel_set(mask);
      feature_fraction = static_cast<double>(mask.pixel_count()) /
                         static_cast<double>(grid.height * grid.width);
      return SubgridViewDesc{std::move(mask)};
    }
    if (!use_subsequence) return FullView{};
    // traces from the incumbent learner on the round-(t-1) view, restricted
    // to the drawn samples when sampling
    std::vector<std::vector<int>> seqs;
    std::vector<AttentionTrace> traces;
    auto add_sample = [&](std::size_t i) {
      std::vector<int> seq = attnsel::rewrite_sequence(train.tokens(i), vocab);
      traces.push_back(prev_tf->trace_of(seq));
      seqs.push_back(std::move(seq));
    };
    if (subset.empty()) {
      for (std::size_t i = 0; i < train.size(); ++i) add_sample(i);
    } else {
      std::vector<std::size_t> unique(subset.begin(), subset.end());
      std::sort(unique.begin(), unique.end());
      unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
      for (std::size_t i : unique) add_sample(i);
    }
    const auto scores = attnsel::aggregate_vocab(seqs, traces);
    const std::size_t prev_content = vocab.content_size();
    vocab = attnsel::prune_vocab(scores, vocab, cfg.sigma);
    feature_fraction = static_cast<double>(vocab.content_size()) /
                       static_cast<double>(prev_content);
    return VocabViewDesc{vocab.ids};
  };

  hooks.train = [&](int round, const std::vector<Sample>& viewed,
                    const Matrix& targets,
                    std::span<const double> scales) -> boosting::TrainOutcome {
    const uint64_t lseed =
        mix_seed(cfg.seed, static_cast<uint64_t>(round), kSeedLearnerInit);
    const TrainConfig tc = train_config_for(cfg, round, !image);
    boosting::TrainOutcome out;
    if (image) {
      const Tensor& first = std::get<Tensor>(viewed[0]);
      const std::size_t vh = first.shape()[1], vw = first.shape()[2];
      auto learner = std::make_shared<CnnWeakLearner>(
          round == 0
              ? CnnWeakLearner::fresh(cnn_cfg, vh, vw, lseed)
              : CnnWeakLearner::from_extractor(learners::transfer_extractor(*prev_cnn),
                                               cnn_cfg, vh, vw, lseed));
      out.final_loss = learners::train_to_weights(*learner, viewed, targets,
                                                  scales, tc);
      prev_cnn = learner;
      if (round == 0) basic_cnn = learner;
      out.model = learner;
    } else {
      auto learner = std::make_shared<TransformerWeakLearner>(
          round == 0 ? TransformerWeakLearner::fresh(tf_cfg, lseed)
                     : learners::transfer_transformer(*prev_tf));
      out.final_loss = learners::train_to_weights(*learner, viewed, targets,
                                                  scales, tc);
      prev_tf = learner;
      out.model = learner;
    }
    return out;
  };

  ExperimentResult result;
  const boosting::LineSearchConfig ls{cfg.alpha_max, cfg.line_search_tol};
  double cumulative = 0.0;
  for (int round = 0; round < cfg.rounds; ++round) {
    try {
      Stopwatch clock;
      feature_fraction = 1.0;
      RoundOutcome out = round == 0 ? boosting::basic_round(bs, hooks)
                                    : boosting::boost_round(bs, hooks, ls);
      add_scores(f_test, *out.model, out.view, test, bs.ensemble.coefficient(round));

      RoundMetrics m;
      m.round = round;
      m.alpha = out.alpha;
      m.train_risk = boosting::compute_risk(bs.f_train, train.labels, kind);
      m.test_accuracy = accuracy_of(f_test, test.labels);
      m.feature_fraction = feature_fraction;
      fill_diagnostics(m, out.weights, cfg.sigma,
                       mix_seed(cfg.seed, static_cast<uint64_t>(round), kSeedDiag));
      cumulative += clock.seconds();
      m.wall_time_s = cumulative;
      result.metrics.push_back(m);
    } catch (const Error& e) {
      throw RunAborted("round " + std::to_string(round) + ": " + e.what(), round,
                       result.metrics);
    }
  }
  result.ensemble = std::move(bs.ensemble);
  return result;
}

// Ensemble baselines: members trained on true labels with cross-entropy and
// aggregated by unweighted mean. The subgrid flavor keeps the selection
// machinery but freezes the weights at their f = 0 values (no boosting
// weight update).
ExperimentResult run_e_ensemble(const ExperimentConfig& cfg,
                                const LabeledDataset& train,
                                const LabeledDataset& test) {
  const RiskKind kind = boosting::risk_kind_from_string(cfg.risk);
  const bool image = train.modality == Modality::Image;
  const bool use_subgrid =
      cfg.variant == Variant::SubgridEEnsemble && cfg.rho < 1.0;

  Matrix f_train_sum(train.size(), static_cast<std::size_t>(train.classes), 0.0);
  Matrix f_test_sum(test.size(), static_cast<std::size_t>(test.classes), 0.0);
  Matrix zero(train.size(), static_cast<std::size_t>(train.classes), 0.0);
  const Matrix frozen_weights = boosting::compute_weights(zero, train.labels, kind);

  const CnnConfig cnn_cfg = image ? cnn_config_for(train) : CnnConfig{};
  const TransformerConfig tf_cfg =
      image ? TransformerConfig{} : tf_config_for(cfg, train, test);
  std::shared_ptr<CnnWeakLearner> prev_cnn, basic_cnn;
  std::shared_ptr<TransformerWeakLearner> prev_tf;

  subgrid::ImportanceGrid grid;
  subgrid::PixelSet refresh_set;
  if (image) {
    grid = subgrid::ImportanceGrid(train.image_height(), train.image_width());
    refresh_set = subgrid::full_pixel_set(grid.height, grid.width);
  }

  ExperimentResult result;
  result.ensemble = Ensemble(train.classes, 1.0, kind);
  double cumulative = 0.0;
  for (int round = 0; round < cfg.rounds; ++round) {
    try {
    Stopwatch clock;
    double feature_fraction = 1.0;
    FeatureView view = FullView{};
    if (image && use_subgrid && round > 0) {
      const auto probe = learners::make_probe_model(*prev_cnn, *basic_cnn);
      subgrid::pixel_importance(probe, train, frozen_weights, refresh_set, round,
                                grid);
      const auto [row_scores, col_scores] = subgrid::aggregate_rows_cols(grid);
      subgrid::SubgridMask mask =
          subgrid::select_subgrid(row_scores, col_scores, cfg.rho);
      refresh_set = subgrid::mask_pixel_set(mask);
      feature_fraction = static_cast<double>(mask.pixel_count()) /
                         static_cast<double>(grid.height * grid.width);
      view = SubgridViewDesc{std::move(mask)};
    }

    std::vector<Sample> viewed;
    viewed.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i)
      viewed.push_back(boosting::apply_view(view, train.samples[i]));

    const uint64_t lseed =
        mix_seed(cfg.seed, static_cast<uint64_t>(round), kSeedLearnerInit);
    const TrainConfig tc = train_config_for(cfg, round, !image);
    std::shared_ptr<const boosting::WeakModel> model;
    if (image) {
      const Tensor& first = std::get<Tensor>(viewed[0]);
      // members are independently initialized, random-forest style
      auto learner = std::make_shared<CnnWeakLearner>(CnnWeakLearner::fresh(
          cnn_cfg, first.shape()[1], first.shape()[2], lseed));
      learners::train_to_labels(*learner, viewed, train.labels, tc);
      prev_cnn = learner;
      if (round == 0) basic_cnn = learner;
      model = learner;
    } else {
      auto learner = std::make_shared<TransformerWeakLearner>(
          TransformerWeakLearner::fresh(tf_cfg, lseed));
      learners::train_to_labels(*learner, viewed, train.labels, tc);
      prev_tf = learner;
      model = learner;
    }
    result.ensemble.append(boosting::EnsembleRound{1.0, model, view});
    add_scores(f_train_sum, *model, view, train, 1.0);
    add_scores(f_test_sum, *model, view, test, 1.0);

    // mean aggregate for reporting
    const double inv = 1.0 / static_cast<double>(round + 1);
    Matrix f_train_mean = f_train_sum;
    for (auto& v : f_train_mean.a) v *= inv;
    RoundMetrics m;
    m.round = round;
    m.alpha = 1.0;
    m.train_risk = boosting::compute_risk(f_train_mean, train.labels, kind);
    m.test_accuracy = accuracy_of(f_test_sum, test.labels);
    m.feature_fraction = feature_fraction;
    cumulative += clock.seconds();
    m.wall_time_s = cumulative;
    result.metrics.push_back(m);
    } catch (const Error& e) {
      throw RunAborted("round " + std::to_string(round) + ": " + e.what(),
                       round, result.metrics);
    }
  }
  return result;
}

// Single classifier trained for the full epoch budget (rounds x epochs),
// one metrics row per epoch. The subsequence baseline removes a uniformly
// random vocabulary fraction once before training.
ExperimentResult run_single_model(const ExperimentConfig& cfg,
                                  const LabeledDataset& train_in,
                                  const LabeledDataset& test_in) {
  const RiskKind kind = boosting::risk_kind_from_string(cfg.risk);
  const bool image = train_in.modality == Modality::Image;

  LabeledDataset train = train_in;
  LabeledDataset test = test_in;
  FeatureView view = FullView{};
  double feature_fraction = 1.0;

  if (cfg.variant == Variant::SubsequenceBaseline) {
    check(!image, "subsequence-baseline requires sequence data");
    attnsel::Vocabulary full = attnsel::Vocabulary::from_dataset(train_in);
    std::vector<int> content;
    for (int id : full.ids)
      if (id != kClsToken) content.push_back(id);
    Rng rng(mix_seed(cfg.seed, kSeedBaselineVocab));
    rng.shuffle(content);
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil(cfg.sigma * static_cast<double>(content.size())));
    content.resize(std::max<std::size_t>(1, keep));
    content.push_back(kClsToken);
    std::sort(content.begin(), content.end());
    attnsel::Vocabulary vocab;
    vocab.ids = content;
    feature_fraction = static_cast<double>(vocab.content_size()) /
                       static_cast<double>(full.content_size());
    view = VocabViewDesc{vocab.ids};
    for (std::size_t i = 0; i < train.size(); ++i)
      train.samples[i] = attnsel::rewrite_sequence(train.tokens(i), vocab);
    for (std::size_t i = 0; i < test.size(); ++i)
      test.samples[i] = attnsel::rewrite_sequence(test.tokens(i), vocab);
  }

  const uint64_t lseed = mix_seed(cfg.seed, 0, kSeedLearnerInit);
  std::shared_ptr<const boosting::WeakModel> model;
  learners::TrainableModel* trainable = nullptr;
  std::shared_ptr<CnnWeakLearner> cnn;
  std::shared_ptr<TransformerWeakLearner> tf;
  if (image) {
    cnn = std::make_shared<CnnWeakLearner>(CnnWeakLearner::fresh(
        cnn_config_for(train), train.image_height(), train.image_width(), lseed));
    model = cnn;
    trainable = cnn.get();
  } else {
    tf = std::make_shared<TransformerWeakLearner>(
        TransformerWeakLearner::fresh(tf_config_for(cfg, train, test), lseed));
    model = tf;
    trainable = tf.get();
  }

  ExperimentResult result;
  result.ensemble = Ensemble(train.classes, 1.0, kind);

  const int total_epochs = cfg.rounds * cfg.epochs;
  double cumulative = 0.0;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    try {
      Stopwatch clock;
      TrainConfig tc = train_config_for(cfg, epoch, false);
      tc.epochs = 1;
      learners::train_to_labels(*trainable, train.samples, train.labels, tc);

      Matrix f_train(train.size(), static_cast<std::size_t>(train.classes), 0.0);
      Matrix f_test(test.size(), static_cast<std::size_t>(test.classes), 0.0);
      add_scores(f_train, *model, FullView{}, train, 1.0);
      add_scores(f_test, *model, FullView{}, test, 1.0);

      RoundMetrics m;
      m.round = epoch;
      m.alpha = 1.0;
      m.train_risk = boosting::compute_risk(f_train, train.labels, kind);
      m.test_accuracy = accuracy_of(f_test, test.labels);
      m.feature_fraction = feature_fraction;
      cumulative += clock.seconds();
      m.wall_time_s = cumulative;
      result.metrics.push_back(m);
    } catch (const Error& e) {
      throw RunAborted("epoch " + std::to_string(epoch) + ": " + e.what(),
                       epoch, result.metrics);
    }
  }
  result.ensemble.append(boosting::EnsembleRound{1.0, model, view});
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const LabeledDataset& train,
                                const LabeledDataset& test) {
  cfg.validate();
  train.validate();
  test.validate();
  if (train.modality != test.modality)
    throw ConfigError("train/test modality mismatch");
  if (train.classes != test.classes)
    throw ConfigError("train/test class count mismatch");

  const bool image = train.modality == Modality::Image;
  switch (cfg.variant) {
    case Variant::SubgridBoost:
    case Variant::SubgridEEnsemble:
      if (!image)
        throw ConfigError("variant '" + to_string(cfg.variant) +
                          "' requires image data");
      break;
    case Variant::SubsequenceBoost:
    case Variant::SubsequenceImportanceSamplingBoost:
    case Variant::SubsequenceBaseline:
      if (image)
        throw ConfigError("variant '" + to_string(cfg.variant) +
                          "' requires sequence data");
      break;
    default:
      break;
  }

  switch (cfg.variant) {
    case Variant::SingleModel:
    case Variant::SubsequenceBaseline:
      return run_single_model(cfg, train, test);
    case Variant::EEnsemble:
    case Variant::SubgridEEnsemble:
      return run_e_ensemble(cfg, train, test);
    default:
      return run_boost_family(cfg, train, test);
  }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  check(!cfg.train_path.empty() && !cfg.test_path.empty(),
        "run_experiment: train_path and test_path are required");
  LabeledDataset train, test;
  // sniff the container by magic
  std::ifstream probe(cfg.train_path, std::ios::binary);
  if (!probe.good())
    throw ConfigError("cannot open train dataset '" + cfg.train_path + "'");
  char magic[4] = {};
  probe.read(magic, 4);
  probe.close();
  if (std::strncmp(magic, "BKIM", 4) == 0) {
    train = load_image_dataset(cfg.train_path);
    test = load_image_dataset(cfg.test_path);
  } else {
    train = load_sequence_dataset(cfg.train_path);
    test = load_sequence_dataset(cfg.test_path);
    const int classes = std::max(train.classes, test.classes);
    train.classes = classes;
    test.classes = classes;
  }
  return run_experiment(cfg, train, test);
}

// ---------------------------------------------------------------------------
// metrics CSV
// ---------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

std::string metrics_to_csv(const std::vector<RoundMetrics>& series) {
  std::string out =
      "round,alpha,train_risk,test_accuracy,feature_fraction,wall_time_s,"
      "jensen_gap_uniform,variance_pstar,variance_uniform\n";
  for (const auto& m : series) {
    out += std::to_string(m.round);
    out += ',';
    out += format_double(m.alpha);
    out += ',';
    out += format_double(m.train_risk);
    out += ',';
    out += format_double(m.test_accuracy);
    out += ',';
    out += format_double(m.feature_fraction);
    out += ',';
    out += format_double(m.wall_time_s);
    out += ',';
    out += format_double(m.jensen_gap_uniform);
    out += ',';
    out += format_double(m.variance_pstar);
    out += ',';
    out += format_double(m.variance_uniform);
    out += '\n';
  }
  return out;
}

void write_metrics_csv(const std::vector<RoundMetrics>& series,
                       const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "write_metrics_csv: cannot open '" + path + "'");
  out << metrics_to_csv(series);
  check(out.good(), "write_metrics_csv: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// ensemble checkpoints
// ---------------------------------------------------------------------------

namespace {

json view_to_json(const FeatureView& view) {
  if (std::holds_alternative<FullView>(view)) return json{{"kind", "full"}};
  if (const auto* sv = std::get_if<SubgridViewDesc>(&view))
    return json{{"kind", "subgrid"},
                {"rows", sv->mask.kept_rows},
                {"cols", sv->mask.kept_cols}};
  const auto& vv = std::get<VocabViewDesc>(view);
  return json{{"kind", "vocab"}, {"ids", vv.kept}};
}

FeatureView view_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "full") return FullView{};
  if (kind == "subgrid") {
    SubgridViewDesc sv;
    sv.mask.kept_rows = j.at("rows").get<std::vector<int>>();
    sv.mask.kept_cols = j.at("cols").get<std::vector<int>>();
    return sv;
  }
  if (kind == "vocab") {
    VocabViewDesc vv;
    vv.kept = j.at("ids").get<std::vector<int>>();
    return vv;
  }
  throw Error("ensemble manifest: unknown view kind '" + kind + "'");
}

std::string round_file(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "round_%03zu.bkpt", t);
  return buf;
}

}  // namespace

void save_ensemble(const Ensemble& ensemble, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "fgboost-ensemble";
  manifest["version"] = 1;
  manifest["classes"] = ensemble.classes();
  manifest["nu"] = ensemble.nu();
  manifest["risk"] = boosting::to_string(ensemble.risk());
  json rounds = json::array();
  for (std::size_t t = 0; t < ensemble.rounds(); ++t) {
    const auto& r = ensemble.round(t);
    json jr;
    jr["alpha"] = r.alpha;
    jr["view"] = view_to_json(r.view);
    jr["params"] = round_file(t);
    if (const auto* cnn = dynamic_cast<const CnnWeakLearner*>(r.model.get())) {
      const auto& c = cnn->config();
      jr["family"] = "cnn";
      jr["arch"] = json{{"in_channels", c.in_channels}, {"channels", c.channels},
                        {"kernel", c.kernel},           {"stride", c.stride},
                        {"padding", c.padding},         {"classes", c.classes},
                        {"grid_h", cnn->grid_height()}, {"grid_w", cnn->grid_width()}};
      save_checkpoint(cnn->params(), (fs::path(dir) / round_file(t)).string());
    } else if (const auto* tf =
                   dynamic_cast<const TransformerWeakLearner*>(r.model.get())) {
      const auto& c = tf->config();
      jr["family"] = "transformer";
      jr["arch"] = json{{"layers", c.layers},         {"heads", c.heads},
                        {"d_model", c.d_model},       {"ffn_hidden", c.ffn_hidden},
                        {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
                        {"classes", c.classes}};
      save_checkpoint(tf->params(), (fs::path(dir) / round_file(t)).string());
    } else {
      throw Error("save_ensemble: round " + std::to_string(t) +
                  " holds an unserializable learner");
    }
    rounds.push_back(std::move(jr));
  }
  manifest["rounds"] = std::move(rounds);
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  check(out.good(), "save_ensemble: cannot write manifest in '" + dir + "'");
  out << manifest.dump(2) << "\n";
  check(out.good(), "save_ensemble: manifest write failed");
}

Ensemble load_ensemble(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  check(in.good(), "load_ensemble: cannot open manifest in '" + dir + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw Error("load_ensemble: bad manifest: " + std::string(e.what()));
  }
  check(manifest.value("format", "") == "fgboost-ensemble",
        "load_ensemble: not an ensemble manifest");
  Ensemble ensemble(manifest.at("classes").get<int>(),
                    manifest.at("nu").get<double>(),
                    boosting::risk_kind_from_string(
                        manifest.at("risk").get<std::string>()));
  for (const auto& jr : manifest.at("rounds")) {
    boosting::EnsembleRound round;
    round.alpha = jr.at("alpha").get<double>();
    round.view = view_from_json(jr.at("view"));
    const ParamStore loaded =
        load_checkpoint((fs::path(dir) / jr.at("params").get<std::string>()).string());
    const std::string family = jr.at("family").get<std::string>();
    const json& arch = jr.at("arch");
    if (family == "cnn") {
      CnnConfig c;
      c.in_channels = arch.at("in_channels").get<int>();
      c.channels = arch.at("channels").get<std::vector<int>>();
      c.kernel = arch.at("kernel").get<int>();
      c.stride = arch.at("stride").get<int>();
      c.padding = arch.at("padding").get<int>();
      c.classes = arch.at("classes").get<int>();
      auto learner = std::make_shared<CnnWeakLearner>(CnnWeakLearner::fresh(
          c, arch.at("grid_h").get<std::size_t>(),
          arch.at("grid_w").get<std::size_t>(), 0));
      for (std::size_t i = 0; i < learner->params().size(); ++i)
        learner->params().copy_values_from(loaded, learner->params().name_at(i));
      round.model = learner;
    } else if (family == "transformer") {
      TransformerConfig c;
      c.layers = arch.at("layers").get<int>();
      c.heads = arch.at("heads").get<int>();
      c.d_model = arch.at("d_model").get<int>();
      c.ffn_hidden = arch.at("ffn_hidden").get<int>();
      c.vocab_size = arch.at("vocab_size").get<int>();
      c.max_len = arch.at("max_len").get<int>();
      c.classes = arch.at("classes").get<int>();
      auto learner = std::make_shared<TransformerWeakLearner>(
          TransformerWeakLearner::fresh(c, 0));
      for (std::size_t i = 0; i < learner->params().size(); ++i)
        learner->params().copy_values_from(loaded, learner->params().name_at(i));
      round.model = learner;
    } else {
      throw Error("load_ensemble: unknown learner family '" + family + "'");
    }
    ensemble.append(std::move(round));
  }
  return ensemble;
}

std::string describe_ensemble(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  check(in.good(), "describe_ensemble: cannot open manifest in '" + dir + "'");
  json manifest;
  in >> manifest;
  std::ostringstream out;
  out << "ensemble: classes=" << manifest.at("classes").get<int>()
      << " nu=" << manifest.at("nu").get<double>() << " risk="
      << manifest.at("risk").get<std::string>() << " rounds="
      << manifest.at("rounds").size() << "\n";
  std::size_t t = 0;
  for (const auto& jr : manifest.at("rounds")) {
    out << "  round " << t++ << ": family=" << jr.at("family").get<std::string>()
        << " alpha=" << jr.at("alpha").get<double>();
    const auto& view = jr.at("view");
    const std::string kind = view.at("kind").get<std::string>();
    out << " view=" << kind;
    if (kind == "subgrid")
      out << " (" << view.at("rows").size() << "x" << view.at("cols").size()
          << ")";
    else if (kind == "vocab")
      out << " (" << view.at("ids").size() << " ids)";
    out << "\n";
  }
  return out.str();
}

}  // namespace fgb::harness
