#include "opental/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "opental/error.hpp"
#include "opental/rng.hpp"

namespace opental::synthdata {

using diff::Shape;
using diff::Tensor;
using json = nlohmann::json;

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

void SplitSpec::validate() const {
  if (known_classes < 2) throw InputError("spec: known_classes must be >= 2");
  if (unknown_classes < 0) throw InputError("spec: unknown_classes must be >= 0");
  if (train_sequences < 0 || test_sequences < 0) throw InputError("spec: negative sequence count");
  if (length < 1 || channels < 1) throw InputError("spec: length and channels must be >= 1");
  if (!(snr > 0.0)) throw InputError("spec: snr must be positive");
  if (!(min_action_fraction > 0.0 && min_action_fraction <= max_action_fraction &&
        max_action_fraction <= 1.0)) {
    throw InputError("spec: action fractions must satisfy 0 < min <= max <= 1");
  }
  if (max_actions < 1) throw InputError("spec: max_actions must be >= 1");
  if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) {
    throw InputError("spec: distractor_rate outside [0, 1]");
  }
  if (distractor_rate > 0.0 && unknown_classes == 0) {
    throw InputError("spec: distractors need unknown classes");
  }
  if (!(max_signature_dot > -1.0 && max_signature_dot < 1.0)) {
    throw InputError("spec: max_signature_dot outside (-1, 1)");
  }
}

KvConfig SplitSpec::to_config() const {
  KvConfig c;
  c.set_int("seed", static_cast<long long>(seed));
  c.set_int("known_classes", known_classes);
  c.set_int("unknown_classes", unknown_classes);
  c.set_int("train_sequences", train_sequences);
  c.set_int("test_sequences", test_sequences);
  c.set_int("length", length);
  c.set_int("channels", channels);
  c.set_double("snr", snr);
  c.set_double("min_action_fraction", min_action_fraction);
  c.set_double("max_action_fraction", max_action_fraction);
  c.set_int("max_actions", max_actions);
  c.set_double("distractor_rate", distractor_rate);
  c.set_double("max_signature_dot", max_signature_dot);
  return c;
}

SplitSpec SplitSpec::from_config(const KvConfig& c) {
  SplitSpec s;
  s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(s.seed)));
  s.known_classes = static_cast<int>(c.get_int("known_classes", s.known_classes));
  s.unknown_classes = static_cast<int>(c.get_int("unknown_classes", s.unknown_classes));
  s.train_sequences = static_cast<int>(c.get_int("train_sequences", s.train_sequences));
  s.test_sequences = static_cast<int>(c.get_int("test_sequences", s.test_sequences));
  s.length = static_cast<int>(c.get_int("length", s.length));
  s.channels = static_cast<int>(c.get_int("channels", s.channels));
  s.snr = c.get_double("snr", s.snr);
  s.min_action_fraction = c.get_double("min_action_fraction", s.min_action_fraction);
  s.max_action_fraction = c.get_double("max_action_fraction", s.max_action_fraction);
  s.max_actions = static_cast<int>(c.get_int("max_actions", s.max_actions));
  s.distractor_rate = c.get_double("distractor_rate", s.distractor_rate);
  s.max_signature_dot = c.get_double("max_signature_dot", s.max_signature_dot);
  s.validate();
  return s;
}

std::map<int, int> Dataset::class_histogram(Split split) const {
  std::map<int, int> h;
  for (const Sequence& s : split == Split::kTrain ? train : test) {
    for (const Annotation& a : s.annotations) ++h[a.label];
  }
  return h;
}

namespace {

std::vector<std::vector<double>> make_signatures(const SplitSpec& spec) {
  Rng rng(derive_seed(spec.seed, "signatures"));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<std::size_t>(spec.channels);
  std::vector<std::vector<double>> out;
  constexpr int kMaxTries = 100000;
  for (int c = 0; c < spec.total_classes(); ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      std::vector<double> v(d);
      double norm = 0.0;
      for (double& x : v) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
      placed = std::all_of(out.begin(), out.end(), [&](const std::vector<double>& o) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += v[i] * o[i];
        return dot < spec.max_signature_dot;
      });
      if (placed) out.push_back(std::move(v));
    }
    if (!placed) throw InputError("spec: cannot place class signatures with the requested dot bound");
  }
  return out;
}

struct Segment {
  int label;
  bool annotated;
};

// Draws non-overlapping integer-aligned intervals for the given segments.
std::vector<Interval> place_segments(std::size_t count, const SplitSpec& spec, Rng& rng) {
  const int t = spec.length;
  const int lo = std::max(1, static_cast<int>(std::round(spec.min_action_fraction * t)));
  const int hi = std::max(lo, static_cast<int>(std::round(spec.max_action_fraction * t)));
  if (static_cast<long long>(count) * lo > t) {
    throw InputError("spec: " + std::to_string(count) + " actions of length >= " +
                     std::to_string(lo) + " cannot fit in length " + std::to_string(t));
  }
  std::uniform_int_distribution<int> len_dist(lo, hi);
  constexpr int kLayoutTries = 200;
  constexpr int kPlaceTries = 200;
  for (int layout = 0; layout < kLayoutTries; ++layout) {
    std::vector<Interval> placed;
    bool ok = true;
    for (std::size_t k = 0; k < count && ok; ++k) {
      const int len = len_dist(rng);
      if (len > t) {
        ok = false;
        break;
      }
      std::uniform_int_distribution<int> start_dist(0, t - len);
      bool found = false;
      for (int attempt = 0; attempt < kPlaceTries; ++attempt) {
        const double s = start_dist(rng);
        const Interval cand{s, s + len};
        const bool overlaps = std::any_of(placed.begin(), placed.end(), [&](const Interval& p) {
          return cand.start < p.end && p.start < cand.end;
        });
        if (!overlaps) {
          placed.push_back(cand);
          found = true;
          break;
        }
      }
      ok = found;
    }
    if (ok) return placed;
  }
  throw InputError("spec: could not pack " + std::to_string(count) +
                   " non-overlapping actions into length " + std::to_string(t));
}

Sequence render(int id, Split split, const std::vector<Segment>& segments, const SplitSpec& spec,
                const std::vector<std::vector<double>>& signatures, std::uint64_t seed) {
  Rng rng(seed);
  const auto t = static_cast<std::size_t>(spec.length);
  const auto d = static_cast<std::size_t>(spec.channels);
  const std::vector<Interval> where = place_segments(segments.size(), spec, rng);

  Sequence seq;
  seq.id = id;
  seq.split = split;
  seq.features = Tensor(Shape{t, d});
  const double sigma = 1.0 / std::sqrt(static_cast<double>(d) * spec.snr);
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& x : seq.features.values()) x = noise(rng);
  }

  std::uniform_real_distribution<double> gain(0.8, 1.2);
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const Interval& iv = where[k];
    const double a = gain(rng);
    const std::vector<double>& sig = signatures[static_cast<std::size_t>(segments[k].label - 1)];
    for (auto f = static_cast<std::size_t>(iv.start); f < static_cast<std::size_t>(iv.end); ++f) {
      for (std::size_t c = 0; c < d; ++c) seq.features.at(f, c) += a * sig[c];
    }
    Annotation ann{iv, segments[k].label};
    (segments[k].annotated ? seq.annotations : seq.distractors).push_back(ann);
  }
  auto by_start = [](const Annotation& a, const Annotation& b) {
    return a.interval.start < b.interval.start;
  };
  std::sort(seq.annotations.begin(), seq.annotations.end(), by_start);
  std::sort(seq.distractors.begin(), seq.distractors.end(), by_start);
  return seq;
}

// Class plan for one split. Classes are dealt round-robin so that per-class
// counts differ by at most one.
std::vector<std::vector<Segment>> plan_split(Split split, int count, const SplitSpec& spec,
                                             std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> n_dist(1, spec.max_actions);
  std::vector<std::vector<Segment>> plan(static_cast<std::size_t>(count));
  int next_known = 0;
  int next_unknown = 0;
  auto known = [&] { return 1 + (next_known++ % spec.known_classes); };
  auto unknown = [&] { return spec.known_classes + 1 + (next_unknown++ % spec.unknown_classes); };
  for (int i = 0; i < count; ++i) {
    auto& segs = plan[static_cast<std::size_t>(i)];
    const int n = n_dist(rng);
    if (split == Split::kTest && spec.unknown_classes > 0) {
      segs.push_back({unknown(), true});
      for (int k = 1; k < n; ++k) segs.push_back({known(), true});
    } else {
      for (int k = 0; k < n; ++k) segs.push_back({known(), true});
      const double rate = spec.distractor_rate;
      const bool distract = std::floor((i + 1) * rate) > std::floor(i * rate);
      if (split == Split::kTrain && distract) segs.push_back({unknown(), false});
    }
  }
  return plan;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

Dataset generate(const SplitSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  data.signatures = make_signatures(spec);
  const std::uint64_t data_seed = derive_seed(spec.seed, "data");

  for (Split split : {Split::kTrain, Split::kTest}) {
    const int count = split == Split::kTrain ? spec.train_sequences : spec.test_sequences;
    const std::uint64_t split_seed = derive_seed(data_seed, to_string(split));
    const auto plan = plan_split(split, count, spec, derive_seed(split_seed, "plan"));
    const std::uint64_t render_seed = derive_seed(split_seed, "render");
    const int id_base = split == Split::kTrain ? 0 : spec.train_sequences;
    std::vector<Sequence> out(static_cast<std::size_t>(count));
    std::string failure;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
      try {
        out[static_cast<std::size_t>(i)] =
            render(id_base + i, split, plan[static_cast<std::size_t>(i)], spec, data.signatures,
                   derive_seed(render_seed, static_cast<std::uint64_t>(i)));
      } catch (const InputError& e) {
#pragma omp critical
        failure = e.what();
      }
    }
    if (!failure.empty()) throw InputError(failure);
    (split == Split::kTrain ? data.train : data.test) = std::move(out);
  }
  return data;
}

void save(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
  data.spec.to_config().save(dir / "spec.toml");

  std::ofstream bin(dir / "sequences.bin", std::ios::binary);
  std::ofstream ann(dir / "annotations.jsonl", std::ios::binary);
  if (!bin || !ann) throw InputError("cannot write dataset files in " + dir.string());
  bin.write(kSequenceMagic, 8);
  write_u32(bin, static_cast<std::uint32_t>(data.spec.length));
  write_u32(bin, static_cast<std::uint32_t>(data.spec.channels));
  for (const auto* split : {&data.train, &data.test}) {
    for (const Sequence& s : *split) {
      for (double v : s.features.values()) write_f64(bin, v);
      json row;
      row["id"] = s.id;
      row["split"] = to_string(s.split);
      json list = json::array();
      for (const Annotation& a : s.annotations) {
        list.push_back({{"start", a.interval.start}, {"end", a.interval.end}, {"class", a.label}});
      }
      row["annotations"] = std::move(list);
      ann << row.dump() << '\n';
    }
  }
}

Dataset load(const std::filesystem::path& dir) {
  for (const char* name : {"spec.toml", "sequences.bin", "annotations.jsonl"}) {
    if (!std::filesystem::exists(dir / name)) {
      throw InputError("dataset file missing: " + (dir / name).string());
    }
  }
  Dataset data;
  data.spec = SplitSpec::from_config(KvConfig::load(dir / "spec.toml"));
  data.signatures = make_signatures(data.spec);

  std::ifstream bin(dir / "sequences.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kSequenceMagic, 8) != 0) {
    throw FormatError("sequences.bin: bad magic");
  }
  const std::size_t t = read_u32(bytes.data() + 8);
  const std::size_t d = read_u32(bytes.data() + 12);
  if (t != static_cast<std::size_t>(data.spec.length) ||
      d != static_cast<std::size_t>(data.spec.channels)) {
    throw FormatError("sequences.bin: header T/D disagree with spec.toml");
  }
  const std::size_t per = t * d * 8;
  if ((bytes.size() - 16) % per != 0) throw FormatError("sequences.bin: truncated payload");
  const std::size_t n_seq = (bytes.size() - 16) / per;

  std::ifstream ann(dir / "annotations.jsonl");
  std::string line;
  std::size_t k = 0;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    if (k >= n_seq) throw FormatError("annotations.jsonl has more rows than sequences.bin");
    Sequence s;
    try {
      const json row = json::parse(line);
      s.id = row.at("id").get<int>();
      const std::string split = row.at("split").get<std::string>();
      if (split != "train" && split != "test") throw FormatError("unknown split " + split);
      s.split = split == "train" ? Split::kTrain : Split::kTest;
      for (const json& a : row.at("annotations")) {
        s.annotations.push_back(
            {{a.at("start").get<double>(), a.at("end").get<double>()}, a.at("class").get<int>()});
      }
    } catch (const json::exception& e) {
      throw FormatError(std::string("annotations.jsonl: ") + e.what());
    }
    s.features = Tensor(Shape{t, d});
    const unsigned char* p = bytes.data() + 16 + k * per;
    for (std::size_t i = 0; i < t * d; ++i) s.features[i] = read_f64(p + 8 * i);
    (s.split == Split::kTrain ? data.train : data.test).push_back(std::move(s));
    ++k;
  }
  if (k != n_seq) throw FormatError("annotations.jsonl has fewer rows than sequences.bin");
  return data;
}

std::vector<ProposalMatch> match_proposals(std::span<const Interval> proposals,
                                           std::span<const Annotation> annotations,
                                           double tiou_threshold) {
  if (!(tiou_threshold > 0.0 && tiou_threshold < 1.0)) {
    throw std::invalid_argument("match_proposals: threshold outside (0, 1)");
  }
  std::vector<ProposalMatch> out(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const Interval& p = proposals[i];
    if (!p.valid()) continue;
    ProposalMatch& m = out[i];
    for (std::size_t j = 0; j < annotations.size(); ++j) {
      const double iou = localization::tiou(p, annotations[j].interval);
      const bool better =
          m.annotation < 0 || iou > m.iou ||
          (iou == m.iou &&
           annotations[j].interval.start < annotations[static_cast<std::size_t>(m.annotation)].interval.start);
      if (better) {
        m.annotation = static_cast<int>(j);
        m.iou = iou;
      }
    }
    if (m.annotation >= 0 && m.iou > tiou_threshold) {
      const Annotation& a = annotations[static_cast<std::size_t>(m.annotation)];
      m.label = a.label;
      m.offsets = localization::offsets_between(p, a.interval);
    }
  }
  return out;
}

}  // namespace opental::synthdata
