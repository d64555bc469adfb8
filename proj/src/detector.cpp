#include "opental/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "opental/actionness.hpp"
#include "opental/error.hpp"
#include "opental/rng.hpp"

namespace opental::model {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;
using synthdata::Sequence;

namespace {

constexpr double kLogitBound = 30.0;

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kOpenTal:
      return "opental";
    case Mode::kVanillaEdl:
      return "vanilla_edl";
    case Mode::kSoftmax:
      return "softmax_ce";
  }
  return "opental";
}

Mode mode_from_string(const std::string& s) {
  if (s == "opental") return Mode::kOpenTal;
  if (s == "vanilla_edl") return Mode::kVanillaEdl;
  if (s == "softmax_ce") return Mode::kSoftmax;
  throw InputError("unknown detector mode '" + s + "'");
}

void DetectorConfig::validate(int num_classes) const {
  if (window_radius < 1) throw InputError("model: window_radius must be >= 1");
  if (hidden < num_classes) throw InputError("model: hidden width must be >= number of classes");
  if (refine_hidden < 1 || boundary_width < 1) throw InputError("model: bad refine sizes");
  if (!(width_scale > 0.0 && init_half_width > 0.0)) throw InputError("model: widths must be positive");
  if (!(mu >= 0.0)) throw InputError("train: mu must be >= 0");
  if (!(learning_rate > 0.0)) throw InputError("train: learning_rate must be positive");
  if (epochs < 0 || batch_sequences < 1) throw InputError("train: bad epochs or batch size");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw InputError("train: epsilon outside [0, 1]");
  if (bins < 1) throw InputError("train: bins must be >= 1");
  if (warmup_epochs < 0) throw InputError("train: warmup_epochs must be >= 0");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("train: gamma outside [0, 1)");
  if (!(tiou_train > 0.0 && tiou_train < 1.0)) throw InputError("train: tiou_train outside (0, 1)");
}

KvConfig DetectorConfig::to_config() const {
  KvConfig c;
  c.set_int("model.window_radius", window_radius);
  c.set_int("model.hidden", hidden);
  c.set_int("model.refine_hidden", refine_hidden);
  c.set_int("model.boundary_width", boundary_width);
  c.set_double("model.width_scale", width_scale);
  c.set_double("model.init_half_width", init_half_width);
  c.set_string("model.mode", to_string(mode));
  c.set_bool("model.use_mib", use_mib);
  c.set_bool("model.use_actionness", use_actionness);
  c.set_bool("model.use_iouc", use_iouc);
  c.set_double("train.mu", mu);
  c.set_double("train.learning_rate", learning_rate);
  c.set_int("train.epochs", epochs);
  c.set_int("train.batch_sequences", batch_sequences);
  c.set_int("train.seed", static_cast<long long>(seed));
  c.set_double("train.epsilon", momentum);
  c.set_int("train.bins", bins);
  c.set_int("train.warmup_epochs", warmup_epochs);
  c.set_double("train.gamma", gamma);
  c.set_double("train.tiou_train", tiou_train);
  return c;
}

DetectorConfig DetectorConfig::from_config(const KvConfig& c) {
  DetectorConfig d;
  d.window_radius = static_cast<int>(c.get_int("model.window_radius", d.window_radius));
  d.hidden = static_cast<int>(c.get_int("model.hidden", d.hidden));
  d.refine_hidden = static_cast<int>(c.get_int("model.refine_hidden", d.refine_hidden));
  d.boundary_width = static_cast<int>(c.get_int("model.boundary_width", d.boundary_width));
  d.width_scale = c.get_double("model.width_scale", d.width_scale);
  d.init_half_width = c.get_double("model.init_half_width", d.init_half_width);
  d.mode = mode_from_string(c.get_string("model.mode", to_string(d.mode)));
  d.use_mib = c.get_bool("model.use_mib", d.use_mib);
  d.use_actionness = c.get_bool("model.use_actionness", d.use_actionness);
  d.use_iouc = c.get_bool("model.use_iouc", d.use_iouc);
  d.mu = c.get_double("train.mu", d.mu);
  d.learning_rate = c.get_double("train.learning_rate", d.learning_rate);
  d.epochs = static_cast<int>(c.get_int("train.epochs", d.epochs));
  d.batch_sequences = static_cast<int>(c.get_int("train.batch_sequences", d.batch_sequences));
  d.seed = static_cast<std::uint64_t>(c.get_int("train.seed", static_cast<long long>(d.seed)));
  d.momentum = c.get_double("train.epsilon", d.momentum);
  d.bins = static_cast<int>(c.get_int("train.bins", d.bins));
  d.warmup_epochs = static_cast<int>(c.get_int("train.warmup_epochs", d.warmup_epochs));
  d.gamma = c.get_double("train.gamma", d.gamma);
  d.tiou_train = c.get_double("train.tiou_train", d.tiou_train);
  return d;
}

Detector::Detector(DetectorConfig config, int num_classes, int channels)
    : config_(config), num_classes_(num_classes), channels_(channels) {
  if (num_classes < 1 || channels < 1) throw InputError("detector: bad class or channel count");
  config_.validate(num_classes);
  const auto in = static_cast<std::size_t>(input_width());
  const auto h = static_cast<std::size_t>(config_.hidden);
  const auto h2 = static_cast<std::size_t>(config_.refine_hidden);
  const auto heads = static_cast<std::size_t>(logit_channels() + 3);
  const auto ctx = static_cast<std::size_t>(5 * channels_);
  params_ = {
      {"coarse.w", Tensor(Shape{in, h}), {}},
      {"coarse.b", Tensor(Shape{h}), {}},
      {"coarse.head.w", Tensor(Shape{h, heads}), {}},
      {"coarse.head.b", Tensor(Shape{heads}), {}},
      {"refine.w", Tensor(Shape{h + ctx, h2}), {}},
      {"refine.b", Tensor(Shape{h2}), {}},
      {"refine.head.w", Tensor(Shape{h2, heads}), {}},
      {"refine.head.b", Tensor(Shape{heads}), {}},
  };
  zero_grad();
}

int Detector::logit_channels() const noexcept {
  return config_.background_class() ? num_classes_ + 1 : num_classes_;
}

Parameter& Detector::parameter(const std::string& name) {
  for (Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

const Parameter& Detector::parameter(const std::string& name) const {
  return const_cast<Detector*>(this)->parameter(name);
}

void Detector::initialize(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  for (Parameter& p : params_) {
    if (p.value.rank() == 2) {
      const double fan = static_cast<double>(p.value.dim(0) + p.value.dim(1));
      double limit = std::sqrt(6.0 / fan);
      if (p.name.find(".head.") != std::string::npos) limit *= 0.1;
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : p.value.values()) v = dist(rng);
    } else {
      p.value.fill(0.0);
    }
  }
  const double bias = inverse_softplus(config_.init_half_width / config_.width_scale);
  Parameter& hb = parameter("coarse.head.b");
  hb.value[0] = bias;
  hb.value[1] = bias;
}

void Detector::zero_grad() {
  for (Parameter& p : params_) p.grad = Tensor(p.value.shape(), 0.0);
}

Tensor Detector::window_features(std::span<const Sequence* const> seqs) const {
  std::size_t rows = 0;
  for (const Sequence* s : seqs) rows += s->length();
  const auto d = static_cast<std::size_t>(channels_);
  const auto r = static_cast<std::ptrdiff_t>(config_.window_radius);
  const auto width = static_cast<std::size_t>(input_width());
  Tensor x(Shape{rows, width}, 0.0);
  std::size_t row = 0;
  for (const Sequence* s : seqs) {
    if (s->channels() != d) throw FormatError("sequence channel count does not match the detector");
    const auto t_len = static_cast<std::ptrdiff_t>(s->length());
    const double* src = s->features.values().data();
    for (std::ptrdiff_t t = 0; t < t_len; ++t, ++row) {
      double* dst = x.values().data() + row * width;
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        const std::ptrdiff_t f = t + k;
        if (f < 0 || f >= t_len) continue;
        std::copy_n(src + static_cast<std::size_t>(f) * d, d,
                    dst + static_cast<std::size_t>(k + r) * d);
      }
    }
  }
  return x;
}

RefineContext Detector::refine_context(std::span<const Sequence* const> seqs,
                                       std::span<const Interval> coarse) const {
  const auto d = static_cast<std::size_t>(channels_);
  const long bw = config_.boundary_width;
  RefineContext ctx{Tensor(Shape{coarse.size(), 5 * d}, 0.0)};
  std::size_t row = 0;
  for (const Sequence* s : seqs) {
    const std::size_t t_len = s->length();
    // prefix[f*d + c] = sum of channel c over frames [0, f)
    std::vector<double> prefix((t_len + 1) * d, 0.0);
    for (std::size_t f = 0; f < t_len; ++f) {
      for (std::size_t c = 0; c < d; ++c) {
        prefix[(f + 1) * d + c] = prefix[f * d + c] + s->features.at(f, c);
      }
    }
    const long tl = static_cast<long>(t_len);
    auto segment_mean = [&](long a, long b, double* out) {
      a = std::clamp(a, 0L, tl);
      b = std::clamp(b, 0L, tl);
      if (b <= a) return;
      const double n = static_cast<double>(b - a);
      for (std::size_t c = 0; c < d; ++c) {
        out[c] = (prefix[static_cast<std::size_t>(b) * d + c] -
                  prefix[static_cast<std::size_t>(a) * d + c]) /
                 n;
      }
    };
    for (std::size_t t = 0; t < t_len; ++t, ++row) {
      if (row >= coarse.size()) throw std::invalid_argument("refine_context: too few intervals");
      const double lim = static_cast<double>(tl) + 1e6;
      const long a = std::lround(std::clamp(coarse[row].start, -lim, lim));
      const long b = std::lround(std::clamp(coarse[row].end, -lim, lim));
      double* out = ctx.features.values().data() + row * 5 * d;
      segment_mean(a - bw, a, out);
      segment_mean(a, std::min(a + bw, b), out + d);
      segment_mean(std::max(b - bw, a), b, out + 2 * d);
      segment_mean(b, b + bw, out + 3 * d);
      segment_mean(a, b, out + 4 * d);
    }
  }
  if (row != coarse.size()) throw std::invalid_argument("refine_context: too many intervals");
  return ctx;
}

std::vector<Var> Detector::bind(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const Parameter& p : params_) out.push_back(tape.variable(p.value));
  return out;
}

ForwardPass Detector::forward(Tape& tape, std::span<const Sequence* const> seqs,
                              std::span<const Var> params, const RefineContext* context) const {
  std::vector<Var> w;
  if (params.empty()) {
    for (const Parameter& p : params_) w.push_back(tape.constant(p.value));
  } else {
    if (params.size() != params_.size()) throw std::invalid_argument("forward: parameter count");
    w.assign(params.begin(), params.end());
  }
  ForwardPass pass;
  std::size_t rows = 0;
  std::vector<double> centers;
  for (const Sequence* s : seqs) {
    if (s->length() < 1) throw InputError("forward: empty sequence");
    pass.offsets.push_back(rows);
    for (std::size_t t = 0; t < s->length(); ++t) centers.push_back(static_cast<double>(t) + 0.5);
    rows += s->length();
  }
  pass.offsets.push_back(rows);
  const auto c = static_cast<std::size_t>(logit_channels());

  Var x = tape.constant(window_features(seqs));
  pass.h_coarse = diff::relu(diff::add_row(diff::matmul(x, w[0]), w[1]));
  Var oc = diff::add_row(diff::matmul(pass.h_coarse, w[2]), w[3]);
  Var widths = diff::softplus(diff::slice(oc, 1, 0, 2)) * config_.width_scale;
  Var center = tape.constant(Tensor(Shape{rows}, std::move(centers)));
  pass.coarse_start = center - diff::reshape(diff::slice(widths, 1, 0, 1), Shape{rows});
  pass.coarse_end = center + diff::reshape(diff::slice(widths, 1, 1, 2), Shape{rows});
  pass.coarse_logits = diff::clamp(diff::slice(oc, 1, 2, 2 + c), -kLogitBound, kLogitBound);
  pass.coarse_act = diff::sigmoid(diff::slice(oc, 1, 2 + c, 3 + c));

  pass.coarse.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    pass.coarse[i] = {pass.coarse_start.value()[i], pass.coarse_end.value()[i]};
  }

  RefineContext local;
  if (context == nullptr) {
    local = refine_context(seqs, pass.coarse);
    context = &local;
  }
  const Var parts[] = {pass.h_coarse, tape.constant(context->features)};
  Var joined = diff::concat(parts, 1);
  pass.h_refine = diff::relu(diff::add_row(diff::matmul(joined, w[4]), w[5]));
  Var orf = diff::add_row(diff::matmul(pass.h_refine, w[6]), w[7]);
  pass.refine_offsets = diff::slice(orf, 1, 0, 2);
  pass.refine_logits = diff::clamp(diff::slice(orf, 1, 2, 2 + c), -kLogitBound, kLogitBound);
  pass.refine_act = diff::sigmoid(diff::slice(orf, 1, 2 + c, 3 + c));

  pass.refined.resize(rows);
  const Tensor& off = pass.refine_offsets.value();
  for (std::size_t i = 0; i < rows; ++i) {
    pass.refined[i] = localization::recover_location(pass.coarse[i], {off.at(i, 0), off.at(i, 1)});
  }
  return pass;
}

std::vector<ProposalOutputs> Detector::predict(const Sequence& seq) const {
  Tape tape;
  const Sequence* one[] = {&seq};
  const ForwardPass pass = forward(tape, one);
  const std::size_t rows = seq.length();
  const Tensor& logits = pass.refine_logits.value();
  const Tensor& act = pass.refine_act.value();
  const auto c = static_cast<std::size_t>(logit_channels());
  std::vector<ProposalOutputs> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    ProposalOutputs& p = out[i];
    p.coarse = pass.coarse[i];
    p.refined = pass.refined[i].interval;
    p.refined_valid = pass.refined[i].valid;
    std::vector<double> z(c);
    for (std::size_t j = 0; j < c; ++j) z[j] = logits.at(i, j);
    if (config_.mode == Mode::kSoftmax) {
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (double& v : z) {
        v = std::exp(v - m);
        s += v;
      }
      p.expected_prob.assign(z.begin() + 1, z.end());
      for (double& v : p.expected_prob) v /= s;
      p.actionness = 1.0 - z[0] / s;
      p.uncertainty = 1.0 - *std::max_element(p.expected_prob.begin(), p.expected_prob.end());
    } else if (config_.background_class()) {
      const auto eo = evidential::EvidentialOutput::from_logits(z);
      p.expected_prob.assign(eo.expected_prob.begin() + 1, eo.expected_prob.end());
      p.uncertainty = eo.uncertainty;
      p.actionness = 1.0 - eo.expected_prob[0];
    } else {
      const auto eo = evidential::EvidentialOutput::from_logits(z);
      p.expected_prob = eo.expected_prob;
      p.uncertainty = eo.uncertainty;
      p.actionness = config_.actionness_active() ? act[i] : 1.0;
    }
  }
  return out;
}

TrainTargets build_targets(const ForwardPass& pass, std::span<const Sequence* const> seqs,
                           const DetectorConfig& config) {
  const std::size_t rows = pass.coarse.size();
  TrainTargets t;
  t.coarse_labels.assign(rows, 0);
  t.coarse_gt.assign(rows, Interval{});
  t.offset_targets.assign(rows, OffsetPair{});
  t.refine_labels.assign(rows, 0);
  t.iouc_weights.assign(rows, config.gamma);
  const localization::CalibrationParams cal{config.gamma};
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    const std::size_t lo = pass.offsets[k], hi = pass.offsets[k + 1];
    const auto& anns = seqs[k]->annotations;
    std::span<const Interval> coarse(pass.coarse.data() + lo, hi - lo);
    const auto cm = synthdata::match_proposals(coarse, anns, config.tiou_train);
    std::vector<Interval> refined(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      refined[i - lo] = pass.refined[i].valid ? pass.refined[i].interval : Interval{0.0, 0.0};
    }
    const auto rm = synthdata::match_proposals(refined, anns, config.tiou_train);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& m = cm[i - lo];
      t.coarse_labels[i] = m.label;
      if (m.label >= 1) {
        t.coarse_gt[i] = anns[static_cast<std::size_t>(m.annotation)].interval;
        t.offset_targets[i] = m.offsets;
      }
      t.iouc_weights[i] = std::max(cal.gamma, m.iou);
      t.refine_labels[i] = rm[i - lo].label;
    }
  }
  t.coarse_weights.assign(classification_rows(t.coarse_labels, config).rows.size(), 1.0);
  t.refine_weights.assign(classification_rows(t.refine_labels, config).rows.size(), 1.0);
  return t;
}

ClassRows classification_rows(std::span<const int> labels, const DetectorConfig& config) {
  ClassRows out;
  const bool all = config.background_class();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (all) {
      out.rows.push_back(i);
      out.classes.push_back(labels[i] + 1);
    } else if (labels[i] >= 1) {
      out.rows.push_back(i);
      out.classes.push_back(labels[i]);
    }
  }
  return out;
}

InfluenceBatch stage_influence(Var logits, Var hidden, const ClassRows& rows) {
  const Tensor& z = logits.value();
  const Tensor& h = hidden.value();
  const std::size_t k = z.dim(1), hw = h.dim(1);
  InfluenceBatch out;
  for (std::size_t r = 0; r < rows.rows.size(); ++r) {
    const std::size_t i = rows.rows[r];
    const auto eo = evidential::EvidentialOutput::from_logits(
        std::span<const double>(z.values().data() + i * k, k));
    const std::vector<double> g = evidential::edl_grad_closed_form(eo, rows.classes[r]);
    double gn = 0.0;
    for (double v : g) gn += std::abs(v);
    out.grad_norms.push_back(std::min(gn, 1.0));
    out.influences.push_back(
        evidential::influence_value(g, std::span<const double>(h.values().data() + i * hw, hw)));
  }
  return out;
}

namespace {

Var edl_stage_loss(Var logits, std::span<const int> labels, std::span<const double> weights,
                   const DetectorConfig& config) {
  const ClassRows cr = classification_rows(labels, config);
  if (cr.rows.empty()) return logits.tape().constant(Tensor::scalar(0.0));
  if (weights.size() != cr.rows.size()) throw std::invalid_argument("MIB weight count mismatch");
  Var per = evidential::edl_loss_per_sample(diff::gather_rows(logits, cr.rows), cr.classes);
  return evidential::weighted_mean(per, weights);
}

Var softmax_stage_loss(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  const std::size_t n = z.dim(0), c = z.dim(1);
  Tensor onehot(Shape{n, c}, 0.0);
  for (std::size_t i = 0; i < n; ++i) onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  Var picked = diff::sum(logits * logits.tape().constant(std::move(onehot)), 1);
  return diff::mean(diff::logsumexp(logits, 1) - picked);
}

}  // namespace

LossTerms total_loss(const ForwardPass& pass, const TrainTargets& targets,
                     const DetectorConfig& config) {
  LossTerms terms;
  Var cls;
  if (config.mode == Mode::kSoftmax) {
    cls = (softmax_stage_loss(pass.coarse_logits, targets.coarse_labels) +
           softmax_stage_loss(pass.refine_logits, targets.refine_labels)) /
          2.0;
  } else {
    cls = (edl_stage_loss(pass.coarse_logits, targets.coarse_labels, targets.coarse_weights, config) +
           edl_stage_loss(pass.refine_logits, targets.refine_labels, targets.refine_weights, config)) /
          2.0;
  }
  terms.classification = cls.item();
  Var total = cls * config.mu;

  if (config.actionness_active()) {
    Var act = (actionness::actionness_loss(pass.coarse_act, targets.coarse_labels) +
               actionness::actionness_loss(pass.refine_act, targets.refine_labels)) /
              2.0;
    terms.actionness = act.item();
    total = total + act;
  }

  Var loc = (localization::coarse_loss(pass.coarse_start, pass.coarse_end, targets.coarse_gt,
                                       targets.coarse_labels) +
             localization::refine_loss(pass.refine_offsets, targets.offset_targets,
                                       targets.coarse_labels)) /
            2.0;
  terms.localization = loc.item();
  total = total + loc;

  if (config.iouc_active()) {
    Var strength = diff::sum(diff::exp(pass.refine_logits) + 1.0, 1);
    Var u = static_cast<double>(pass.refine_logits.value().dim(1)) / strength;
    Var cal = localization::iouc_loss(u, targets.iouc_weights);
    terms.calibration = cal.item();
    total = total + cal;
  }
  terms.total = total;
  return terms;
}

}  // namespace opental::model
