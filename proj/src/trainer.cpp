#include "opental/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "opental/error.hpp"
#include "opental/rng.hpp"

namespace opental::model {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using synthdata::Sequence;

Adam::Adam(std::span<const Parameter> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (const Parameter& p : params) {
    m_.emplace_back(p.value.shape(), 0.0);
    v_.emplace_back(p.value.shape(), 0.0);
  }
}

void Adam::step(std::span<Parameter> params) {
  if (params.size() != m_.size()) throw std::invalid_argument("Adam::step: parameter count");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].value.values();
    auto g = params[k].grad.values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

TrainResult train(const DetectorConfig& config, const synthdata::Dataset& data,
                  const EpochCallback& on_epoch) {
  if (data.train.empty()) throw InputError("train: no training sequences");
  const int k = data.spec.known_classes;
  Detector det(config, k, data.spec.channels);
  det.initialize(config.seed);
  Adam adam(det.parameters(), config.learning_rate);

  const auto n = data.train.size();
  const auto bs = static_cast<std::size_t>(config.batch_sequences);
  const long per_epoch = static_cast<long>((n + bs - 1) / bs);
  evidential::MibConfig mc{config.momentum, static_cast<std::size_t>(config.bins),
                           per_epoch * config.warmup_epochs};
  evidential::MibState mib_coarse(mc), mib_refine(mc);

  Rng shuffle(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{det, {}};
  Detector& model = result.detector;
  long iteration = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t b = 0; b < n; b += bs, ++iteration) {
      std::vector<const Sequence*> batch;
      for (std::size_t i = b; i < std::min(n, b + bs); ++i) batch.push_back(&data.train[order[i]]);

      Tape tape;
      const std::vector<Var> vars = model.bind(tape);
      const ForwardPass pass = model.forward(tape, batch, vars);
      TrainTargets targets = build_targets(pass, batch, config);
      if (config.mib_active()) {
        const InfluenceBatch ic = stage_influence(pass.coarse_logits, pass.h_coarse, classification_rows(targets.coarse_labels, config));
        targets.coarse_weights = mib_coarse.update(ic.grad_norms, ic.influences, iteration);
        const InfluenceBatch ir = stage_influence(pass.refine_logits, pass.h_refine, classification_rows(targets.refine_labels, config));
        targets.refine_weights = mib_refine.update(ir.grad_norms, ir.influences, iteration);
      }
      const LossTerms terms = total_loss(pass, targets, config);
      const double total = terms.total.item();
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", iteration " << iteration
            << " (cls " << terms.classification << ", act " << terms.actionness << ", loc "
            << terms.localization << ", iouc " << terms.calibration << ")";
        throw DivergenceError(msg.str());
      }
      tape.backward(terms.total);
      auto& params = model.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) params[p].grad = tape.grad(vars[p]);
      adam.step(params);

      log.classification += terms.classification;
      log.actionness += terms.actionness;
      log.localization += terms.localization;
      log.calibration += terms.calibration;
      log.total += total;
    }
    const double nb = static_cast<double>(per_epoch);
    log.classification /= nb;
    log.actionness /= nb;
    log.localization /= nb;
    log.calibration /= nb;
    log.total /= nb;
    log.coarse_bins.assign(mib_coarse.bin_weights().begin(), mib_coarse.bin_weights().end());
    log.refine_bins.assign(mib_refine.bin_weights().begin(), mib_refine.bin_weights().end());
    if (on_epoch) on_epoch(log);
    result.log.push_back(std::move(log));
  }
  return result;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

void write_log_csv(std::span<const EpochLog> log, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "epoch,classification,actionness,localization,calibration,total\n";
  for (const EpochLog& e : log) {
    out << e.epoch << ',' << e.classification << ',' << e.actionness << ',' << e.localization
        << ',' << e.calibration << ',' << e.total << '\n';
  }
}

void write_bins_csv(std::span<const EpochLog> log, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "epoch,stage,bin,weight\n";
  for (const EpochLog& e : log) {
    for (std::size_t m = 0; m < e.coarse_bins.size(); ++m) {
      out << e.epoch << ",coarse," << m << ',' << e.coarse_bins[m] << '\n';
    }
    for (std::size_t m = 0; m < e.refine_bins.size(); ++m) {
      out << e.epoch << ",refined," << m << ',' << e.refine_bins[m] << '\n';
    }
  }
}

double closed_set_frame_accuracy(const Detector& det, std::span<const Sequence> seqs) {
  long hits = 0, total = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : hits, total)
  for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(seqs.size()); ++s) {
    const Sequence& seq = seqs[static_cast<std::size_t>(s)];
    const auto out = det.predict(seq);
    for (const auto& ann : seq.annotations) {
      if (ann.label < 1 || ann.label > det.num_classes()) continue;
      const auto lo = static_cast<std::size_t>(std::max(0.0, std::ceil(ann.interval.start - 0.5)));
      for (std::size_t t = lo; t < out.size() && static_cast<double>(t) + 0.5 <= ann.interval.end; ++t) {
        const auto& p = out[t].expected_prob;
        const auto arg = std::max_element(p.begin(), p.end()) - p.begin();
        hits += (arg + 1 == ann.label) ? 1 : 0;
        total += 1;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace opental::model
