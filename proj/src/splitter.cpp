#include "ccd/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ccd/encoder.hpp"

namespace ccd {

std::size_t ReliableSet::known_count() const {
  return static_cast<std::size_t>(std::count(is_known.begin(), is_known.end(), true));
}

SplitResult nonparametric_split(std::span<const Vector> reps, const PrototypeBank& bank,
                                double epsilon) {
  if (reps.empty()) throw DegenerateInput("nonparametric_split: empty batch");
  if (bank.size() == 0) throw DegenerateInput("nonparametric_split: empty prototype bank");
  SplitResult out;
  out.reliable_mask.assign(reps.size(), false);
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto best = bank.nearest(reps[i]);
    if (best.similarity > epsilon) {
      out.known.push_back(i);
      out.known_labels.push_back(best.label);
    } else {
      out.novel.push_back(i);
    }
  }
  return out;
}

ReliableSet select_reliable(std::span<const Vector> reps, const PrototypeBank& bank,
                            double epsilon, double delta) {
  if (!(delta > 0.0)) throw Error("select_reliable: delta must be positive");
  ReliableSet out;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const double s = bank.nearest(reps[i]).similarity;
    if (s <= epsilon - delta) {
      out.indices.push_back(i);
      out.is_known.push_back(false);
    } else if (s >= epsilon + delta) {
      out.indices.push_back(i);
      out.is_known.push_back(true);
    }
  }
  const std::size_t known = out.known_count();
  const std::size_t novel = out.indices.size() - known;
  if (known < 2 || novel < 2) {
    throw InsufficientData("select_reliable: need at least 2 reliable samples per side, got " +
                           std::to_string(known) + " known and " + std::to_string(novel) +
                           " novel");
  }
  return out;
}

SplitResult parametric_split(std::span<const Vector> reps, const ReliableSet& reliable,
                             const PrototypeBank& bank, const SplitConfig& config, Rng& rng) {
  if (reliable.known_count() == 0 || reliable.novel_count() == 0) {
    throw InsufficientData("parametric_split: reliable set must cover both sides");
  }
  // The classifier sees unit-length inputs, matching the cosine geometry of
  // the preliminary split.
  std::vector<Vector> inputs;
  inputs.reserve(reps.size());
  for (const auto& r : reps) inputs.push_back(normalized(r));
  const std::size_t dim = reps.front().size();
  FeedForwardNet net = FeedForwardNet::mlp(dim, {config.mlp_hidden}, 1, rng, Activation::kSigmoid);
  AdamState adam = AdamState::for_size(net.param_count(), config.learning_rate);
  Vector grad(net.param_count());

  const double n_rel = static_cast<double>(reliable.indices.size());
  const double w_known =
      config.balance_classes ? 0.5 * n_rel / static_cast<double>(reliable.known_count()) : 1.0;
  const double w_novel =
      config.balance_classes ? 0.5 * n_rel / static_cast<double>(reliable.novel_count()) : 1.0;

  std::vector<std::size_t> order(reliable.indices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.mlp_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t k = order[b];
        auto trace = net.forward_trace(inputs[reliable.indices[k]]);
        const double p = std::clamp(trace.output()[0], 1e-12, 1.0 - 1e-12);
        const double y = reliable.is_known[k] ? 1.0 : 0.0;
        const double w = inv * (reliable.is_known[k] ? w_known : w_novel);
        loss -= w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        // d(BCE)/dp for a sigmoid output.
        const Vector upstream{w * (p - y) / (p * (1.0 - p))};
        net.backward(trace, upstream, grad);
      }
      if (!std::isfinite(loss) || !all_finite(grad)) {
        throw TrainingDiverged("parametric_split: loss became non-finite at epoch " +
                               std::to_string(epoch) + " (" +
                               std::to_string(reliable.known_count()) + " known / " +
                               std::to_string(reliable.novel_count()) + " novel reliable samples)");
      }
      adam_step(net, grad, adam);
    }
  }

  SplitResult out;
  out.reliable_mask.assign(reps.size(), false);
  for (std::size_t i : reliable.indices) out.reliable_mask[i] = true;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    if (net.forward(inputs[i])[0] >= 0.5) {
      out.known.push_back(i);
      out.known_labels.push_back(bank.nearest(reps[i]).label);
    } else {
      out.novel.push_back(i);
    }
  }
  return out;
}

SplitOutcome split_batch(std::span<const Vector> reps, const PrototypeBank& bank,
                         const SplitConfig& config, Rng& rng) {
  try {
    const ReliableSet reliable = select_reliable(reps, bank, config.epsilon, config.delta);
    return {parametric_split(reps, reliable, bank, config, rng), true};
  } catch (const InsufficientData&) {
    return {nonparametric_split(reps, bank, config.epsilon), false};
  }
}

}  // namespace ccd
