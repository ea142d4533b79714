#pragma once

#include <algorithm>
#include <cmath>

#include "prag/trainer.hpp"
#include "support.hpp"

namespace prag::testing {

struct GradCheckResult {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Analytic adapter gradients vs central differences on an fp64 model with
// every factor (A and B) randomized, so both factor kinds get signal.
inline GradCheckResult adapter_grad_check(const ModelConfig& config, int rank, std::size_t coords,
                                          int seq_tokens, std::uint64_t seed) {
  const auto base32 = init_params(config, seed);
  AdapterConfig ac;
  ac.rank = rank;
  const auto adapter = random_adapter(ac, base32, DocId{1}, derive_seed(seed, 1), 0.2);
  const auto base = base32.cast<double>();
  LowRankDelta<double> delta;
  delta.scale = static_cast<double>(ac.scale());
  for (const auto& l : adapter.layers) {
    delta.layers.push_back({l.a_up.cast<double>(), l.b_up.cast<double>(), l.a_down.cast<double>(),
                            l.b_down.cast<double>()});
  }
  Rng rng(derive_seed(seed, 2));
  std::string text;
  for (int i = 0; i < seq_tokens - 1; ++i) text += static_cast<char>('a' + rng.below(26));
  TrainingSequence seq;
  seq.tokens.push_back(text::kBos);
  for (unsigned char c : text) seq.tokens.push_back(c);
  seq.mask.assign(seq.tokens.size(), 1);
  seq.mask[0] = 0;

  std::vector<LowRankFactors<double>> grads(delta.layers.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& f = delta.layers[i];
    grads[i] = {Mat<double>::Zero(f.a_up.rows(), f.a_up.cols()), Mat<double>::Zero(f.b_up.rows(), f.b_up.cols()),
                Mat<double>::Zero(f.a_down.rows(), f.a_down.cols()),
                Mat<double>::Zero(f.b_down.rows(), f.b_down.cols())};
  }
  sequence_loss<double>(base, delta, seq, &grads);
  const auto sample = sample_coordinates(delta, coords, derive_seed(seed, 3));
  const auto numeric = finite_diff_grad(base, delta, seq, sample, 1e-5);

  GradCheckResult r;
  r.coordinates = sample.size();
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double a = factor_element(grads, sample[i]);
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-7});
    if (std::abs(a - n) / denom > r.max_rel_error) {
      r.max_rel_error = std::abs(a - n) / denom;
      r.worst_analytic = a;
      r.worst_numeric = n;
    }
    r.max_abs_grad = std::max(r.max_abs_grad, std::abs(a));
  }
  return r;
}

}  // namespace prag::testing
