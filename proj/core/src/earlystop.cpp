#include "grades_lab/earlystop.hpp"

#include <algorithm>
#include <cmath>

#include "grades_lab/grades.hpp"

namespace grades_lab {

void EsConfig::validate() const {
  if (!(interval_fraction > 0.0 && interval_fraction <= 1.0)) {
    throw ConfigError("es.interval_fraction must lie in (0, 1]");
  }
  if (patience == 0) throw ConfigError("es.patience must be >= 1");
  if (!(min_delta >= 0.0) || !std::isfinite(min_delta)) {
    throw ConfigError("es.min_delta must be finite and >= 0");
  }
}

std::size_t EsConfig::interval(std::size_t total_steps) const {
  return std::max<std::size_t>(1, ceil_fraction(interval_fraction, total_steps));
}

EsDecision es_check(EsState& state, std::size_t step, double val_loss, const EsConfig& cfg) {
  if (!std::isfinite(val_loss)) throw NumericalError("es_check: non-finite validation loss");
  state.history.emplace_back(step, val_loss);
  if (val_loss < state.best_val_loss - cfg.min_delta) {
    state.best_val_loss = val_loss;
    state.best_step = step;
    state.checks_since_improvement = 0;
  } else {
    ++state.checks_since_improvement;
  }
  return state.checks_since_improvement >= cfg.patience ? EsDecision::Stop : EsDecision::Continue;
}

template <std::floating_point T>
double validation_loss(const ModelParams<T>& params, std::span<const Sequence> val_set,
                       flops::CostLedger* ledger, const flops::CostModel* cost, std::size_t step) {
  if (val_set.empty()) throw InvalidInput("validation_loss: empty validation set");
  double total = 0.0;
  std::vector<std::size_t> lengths;
  lengths.reserve(val_set.size());
  for (const auto& seq : val_set) {
    total += sequence_loss(params, seq.tokens, seq.targets);
    lengths.push_back(seq.tokens.size());
  }
  if (ledger != nullptr && cost != nullptr) flops::charge_validation(*ledger, *cost, lengths, step);
  return total / static_cast<double>(val_set.size());
}

template double validation_loss<float>(const ModelParams<float>&, std::span<const Sequence>,
                                       flops::CostLedger*, const flops::CostModel*, std::size_t);
template double validation_loss<double>(const ModelParams<double>&, std::span<const Sequence>,
                                        flops::CostLedger*, const flops::CostModel*, std::size_t);

}  // namespace grades_lab
