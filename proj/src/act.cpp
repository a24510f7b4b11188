#include "aio2/act.hpp"

#include <algorithm>
#include <numeric>

#include "aio2/errors.hpp"

namespace aio2 {

void ActConfig::validate() const {
  if (windows.empty()) throw ConfigError("act: windows must be nonempty");
  for (int w : windows) {
    if (w < 2) throw ConfigError("act: every window must be >= 2");
  }
  if (buffer < 1) throw ConfigError("act: buffer must be >= 1");
  if (checkpoint_stride < 1) throw ConfigError("act: checkpoint_stride must be >= 1");
}

int default_buffer(const std::vector<int>& windows) {
  if (windows.empty()) throw ConfigError("act: windows must be nonempty");
  const long sum = std::accumulate(windows.begin(), windows.end(), 0L);
  return static_cast<int>(sum / static_cast<long>(windows.size()));
}

int aggregate_transition(const std::vector<int>& candidates) {
  if (candidates.empty()) {
    throw ContractError("aggregate_transition: no candidates");
  }
  const long sum = std::accumulate(candidates.begin(), candidates.end(), 0L);
  return static_cast<int>(sum / static_cast<long>(candidates.size()));
}

EarlyEnd detect_early_end(std::span<const double> prefix) {
  const int transition = static_cast<int>(prefix.size());
  if (transition < 5) {
    throw InsufficientHistoryError(
        "detect_early_end: need >= 5 epochs, got " + std::to_string(transition));
  }
  EarlyEnd out;
  out.sigma = (prefix.back() - prefix.front()) / static_cast<double>(transition);
  out.fit = fit_saturating_exp(prefix);
  int count = 0;
  for (int i = 1; i <= transition; ++i) {
    count += exp_gradient(out.fit, static_cast<double>(i)) > out.sigma;
  }
  out.epoch = std::max(count, 1);
  return out;
}

ResumePoint resume_epoch(int early_end, int transition, int checkpoint_stride) {
  if (early_end > transition) {
    throw ContractError("resume_epoch: early end after transition end");
  }
  if (checkpoint_stride < 1) {
    throw ConfigError("resume_epoch: stride must be >= 1");
  }
  ResumePoint rp;
  rp.target = (early_end + transition) / 2;
  const int m = rp.target / checkpoint_stride;
  const int rem = rp.target - m * checkpoint_stride;
  rp.checkpoint = 2 * rem <= checkpoint_stride ? m * checkpoint_stride
                                               : (m + 1) * checkpoint_stride;
  return rp;
}

ActState::ActState(ActConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  slopes_.resize(cfg_.windows.size());
  candidates_.resize(cfg_.windows.size());
}

std::optional<ActDecision> ActState::observe_epoch(
    std::span<const double> series) {
  if (decision_) return std::nullopt;  // already triggered; nothing to do
  if (static_cast<int>(series.size()) != epochs_seen_ + 1) {
    throw ContractError("act: observe_epoch must extend the series by one");
  }
  epochs_seen_ = static_cast<int>(series.size());
  const int n = epochs_seen_;

  for (std::size_t wi = 0; wi < cfg_.windows.size(); ++wi) {
    const int w = cfg_.windows[wi];
    if (n >= w + 1) slopes_[wi].push_back(window_slope(series, n, w));
    if (candidates_[wi]) continue;
    // Epoch j becomes checkable once slopes through j+z exist, so the only
    // newly decidable candidate this epoch is j = n - z.
    const int j = n - cfg_.buffer;
    if (j < w + 1) continue;
    const auto& ks = slopes_[wi];
    const double kj = ks[static_cast<std::size_t>(j - w - 1)];
    bool is_min = true;
    for (int e = j + 1; e <= j + cfg_.buffer && is_min; ++e) {
      is_min = kj <= ks[static_cast<std::size_t>(e - w - 1)];
    }
    if (is_min) candidates_[wi] = j;
  }

  // The early-end fit needs at least 5 points; tiny windows can confirm
  // sooner, so hold the trigger until enough history exists.
  const bool all_confirmed =
      std::all_of(candidates_.begin(), candidates_.end(),
                  [](const std::optional<int>& c) { return c.has_value(); });
  if (!all_confirmed || series.size() < 5) return std::nullopt;

  ActDecision d;
  for (const auto& c : candidates_) d.transition_per_window.push_back(*c);
  d.transition_epoch = aggregate_transition(d.transition_per_window);
  const std::size_t fit_len = std::min(
      series.size(), static_cast<std::size_t>(std::max(d.transition_epoch, 5)));
  const EarlyEnd early = detect_early_end(series.first(fit_len));
  d.early_end_epoch = std::min(early.epoch, d.transition_epoch);
  d.sigma = early.sigma;
  d.fit = early.fit;
  const ResumePoint rp =
      resume_epoch(d.early_end_epoch, d.transition_epoch, cfg_.checkpoint_stride);
  d.resume_target = rp.target;
  d.checkpoint_epoch = rp.checkpoint;
  decision_ = d;
  return decision_;
}

std::optional<ActDecision> detect_act(const AccuracySeries& series,
                                      const ActConfig& config) {
  ActState state(config);
  for (std::size_t n = 1; n <= series.size(); ++n) {
    if (auto d = state.observe_epoch(std::span(series).first(n))) return d;
  }
  return std::nullopt;
}

nlohmann::json decision_to_json(const ActDecision& d) {
  return {{"I_t_per_window", d.transition_per_window},
          {"I_t", d.transition_epoch},
          {"I_e", d.early_end_epoch},
          {"I_r", d.resume_target},
          {"checkpoint_epoch", d.checkpoint_epoch},
          {"sigma", d.sigma},
          {"fit", fit_to_json(d.fit)}};
}

ActConfig act_config_from_json(const nlohmann::json& j) {
  ActConfig cfg;
  if (j.contains("windows")) cfg.windows = j.at("windows").get<std::vector<int>>();
  cfg.buffer = j.contains("buffer") ? j.at("buffer").get<int>()
                                    : default_buffer(cfg.windows);
  if (j.contains("checkpoint_stride")) {
    cfg.checkpoint_stride = j.at("checkpoint_stride").get<int>();
  }
  return cfg;
}

}  // namespace aio2
