#pragma once

#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "aio2/curvefit.hpp"

namespace aio2 {

struct ActConfig {
  std::vector<int> windows = {10, 20, 30, 40};
  int buffer = 25;           // z: epochs a slope minimum must hold to confirm
  int checkpoint_stride = 5;

  void validate() const;  // throws ConfigError
};

// floor(mean(windows)): the default confirmation buffer.
int default_buffer(const std::vector<int>& windows);

// Output of the trigger. Epochs are 1-indexed.
struct ActDecision {
  std::vector<int> transition_per_window;  // first confirmed slope-min epoch
  int transition_epoch = 0;                // floor(mean) of the above
  int early_end_epoch = 0;                 // epochs with fit gradient > sigma
  int resume_target = 0;                   // floor((early_end+transition)/2)
  int checkpoint_epoch = 0;                // stride multiple nearest resume
  double sigma = 0.0;                      // (f_It - f_1)/It slope threshold
  ExpFit fit;
};

int aggregate_transition(const std::vector<int>& candidates);

struct EarlyEnd {
  int epoch = 0;
  double sigma = 0.0;
  ExpFit fit;
};

// Fits the saturating exponential to f_1..f_It and counts the epochs whose
// fitted gradient exceeds sigma = (f_It - f_1)/It; the count is clamped to
// >= 1. Requires It >= 5.
EarlyEnd detect_early_end(std::span<const double> prefix);

struct ResumePoint {
  int target = 0;      // floor((early_end + transition)/2)
  int checkpoint = 0;  // nearest stride multiple, ties toward earlier
};

ResumePoint resume_epoch(int early_end, int transition, int checkpoint_stride);

// Online trigger state. Feed the accuracy series once per epoch, each call
// one value longer than the last; the decision is returned by the call that
// confirms the final window and the state then stays Triggered.
class ActState {
 public:
  explicit ActState(ActConfig cfg);

  std::optional<ActDecision> observe_epoch(std::span<const double> series);

  bool triggered() const { return decision_.has_value(); }
  const std::optional<ActDecision>& decision() const { return decision_; }
  int epochs_seen() const { return epochs_seen_; }
  // Confirmed per-window transition epochs so far (nullopt = unconfirmed).
  const std::vector<std::optional<int>>& candidates() const {
    return candidates_;
  }

 private:
  ActConfig cfg_;
  int epochs_seen_ = 0;
  std::vector<std::vector<double>> slopes_;  // per window, epoch w+1 onward
  std::vector<std::optional<int>> candidates_;
  std::optional<ActDecision> decision_;
};

// Offline replay over a stored curve; nullopt when the trigger never fires.
std::optional<ActDecision> detect_act(const AccuracySeries& series,
                                      const ActConfig& config);

nlohmann::json decision_to_json(const ActDecision& d);

// Parses {windows, buffer, checkpoint_stride}. Absent keys keep their
// defaults, except buffer, which tracks the windows when not given.
ActConfig act_config_from_json(const nlohmann::json& j);

}  // namespace aio2
