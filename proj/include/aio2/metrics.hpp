#pragma once

#include <cstdint>
#include <optional>

#include "aio2/raster.hpp"

namespace aio2 {

// Pixel confusion counts. Summable across patches for micro-averaged scores.
struct SegCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  SegCounts& operator+=(const SegCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  std::int64_t total() const { return tp + fp + fn + tn; }
};

SegCounts seg_counts(const BinaryMask& pred, const BinaryMask& ref);

// Scores with undefined-denominator fields reported as nullopt, not 0:
// precision needs predicted positives, recall needs reference positives.
// Empty-vs-empty comparison scores iou = f1 = 1 (nothing to get wrong).
struct SegScores {
  std::optional<double> iou;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> oa;
};

SegScores seg_scores(const SegCounts& c);
SegScores seg_scores(const BinaryMask& pred, const BinaryMask& ref);

// Tags each object Marked when at least one of its pixels is foreground in
// noisy_mask, Omitted otherwise. Assumes noisy foreground is a subset of the
// objects' union (the omission noise model).
ObjectSet tag_objects(ObjectSet gt_objects, const BinaryMask& noisy_mask);

// An object counts as detected when pred is foreground on >= 1 of its pixels.
// Rates are per tag class; a class with no objects reports nullopt.
struct DetectionRates {
  std::optional<double> marked;
  std::optional<double> omitted;
};

DetectionRates detection_rates(const ObjectSet& tagged, const BinaryMask& pred);

// Per-pixel-group accuracies for memorization tracking. Group codes:
//   MA / MU = marked object pixels, ambiguous / unambiguous (boundary band)
//   TA / TU = omitted object pixels, ambiguous / unambiguous
// oa_* score pred against ground truth (all group pixels are foreground);
// the _noisy variants score against the noisy labels (zero on omitted
// objects), so per group oa_T* + oa_T*_noisy = 1.
struct MemorizationDiag {
  std::optional<double> detect_rate_marked;
  std::optional<double> detect_rate_omitted;
  std::optional<double> oa_MA;
  std::optional<double> oa_MU;
  std::optional<double> oa_TA;
  std::optional<double> oa_TU;
  std::optional<double> oa_TA_noisy;
  std::optional<double> oa_TU_noisy;
};

MemorizationDiag pixel_group_oas(const ObjectSet& tagged, const BinaryMask& pred,
                                 const BinaryMask& gt, const BinaryMask& noisy,
                                 int depth);

// Same diagnostics accumulated over many patches (micro: pools pixels and
// objects across the set before dividing).
struct DiagAccumulator {
  std::int64_t marked_objects = 0, marked_detected = 0;
  std::int64_t omitted_objects = 0, omitted_detected = 0;
  std::int64_t ma_total = 0, ma_pred_fg = 0;
  std::int64_t mu_total = 0, mu_pred_fg = 0;
  std::int64_t ta_total = 0, ta_pred_fg = 0;
  std::int64_t tu_total = 0, tu_pred_fg = 0;

  void add(const ObjectSet& tagged, const BinaryMask& pred,
           const BinaryMask& noisy, int depth);
  DiagAccumulator& operator+=(const DiagAccumulator& o);
  MemorizationDiag finish() const;
};

}  // namespace aio2
