#include "aio2/metrics.hpp"

#include "aio2/errors.hpp"

namespace aio2 {

namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

SegCounts seg_counts(const BinaryMask& pred, const BinaryMask& ref) {
  if (!pred.same_shape(ref)) {
    throw ContractError("seg_counts: shape mismatch");
  }
  if (!is_binary_mask(pred) || !is_binary_mask(ref)) {
    throw ContractError("seg_counts: inputs must be binary masks");
  }
  SegCounts c;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0.0f;
    const bool r = ref.values[i] != 0.0f;
    if (p && r)
      ++c.tp;
    else if (p && !r)
      ++c.fp;
    else if (!p && r)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

SegScores seg_scores(const SegCounts& c) {
  SegScores s;
  const std::int64_t union_ = c.tp + c.fp + c.fn;
  s.iou = union_ == 0 ? std::optional<double>(1.0) : ratio(c.tp, union_);
  s.precision = ratio(c.tp, c.tp + c.fp);
  s.recall = ratio(c.tp, c.tp + c.fn);
  s.f1 = union_ == 0 ? std::optional<double>(1.0)
                     : ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  s.oa = ratio(c.tp + c.tn, c.total());
  return s;
}

SegScores seg_scores(const BinaryMask& pred, const BinaryMask& ref) {
  return seg_scores(seg_counts(pred, ref));
}

ObjectSet tag_objects(ObjectSet gt_objects, const BinaryMask& noisy_mask) {
  if (noisy_mask.width != gt_objects.width ||
      noisy_mask.height != gt_objects.height) {
    throw ContractError("tag_objects: mask shape differs from object set");
  }
  for (ObjectComponent& obj : gt_objects.components) {
    obj.tag = ObjectTag::Omitted;
    for (std::int32_t p : obj.pixels) {
      if (noisy_mask.values[static_cast<std::size_t>(p)] != 0.0f) {
        obj.tag = ObjectTag::Marked;
        break;
      }
    }
  }
  return gt_objects;
}

namespace {

bool object_detected(const ObjectComponent& obj, const BinaryMask& pred) {
  for (std::int32_t p : obj.pixels) {
    if (pred.values[static_cast<std::size_t>(p)] != 0.0f) return true;
  }
  return false;
}

}  // namespace

DetectionRates detection_rates(const ObjectSet& tagged, const BinaryMask& pred) {
  std::int64_t n_marked = 0, d_marked = 0, n_omitted = 0, d_omitted = 0;
  for (const ObjectComponent& obj : tagged.components) {
    if (obj.tag == ObjectTag::Untagged) {
      throw ContractError("detection_rates: object set has untagged objects");
    }
    const bool det = object_detected(obj, pred);
    if (obj.tag == ObjectTag::Marked) {
      ++n_marked;
      d_marked += det;
    } else {
      ++n_omitted;
      d_omitted += det;
    }
  }
  return {ratio(d_marked, n_marked), ratio(d_omitted, n_omitted)};
}

void DiagAccumulator::add(const ObjectSet& tagged, const BinaryMask& pred,
                          const BinaryMask& noisy, int depth) {
  for (const ObjectComponent& obj : tagged.components) {
    if (obj.tag == ObjectTag::Untagged) {
      throw ContractError("diag: object set has untagged objects");
    }
    const bool marked = obj.tag == ObjectTag::Marked;
    if (marked) {
      ++marked_objects;
      marked_detected += object_detected(obj, pred);
    } else {
      ++omitted_objects;
      omitted_detected += object_detected(obj, pred);
    }
    const BoundaryBand band =
        boundary_band(obj.pixels, tagged.width, tagged.height, depth);
    auto count_fg = [&](const std::vector<std::int32_t>& px, std::int64_t& total,
                        std::int64_t& fg) {
      total += static_cast<std::int64_t>(px.size());
      for (std::int32_t p : px) {
        fg += pred.values[static_cast<std::size_t>(p)] != 0.0f;
      }
    };
    if (marked) {
      count_fg(band.ambiguous, ma_total, ma_pred_fg);
      count_fg(band.unambiguous, mu_total, mu_pred_fg);
    } else {
      // Omitted object pixels carry noisy label 0 by construction; check it
      // so the complement identity oa_T* + oa_T*_noisy = 1 stays honest.
      for (std::int32_t p : obj.pixels) {
        if (noisy.values[static_cast<std::size_t>(p)] != 0.0f) {
          throw ContractError("diag: omitted object overlaps noisy foreground");
        }
      }
      count_fg(band.ambiguous, ta_total, ta_pred_fg);
      count_fg(band.unambiguous, tu_total, tu_pred_fg);
    }
  }
}

DiagAccumulator& DiagAccumulator::operator+=(const DiagAccumulator& o) {
  marked_objects += o.marked_objects;
  marked_detected += o.marked_detected;
  omitted_objects += o.omitted_objects;
  omitted_detected += o.omitted_detected;
  ma_total += o.ma_total;
  ma_pred_fg += o.ma_pred_fg;
  mu_total += o.mu_total;
  mu_pred_fg += o.mu_pred_fg;
  ta_total += o.ta_total;
  ta_pred_fg += o.ta_pred_fg;
  tu_total += o.tu_total;
  tu_pred_fg += o.tu_pred_fg;
  return *this;
}

MemorizationDiag DiagAccumulator::finish() const {
  MemorizationDiag d;
  d.detect_rate_marked = ratio(marked_detected, marked_objects);
  d.detect_rate_omitted = ratio(omitted_detected, omitted_objects);
  d.oa_MA = ratio(ma_pred_fg, ma_total);
  d.oa_MU = ratio(mu_pred_fg, mu_total);
  d.oa_TA = ratio(ta_pred_fg, ta_total);
  d.oa_TU = ratio(tu_pred_fg, tu_total);
  d.oa_TA_noisy = ratio(ta_total - ta_pred_fg, ta_total);
  d.oa_TU_noisy = ratio(tu_total - tu_pred_fg, tu_total);
  return d;
}

MemorizationDiag pixel_group_oas(const ObjectSet& tagged, const BinaryMask& pred,
                                 const BinaryMask& gt, const BinaryMask& noisy,
                                 int depth) {
  if (!pred.same_shape(gt) || !pred.same_shape(noisy) ||
      pred.width != tagged.width || pred.height != tagged.height) {
    throw ContractError("pixel_group_oas: shape mismatch");
  }
  if (depth < 1) throw ContractError("pixel_group_oas: depth must be >= 1");
  DiagAccumulator acc;
  acc.add(tagged, pred, noisy, depth);
  return acc.finish();
}

}  // namespace aio2
