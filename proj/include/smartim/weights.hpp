#pragma once

#include "smartim/design.hpp"
#include "smartim/errors.hpp"
#include "smartim/trial_data.hpp"

namespace smartim {

/// A subject's inverse-probability weight for one strategy, as a function of
/// study time s. It is a right-continuous step function: 1/l_j while the
/// second-stage status is unobserved, jumping at t1 (s >= t1 closed) to the
/// product with the second-stage factor. Subjects whose realized path is
/// inconsistent with the strategy carry weight 0 on the affected piece.
struct StepWeight {
  double pre = 0.0;
  double post = 0.0;
  double jump = 0.0;
  bool has_jump = false;

  double at(double s) const { return has_jump && s >= jump ? post : pre; }
};

inline StepWeight dtr_weight(const SmartDesign& design, const PatientRecord& r,
                             const DtrLabel& dtr) {
  StepWeight w;
  if (r.first_arm != dtr.first) return w;  // weight identically 0
  const double base = 1.0 / design.first_probs[r.first_arm - 1];
  w.pre = base;
  if (r.eta != 1) return w;  // stage-1 death or unknown status: no jump ever
  w.has_jump = true;
  w.jump = r.stage1_time;
  detail::require(r.response != kUnknown, "advanced record lacks response");
  double second = 0.0;
  if (r.response == 1) {
    if (r.maintenance_arm == dtr.maintenance)
      second = 1.0 / design.responder_probs[r.maintenance_arm - 1];
  } else if (design.kind == DesignKind::smart1) {
    if (r.salvage_arm == dtr.salvage)
      second = 1.0 / design.nonresponder_probs[r.salvage_arm - 1];
  } else {
    second = 1.0;  // smart2 non-responders follow every A_jB_k with certainty
  }
  w.post = base * second;
  return w;
}

/// Weight of one subject for one strategy at study time s. Only valid for
/// s <= follow-up; beyond that the second-stage status may be unresolved.
inline double weight(const SmartDesign& design, const PatientRecord& r,
                     const DtrLabel& dtr, double s) {
  if (!(s >= 0.0)) throw ArgumentError("weight evaluation time must be >= 0");
  if (s > r.follow_up)
    throw ArgumentError("weight requested beyond follow-up for record '" +
                        r.id + "'");
  return dtr_weight(design, r, dtr).at(s);
}

}  // namespace smartim
