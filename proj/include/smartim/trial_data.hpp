#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "smartim/design.hpp"
#include "smartim/errors.hpp"

namespace smartim {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
constexpr std::int8_t kUnknown = -1;

inline bool is_missing(double x) { return std::isnan(x); }

/// One subject as observed by the analyst. Second-stage fields follow
/// presence rules: stage1_time and response exist iff eta == 1;
/// maintenance_arm iff response == 1; salvage_arm iff response == 0 under a
/// smart1 design. eta == 0 records died during stage 1; eta == kUnknown
/// records were censored before their second-stage status was revealed.
struct PatientRecord {
  std::string id;
  double enroll_time = 0.0;  // calendar years from trial start
  int first_arm = 0;         // 1 or 2
  std::int8_t eta = kUnknown;
  double stage1_time = kMissing;  // study years from randomization
  std::int8_t response = kUnknown;
  int maintenance_arm = 0;  // 0 = absent
  int salvage_arm = 0;      // 0 = absent
  double follow_up = 0.0;   // u = min(event time, censoring time)
  bool event = false;

  // Simulator bookkeeping, never serialized; lets tests reach the latent
  // event/censoring times behind (follow_up, event).
  double latent_event_time = kMissing;
  double latent_censor_time = kMissing;

  bool stage2_known() const { return eta >= 0; }
  bool advanced() const { return eta == 1; }
};

namespace detail {

inline std::string field_error(const PatientRecord& r, const std::string& what) {
  return "record '" + r.id + "': " + what;
}

}  // namespace detail

inline void validate_record(const PatientRecord& r, const SmartDesign& design) {
  using detail::field_error;
  if (r.first_arm != 1 && r.first_arm != 2)
    throw ValidationError(field_error(r, "first-stage arm must be 1 or 2"));
  if (design.first_probs[r.first_arm - 1] <= 0.0)
    throw ValidationError(field_error(r, "assigned to a zero-probability first-stage arm"));
  if (!(r.enroll_time >= 0.0))
    throw ValidationError(field_error(r, "enroll_time must be >= 0"));
  if (!(r.follow_up >= 0.0))
    throw ValidationError(field_error(r, "follow-up u must be >= 0"));
  if (r.eta != 0 && r.eta != 1 && r.eta != kUnknown)
    throw ValidationError(field_error(r, "eta must be 0, 1, or empty"));

  if (r.eta == 1) {
    if (is_missing(r.stage1_time))
      throw ValidationError(field_error(r, "eta=1 requires t1"));
    if (!(r.stage1_time >= 0.0) || r.stage1_time > r.follow_up)
      throw ValidationError(field_error(r, "t1 must satisfy 0 <= t1 <= u"));
    if (r.response == kUnknown)
      throw ValidationError(field_error(r, "eta=1 requires response flag r"));
    if (r.response == 1) {
      if (r.maintenance_arm != 1 && r.maintenance_arm != 2)
        throw ValidationError(field_error(r, "responder requires maintenance arm b in {1,2}"));
      if (design.responder_probs[r.maintenance_arm - 1] <= 0.0)
        throw ValidationError(field_error(r, "assigned to a zero-probability maintenance arm"));
      if (r.salvage_arm != 0)
        throw ValidationError(field_error(r, "responder cannot carry a salvage arm c"));
    } else {
      if (r.maintenance_arm != 0)
        throw ValidationError(field_error(r, "maintenance arm b present while r=0"));
      if (design.kind == DesignKind::smart1) {
        if (r.salvage_arm != 1 && r.salvage_arm != 2)
          throw ValidationError(field_error(r, "smart1 non-responder requires salvage arm c in {1,2}"));
        if (design.nonresponder_probs[r.salvage_arm - 1] <= 0.0)
          throw ValidationError(field_error(r, "assigned to a zero-probability salvage arm"));
      } else if (r.salvage_arm != 0) {
        throw ValidationError(field_error(r, "smart2 records cannot carry a salvage arm"));
      }
    }
  } else {
    if (!is_missing(r.stage1_time))
      throw ValidationError(field_error(r, "t1 present without eta=1"));
    if (r.response != kUnknown)
      throw ValidationError(field_error(r, "response flag present without eta=1"));
    if (r.maintenance_arm != 0 || r.salvage_arm != 0)
      throw ValidationError(field_error(r, "second-stage arm present without eta=1"));
  }
}

inline void validate_records(const std::vector<PatientRecord>& records,
                             const SmartDesign& design) {
  design.validate();
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    validate_record(r, design);
    if (!seen.insert(r.id).second)
      throw ValidationError("duplicate record id '" + r.id + "'");
  }
}

/// Dataset as visible at a calendar cutoff, after administrative censoring.
struct AnalysisSnapshot {
  double cutoff = 0.0;
  std::vector<PatientRecord> records;
  std::size_t n = 0;              // enrolled by the cutoff
  std::size_t events = 0;         // observed events in the snapshot
  double info_fraction = 0.0;     // events / planned total events
};

/// Restrict `records` to what an analyst sees at calendar time `t_cal`:
/// subjects enrolled by then, follow-up truncated at the cutoff, and
/// second-stage fields blanked when the cutoff precedes their revelation
/// (t1 for advancing subjects, the stage-1 death for eta=0 subjects).
/// `planned_events` defaults to the event count of the full input.
inline AnalysisSnapshot snapshot(const std::vector<PatientRecord>& records,
                                 double t_cal, std::size_t planned_events = 0) {
  if (records.empty()) throw InsufficientDataError("snapshot of empty dataset");
  if (planned_events == 0)
    for (const auto& r : records) planned_events += r.event ? 1u : 0u;

  AnalysisSnapshot snap;
  snap.cutoff = t_cal;
  for (const auto& r : records) {
    if (r.enroll_time > t_cal) continue;
    PatientRecord s = r;
    // truncation decided on the calendar scale, the same expression used to
    // place events in time, so the two never disagree by a rounding ulp
    const bool truncated = r.enroll_time + r.follow_up > t_cal;
    if (truncated) {
      s.follow_up = t_cal - r.enroll_time;
      s.event = false;
    }
    if (r.eta == 1 && !(r.stage1_time <= s.follow_up)) {
      s.eta = kUnknown;
      s.stage1_time = kMissing;
      s.response = kUnknown;
      s.maintenance_arm = 0;
      s.salvage_arm = 0;
    } else if (r.eta == 0 && truncated) {
      // The stage-1 death that identifies eta=0 has not happened yet.
      s.eta = kUnknown;
    }
    snap.records.push_back(std::move(s));
  }
  if (snap.records.empty())
    throw InsufficientDataError("no subjects enrolled by calendar time " +
                                std::to_string(t_cal));
  snap.n = snap.records.size();
  for (const auto& r : snap.records) snap.events += r.event ? 1u : 0u;
  snap.info_fraction =
      planned_events == 0 ? 0.0
                          : std::min(1.0, static_cast<double>(snap.events) /
                                              static_cast<double>(planned_events));
  return snap;
}

/// Smallest calendar time whose snapshot holds ceil(fraction * total events)
/// events. Events materialize at enroll_time + u.
inline double find_interim_time(const std::vector<PatientRecord>& records,
                                double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ArgumentError("information fraction must lie in (0,1)");
  std::vector<double> event_times;
  for (const auto& r : records)
    if (r.event) event_times.push_back(r.enroll_time + r.follow_up);
  if (event_times.empty())
    throw InsufficientDataError("no events in the dataset");
  const auto target = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(event_times.size())));
  std::sort(event_times.begin(), event_times.end());
  return event_times[target - 1];
}

// ---------------------------------------------------------------------------
// CSV schema: id,enroll_time,a,eta,t1,r,b,c,u,delta with empty cells for
// fields that do not apply. Times in years.
// ---------------------------------------------------------------------------

struct IngestDiagnostics {
  std::size_t rows = 0;
  // Rows with eta=1 and t1 but no response classification are treated as
  // censored at t1 and counted here.
  std::size_t reclassified_missing_response = 0;
  std::size_t missing_enroll_time = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double_field(const std::string& s, std::size_t row,
                                 const char* name) {
  if (s.empty()) return kMissing;
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError("row " + std::to_string(row) + ": field '" + name +
                     "' is not a number: '" + s + "'");
  }
  if (pos != s.size())
    throw ParseError("row " + std::to_string(row) + ": trailing characters in '" +
                     std::string(name) + "'");
  return v;
}

inline int parse_int_field(const std::string& s, std::size_t row,
                           const char* name) {
  if (s.empty()) return 0;
  const double v = parse_double_field(s, row, name);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    throw ParseError("row " + std::to_string(row) + ": field '" + name +
                     "' must be an integer");
  return i;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kCsvHeader = "id,enroll_time,a,eta,t1,r,b,c,u,delta";

inline std::vector<PatientRecord> ingest_csv(const std::string& path,
                                             const SmartDesign& design,
                                             IngestDiagnostics* diag = nullptr,
                                             bool assume_uniform_accrual = false,
                                             double accrual_window = 5.0) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("'" + path + "' is empty (header row required)");
  {
    auto hdr = detail::split_csv_line(line);
    const auto want = detail::split_csv_line(kCsvHeader);
    if (hdr != want)
      throw ParseError("'" + path + "' header must be exactly '" +
                       std::string(kCsvHeader) + "'");
  }

  IngestDiagnostics local;
  std::vector<PatientRecord> records;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 10)
      throw ParseError("row " + std::to_string(row) + ": expected 10 fields, got " +
                       std::to_string(f.size()));
    PatientRecord r;
    r.id = f[0];
    if (r.id.empty())
      throw ParseError("row " + std::to_string(row) + ": empty id");
    const double enroll = detail::parse_double_field(f[1], row, "enroll_time");
    if (is_missing(enroll)) {
      ++local.missing_enroll_time;
      r.enroll_time = kMissing;  // filled below when allowed
    } else {
      r.enroll_time = enroll;
    }
    r.first_arm = detail::parse_int_field(f[2], row, "a");
    const std::string& eta_s = f[3];
    if (eta_s.empty()) {
      r.eta = kUnknown;
    } else {
      const int e = detail::parse_int_field(eta_s, row, "eta");
      if (e != 0 && e != 1)
        throw ParseError("row " + std::to_string(row) + ": eta must be 0, 1, or empty");
      r.eta = static_cast<std::int8_t>(e);
    }
    r.stage1_time = detail::parse_double_field(f[4], row, "t1");
    if (f[5].empty()) {
      r.response = kUnknown;
    } else {
      const int resp = detail::parse_int_field(f[5], row, "r");
      if (resp != 0 && resp != 1)
        throw ParseError("row " + std::to_string(row) + ": r must be 0, 1, or empty");
      r.response = static_cast<std::int8_t>(resp);
    }
    r.maintenance_arm = detail::parse_int_field(f[6], row, "b");
    r.salvage_arm = detail::parse_int_field(f[7], row, "c");
    const double u = detail::parse_double_field(f[8], row, "u");
    if (is_missing(u))
      throw ParseError("row " + std::to_string(row) + ": u is required");
    r.follow_up = u;
    const int delta = detail::parse_int_field(f[9], row, "delta");
    if (f[9].empty() || (delta != 0 && delta != 1))
      throw ParseError("row " + std::to_string(row) + ": delta must be 0 or 1");
    r.event = delta == 1;

    // Response status missing for a non-administrative reason: censor the
    // subject at the end of stage 1 and forget the second stage.
    if (r.eta == 1 && r.response == kUnknown && !is_missing(r.stage1_time)) {
      r.follow_up = std::min(r.follow_up, r.stage1_time);
      r.event = false;
      r.eta = kUnknown;
      r.stage1_time = kMissing;
      r.maintenance_arm = 0;
      r.salvage_arm = 0;
      ++local.reclassified_missing_response;
    }
    records.push_back(std::move(r));
  }
  local.rows = records.size();

  if (local.missing_enroll_time > 0) {
    if (!assume_uniform_accrual)
      throw ValidationError(
          "dataset lacks enroll_time values; re-run with uniform-accrual "
          "imputation enabled to spread enrollment over a stated window");
    if (local.missing_enroll_time != records.size())
      throw ValidationError("enroll_time must be present for all rows or none");
    const auto n = records.size();
    for (std::size_t i = 0; i < n; ++i)
      records[i].enroll_time =
          n == 1 ? 0.0
                 : accrual_window * static_cast<double>(i) /
                       static_cast<double>(n - 1);
  }

  validate_records(records, design);
  if (diag) *diag = local;
  return records;
}

inline void emit_csv(const std::vector<PatientRecord>& records,
                     std::ostream& out) {
  out << kCsvHeader << "\n";
  for (const auto& r : records) {
    out << r.id << ',' << detail::format_double(r.enroll_time) << ','
        << r.first_arm << ',';
    if (r.eta != kUnknown) out << static_cast<int>(r.eta);
    out << ',';
    if (!is_missing(r.stage1_time)) out << detail::format_double(r.stage1_time);
    out << ',';
    if (r.response != kUnknown) out << static_cast<int>(r.response);
    out << ',';
    if (r.maintenance_arm != 0) out << r.maintenance_arm;
    out << ',';
    if (r.salvage_arm != 0) out << r.salvage_arm;
    out << ',' << detail::format_double(r.follow_up) << ',' << (r.event ? 1 : 0)
        << "\n";
  }
}

inline void emit_csv(const std::vector<PatientRecord>& records,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  emit_csv(records, out);
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace smartim
