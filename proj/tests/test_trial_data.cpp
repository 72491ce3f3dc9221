#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracle.hpp"
#include "smartim/simulate.hpp"
#include "smartim/trial_data.hpp"

using namespace smartim;

namespace {

PatientRecord rec(const char* id, double e, int a, int eta, double t1, int r,
                  int b, int c, double u, int d) {
  PatientRecord p;
  p.id = id;
  p.enroll_time = e;
  p.first_arm = a;
  p.eta = static_cast<std::int8_t>(eta);
  p.stage1_time = t1;
  p.response = static_cast<std::int8_t>(r);
  p.maintenance_arm = b;
  p.salvage_arm = c;
  p.follow_up = u;
  p.event = d == 1;
  return p;
}

std::string write_temp_csv(const std::string& body) {
  static int counter = 0;
  const auto path = std::filesystem::temp_directory_path() /
                    ("smartim_test_" + std::to_string(counter++) + ".csv");
  std::ofstream out(path);
  out << body;
  return path.string();
}

}  // namespace

TEST_CASE("csv round trip preserves records exactly", "[trial-data]") {
  const auto dz = SmartDesign::smart1_balanced();
  std::vector<PatientRecord> records = {
      rec("p1", 0.25, 1, 1, 0.5, 1, 2, 0, 1.75, 1),
      rec("p2", 1.0, 2, 1, 0.125, 0, 0, 1, 3.0, 0),
      rec("p3", 2.5, 1, 0, kMissing, -1, 0, 0, 0.375, 1),
      rec("p4", 4.0, 2, -1, kMissing, -1, 0, 0, 0.0625, 0),
  };
  const auto path = write_temp_csv("");
  emit_csv(records, path);
  const auto back = ingest_csv(path, dz);
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].id == records[i].id);
    CHECK(back[i].enroll_time == records[i].enroll_time);
    CHECK(back[i].first_arm == records[i].first_arm);
    CHECK(back[i].eta == records[i].eta);
    CHECK((is_missing(back[i].stage1_time)
               ? is_missing(records[i].stage1_time)
               : back[i].stage1_time == records[i].stage1_time));
    CHECK(back[i].response == records[i].response);
    CHECK(back[i].maintenance_arm == records[i].maintenance_arm);
    CHECK(back[i].salvage_arm == records[i].salvage_arm);
    CHECK(back[i].follow_up == records[i].follow_up);
    CHECK(back[i].event == records[i].event);
  }
  std::filesystem::remove(path);
}

TEST_CASE("ingest rejects invariant violations", "[trial-data]") {
  const auto dz = SmartDesign::smart1_balanced();
  SECTION("t1 beyond follow-up") {
    const auto path = write_temp_csv(
        "id,enroll_time,a,eta,t1,r,b,c,u,delta\n"
        "x,0,1,1,2.0,1,1,,1.0,1\n");
    CHECK_THROWS_AS(ingest_csv(path, dz), ValidationError);
    std::filesystem::remove(path);
  }
  SECTION("maintenance arm present for non-responder") {
    const auto path = write_temp_csv(
        "id,enroll_time,a,eta,t1,r,b,c,u,delta\n"
        "x,0,1,1,0.5,0,1,1,1.0,1\n");
    CHECK_THROWS_AS(ingest_csv(path, dz), ValidationError);
    std::filesystem::remove(path);
  }
  SECTION("malformed number names the row") {
    const auto path = write_temp_csv(
        "id,enroll_time,a,eta,t1,r,b,c,u,delta\n"
        "x,0,1,,,,,,oops,0\n");
    try {
      ingest_csv(path, dz);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
    std::filesystem::remove(path);
  }
  SECTION("duplicate ids rejected") {
    const auto path = write_temp_csv(
        "id,enroll_time,a,eta,t1,r,b,c,u,delta\n"
        "x,0,1,,,,,,1.0,0\n"
        "x,0,2,,,,,,1.0,0\n");
    CHECK_THROWS_AS(ingest_csv(path, dz), ValidationError);
    std::filesystem::remove(path);
  }
}

TEST_CASE("missing response classification censors at stage-1 end",
          "[trial-data]") {
  const auto dz = SmartDesign::smart2_balanced();
  const auto path = write_temp_csv(
      "id,enroll_time,a,eta,t1,r,b,c,u,delta\n"
      "x,0,1,1,0.5,,,,2.0,1\n");
  IngestDiagnostics diag;
  const auto records = ingest_csv(path, dz, &diag);
  REQUIRE(records.size() == 1);
  CHECK(diag.reclassified_missing_response == 1);
  CHECK(records[0].eta == kUnknown);
  CHECK(records[0].follow_up == 0.5);
  CHECK_FALSE(records[0].event);
  std::filesystem::remove(path);
}

TEST_CASE("uniform accrual imputation fills missing enrollment",
          "[trial-data]") {
  const auto dz = SmartDesign::smart2_balanced();
  const auto path = write_temp_csv(
      "id,enroll_time,a,eta,t1,r,b,c,u,delta\n"
      "a,,1,,,,,,1.0,1\n"
      "b,,2,,,,,,2.0,0\n"
      "c,,1,,,,,,0.5,1\n");
  CHECK_THROWS_AS(ingest_csv(path, dz), ValidationError);
  const auto records = ingest_csv(path, dz, nullptr, true, 4.0);
  REQUIRE(records.size() == 3);
  CHECK(records[0].enroll_time == 0.0);
  CHECK(records[1].enroll_time == 2.0);
  CHECK(records[2].enroll_time == 4.0);
  std::filesystem::remove(path);
}

TEST_CASE("snapshot truncation and second-stage blanking", "[trial-data]") {
  std::vector<PatientRecord> records = {
      rec("early", 0.0, 1, 1, 0.5, 1, 1, 0, 2.0, 1),
      rec("late", 1.0, 2, 1, 2.0, 0, 0, 2, 3.0, 1),
      rec("s1death", 1.0, 1, 0, kMissing, -1, 0, 0, 3.0, 1),
      rec("future", 4.0, 2, -1, kMissing, -1, 0, 0, 1.0, 0),
  };

  SECTION("cutoff beyond all follow-up is the identity") {
    const auto snap = snapshot(records, 10.0);
    REQUIRE(snap.n == 4);
    CHECK(snap.events == 3);
    CHECK(snap.info_fraction == 1.0);
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(snap.records[i].follow_up == records[i].follow_up);
      CHECK(snap.records[i].eta == records[i].eta);
    }
  }

  SECTION("administrative censoring caps follow-up and clears the event") {
    const auto snap = snapshot(records, 2.5);
    const auto& e = snap.records[0];  // enrolled 0.0, u 2.0, event
    CHECK(e.follow_up == 2.0);
    CHECK(e.event);
    const auto& l = snap.records[1];  // enrolled 1.0, horizon 1.5 < t1 2.0
    CHECK(l.follow_up == 1.5);
    CHECK_FALSE(l.event);
    CHECK(l.eta == kUnknown);
    CHECK(is_missing(l.stage1_time));
    CHECK(l.salvage_arm == 0);
    const auto& d = snap.records[2];  // stage-1 death at 3.0 not yet seen
    CHECK(d.follow_up == 1.5);
    CHECK_FALSE(d.event);
    CHECK(d.eta == kUnknown);
    CHECK(snap.n == 3);  // "future" not enrolled yet
  }

  SECTION("subject enrolled at 1.0 with u=3.0 cut at 2.5") {
    std::vector<PatientRecord> one = {
        rec("x", 1.0, 1, -1, kMissing, -1, 0, 0, 3.0, 1)};
    const auto snap = snapshot(one, 2.5);
    CHECK(snap.records[0].follow_up == 1.5);
    CHECK_FALSE(snap.records[0].event);
  }

  SECTION("cutoff before every enrollment is an error") {
    std::vector<PatientRecord> late = {
        rec("x", 2.0, 1, -1, kMissing, -1, 0, 0, 1.0, 0)};
    CHECK_THROWS_AS(snapshot(late, 1.0), InsufficientDataError);
  }

  SECTION("every snapshot record satisfies the horizon invariant") {
    const auto snap = snapshot(records, 2.5);
    for (const auto& r : snap.records)
      CHECK(r.follow_up <= snap.cutoff - r.enroll_time + 1e-12);
  }
}

TEST_CASE("interim time finds the event-count quantile", "[trial-data]") {
  std::vector<PatientRecord> records;
  // events at calendar times 1, 2, 3, 4
  for (int i = 0; i < 4; ++i) {
    auto r = rec(std::to_string(i).c_str(), 0.5 * i, 1, -1, kMissing, -1, 0, 0,
                 1.0 + 0.5 * i, 1);
    records.push_back(r);
  }
  CHECK(find_interim_time(records, 0.5) == 2.0);
  CHECK(find_interim_time(records, 0.999) == 4.0);
  CHECK_THROWS_AS(find_interim_time(records, 0.0), ArgumentError);
  CHECK_THROWS_AS(find_interim_time(records, 1.0), ArgumentError);

  SECTION("no events") {
    for (auto& r : records) r.event = false;
    CHECK_THROWS_AS(find_interim_time(records, 0.5), InsufficientDataError);
  }
}

TEST_CASE("interim snapshot holds the requested event fraction",
          "[trial-data][sim]") {
  auto cfg = preset("null-smart1");
  const auto data = generate_trial(cfg, 321);
  std::size_t total = 0;
  for (const auto& r : data) total += r.event ? 1u : 0u;
  const double t_half = find_interim_time(data, 0.5);
  const auto snap = snapshot(data, t_half);
  CHECK(snap.events == static_cast<std::size_t>(
                           std::ceil(0.5 * static_cast<double>(total))));
  // one tick earlier the snapshot holds fewer events
  const auto before = snapshot(data, t_half - 1e-9);
  CHECK(before.events < snap.events);
}
