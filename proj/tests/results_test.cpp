#include "dsim/results.hpp"

#include <gtest/gtest.h>

#include <chrono>

namespace dsim {
namespace {

ResultRecord rec(const std::string& metric, std::int64_t vt, double value,
                 Tags tags = {}, ContextId ctx = 9) {
  return ResultRecord{ctx, metric, VirtualTime(vt), value, std::move(tags)};
}

ResultManifest manifest() {
  ResultManifest m;
  m.scenario_name = "demo";
  m.scenario_hash = fnv1a("scenario-bytes");
  m.seed = 42;
  m.context_id = 9;
  m.agents = {1, 2, 3};
  return m;
}

TEST(ResultPoolTest, AppendEnforcesMonotoneTimePerMetric) {
  ResultPool pool(manifest());
  pool.append(rec("queue_depth", 10, 4));
  pool.append(rec("queue_depth", 10, 5));   // equal time is fine
  pool.append(rec("other_metric", 3, 1));   // separate metric, own clock
  pool.append(rec("queue_depth", 11, 6));
  EXPECT_THROW(pool.append(rec("queue_depth", 7, 0)), StateError);
  EXPECT_EQ(pool.size(), 4u);
}

TEST(ResultPoolTest, RejectsSeparatorCharactersInCells) {
  ResultPool pool;
  EXPECT_THROW(pool.append(rec("bad,metric", 1, 0)), ConfigError);
  EXPECT_THROW(pool.append(rec("", 1, 0)), ConfigError);
  EXPECT_THROW(pool.append(rec("m", 1, 0, {{"k=", "v"}})), ConfigError);
  EXPECT_THROW(pool.append(rec("m", 1, 0, {{"k", "v;w"}})), ConfigError);
}

TEST(ResultPoolTest, CsvIsPinnedColumnOrderAndTagFormat) {
  ResultPool pool(manifest());
  pool.append(rec("events_processed", 500, 1234));
  pool.append(rec("job_completion_time", 77, 12.5,
                  {{"job", "j-1"}, {"center", "c1"}}));
  EXPECT_EQ(pool.export_csv(),
            "context_id,metric,virtual_time,value,tags\n"
            "9,events_processed,500,1234,\n"
            "9,job_completion_time,77,12.5,center=c1;job=j-1\n");
}

TEST(ResultPoolTest, ValueFormattingRoundTrips) {
  ResultPool pool;
  pool.append(rec("v", 1, 42.0));
  pool.append(rec("v", 2, 0.1));
  pool.append(rec("v", 3, 1e300));
  pool.append(rec("v", 4, -7.25));
  std::string csv = pool.export_csv();
  ResultPool back = ResultPool::import_text(pool.export_manifest(), csv);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back.records()[0].value, 42.0);
  EXPECT_EQ(back.records()[1].value, 0.1);
  EXPECT_EQ(back.records()[2].value, 1e300);
  EXPECT_EQ(back.records()[3].value, -7.25);
  // Whole numbers print without an exponent or decimal point.
  EXPECT_NE(csv.find(",42,"), std::string::npos);
}

TEST(ResultPoolTest, ExportImportExportIsByteIdentical) {
  ResultPool pool(manifest());
  pool.append(rec("events_processed", 10, 100, {{"agent", "1"}}));
  pool.append(rec("events_processed", 20, 200, {{"agent", "2"}}));
  pool.append(rec("interrupts", 20, 3, {{"link", "wan-1"}}));

  std::string csv1 = pool.export_csv();
  std::string man1 = pool.export_manifest();
  ResultPool again = ResultPool::import_text(man1, csv1);
  EXPECT_EQ(again.export_csv(), csv1);
  EXPECT_EQ(again.export_manifest(), man1);
  EXPECT_EQ(again.manifest(), pool.manifest());
}

TEST(ResultPoolTest, DirectoryRoundTripPreservesBytes) {
  auto dir = std::filesystem::temp_directory_path() / "dsim-results-test";
  std::filesystem::remove_all(dir);
  ResultPool pool(manifest());
  pool.append(rec("m", 1, 2.5, {{"k", "v"}}));
  pool.export_dir(dir);
  ResultPool back = ResultPool::import_dir(dir);
  EXPECT_EQ(back.export_csv(), pool.export_csv());
  EXPECT_EQ(back.export_manifest(), pool.export_manifest());
  std::filesystem::remove_all(dir);
}

TEST(ResultPoolTest, TamperedRecordsFailTheHashCheck) {
  ResultPool pool(manifest());
  pool.append(rec("m", 1, 2));
  std::string man = pool.export_manifest();
  std::string csv = pool.export_csv();
  auto pos = csv.find(",2,");
  ASSERT_NE(pos, std::string::npos);
  csv.replace(pos, 3, ",3,");
  EXPECT_THROW(ResultPool::import_text(man, csv), IntegrityError);
}

TEST(ResultPoolTest, TruncatedRecordsFailTheHashCheck) {
  ResultPool pool(manifest());
  pool.append(rec("m", 1, 2));
  pool.append(rec("m", 2, 3));
  std::string man = pool.export_manifest();
  std::string csv = pool.export_csv();
  std::string truncated = csv.substr(0, csv.rfind("9,m,2"));
  EXPECT_THROW(ResultPool::import_text(man, truncated), IntegrityError);
}

TEST(ResultPoolTest, RecordCountMismatchIsCaughtEvenWithMatchingHash) {
  ResultPool pool(manifest());
  pool.append(rec("m", 1, 2));
  std::string csv = pool.export_csv();
  // Manifest claims two records but hashes the one-record file.
  std::string man = pool.export_manifest();
  auto pos = man.find("records: 1");
  ASSERT_NE(pos, std::string::npos);
  man.replace(pos, 10, "records: 2");
  EXPECT_THROW(ResultPool::import_text(man, csv), IntegrityError);
}

TEST(ResultPoolTest, ImportRejectsGarbageHeaderAndColumns) {
  EXPECT_THROW(ResultPool::import_text("not a manifest", "x"), IntegrityError);
  ResultPool pool(manifest());
  pool.append(rec("m", 1, 2));
  std::string man = pool.export_manifest();
  EXPECT_THROW(ResultPool::import_text(man, "wrong,header\n"), IntegrityError);
}

TEST(ResultPoolTest, CanonicalSortIsLayoutIndependent) {
  std::vector<ResultRecord> a = {
      rec("b_metric", 5, 1),
      rec("a_metric", 9, 2, {{"t", "2"}}),
      rec("a_metric", 9, 2, {{"t", "1"}}),
      rec("a_metric", 3, 7),
  };
  std::vector<ResultRecord> b = {a[2], a[0], a[3], a[1]};  // shuffled
  sort_records_canonically(a);
  sort_records_canonically(b);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0].metric, "a_metric");
  EXPECT_EQ(a[0].virtual_time, VirtualTime(3));
  EXPECT_EQ(a[1].tags, (Tags{{"t", "1"}}));
}

TEST(ResultPoolTest, ExtractsFinalDatabasePlacements) {
  ResultPool pool(manifest());
  pool.append(rec("db_final_object", 100, 40, {{"db", "db-1"}, {"object", "O2"}}));
  pool.append(rec("db_final_object", 100, 50, {{"db", "db-1"}, {"object", "O3"}}));
  pool.append(rec("mass_final_object", 100, 60, {{"mass", "ms-1"}, {"object", "O1"}}));
  auto seed = extract_db_seed(pool);
  ASSERT_EQ(seed.size(), 1u);
  ASSERT_EQ(seed["db-1"].size(), 2u);
  EXPECT_EQ(seed["db-1"][0], (std::pair<std::string, std::int64_t>{"O2", 40}));
  EXPECT_EQ(seed["db-1"][1], (std::pair<std::string, std::int64_t>{"O3", 50}));
}

TEST(ResultPoolTest, HundredThousandRecordsExportUnderASecond) {
  ResultPool pool(manifest());
  for (int i = 0; i < 100'000; ++i) {
    pool.append(rec("events_processed", i, i, {{"agent", "1"}}));
  }
  auto t0 = std::chrono::steady_clock::now();
  std::string csv = pool.export_csv();
  std::string man = pool.export_manifest();
  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - t0);
  EXPECT_GT(csv.size(), 1'000'000u);
  EXPECT_FALSE(man.empty());
  EXPECT_LT(elapsed.count(), 1000);
}

}  // namespace
}  // namespace dsim
