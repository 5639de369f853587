#include <gtest/gtest.h>

#include <functional>
#include <sstream>

#include "deepanen/archive.hpp"
#include "fixtures.hpp"

using namespace deepanen;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Time, Iso8601RoundTrip) {
  EXPECT_EQ(parse_iso8601("1970-01-01T00:00:00Z"), 0);
  EXPECT_EQ(parse_iso8601("2010-01-01T00:00:00Z"), 1262304000);
  EXPECT_EQ(format_iso8601(1262304000 + 93600), "2010-01-02T02:00:00Z");
  for (Timestamp t : {Timestamp{0}, Timestamp{951782400}, Timestamp{4102444799}})
    EXPECT_EQ(parse_iso8601(format_iso8601(t)), t);
  Timestamp t;
  EXPECT_FALSE(parse_iso8601("2010-02-30T00:00:00Z", t));
  EXPECT_FALSE(parse_iso8601("2010-01-01 00:00:00", t));
}

TEST(ReadForecasts, MissingCellFromEmptyValue) {
  std::istringstream in(
      "station,variable,cycle_time,lead_s,value\n"
      "A,t2m,1970-01-01T00:00:00Z,0,1.5\n"
      "A,t2m,1970-01-01T01:00:00Z,0,\n");
  const auto a = read_forecasts(in);
  EXPECT_EQ(a.n_stations(), 1u);
  EXPECT_EQ(a.n_variables(), 1u);
  EXPECT_EQ(a.cycles, (std::vector<Timestamp>{0, 3600}));
  EXPECT_EQ(a.n_leads(), 1u);
  EXPECT_EQ(a.missing_count(), 1u);
  EXPECT_EQ(a.at(0, 0, 0, 0), 1.5);
}

TEST(ReadForecasts, AbsentRowsAreMissing) {
  std::istringstream in(
      "station,variable,cycle_time,lead_s,value\n"
      "A,u,1970-01-01T00:00:00Z,0,1\n"
      "A,v,1970-01-01T01:00:00Z,3600,2\n");
  const auto a = read_forecasts(in);
  EXPECT_EQ(a.values.size(), 8u);
  EXPECT_EQ(a.missing_count(), 6u);
}

TEST(ReadForecasts, HeaderOnlyIsAnError) {
  std::istringstream in("station,variable,cycle_time,lead_s,value\n");
  EXPECT_EQ(error_of([&] { read_forecasts(in); }), "no records");
}

TEST(ReadForecasts, DuplicateKeyNamesTheKey) {
  std::istringstream in(
      "station,variable,cycle_time,lead_s,value\n"
      "A,t2m,1970-01-01T00:00:00Z,0,1\n"
      "A,t2m,1970-01-01T00:00:00Z,0,2\n");
  const auto msg = error_of([&] { read_forecasts(in); });
  EXPECT_NE(msg.find("duplicate key (A, t2m, 1970-01-01T00:00:00Z, 0)"), std::string::npos) << msg;
}

TEST(ReadForecasts, MalformedRowsNameTheLine) {
  const char* header = "station,variable,cycle_time,lead_s,value\n";
  for (const char* row : {"A,t2m,1970-01-01T00:00:00Z,0\n", "A,t2m,1970-01-01T00:00:00Z,0,abc\n",
                          "A,t2m,yesterday,0,1\n", "A,t2m,1970-01-01T00:00:00Z,1.5,1\n"}) {
    std::istringstream in(std::string(header) + "# comment\n" + row);
    const auto msg = error_of([&] { read_forecasts(in); });
    EXPECT_EQ(msg.rfind("line 3:", 0), 0u) << msg;
  }
}

TEST(ReadForecasts, WrongHeaderRejected) {
  std::istringstream in("a,b,c,d,e\nA,t,1970-01-01T00:00:00Z,0,1\n");
  EXPECT_THROW(read_forecasts(in), DataError);
}

TEST(ArchiveIo, RoundTripPreservesValuesAndMissing) {
  auto s = fixtures::random_archive(3, 5, 4, 1);
  s.fcst.at(0, 1, 2, 3) = kMissing;
  s.obs.at(0, 7) = kMissing;
  std::stringstream f, o;
  write_forecasts(f, s.fcst);
  write_observations(o, s.obs);
  const auto f2 = read_forecasts(f);
  const auto o2 = read_observations(o);
  EXPECT_EQ(f2.stations, s.fcst.stations);
  EXPECT_EQ(f2.variables, s.fcst.variables);
  EXPECT_EQ(f2.cycles, s.fcst.cycles);
  EXPECT_EQ(f2.leads, s.fcst.leads);
  ASSERT_EQ(f2.values.size(), s.fcst.values.size());
  for (std::size_t i = 0; i < f2.values.size(); ++i) {
    if (is_missing(s.fcst.values[i]))
      EXPECT_TRUE(is_missing(f2.values[i]));
    else
      EXPECT_EQ(f2.values[i], s.fcst.values[i]);  // 17 significant digits round-trip exactly
  }
  EXPECT_EQ(o2.times, s.obs.times);
  EXPECT_TRUE(is_missing(o2.at(0, 7)));
  EXPECT_EQ(o2.at(0, 8), s.obs.at(0, 8));
}

TEST(ArchiveIo, RowOrderDoesNotMatter) {
  std::istringstream a(
      "station,variable,cycle_time,lead_s,value\n"
      "B,v,1970-01-02T00:00:00Z,3600,4\nA,u,1970-01-01T00:00:00Z,0,1\nA,v,1970-01-02T00:00:00Z,0,3\n");
  std::istringstream b(
      "station,variable,cycle_time,lead_s,value\n"
      "A,v,1970-01-02T00:00:00Z,0,3\nA,u,1970-01-01T00:00:00Z,0,1\nB,v,1970-01-02T00:00:00Z,3600,4\n");
  const auto x = read_forecasts(a), y = read_forecasts(b);
  EXPECT_EQ(x.stations, y.stations);
  EXPECT_EQ(x.cycles, y.cycles);
  for (std::size_t i = 0; i < x.values.size(); ++i)
    EXPECT_TRUE(x.values[i] == y.values[i] || (is_missing(x.values[i]) && is_missing(y.values[i])));
}

TEST(ValidTime, SumsCycleAndLead) {
  auto a = ForecastArchive::with_shape({"A"}, {"v"}, {0, 86400}, {0, 7200});
  EXPECT_EQ(valid_time(a, 1, 1), 93600);
  EXPECT_EQ(valid_time(a, 0, 0), 0);
  EXPECT_THROW(valid_time(a, 2, 0), std::out_of_range);
  EXPECT_THROW(valid_time(a, 0, 2), std::out_of_range);
}

TEST(Window, ZeroHalfWindowIsTheForecastVector) {
  auto s = fixtures::random_archive(3, 2, 3, 2);
  const auto w = extract_window(s.fcst, 0, 1, 2, 0);
  ASSERT_EQ(w.length, 1u);
  for (std::size_t v = 0; v < 3; ++v) EXPECT_EQ(w(v, 0), s.fcst.at(0, v, 1, 2));
}

TEST(Window, SpansNeighbouringLeads) {
  auto s = fixtures::random_archive(2, 1, 3, 3);
  const auto w = extract_window(s.fcst, 0, 0, 1, 1);
  ASSERT_EQ(w.length, 3u);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(w(v, j), s.fcst.at(0, v, 0, j));
}

TEST(Window, BoundaryAndMissingErrors) {
  auto s = fixtures::random_archive(2, 1, 3, 3);
  EXPECT_EQ(error_of([&] { extract_window(s.fcst, 0, 0, 0, 1); }), "window out of bounds");
  EXPECT_EQ(error_of([&] { extract_window(s.fcst, 0, 0, 2, 1); }), "window out of bounds");
  s.fcst.at(0, 1, 0, 2) = kMissing;
  EXPECT_EQ(error_of([&] { extract_window(s.fcst, 0, 0, 1, 1); }), "incomplete window");
  EXPECT_FALSE(find_window(s.fcst, 0, 0, 1, 1));
  EXPECT_TRUE(find_window(s.fcst, 0, 0, 1, 0));
}

TEST(Climatology, PopulationStandardDeviation) {
  auto a = ForecastArchive::with_shape({"A"}, {"x", "k"}, {0, 1, 2}, {0});
  a.at(0, 0, 0, 0) = 1;
  a.at(0, 0, 1, 0) = 2;
  a.at(0, 0, 2, 0) = 3;
  for (std::size_t c = 0; c < 3; ++c) a.at(0, 1, c, 0) = 5;
  const auto st = climatology_stats(a, 0, 0, {0, 3});
  EXPECT_DOUBLE_EQ(st.mean[0], 2.0);
  EXPECT_NEAR(st.sigma[0], 0.8164966, 1e-7);
  EXPECT_FALSE(st.degenerate[0]);
  EXPECT_EQ(st.sigma[1], 0.0);
  EXPECT_TRUE(st.degenerate[1]);
  EXPECT_EQ(st.degenerate_count(), 1u);
}

TEST(Climatology, MissingAndEmptyRanges) {
  auto a = ForecastArchive::with_shape({"A"}, {"x"}, {0, 1, 2}, {0});
  const auto st = climatology_stats(a, 0, 0, {0, 3});
  EXPECT_TRUE(st.degenerate[0]);
  EXPECT_EQ(st.sigma[0], 0.0);
  a.at(0, 0, 1, 0) = 4.0;
  EXPECT_TRUE(climatology_stats(a, 0, 0, {0, 3}).degenerate[0]);  // a single sample
  EXPECT_THROW(climatology_stats(a, 0, 0, {1, 1}), DataError);
}

TEST(Archive, CyclesBetweenIsHalfOpen) {
  auto a = ForecastArchive::with_shape({"A"}, {"x"}, {0, 10, 20, 30}, {0});
  EXPECT_EQ(a.cycles_between(10, 30), (IndexRange{1, 3}));
  EXPECT_EQ(a.cycles_between(11, 12), (IndexRange{2, 2}));
  EXPECT_EQ(a.cycles_between(40, 50).size(), 0u);
}
