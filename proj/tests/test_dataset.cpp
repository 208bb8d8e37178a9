#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pmmn/dataset.hpp"
#include "pmmn/prepare.hpp"

using namespace pmmn;

namespace {

// Dataset with `days` whole days of 5-minute steps for `nodes` nodes.
SeriesDataset make_days(std::size_t nodes, std::size_t days) {
  SeriesDataset ds;
  const std::size_t steps = days * kSlotsPerDay;
  for (std::size_t i = 0; i < nodes; ++i) ds.node_ids.push_back("n" + std::to_string(i));
  ds.speed = Tensor(nodes, steps);
  ds.observed = Tensor(nodes, steps, 1.0);
  for (std::size_t t = 0; t < steps; ++t) ds.slots.push_back(t % kSlotsPerDay);
  std::tie(ds.train_end, ds.val_end) = split_boundaries(steps);
  return ds;
}

std::string write_file(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / ("pmmn_ds_" + name);
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST(Timestamps, MinuteOfDayAndSlot) {
  EXPECT_EQ(minute_of_day("2012-03-01 00:00:00"), 0);
  EXPECT_EQ(minute_of_day("2012-03-01T13:25:00"), 13 * 60 + 25);
  EXPECT_EQ(slot_of("2012-03-01T23:55:00"), 287u);
  EXPECT_EQ(slot_of("2012-03-01T08:07"), 97u);
  EXPECT_THROW(minute_of_day("2012-02-30 10:00"), Error);
  EXPECT_THROW(minute_of_day("2012-03-01 24:00"), Error);
  EXPECT_THROW(minute_of_day("yesterday"), Error);
}

TEST(LoadDataset, ParsesMissingTokensAndZeros) {
  const auto path = write_file("basic.csv",
                               "timestamp,a,b\n"
                               "2012-03-01 00:00:00,60.5,NaN\n"
                               "2012-03-01 00:05:00,,0\n"
                               "2012-03-01 00:10:00,58,null\n"
                               "2012-03-01 00:15:00,NA,61\n");
  const auto ds = load_dataset_csv(path);
  EXPECT_EQ(ds.node_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.steps(), 4u);
  EXPECT_EQ(ds.slots, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(ds.speed(0, 0), 60.5);
  const double obs_a[4] = {1, 0, 1, 0};
  const double obs_b[4] = {0, 0, 0, 1};
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(ds.observed(0, t), obs_a[t]);
    EXPECT_EQ(ds.observed(1, t), obs_b[t]);
  }
  const auto keep = load_dataset_csv(path, false);
  EXPECT_EQ(keep.observed(1, 1), 1.0);
}

TEST(LoadDataset, Errors) {
  EXPECT_THROW(load_dataset_csv(write_file("ragged.csv", "timestamp,a\n2012-03-01 00:00,1,2\n")), Error);
  EXPECT_THROW(load_dataset_csv(write_file("text.csv", "timestamp,a\n2012-03-01 00:00,fast\n")), Error);
  EXPECT_THROW(load_dataset_csv(write_file("empty.csv", "")), Error);
  EXPECT_THROW(load_dataset_csv(write_file("header.csv", "timestamp,a\n")), Error);
  EXPECT_THROW(load_dataset_csv(write_file("stamp.csv", "timestamp,a\nnoon,1\n")), Error);
  EXPECT_THROW(load_dataset_csv("/nonexistent/pmmn.csv"), Error);
}

TEST(Split, SeventyTenTwenty) {
  const auto [a, b] = split_boundaries(1000);
  EXPECT_EQ(a, 700u);
  EXPECT_EQ(b, 800u);
  const auto [c, d] = split_boundaries(7);
  EXPECT_EQ(c, 4u);
  EXPECT_EQ(d, 5u);
  EXPECT_EQ(parse_split("val"), Split::Val);
  EXPECT_THROW(parse_split("dev"), Error);
}

TEST(Windows, Counts) {
  EXPECT_EQ(make_windows(0, 36, 18, 18).size(), 1u);
  EXPECT_EQ(make_windows(0, 41, 18, 18).size(), 6u);
  EXPECT_TRUE(make_windows(0, 35, 18, 18).empty());
  EXPECT_TRUE(make_windows(10, 5, 2, 2).empty());
}

TEST(Windows, MatchBruteForceEnumerationAndStayInsideSplit) {
  auto ds = make_days(1, 3);
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto [b, e] = ds.range(s);
    const auto w = make_windows(ds, s, 12, 6);
    std::vector<std::size_t> expect;
    for (std::size_t start = 0; start < ds.steps(); ++start) {
      if (start >= b && start + 18 <= e) expect.push_back(start);
    }
    ASSERT_EQ(w.size(), expect.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_EQ(w[i].start, expect[i]);
      EXPECT_GE(w[i].start, b);
      EXPECT_LE(w[i].start + 18, e);
    }
  }
}

TEST(ZScore, Examples) {
  EXPECT_EQ(zscore(50.0, 50.0, 10.0), 0.0);
  EXPECT_EQ(zscore(60.0, 50.0, 10.0), 1.0);
  EXPECT_THROW(zscore(Tensor(1, 1), 0.0, 0.0), Error);
  EXPECT_THROW(unzscore(Tensor(1, 1), 0.0, -1.0), Error);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 120.0);
  Tensor x(5, 7);
  for (double& v : x.values()) v = u(rng);
  EXPECT_LT(max_abs_diff(unzscore(zscore(x, 53.2, 11.7), 53.2, 11.7), x), 1e-12);
}

TEST(ZScore, StatisticsUseTrainingSplitOnly) {
  auto ds = make_days(2, 1);
  for (std::size_t t = 0; t < ds.steps(); ++t) {
    ds.speed(0, t) = t < ds.train_end ? (t % 2 ? 40.0 : 60.0) : 1000.0;
    ds.speed(1, t) = t < ds.train_end ? (t % 2 ? 60.0 : 40.0) : -1000.0;
  }
  const auto [mean, sd] = training_stats(ds);
  EXPECT_DOUBLE_EQ(mean, 50.0);
  EXPECT_DOUBLE_EQ(sd, 10.0);
  for (std::size_t t = 0; t < ds.steps(); ++t) ds.speed(0, t) = ds.speed(1, t) = 5.0;
  EXPECT_THROW(training_stats(ds), Error);
}

TEST(FillMissing, NoMissingIsIdentity) {
  auto ds = make_days(2, 2);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(20.0, 70.0);
  for (double& v : ds.speed.values()) v = u(rng);
  const Tensor before = ds.speed;
  fill_missing(ds);
  EXPECT_EQ(ds.speed, before);
}

TEST(FillMissing, UsesTrainingTimeOfDayMean) {
  auto ds = make_days(1, 4);  // train covers days 0, 1 and most of day 2
  for (std::size_t t = 0; t < ds.steps(); ++t) ds.speed(0, t) = 55.0;
  ds.speed(0, 10) = 40.0;
  ds.speed(0, 10 + kSlotsPerDay) = 60.0;
  ds.speed(0, 10 + 2 * kSlotsPerDay) = 0.0;
  ds.observed(0, 10 + 2 * kSlotsPerDay) = 0.0;
  ds.speed(0, 10 + 3 * kSlotsPerDay) = 0.0;  // test split, same slot
  ds.observed(0, 10 + 3 * kSlotsPerDay) = 0.0;
  fill_missing(ds);
  EXPECT_DOUBLE_EQ(ds.speed(0, 10 + 2 * kSlotsPerDay), 50.0);
  EXPECT_DOUBLE_EQ(ds.speed(0, 10 + 3 * kSlotsPerDay), 50.0);
}

TEST(FillMissing, InterpolatesWhenSlotNeverObservedInTraining) {
  auto ds = make_days(1, 2);
  for (std::size_t t = 0; t < ds.steps(); ++t) ds.speed(0, t) = static_cast<double>(t);
  for (std::size_t t : {std::size_t{5}, 5 + kSlotsPerDay}) {
    ds.observed(0, t) = 0.0;
    ds.speed(0, t) = 0.0;
  }
  fill_missing(ds);
  EXPECT_DOUBLE_EQ(ds.speed(0, 5), 5.0);
  EXPECT_DOUBLE_EQ(ds.speed(0, 5 + kSlotsPerDay), 5.0 + kSlotsPerDay);
}

TEST(FillMissing, RandomMaskMatchesDirectAveraging) {
  auto ds = make_days(3, 5);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : ds.speed.values()) v = 20.0 + 50.0 * u(rng);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t < ds.steps(); ++t) {
      if (u(rng) < 0.2) ds.observed(i, t) = 0.0;
    }
  }
  const SeriesDataset raw = ds;
  fill_missing(ds);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t < ds.steps(); ++t) {
      if (raw.observed(i, t) != 0.0) {
        EXPECT_EQ(ds.speed(i, t), raw.speed(i, t));
        continue;
      }
      double s = 0.0, n = 0.0;
      for (std::size_t q = 0; q < raw.train_end; ++q) {
        if (raw.slots[q] == raw.slots[t] && raw.observed(i, q) != 0.0) {
          s += raw.speed(i, q);
          n += 1.0;
        }
      }
      if (n > 0.0) {
        EXPECT_NEAR(ds.speed(i, t), s / n, 1e-12);
      }
    }
  }
}

TEST(FillMissing, NodeWithoutObservationsIsAnError) {
  auto ds = make_days(2, 1);
  for (std::size_t t = 0; t < ds.steps(); ++t) ds.observed(1, t) = 0.0;
  EXPECT_THROW(fill_missing(ds), Error);
}
