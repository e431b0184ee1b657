#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "rtrans/dataset.hpp"
#include "rtrans/evaluation.hpp"
#include "rtrans/rng.hpp"

namespace rtrans {

enum class Band { Poor, Average, Good };

const char* to_string(Band b);

// score 1-2 -> poor, 3 -> average, 4-5 -> good
Band categorize(int score);

// Qualitative anchor text per (category, band), loaded from the data file
// shipped with the repo.
class DescriptorTable {
 public:
  static DescriptorTable load(const std::filesystem::path& path);

  const std::string& text(OsatsCategory category, Band band) const;
  void set(OsatsCategory category, Band band, std::string text);

 private:
  std::array<std::array<std::string, 3>, kNumOsatsCategories> texts_;
};

struct TimelineEntry {
  int segment_index = 1;  // s in [1, S]
  long start_frame = 0;
  long end_frame = 0;  // exclusive
  std::array<int, kNumOsatsCategories> scores{};
  std::array<Band, kNumOsatsCategories> bands{};
  std::array<std::string, kNumOsatsCategories> descriptors;
};

struct FeedbackTimeline {
  std::string trial_id;
  int segment_len = 0;
  std::vector<TimelineEntry> entries;
};

// One entry per segment carrying per-category score, band and descriptor.
// The overall-performance series is the headline band track.
FeedbackTimeline build_timeline(const TrialPrediction& prediction,
                                const DescriptorTable& descriptors,
                                int segment_len);

struct PerturbRecord {
  int segment_index = 0;
  OsatsCategory category = kTimeAndMotion;
  Band original = Band::Poor;
  Band replacement = Band::Poor;
};

struct PerturbResult {
  FeedbackTimeline timeline;
  std::vector<PerturbRecord> log;  // exactly the flipped entries
};

// Each band independently replaced by a uniformly random different band
// with probability flip_rate; descriptors follow the new band.
PerturbResult perturb_predictions(const FeedbackTimeline& timeline, Rng& rng,
                                  double flip_rate);

// Exact upper-tail P[X >= k] for X ~ Binomial(n, p0), summed in log space.
double binomial_test_one_tailed(int k, int n, double p0);

void write_timeline_json(const std::filesystem::path& path,
                         const FeedbackTimeline& timeline);
// segment,start_frame,end_frame,category,score,band,descriptor
void write_timeline_csv(const std::filesystem::path& path,
                        const FeedbackTimeline& timeline);
// per-category (segment index, score) series for external plotting
void write_plot_series(const std::filesystem::path& path,
                       const FeedbackTimeline& timeline);

}  // namespace rtrans
