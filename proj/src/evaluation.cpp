#include "rtrans/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "rtrans/reference_tables.hpp"

namespace rtrans {

namespace {
using nlohmann::json;
}

TrialPrediction predict_trial(const ModelParams& params,
                              const KinematicTrial& trial,
                              GrsRepresentation repr) {
  const KinematicTrial normalized = normalize(trial);
  const std::vector<Segment> segs =
      segment_trial(normalized, params.config.segment_len);
  std::vector<Matrix> seg_values;
  seg_values.reserve(segs.size());
  for (const Segment& s : segs) seg_values.push_back(s.values);

  ad::Tape tape;
  const BoundModel bound = bind_model(tape, params, false);
  const TrialForward fwd = forward_trial(bound, seg_values);

  TrialPrediction pred;
  pred.trial_id = trial.trial_id;
  pred.segment_probs.resize(seg_values.size());
  const int classes = params.config.num_classes;
  for (std::size_t s = 0; s < seg_values.size(); ++s) {
    for (int n = 0; n < kNumOsatsCategories; ++n) {
      const Matrix logits = fwd.segment_logits[s][static_cast<std::size_t>(n)]
                                .value();  // 1 x classes
      Eigen::ArrayXd e =
          (logits.row(0).array() - logits.row(0).maxCoeff()).exp();
      pred.segment_probs[s][static_cast<std::size_t>(n)] =
          (e / e.sum()).matrix();
    }
  }

  for (int n = 0; n < kNumOsatsCategories; ++n) {
    Eigen::VectorXd mean_probs = Eigen::VectorXd::Zero(classes);
    for (const auto& probs : pred.segment_probs) {
      mean_probs += probs[static_cast<std::size_t>(n)];
    }
    mean_probs /= static_cast<double>(pred.segment_probs.size());
    Eigen::Index argmax = 0;
    mean_probs.maxCoeff(&argmax);
    pred.final_osats[static_cast<std::size_t>(n)] = static_cast<int>(argmax) + 1;
    double expected = 0.0;
    for (int k = 0; k < classes; ++k) expected += (k + 1) * mean_probs(k);
    pred.expected_osats[static_cast<std::size_t>(n)] = expected;
  }

  pred.grs = repr == GrsRepresentation::ExpectedScore
                 ? aggregate_grs(pred.expected_osats)
                 : aggregate_grs(pred.final_osats);
  return pred;
}

double aggregate_grs(std::span<const double, kNumOsatsCategories> osats) {
  double sum = 0.0;
  for (double s : osats) {
    if (!(s >= 1.0 && s <= 5.0)) {
      throw RangeError("OSATS score " + std::to_string(s) + " outside [1,5]");
    }
    sum += s;
  }
  return sum;
}

double aggregate_grs(const std::array<int, kNumOsatsCategories>& osats) {
  std::array<double, kNumOsatsCategories> d{};
  for (std::size_t i = 0; i < osats.size(); ++i) d[i] = osats[i];
  return aggregate_grs(std::span<const double, kNumOsatsCategories>(d));
}

namespace {

std::vector<double> fractional_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg_rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeMismatchError("spearman: " + std::to_string(pred.size()) +
                             " vs " + std::to_string(truth.size()) +
                             " elements");
  }
  if (pred.size() < 2) {
    throw UndefinedCorrelationError("need at least 2 pairs");
  }
  const std::vector<double> ra = fractional_ranks(pred);
  const std::vector<double> rb = fractional_ranks(truth);
  const double n = static_cast<double>(ra.size());
  const double mean = (n + 1.0) / 2.0;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean, db = rb[i] - mean;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  if (va == 0.0 || vb == 0.0) {
    throw UndefinedCorrelationError("constant ranking");
  }
  return cov / std::sqrt(va * vb);
}

FoldResult score_fold(const std::string& fold_key,
                      const std::vector<TrialPrediction>& predictions,
                      const std::vector<TrialLabels>& truths) {
  FoldResult fr;
  fr.fold_key = fold_key;
  fr.n_test = static_cast<int>(predictions.size());

  std::vector<double> pred_grs, true_grs;
  for (const TrialPrediction& p : predictions) pred_grs.push_back(p.grs);
  for (const TrialLabels& t : truths) true_grs.push_back(t.grs);
  try {
    fr.scc_grs = spearman(pred_grs, true_grs);
  } catch (const UndefinedCorrelationError&) {
    fr.scc_grs.reset();
  }

  for (int n = 0; n < kNumOsatsCategories; ++n) {
    std::vector<double> p, t;
    for (const TrialPrediction& pr : predictions) {
      p.push_back(pr.expected_osats[static_cast<std::size_t>(n)]);
    }
    for (const TrialLabels& l : truths) {
      t.push_back(l.osats[static_cast<std::size_t>(n)]);
    }
    try {
      fr.scc_per_osats[static_cast<std::size_t>(n)] = spearman(p, t);
    } catch (const UndefinedCorrelationError&) {
      fr.scc_per_osats[static_cast<std::size_t>(n)].reset();
    }
  }
  return fr;
}

CvResult run_cv(const std::vector<LabelledTrial>& trials, Scheme scheme,
                const ModelConfig& model_config,
                const TrainConfig& train_config, const CvOptions& options) {
  std::vector<KinematicTrial> bare;
  bare.reserve(trials.size());
  for (const LabelledTrial& lt : trials) bare.push_back(lt.trial);
  const std::vector<FoldSpec> folds = make_folds(bare, scheme);

  CvResult cv;
  cv.scheme = scheme;
  cv.folds.resize(folds.size());

  auto run_fold = [&](std::size_t f) {
    const FoldSpec& fold = folds[f];
    std::vector<LabelledTrial> train_split;
    std::vector<const LabelledTrial*> test_split;
    for (const LabelledTrial& lt : trials) {
      if (fold.test_ids.count(lt.trial.trial_id)) {
        test_split.push_back(&lt);
      } else {
        train_split.push_back(lt);
      }
    }
    ModelConfig mc = model_config;
    TrainConfig tc = train_config;
    mc.seed = model_config.seed + f;
    tc.seed = train_config.seed + f;
    const TrainResult trained = train(train_split, mc, tc);

    std::vector<TrialPrediction> preds;
    std::vector<TrialLabels> truths;
    for (const LabelledTrial* lt : test_split) {
      preds.push_back(predict_trial(trained.params, lt->trial, options.repr));
      truths.push_back(lt->labels);
    }
    cv.folds[f] = score_fold(fold.fold_key, preds, truths);
  };

  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    const int n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(jobs), folds.size());
    for (int w = 0; w < n_workers; ++w) {
      workers.emplace_back([&]() {
        while (true) {
          const std::size_t f = next.fetch_add(1);
          if (f >= folds.size()) break;
          run_fold(f);
        }
      });
    }
    for (std::thread& t : workers) t.join();
  }

  if (options.on_fold) {
    for (const FoldResult& fr : cv.folds) options.on_fold(fr);
  }

  double grs_sum = 0.0;
  int grs_count = 0;
  std::array<double, kNumOsatsCategories> osats_sum{};
  std::array<int, kNumOsatsCategories> osats_count{};
  for (const FoldResult& fr : cv.folds) {
    if (fr.scc_grs) {
      grs_sum += *fr.scc_grs;
      ++grs_count;
    } else {
      ++cv.undefined_grs_folds;
    }
    for (int n = 0; n < kNumOsatsCategories; ++n) {
      if (fr.scc_per_osats[static_cast<std::size_t>(n)]) {
        osats_sum[static_cast<std::size_t>(n)] +=
            *fr.scc_per_osats[static_cast<std::size_t>(n)];
        ++osats_count[static_cast<std::size_t>(n)];
      }
    }
  }
  if (grs_count > 0) cv.averaged_scc_grs = grs_sum / grs_count;
  for (int n = 0; n < kNumOsatsCategories; ++n) {
    if (osats_count[static_cast<std::size_t>(n)] > 0) {
      cv.averaged_scc_osats[static_cast<std::size_t>(n)] =
          osats_sum[static_cast<std::size_t>(n)] /
          osats_count[static_cast<std::size_t>(n)];
    }
  }
  return cv;
}

namespace {

json optional_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string task_label(const CvResult& cv) {
  return cv.across_tasks ? "across" : to_string(cv.task);
}

}  // namespace

void write_results_json(const std::filesystem::path& path,
                        const CvResult& cv) {
  json j;
  j["task"] = task_label(cv);
  j["scheme"] = to_string(cv.scheme);
  j["averaged_scc_grs"] = optional_to_json(cv.averaged_scc_grs);
  json osats = json::array();
  for (const auto& v : cv.averaged_scc_osats) osats.push_back(optional_to_json(v));
  j["averaged_scc_osats"] = std::move(osats);
  j["undefined_grs_folds"] = cv.undefined_grs_folds;
  json folds = json::array();
  for (const FoldResult& fr : cv.folds) {
    json f;
    f["fold_key"] = fr.fold_key;
    f["n_test"] = fr.n_test;
    f["scc_grs"] = optional_to_json(fr.scc_grs);
    json per = json::array();
    for (const auto& v : fr.scc_per_osats) per.push_back(optional_to_json(v));
    f["scc_per_osats"] = std::move(per);
    folds.push_back(std::move(f));
  }
  j["folds"] = std::move(folds);
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write results to " + path.string());
  out << j.dump(2) << "\n";
}

CvResult read_results_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read results from " + path.string());
  json j;
  in >> j;
  CvResult cv;
  const std::string task = j.at("task").get<std::string>();
  if (task == "across") {
    cv.across_tasks = true;
  } else {
    cv.task = task_from_string(task);
  }
  cv.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  cv.averaged_scc_grs = optional_from_json(j.at("averaged_scc_grs"));
  for (std::size_t n = 0; n < kNumOsatsCategories; ++n) {
    cv.averaged_scc_osats[n] = optional_from_json(j.at("averaged_scc_osats")[n]);
  }
  cv.undefined_grs_folds = j.at("undefined_grs_folds").get<int>();
  for (const json& f : j.at("folds")) {
    FoldResult fr;
    fr.fold_key = f.at("fold_key").get<std::string>();
    fr.n_test = f.at("n_test").get<int>();
    fr.scc_grs = optional_from_json(f.at("scc_grs"));
    for (std::size_t n = 0; n < kNumOsatsCategories; ++n) {
      fr.scc_per_osats[n] = optional_from_json(f.at("scc_per_osats")[n]);
    }
    cv.folds.push_back(std::move(fr));
  }
  return cv;
}

namespace {

std::string cell(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << v;
  return os.str();
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << *v;
  return os.str();
}

const CvResult* find_ours(const std::vector<CvResult>& ours,
                          const std::string& task, Scheme scheme) {
  for (const CvResult& cv : ours) {
    if (task_label(cv) == task && cv.scheme == scheme) return &cv;
  }
  return nullptr;
}

std::optional<double> ours_grs(const std::vector<CvResult>& ours,
                               const std::string& task, Scheme scheme) {
  const CvResult* cv = find_ours(ours, task, scheme);
  if (!cv) return std::nullopt;
  return cv->averaged_scc_grs;
}

// mean over the 5 per-category averaged correlations, when all defined
std::optional<double> ours_osats_avg(const std::vector<CvResult>& ours,
                                     const std::string& task, Scheme scheme) {
  const CvResult* cv = find_ours(ours, task, scheme);
  if (!cv) return std::nullopt;
  double sum = 0.0;
  for (const auto& v : cv->averaged_scc_osats) {
    if (!v) return std::nullopt;
    sum += *v;
  }
  return sum / kNumOsatsCategories;
}

}  // namespace

void write_report_tables(const std::filesystem::path& dir,
                         const std::vector<CvResult>& ours) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    std::ofstream out(dir / "table1_grs_scc.csv");
    out << "input,method,KT_LOSO,KT_LOUO,NP_LOSO,NP_LOUO,SU_LOSO,SU_LOUO,"
           "across_LOSO,across_LOUO\n";
    for (const auto& row : reference::kGrsComparison) {
      out << row.input << "," << row.method << "," << cell(row.kt_loso) << ","
          << cell(row.kt_louo) << "," << cell(row.np_loso) << ","
          << cell(row.np_louo) << "," << cell(row.su_loso) << ","
          << cell(row.su_louo) << "," << cell(row.across_loso) << ","
          << cell(row.across_louo) << "\n";
    }
    out << "K,ours";
    for (const char* task : {"KT", "NP", "SU", "across"}) {
      for (Scheme scheme : {Scheme::LOSO, Scheme::LOUO}) {
        out << "," << cell(ours_grs(ours, task, scheme));
      }
    }
    out << "\n";
  }

  {
    std::ofstream out(dir / "table2_osats_avg_scc.csv");
    out << "method,KT,NP,SU,across,note\n";
    for (const auto& row : reference::kOsatsAvgComparison) {
      out << row.method << "," << cell(row.kt) << "," << cell(row.np) << ","
          << cell(row.su) << "," << cell(row.across) << ",";
      if (!std::isnan(row.across_alt)) {
        out << "alternate across-tasks value " << cell(row.across_alt);
      }
      out << "\n";
    }
    out << "ours";
    for (const char* task : {"KT", "NP", "SU", "across"}) {
      out << "," << cell(ours_osats_avg(ours, task, Scheme::LOSO));
    }
    out << ",\n";
  }

  {
    std::ofstream out(dir / "table3_osats_specific_kt_loso.csv");
    out << "method,RT,TM,OP,mean\n";
    for (const auto& row : reference::kOsatsSpecificKtLoso) {
      out << row.method << "," << cell(row.respect_for_tissue) << ","
          << cell(row.time_and_motion) << ","
          << cell(row.overall_performance) << "," << cell(row.mean) << "\n";
    }
    const CvResult* kt = find_ours(ours, "KT", Scheme::LOSO);
    out << "ours";
    if (kt && kt->averaged_scc_osats[kRespectForTissue] &&
        kt->averaged_scc_osats[kTimeAndMotion] &&
        kt->averaged_scc_osats[kOverallPerformance]) {
      const double rt = *kt->averaged_scc_osats[kRespectForTissue];
      const double tm = *kt->averaged_scc_osats[kTimeAndMotion];
      const double op = *kt->averaged_scc_osats[kOverallPerformance];
      out << "," << cell(std::optional<double>(rt)) << ","
          << cell(std::optional<double>(tm)) << ","
          << cell(std::optional<double>(op)) << ","
          << cell(std::optional<double>((rt + tm + op) / 3.0));
    } else {
      out << ",,,,";
    }
    out << "\n";
  }
}

}  // namespace rtrans
