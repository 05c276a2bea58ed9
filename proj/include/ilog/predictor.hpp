#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ilog/context.hpp"
#include "ilog/ilogcal.hpp"
#include "ilog/schedule.hpp"
#include "ilog/sim.hpp"
#include "ilog/time.hpp"

// Answer-quality prediction: features from the event log, five classifiers,
// evaluation protocols and the schedule recommendations they feed.
namespace ilog::predict {

using namespace std::chrono_literals;

/// High quality iff the answer was stored within `horizon` of delivery
/// (inclusive). Requires a delivered occurrence.
bool label_quality(const sim::TimingMetrics& t, Duration horizon = 30min);

enum class LabelSource { ResponseTime, Correctness };

inline const std::string kUnknown = "Unknown";

struct FeatureVector {
  std::string participant;
  schedule::SourceRef source;
  std::uint64_t seq_no = 0;
  Instant delivered{};
  int weekday = 1;  // 1 = Monday
  DayPeriod period = DayPeriod::Morning;
  std::string we = kUnknown, wa = kUnknown, wo = kUnknown, wi = kUnknown;
  std::string gender = kUnknown, degree = kUnknown, department = kUnknown;
  bool label = false;
  std::optional<bool> correct;  // ground-truth correctness, when the log carries it
  bool operator==(const FeatureVector&) const = default;
};

struct FeatureOptions {
  Duration horizon = 30min;
  context::ProfileVocabulary vocabulary;  // empty sets accept any value
};

/// One vector per delivered question of the participant, in delivery order.
/// Context labels are the most recent answers stored at or before delivery;
/// values outside the catalog vocabularies become Unknown.
std::vector<FeatureVector> extract_features(const sim::EventLog& log, const cal::ExperimentPlan& plan,
                                            const context::ParticipantProfile& profile,
                                            const FeatureOptions& options = {});
/// All profiles, concatenated in profile order.
std::vector<FeatureVector> extract_all(const sim::EventLog& log, const cal::ExperimentPlan& plan,
                                       const std::vector<context::ParticipantProfile>& profiles,
                                       const FeatureOptions& options = {});

std::string features_csv(const std::vector<FeatureVector>& rows);

/// Stable identity of a row, independent of its position.
std::uint64_t row_id(const FeatureVector& f);

// Encoding.

/// One-hot encoding with an explicit Unknown column per field. Context fields
/// use the catalog vocabularies; demographic fields use the sorted values seen
/// in the data, so the encoding does not depend on row order.
class Encoder {
public:
  Encoder() = default;
  Encoder(const std::vector<FeatureVector>& rows, bool include_mood);
  std::size_t width() const { return columns_.size(); }
  const std::vector<std::string>& columns() const { return columns_; }
  bool include_mood() const { return include_mood_; }
  void encode(const FeatureVector& f, std::uint8_t* out) const;
  /// Column index of weekday w and day period p, for partial dependence.
  std::size_t weekday_column(int w) const { return std::size_t(w - 1); }
  std::size_t period_column(DayPeriod p) const { return 7 + std::size_t(p); }

  void save(std::ostream& out) const;
  static Encoder load(std::istream& in);

private:
  struct Field {
    std::string name;
    std::vector<std::string> values;  // Unknown last
    std::size_t offset = 0;
  };
  void layout();
  std::size_t index(const Field& f, const std::string& v) const;

  bool include_mood_ = false;
  std::vector<Field> fields_;
  std::vector<std::string> columns_;
};

/// Dense 0/1 design matrix, row major.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> data;
  const std::uint8_t* row(std::size_t i) const { return data.data() + i * cols; }
  std::uint8_t* row(std::size_t i) { return data.data() + i * cols; }
};

struct Dataset {
  Encoder encoder;
  Matrix x;
  std::vector<int> y;
  std::vector<std::uint64_t> ids;
  std::vector<std::string> participants;
  std::vector<Instant> delivered;
};

Dataset make_dataset(const std::vector<FeatureVector>& rows, bool include_mood = false,
                     LabelSource label = LabelSource::ResponseTime);
/// Rows [indices] of d, sharing its encoder.
Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices);

// Classifiers.

enum class ClassifierKind { RandomForest, KNearestNeighbors, LogisticRegression, GaussianNaiveBayes, LinearSVM };
std::string_view to_string(ClassifierKind k);
std::optional<ClassifierKind> parse_classifier(std::string_view s);
inline constexpr std::array kAllClassifiers{ClassifierKind::RandomForest, ClassifierKind::KNearestNeighbors,
                                            ClassifierKind::LogisticRegression, ClassifierKind::GaussianNaiveBayes,
                                            ClassifierKind::LinearSVM};

/// Hyperparameters (defaults in parentheses):
///   RandomForest: trees (100), max_depth (12), max_features (0 = sqrt of width), min_samples_leaf (1)
///   KNearestNeighbors: k (5)
///   LogisticRegression: learning_rate (0.5), iterations (300), l2 (1e-4)
///   GaussianNaiveBayes: var_smoothing (1e-9)
///   LinearSVM: lambda (1e-4), epochs (20)
struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::RandomForest;
  std::map<std::string, double> hyperparameters;
  std::uint64_t seed = 0;
};

class Classifier {
public:
  virtual ~Classifier() = default;
  virtual ClassifierKind kind() const = 0;
  /// Throws DegenerateData when y holds a single class.
  virtual void fit(const Matrix& x, const std::vector<int>& y) = 0;
  /// Score in [0, 1]; >= 0.5 predicts the high-quality class.
  virtual double score(const std::uint8_t* row) const = 0;
  int predict(const std::uint8_t* row) const { return score(row) >= 0.5 ? 1 : 0; }
  /// Scores for every row; parallel over rows where the model supports it.
  virtual std::vector<double> score_all(const Matrix& x) const;
  virtual void save(std::ostream& out) const = 0;
  virtual void load(std::istream& in) = 0;
};

/// Throws ValidationError for unknown or out-of-range hyperparameters.
std::unique_ptr<Classifier> make_classifier(const ClassifierSpec& spec);

/// Versioned flat text file: encoder, classifier kind and parameters.
std::string save_model(const Encoder& encoder, const Classifier& model);
struct LoadedModel {
  Encoder encoder;
  std::unique_ptr<Classifier> model;
};
/// Throws SchemaError for an unknown version or malformed content.
LoadedModel load_model(const std::string& text);

/// KNN scoring without threads; the parallel path must agree with it.
std::vector<double> knn_score_serial(const Classifier& knn, const Matrix& x);

// Evaluation.

struct Confusion {
  // [actual][predicted], 0 = low quality, 1 = high quality.
  std::array<std::array<std::int64_t, 2>, 2> m{};
  std::int64_t total() const { return m[0][0] + m[0][1] + m[1][0] + m[1][1]; }
  Confusion& operator+=(const Confusion& o);
  bool operator==(const Confusion&) const = default;
};

struct Metrics {
  double accuracy = 0, kappa = 0, precision = 0, recall = 0, f1 = 0;
  bool operator==(const Metrics&) const = default;
};

/// Metrics of the positive (high-quality) class; undefined ratios are 0.
Metrics metrics_from(const Confusion& c);

struct FiveFoldCV {};
struct PerParticipantSplit {
  std::string participant;
  Duration train_span = 14 * kDay;  // from the participant's first delivery
  Duration test_span = 14 * kDay;   // right after the training span
};
using Protocol = std::variant<FiveFoldCV, PerParticipantSplit>;

struct EvalReport {
  ClassifierKind kind = ClassifierKind::RandomForest;
  std::string split;  // e.g. "5-fold" or "participant p3: 14d train / 14d test"
  Confusion confusion;  // pooled over folds
  Metrics metrics;      // from the pooled confusion matrix
  Metrics fold_mean;    // mean of per-fold metrics
  std::vector<Metrics> folds;
  std::size_t train_rows = 0, test_rows = 0;
  bool operator==(const EvalReport&) const = default;
};

/// Fold of each row: rows are ranked by a hash of (row id, seed) and dealt out
/// round-robin, so folds are disjoint, cover all rows, differ in size by at
/// most one and do not depend on row order.
std::vector<int> assign_folds(const std::vector<std::uint64_t>& ids, std::uint64_t seed, int k = 5);

/// Throws DegenerateData when a training set holds a single class.
EvalReport train_eval(const Dataset& data, const ClassifierSpec& spec, const Protocol& protocol);
/// Same, with folds trained one after another.
EvalReport train_eval_serial(const Dataset& data, const ClassifierSpec& spec, const Protocol& protocol);

struct ParticipantResult {
  std::string participant;
  std::optional<EvalReport> report;
  std::string skipped;  // reason when report is empty
};

/// Per-participant protocol for everyone in the data, in parallel.
std::vector<ParticipantResult> evaluate_participants(const Dataset& data, const ClassifierSpec& spec,
                                                     Duration train_span = 14 * kDay,
                                                     Duration test_span = 14 * kDay);

nlohmann::ordered_json report_to_json(const EvalReport& r);

// Recommendations.

struct CellScore {
  int weekday = 1;
  DayPeriod period = DayPeriod::Morning;
  double probability = 0;
  bool operator==(const CellScore&) const = default;
};

struct WindowRecommendation {
  std::string participant;
  std::vector<CellScore> ranked;  // best first; ties by (weekday, period)
  bool no_preference = false;     // spread of scores below the indifference threshold
};

/// Partial dependence of a model trained on the participant's rows over the
/// 7 x 4 (weekday, day period) cells.
WindowRecommendation recommend_windows(const Dataset& data, const std::string& participant, const ClassifierSpec& spec,
                                       double indifference = 0.05);

struct ProposedRevision {
  schedule::Revision revision;
  bool applied = false;
  std::string reason;  // why it was rejected
};

struct RevisionPlan {
  schedule::Timeline timeline;  // after the applied revisions
  std::vector<ProposedRevision> proposals;
};

/// Platform shifts moving upcoming questions in [now, now + horizon) into the
/// nearest preferred cell (within `indifference` of the best). Each goes through
/// the schedule engine's policy; rejected ones are kept in the log.
RevisionPlan plan_revisions(const WindowRecommendation& rec, const schedule::Timeline& timeline,
                            const schedule::RevisionPolicy& policy, const std::string& timezone, Instant now,
                            Duration horizon = 7 * kDay, double indifference = 0.05);

nlohmann::ordered_json recommendation_to_json(const WindowRecommendation& r);

} // namespace ilog::predict
