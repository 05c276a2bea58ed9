#include "ilog/predictor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "ilog/catalog.hpp"
#include "ilog/digest.hpp"
#include "ilog/errors.hpp"
#include "ilog/tz.hpp"

namespace ilog::predict {

using sim::EventKind;
using sim::EventLog;
using sim::OccurrenceKey;

bool label_quality(const sim::TimingMetrics& t, Duration horizon) {
  return t.delivered && t.stored && *t.stored - *t.delivered <= horizon;
}

// Features ----------------------------------------------------------------------

namespace {

std::string in_vocab(const std::string& v, std::span<const std::string_view> vocab) {
  return std::find(vocab.begin(), vocab.end(), v) != vocab.end() ? v : kUnknown;
}

std::string in_set(const std::string& v, const std::set<std::string>& allowed) {
  if (v.empty()) return kUnknown;
  return allowed.empty() || allowed.contains(v) ? v : kUnknown;
}

} // namespace

std::vector<FeatureVector> extract_features(const EventLog& log, const cal::ExperimentPlan& plan,
                                            const context::ParticipantProfile& profile,
                                            const FeatureOptions& options) {
  std::map<schedule::SourceRef, cal::Category> categories;
  for (const auto& c : plan.calendars)
    for (const auto& ctx : c.contexts)
      for (const auto& q : ctx.questions)
        categories[{c.id, ctx.id, q.cid, schedule::SourceKind::Question}] = q.question.category;

  EventLog own;
  for (const auto& e : log)
    if (e.participant == profile.id && !e.is_reading()) own.push_back(e);
  std::stable_sort(own.begin(), own.end(), sim::event_less);

  // Answers per category, by storage time.
  std::map<cal::Category, std::vector<std::pair<Instant, std::string>>> answers;
  std::map<OccurrenceKey, bool> correctness;
  for (const auto& e : own) {
    if (e.kind != EventKind::AnswerStored) continue;
    if (e.correct) correctness[*sim::key_of(e)] = *e.correct;
    auto cat = categories.find(e.source);
    if (cat != categories.end() && e.value) answers[cat->second].emplace_back(e.at, *e.value);
  }
  auto latest = [&](cal::Category c, Instant t) -> std::string {
    const auto& xs = answers[c];
    auto it = std::upper_bound(xs.begin(), xs.end(), t, [](Instant t, const auto& a) { return t < a.first; });
    return it == xs.begin() ? kUnknown : std::prev(it)->second;
  };

  auto tz = TimeZone::load(profile.timezone);
  std::vector<FeatureVector> out;
  for (const auto& [key, t] : sim::derive_timings(own, false)) {
    if (!t.delivered) continue;
    FeatureVector f;
    f.participant = profile.id;
    f.source = key.source;
    f.seq_no = key.seq_no;
    f.delivered = *t.delivered;
    auto local = tz.to_local(*t.delivered);
    f.weekday = iso_weekday(local);
    f.period = day_period(hour_of_day(local));
    f.we = in_vocab(latest(cal::Category::WE, f.delivered), catalog::locations());
    f.wa = in_vocab(latest(cal::Category::WA, f.delivered), catalog::activities());
    f.wo = in_vocab(latest(cal::Category::WO, f.delivered), catalog::companions());
    f.wi = in_vocab(latest(cal::Category::WI, f.delivered), catalog::moods());
    f.gender = in_set(profile.gender, options.vocabulary.genders);
    f.degree = in_set(profile.degree, options.vocabulary.degrees);
    f.department = in_set(profile.department, options.vocabulary.departments);
    f.label = label_quality(t, options.horizon);
    if (auto c = correctness.find(key); c != correctness.end()) f.correct = c->second;
    out.push_back(std::move(f));
  }
  std::stable_sort(out.begin(), out.end(), [](const FeatureVector& a, const FeatureVector& b) {
    return std::tie(a.delivered, a.source, a.seq_no) < std::tie(b.delivered, b.source, b.seq_no);
  });
  return out;
}

std::vector<FeatureVector> extract_all(const EventLog& log, const cal::ExperimentPlan& plan,
                                       const std::vector<context::ParticipantProfile>& profiles,
                                       const FeatureOptions& options) {
  std::vector<FeatureVector> out;
  for (const auto& p : profiles) {
    auto rows = extract_features(log, plan, p, options);
    std::move(rows.begin(), rows.end(), std::back_inserter(out));
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

} // namespace

std::string features_csv(const std::vector<FeatureVector>& rows) {
  std::string out = "participant,source,seq,delivered,weekday,day_period,we,wa,wo,wi,gender,degree,department,label,correct\n";
  for (const auto& f : rows) {
    out += csv_field(f.participant) + "," + to_string(f.source) + "," + std::to_string(f.seq_no) + "," +
           format_iso(f.delivered) + "," + std::to_string(f.weekday) + "," + std::string(to_string(f.period)) + "," +
           csv_field(f.we) + "," + csv_field(f.wa) + "," + csv_field(f.wo) + "," + csv_field(f.wi) + "," +
           csv_field(f.gender) + "," + csv_field(f.degree) + "," + csv_field(f.department) + "," +
           (f.label ? "1" : "0") + "," + (f.correct ? (*f.correct ? "1" : "0") : "") + "\n";
  }
  return out;
}

std::uint64_t row_id(const FeatureVector& f) {
  return fnv1a(f.participant + "/" + to_string(f.source) + "/" + std::to_string(f.seq_no));
}

// Encoding ------------------------------------------------------------------------

Encoder::Encoder(const std::vector<FeatureVector>& rows, bool include_mood) : include_mood_(include_mood) {
  auto vocab = [](std::span<const std::string_view> xs) {
    std::vector<std::string> v(xs.begin(), xs.end());
    v.push_back(kUnknown);
    return v;
  };
  auto seen = [&](auto member) {
    std::set<std::string> s;
    for (const auto& r : rows)
      if (r.*member != kUnknown) s.insert(r.*member);
    std::vector<std::string> v(s.begin(), s.end());
    v.push_back(kUnknown);
    return v;
  };
  fields_.push_back({"weekday", {"1", "2", "3", "4", "5", "6", "7"}, 0});
  fields_.push_back({"day_period", {"Morning", "Afternoon", "Evening", "Night"}, 0});
  fields_.push_back({"we", vocab(catalog::locations()), 0});
  fields_.push_back({"wa", vocab(catalog::activities()), 0});
  fields_.push_back({"wo", vocab(catalog::companions()), 0});
  if (include_mood) fields_.push_back({"wi", vocab(catalog::moods()), 0});
  fields_.push_back({"gender", seen(&FeatureVector::gender), 0});
  fields_.push_back({"degree", seen(&FeatureVector::degree), 0});
  fields_.push_back({"department", seen(&FeatureVector::department), 0});
  layout();
}

void Encoder::layout() {
  columns_.clear();
  for (auto& f : fields_) {
    f.offset = columns_.size();
    for (const auto& v : f.values) columns_.push_back(f.name + "=" + v);
  }
}

std::size_t Encoder::index(const Field& f, const std::string& v) const {
  auto it = std::find(f.values.begin(), f.values.end(), v);
  if (it == f.values.end()) it = std::prev(f.values.end());  // Unknown, or the last value for closed fields
  return f.offset + std::size_t(it - f.values.begin());
}

void Encoder::encode(const FeatureVector& f, std::uint8_t* out) const {
  std::fill(out, out + width(), std::uint8_t{0});
  for (const auto& field : fields_) {
    const std::string* v = nullptr;
    std::string tmp;
    if (field.name == "weekday") tmp = std::to_string(f.weekday), v = &tmp;
    else if (field.name == "day_period") tmp = std::string(to_string(f.period)), v = &tmp;
    else if (field.name == "we") v = &f.we;
    else if (field.name == "wa") v = &f.wa;
    else if (field.name == "wo") v = &f.wo;
    else if (field.name == "wi") v = &f.wi;
    else if (field.name == "gender") v = &f.gender;
    else if (field.name == "degree") v = &f.degree;
    else if (field.name == "department") v = &f.department;
    if (v) out[index(field, *v)] = 1;
  }
}

void Encoder::save(std::ostream& out) const {
  out << "encoder " << (include_mood_ ? 1 : 0) << ' ' << fields_.size() << '\n';
  for (const auto& f : fields_) {
    out << f.name << ' ' << f.values.size() << '\n';
    for (const auto& v : f.values) out << v << '\n';
  }
}

Encoder Encoder::load(std::istream& in) {
  Encoder e;
  std::string tag;
  int mood = 0;
  std::size_t n = 0;
  if (!(in >> tag >> mood >> n) || tag != "encoder" || n > 64) throw SchemaError("model: bad encoder header");
  e.include_mood_ = mood != 0;
  for (std::size_t i = 0; i < n; ++i) {
    Field f;
    std::size_t count = 0;
    if (!(in >> f.name >> count) || count == 0 || count > 4096) throw SchemaError("model: bad encoder field");
    in.ignore(1);
    for (std::size_t k = 0; k < count; ++k) {
      std::string v;
      if (!std::getline(in, v)) throw SchemaError("model: truncated encoder field " + f.name);
      f.values.push_back(std::move(v));
    }
    e.fields_.push_back(std::move(f));
  }
  e.layout();
  if (e.width() < 11 || e.columns_[0] != "weekday=1" || e.columns_[7] != "day_period=Morning")
    throw SchemaError("model: encoder does not start with weekday and day period");
  return e;
}

Dataset make_dataset(const std::vector<FeatureVector>& rows, bool include_mood, LabelSource label) {
  Dataset d;
  d.encoder = Encoder(rows, include_mood);
  d.x.rows = rows.size();
  d.x.cols = d.encoder.width();
  d.x.data.assign(d.x.rows * d.x.cols, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.encoder.encode(rows[i], d.x.row(i));
    d.y.push_back(label == LabelSource::ResponseTime ? rows[i].label : rows[i].correct.value_or(false));
    d.ids.push_back(row_id(rows[i]));
    d.participants.push_back(rows[i].participant);
    d.delivered.push_back(rows[i].delivered);
  }
  return d;
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices) {
  Dataset s;
  s.encoder = d.encoder;
  s.x.rows = indices.size();
  s.x.cols = d.x.cols;
  s.x.data.reserve(s.x.rows * s.x.cols);
  for (auto i : indices) {
    s.x.data.insert(s.x.data.end(), d.x.row(i), d.x.row(i) + d.x.cols);
    s.y.push_back(d.y[i]);
    s.ids.push_back(d.ids[i]);
    s.participants.push_back(d.participants[i]);
    s.delivered.push_back(d.delivered[i]);
  }
  return s;
}

// Classifiers ------------------------------------------------------------------------

std::string_view to_string(ClassifierKind k) {
  switch (k) {
  case ClassifierKind::RandomForest: return "RandomForest";
  case ClassifierKind::KNearestNeighbors: return "KNearestNeighbors";
  case ClassifierKind::LogisticRegression: return "LogisticRegression";
  case ClassifierKind::GaussianNaiveBayes: return "GaussianNaiveBayes";
  case ClassifierKind::LinearSVM: return "LinearSVM";
  }
  return "?";
}

std::optional<ClassifierKind> parse_classifier(std::string_view s) {
  static const std::map<std::string_view, ClassifierKind> kNames{
      {"RandomForest", ClassifierKind::RandomForest},       {"rf", ClassifierKind::RandomForest},
      {"KNearestNeighbors", ClassifierKind::KNearestNeighbors}, {"knn", ClassifierKind::KNearestNeighbors},
      {"LogisticRegression", ClassifierKind::LogisticRegression}, {"lr", ClassifierKind::LogisticRegression},
      {"GaussianNaiveBayes", ClassifierKind::GaussianNaiveBayes}, {"gnb", ClassifierKind::GaussianNaiveBayes},
      {"LinearSVM", ClassifierKind::LinearSVM},             {"svm", ClassifierKind::LinearSVM}};
  auto it = kNames.find(s);
  return it == kNames.end() ? std::nullopt : std::optional(it->second);
}

std::vector<double> Classifier::score_all(const Matrix& x) const {
  std::vector<double> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = score(x.row(i));
  return out;
}

namespace {

void require_two_classes(const std::vector<int>& y) {
  if (y.empty()) throw DegenerateData("training set is empty");
  bool pos = std::find(y.begin(), y.end(), 1) != y.end();
  bool neg = std::find(y.begin(), y.end(), 0) != y.end();
  if (!pos || !neg) throw DegenerateData(std::string("training set holds only ") + (pos ? "high" : "low") + "-quality rows");
}

double sigmoid(double z) { return z >= 0 ? 1 / (1 + std::exp(-z)) : std::exp(z) / (1 + std::exp(z)); }

std::vector<std::vector<std::uint32_t>> active_columns(const Matrix& x) {
  std::vector<std::vector<std::uint32_t>> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j)
      if (x.row(i)[j]) out[i].push_back(std::uint32_t(j));
  return out;
}

template <class T>
void write_vec(std::ostream& out, const std::vector<T>& v) {
  out << v.size();
  for (const auto& x : v) out << ' ' << x;
  out << '\n';
}

template <class T>
std::vector<T> read_vec(std::istream& in, std::size_t limit = 100'000'000) {
  std::size_t n = 0;
  if (!(in >> n) || n > limit) throw SchemaError("model: bad vector length");
  std::vector<T> v(n);
  for (auto& x : v)
    if (!(in >> x)) throw SchemaError("model: truncated vector");
  return v;
}

// Bagged CART on binary features. Each node splits on one column (0 left, 1 right).
class RandomForest final : public Classifier {
public:
  RandomForest(std::size_t trees, int max_depth, std::size_t max_features, std::size_t min_leaf, std::uint64_t seed)
      : n_trees_(trees), max_depth_(max_depth), max_features_(max_features), min_leaf_(min_leaf), seed_(seed) {}

  ClassifierKind kind() const override { return ClassifierKind::RandomForest; }

  void fit(const Matrix& x, const std::vector<int>& y) override {
    require_two_classes(y);
    cols_ = x.cols;
    std::size_t mtry = max_features_ ? std::min(max_features_, x.cols)
                                     : std::max<std::size_t>(1, std::size_t(std::lround(std::sqrt(double(x.cols)))));
    trees_.assign(n_trees_, {});
    for (std::size_t t = 0; t < n_trees_; ++t) {
      sim::Rng rng(mix64(seed_ ^ mix64(t + 1)));
      std::vector<std::uint32_t> idx(x.rows);
      for (auto& i : idx) i = std::uint32_t(rng.below(x.rows));
      grow(trees_[t], x, y, std::move(idx), mtry, rng);
    }
  }

  double score(const std::uint8_t* row) const override {
    double sum = 0;
    for (const auto& tree : trees_) {
      std::int32_t n = 0;
      while (tree[std::size_t(n)].feature >= 0)
        n = row[tree[std::size_t(n)].feature] ? tree[std::size_t(n)].right : tree[std::size_t(n)].left;
      sum += tree[std::size_t(n)].value;
    }
    return trees_.empty() ? 0 : sum / double(trees_.size());
  }

  void save(std::ostream& out) const override {
    out << "forest " << trees_.size() << ' ' << cols_ << '\n';
    for (const auto& tree : trees_) {
      out << tree.size() << '\n';
      for (const auto& n : tree) out << n.feature << ' ' << n.left << ' ' << n.right << ' ' << n.value << '\n';
    }
  }

  void load(std::istream& in) override {
    std::string tag;
    std::size_t n = 0;
    if (!(in >> tag >> n >> cols_) || tag != "forest" || n > 100000) throw SchemaError("model: bad forest header");
    trees_.assign(n, {});
    for (auto& tree : trees_) {
      std::size_t nodes = 0;
      if (!(in >> nodes) || nodes == 0 || nodes > 10'000'000) throw SchemaError("model: bad tree");
      tree.resize(nodes);
      for (auto& node : tree)
        if (!(in >> node.feature >> node.left >> node.right >> node.value)) throw SchemaError("model: truncated tree");
      for (const auto& node : tree)
        if (node.feature >= std::int32_t(cols_) ||
            (node.feature >= 0 && (node.left <= 0 || node.right <= 0 || std::size_t(node.left) >= nodes ||
                                   std::size_t(node.right) >= nodes)))
          throw SchemaError("model: tree node out of range");
    }
  }

private:
  struct Node {
    std::int32_t feature = -1;
    std::int32_t left = 0, right = 0;
    double value = 0;
  };
  using Tree = std::vector<Node>;

  void grow(Tree& tree, const Matrix& x, const std::vector<int>& y, std::vector<std::uint32_t> root, std::size_t mtry,
            sim::Rng& rng) {
    struct Work {
      std::int32_t node;
      int depth;
      std::vector<std::uint32_t> idx;
    };
    std::vector<Work> stack;
    tree.push_back({});
    stack.push_back({0, 0, std::move(root)});
    std::vector<std::uint32_t> features(x.cols);
    while (!stack.empty()) {
      auto w = std::move(stack.back());
      stack.pop_back();
      std::size_t n = w.idx.size(), pos = 0;
      for (auto i : w.idx) pos += std::size_t(y[i]);
      tree[std::size_t(w.node)].value = n ? double(pos) / double(n) : 0;
      if (w.depth >= max_depth_ || pos == 0 || pos == n || n < 2 * min_leaf_) continue;

      std::iota(features.begin(), features.end(), 0u);
      auto best = best_split(x, y, w.idx, features, mtry, pos, rng);
      if (best < 0) best = best_split(x, y, w.idx, features, x.cols, pos, rng);  // sampled columns were all constant
      if (best < 0) continue;
      std::vector<std::uint32_t> left, right;
      for (auto i : w.idx) (x.row(i)[best] ? right : left).push_back(i);
      auto l = std::int32_t(tree.size());
      tree.push_back({});
      tree.push_back({});
      tree[std::size_t(w.node)].feature = best;
      tree[std::size_t(w.node)].left = l;
      tree[std::size_t(w.node)].right = l + 1;
      stack.push_back({l, w.depth + 1, std::move(left)});
      stack.push_back({l + 1, w.depth + 1, std::move(right)});
    }
  }

  std::int32_t best_split(const Matrix& x, const std::vector<int>& y, const std::vector<std::uint32_t>& idx,
                          std::vector<std::uint32_t>& features, std::size_t mtry, std::size_t pos, sim::Rng& rng) const {
    const double n = double(idx.size());
    double best_impurity = 1e300;
    std::int32_t best = -1;
    for (std::size_t k = 0; k < mtry; ++k) {
      auto pick = k + rng.below(features.size() - k);
      std::swap(features[k], features[pick]);
      auto f = features[k];
      std::size_t n1 = 0, p1 = 0;
      for (auto i : idx)
        if (x.row(i)[f]) ++n1, p1 += std::size_t(y[i]);
      std::size_t n0 = idx.size() - n1, p0 = pos - p1;
      if (n1 < min_leaf_ || n0 < min_leaf_) continue;
      auto gini = [](double count, double positives) {
        double p = positives / count;
        return count * 2 * p * (1 - p);
      };
      double impurity = (gini(double(n1), double(p1)) + gini(double(n0), double(p0))) / n;
      if (impurity < best_impurity) best_impurity = impurity, best = std::int32_t(f);
    }
    return best;
  }

  std::size_t n_trees_;
  int max_depth_;
  std::size_t max_features_, min_leaf_;
  std::uint64_t seed_;
  std::size_t cols_ = 0;
  std::vector<Tree> trees_;
};

// Hamming distance over bit-packed rows; ties on distance go to the earlier
// training row.
class KNearest final : public Classifier {
public:
  explicit KNearest(std::size_t k) : k_(k) {}
  ClassifierKind kind() const override { return ClassifierKind::KNearestNeighbors; }

  void fit(const Matrix& x, const std::vector<int>& y) override {
    require_two_classes(y);
    cols_ = x.cols;
    words_ = (x.cols + 63) / 64;
    bits_.assign(x.rows * words_, 0);
    for (std::size_t i = 0; i < x.rows; ++i) pack(x.row(i), bits_.data() + i * words_);
    labels_ = y;
  }

  double score(const std::uint8_t* row) const override {
    std::vector<std::uint64_t> q(words_);
    pack(row, q.data());
    return score_packed(q.data());
  }

  std::vector<double> score_all(const Matrix& x) const override {
    std::vector<double> out(x.rows);
    const auto n = static_cast<std::ptrdiff_t>(x.rows);
#if defined(ILOG_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) out[std::size_t(i)] = score(x.row(std::size_t(i)));
    return out;
  }

  std::vector<double> score_serial(const Matrix& x) const { return Classifier::score_all(x); }

  void save(std::ostream& out) const override {
    out << "knn " << k_ << ' ' << cols_ << ' ' << labels_.size() << '\n';
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      out << labels_[i];
      for (std::size_t w = 0; w < words_; ++w) out << ' ' << bits_[i * words_ + w];
      out << '\n';
    }
  }

  void load(std::istream& in) override {
    std::string tag;
    std::size_t n = 0;
    if (!(in >> tag >> k_ >> cols_ >> n) || tag != "knn" || k_ == 0 || n > 100'000'000) throw SchemaError("model: bad knn header");
    words_ = (cols_ + 63) / 64;
    labels_.resize(n);
    bits_.resize(n * words_);
    for (std::size_t i = 0; i < n; ++i) {
      if (!(in >> labels_[i])) throw SchemaError("model: truncated knn rows");
      for (std::size_t w = 0; w < words_; ++w)
        if (!(in >> bits_[i * words_ + w])) throw SchemaError("model: truncated knn rows");
    }
  }

private:
  void pack(const std::uint8_t* row, std::uint64_t* out) const {
    std::fill(out, out + words_, 0);
    for (std::size_t j = 0; j < cols_; ++j)
      if (row[j]) out[j / 64] |= std::uint64_t{1} << (j % 64);
  }

  double score_packed(const std::uint64_t* q) const {
    std::size_t k = std::min(k_, labels_.size());
    if (k == 0) return 0;
    // (distance, index) of the k best so far, sorted ascending.
    std::vector<std::pair<int, std::size_t>> best;
    best.reserve(k + 1);
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      int d = 0;
      const auto* r = bits_.data() + i * words_;
      for (std::size_t w = 0; w < words_; ++w) d += std::popcount(q[w] ^ r[w]);
      if (best.size() == k && d >= best.back().first) continue;
      std::pair<int, std::size_t> item{d, i};
      best.insert(std::upper_bound(best.begin(), best.end(), item), item);
      if (best.size() > k) best.pop_back();
    }
    int pos = 0;
    for (const auto& [d, i] : best) pos += labels_[i];
    return double(pos) / double(best.size());
  }

  std::size_t k_;
  std::size_t cols_ = 0, words_ = 0;
  std::vector<std::uint64_t> bits_;
  std::vector<int> labels_;
};

class Logistic final : public Classifier {
public:
  Logistic(double rate, int iterations, double l2) : rate_(rate), iterations_(iterations), l2_(l2) {}
  ClassifierKind kind() const override { return ClassifierKind::LogisticRegression; }

  void fit(const Matrix& x, const std::vector<int>& y) override {
    require_two_classes(y);
    auto active = active_columns(x);
    w_.assign(x.cols, 0);
    b_ = 0;
    const double n = double(x.rows);
    std::vector<double> grad(x.cols);
    for (int it = 0; it < iterations_; ++it) {
      std::fill(grad.begin(), grad.end(), 0);
      double gb = 0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        double z = b_;
        for (auto j : active[i]) z += w_[j];
        double err = sigmoid(z) - y[i];
        gb += err;
        for (auto j : active[i]) grad[j] += err;
      }
      for (std::size_t j = 0; j < x.cols; ++j) w_[j] -= rate_ * (grad[j] / n + l2_ * w_[j]);
      b_ -= rate_ * gb / n;
    }
  }

  double score(const std::uint8_t* row) const override {
    double z = b_;
    for (std::size_t j = 0; j < w_.size(); ++j)
      if (row[j]) z += w_[j];
    return sigmoid(z);
  }

  void save(std::ostream& out) const override {
    out << "logistic " << b_ << '\n';
    write_vec(out, w_);
  }
  void load(std::istream& in) override {
    std::string tag;
    if (!(in >> tag >> b_) || tag != "logistic") throw SchemaError("model: bad logistic header");
    w_ = read_vec<double>(in);
  }

private:
  double rate_;
  int iterations_;
  double l2_;
  std::vector<double> w_;
  double b_ = 0;
};

// Gaussian likelihood per indicator column, with variances padded by
// var_smoothing times the largest column variance.
class NaiveBayes final : public Classifier {
public:
  explicit NaiveBayes(double smoothing) : smoothing_(smoothing) {}
  ClassifierKind kind() const override { return ClassifierKind::GaussianNaiveBayes; }

  void fit(const Matrix& x, const std::vector<int>& y) override {
    require_two_classes(y);
    const std::size_t d = x.cols;
    std::array<double, 2> count{};
    std::array<std::vector<double>, 2> sum{std::vector<double>(d), std::vector<double>(d)};
    std::vector<double> all(d);
    for (std::size_t i = 0; i < x.rows; ++i) {
      count[std::size_t(y[i])] += 1;
      for (std::size_t j = 0; j < d; ++j) {
        sum[std::size_t(y[i])][j] += x.row(i)[j];
        all[j] += x.row(i)[j];
      }
    }
    double max_var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double p = all[j] / double(x.rows);
      max_var = std::max(max_var, p * (1 - p));
    }
    double eps = smoothing_ * std::max(max_var, 1e-12);
    for (int c = 0; c < 2; ++c) {
      prior_[std::size_t(c)] = std::log(count[std::size_t(c)] / double(x.rows));
      mean_[std::size_t(c)].resize(d);
      var_[std::size_t(c)].resize(d);
      for (std::size_t j = 0; j < d; ++j) {
        double m = sum[std::size_t(c)][j] / count[std::size_t(c)];  // indicator: variance is m(1 - m)
        mean_[std::size_t(c)][j] = m;
        var_[std::size_t(c)][j] = m * (1 - m) + eps;
      }
    }
  }

  double score(const std::uint8_t* row) const override {
    std::array<double, 2> ll = prior_;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < mean_[c].size(); ++j) {
        double diff = double(row[j]) - mean_[c][j];
        ll[c] -= 0.5 * std::log(2 * std::numbers::pi * var_[c][j]) + diff * diff / (2 * var_[c][j]);
      }
    return sigmoid(ll[1] - ll[0]);
  }

  void save(std::ostream& out) const override {
    out << "gnb " << prior_[0] << ' ' << prior_[1] << '\n';
    for (std::size_t c = 0; c < 2; ++c) {
      write_vec(out, mean_[c]);
      write_vec(out, var_[c]);
    }
  }
  void load(std::istream& in) override {
    std::string tag;
    if (!(in >> tag >> prior_[0] >> prior_[1]) || tag != "gnb") throw SchemaError("model: bad gnb header");
    for (std::size_t c = 0; c < 2; ++c) {
      mean_[c] = read_vec<double>(in);
      var_[c] = read_vec<double>(in);
      if (var_[c].size() != mean_[c].size()) throw SchemaError("model: gnb sizes differ");
    }
  }

private:
  double smoothing_;
  std::array<double, 2> prior_{};
  std::array<std::vector<double>, 2> mean_, var_;
};

// Pegasos: stochastic subgradient on the regularized hinge loss. The bias is a
// constant extra column, regularized like the rest.
class LinearSvm final : public Classifier {
public:
  LinearSvm(double lambda, int epochs, std::uint64_t seed) : lambda_(lambda), epochs_(epochs), seed_(seed) {}
  ClassifierKind kind() const override { return ClassifierKind::LinearSVM; }

  void fit(const Matrix& x, const std::vector<int>& y) override {
    require_two_classes(y);
    auto active = active_columns(x);
    const std::size_t bias = x.cols;
    std::vector<double> v(x.cols + 1, 0);
    double scale = 1;  // w = scale * v
    sim::Rng rng(mix64(seed_ ^ 0x5356u));
    const std::uint64_t steps = std::uint64_t(epochs_) * x.rows;
    for (std::uint64_t t = 1; t <= steps; ++t) {
      auto i = rng.below(x.rows);
      double yi = y[i] ? 1.0 : -1.0;
      double margin = v[bias];
      for (auto j : active[i]) margin += v[j];
      margin *= scale * yi;
      double eta = 1.0 / (lambda_ * double(t));
      scale *= 1 - eta * lambda_;
      if (scale < 1e-9 || t == 1) {
        // t == 1 zeroes the scale; restart from v = 0 with unit scale.
        if (scale == 0) std::fill(v.begin(), v.end(), 0);
        else
          for (auto& c : v) c *= scale;
        scale = 1;
      }
      if (margin < 1) {
        double step = eta * yi / scale;
        for (auto j : active[i]) v[j] += step;
        v[bias] += step;
      }
    }
    w_.resize(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) w_[j] = v[j] * scale;
    b_ = v[bias] * scale;
  }

  double score(const std::uint8_t* row) const override {
    double z = b_;
    for (std::size_t j = 0; j < w_.size(); ++j)
      if (row[j]) z += w_[j];
    return sigmoid(4 * z);
  }

  void save(std::ostream& out) const override {
    out << "svm " << b_ << '\n';
    write_vec(out, w_);
  }
  void load(std::istream& in) override {
    std::string tag;
    if (!(in >> tag >> b_) || tag != "svm") throw SchemaError("model: bad svm header");
    w_ = read_vec<double>(in);
  }

private:
  double lambda_;
  int epochs_;
  std::uint64_t seed_;
  std::vector<double> w_;
  double b_ = 0;
};

double hyper(const ClassifierSpec& spec, const std::string& name, double fallback, double lo, double hi) {
  auto it = spec.hyperparameters.find(name);
  if (it == spec.hyperparameters.end()) return fallback;
  if (!(it->second >= lo && it->second <= hi))
    throw ValidationError("classifier." + name, "value " + std::to_string(it->second) + " is out of range");
  return it->second;
}

} // namespace

std::unique_ptr<Classifier> make_classifier(const ClassifierSpec& spec) {
  static const std::map<ClassifierKind, std::set<std::string>> kKnown{
      {ClassifierKind::RandomForest, {"trees", "max_depth", "max_features", "min_samples_leaf"}},
      {ClassifierKind::KNearestNeighbors, {"k"}},
      {ClassifierKind::LogisticRegression, {"learning_rate", "iterations", "l2"}},
      {ClassifierKind::GaussianNaiveBayes, {"var_smoothing"}},
      {ClassifierKind::LinearSVM, {"lambda", "epochs"}}};
  for (const auto& [name, value] : spec.hyperparameters)
    if (!kKnown.at(spec.kind).contains(name))
      throw ValidationError("classifier." + name, "not a hyperparameter of " + std::string(to_string(spec.kind)));
  switch (spec.kind) {
  case ClassifierKind::RandomForest:
    return std::make_unique<RandomForest>(std::size_t(hyper(spec, "trees", 100, 1, 10000)),
                                          int(hyper(spec, "max_depth", 12, 1, 64)),
                                          std::size_t(hyper(spec, "max_features", 0, 0, 1e6)),
                                          std::size_t(hyper(spec, "min_samples_leaf", 1, 1, 1e6)), spec.seed);
  case ClassifierKind::KNearestNeighbors:
    return std::make_unique<KNearest>(std::size_t(hyper(spec, "k", 5, 1, 1e6)));
  case ClassifierKind::LogisticRegression:
    return std::make_unique<Logistic>(hyper(spec, "learning_rate", 0.5, 1e-9, 100),
                                      int(hyper(spec, "iterations", 300, 1, 1e6)), hyper(spec, "l2", 1e-4, 0, 1e3));
  case ClassifierKind::GaussianNaiveBayes:
    return std::make_unique<NaiveBayes>(hyper(spec, "var_smoothing", 1e-9, 1e-15, 1));
  case ClassifierKind::LinearSVM:
    return std::make_unique<LinearSvm>(hyper(spec, "lambda", 1e-4, 1e-12, 1e3), int(hyper(spec, "epochs", 20, 1, 1e4)),
                                       spec.seed);
  }
  throw ValidationError("classifier", "unknown kind");
}

std::vector<double> knn_score_serial(const Classifier& knn, const Matrix& x) {
  if (const auto* k = dynamic_cast<const KNearest*>(&knn)) return k->score_serial(x);
  throw ValidationError("classifier", "not a nearest-neighbour model");
}

std::string save_model(const Encoder& encoder, const Classifier& model) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "ilog-model 1\nkind " << to_string(model.kind()) << '\n';
  encoder.save(out);
  model.save(out);
  return out.str();
}

LoadedModel load_model(const std::string& text) {
  std::istringstream in(text);
  std::string magic, kind_tag, kind;
  int version = 0;
  if (!(in >> magic >> version) || magic != "ilog-model") throw SchemaError("model: missing ilog-model header");
  if (version != 1) throw SchemaError("model: unsupported version " + std::to_string(version));
  if (!(in >> kind_tag >> kind) || kind_tag != "kind") throw SchemaError("model: missing kind");
  auto k = parse_classifier(kind);
  if (!k) throw SchemaError("model: unknown classifier " + kind);
  LoadedModel m;
  m.encoder = Encoder::load(in);
  m.model = make_classifier({*k, {}, 0});
  m.model->load(in);
  return m;
}

// Evaluation ------------------------------------------------------------------------------

Confusion& Confusion::operator+=(const Confusion& o) {
  for (int a = 0; a < 2; ++a)
    for (int p = 0; p < 2; ++p) m[std::size_t(a)][std::size_t(p)] += o.m[std::size_t(a)][std::size_t(p)];
  return *this;
}

Metrics metrics_from(const Confusion& c) {
  Metrics r;
  const double tn = double(c.m[0][0]), fp = double(c.m[0][1]), fn = double(c.m[1][0]), tp = double(c.m[1][1]);
  const double n = tn + fp + fn + tp;
  if (n == 0) return r;
  r.accuracy = (tp + tn) / n;
  double pe = ((tp + fn) * (tp + fp) + (tn + fp) * (tn + fn)) / (n * n);
  r.kappa = pe < 1 ? (r.accuracy - pe) / (1 - pe) : 0;
  r.precision = tp + fp > 0 ? tp / (tp + fp) : 0;
  r.recall = tp + fn > 0 ? tp / (tp + fn) : 0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0;
  return r;
}

std::vector<int> assign_folds(const std::vector<std::uint64_t>& ids, std::uint64_t seed, int k) {
  if (k < 2) throw ValidationError("folds", "need at least two folds");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) { return std::pair{mix64(ids[i] ^ mix64(seed)), ids[i]}; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::vector<int> fold(ids.size());
  for (std::size_t r = 0; r < order.size(); ++r) fold[order[r]] = int(r % std::size_t(k));
  return fold;
}

namespace {

struct Split {
  std::vector<std::size_t> train, test;
};

Confusion run_split(const Dataset& data, const ClassifierSpec& spec, const Split& s, std::uint64_t salt) {
  auto train = subset(data, s.train);
  auto test = subset(data, s.test);
  ClassifierSpec fold_spec = spec;
  fold_spec.seed = mix64(spec.seed ^ salt);
  auto model = make_classifier(fold_spec);
  model->fit(train.x, train.y);
  Confusion c;
  for (std::size_t i = 0; i < test.x.rows; ++i) ++c.m[std::size_t(test.y[i])][std::size_t(model->predict(test.x.row(i)))];
  return c;
}

std::vector<Split> make_splits(const Dataset& data, const ClassifierSpec& spec, const Protocol& protocol,
                               std::string& label) {
  std::vector<Split> splits;
  if (std::holds_alternative<FiveFoldCV>(protocol)) {
    label = "5-fold";
    auto folds = assign_folds(data.ids, spec.seed, 5);
    splits.resize(5);
    for (std::size_t i = 0; i < folds.size(); ++i)
      for (int f = 0; f < 5; ++f) (folds[i] == f ? splits[std::size_t(f)].test : splits[std::size_t(f)].train).push_back(i);
    return splits;
  }
  const auto& p = std::get<PerParticipantSplit>(protocol);
  std::optional<Instant> first;
  for (std::size_t i = 0; i < data.x.rows; ++i)
    if (data.participants[i] == p.participant) first = first ? std::min(*first, data.delivered[i]) : data.delivered[i];
  if (!first) throw DegenerateData("no rows for participant " + p.participant);
  label = "participant " + p.participant + ": " + std::to_string(p.train_span / kDay) + "d train / " +
          std::to_string(p.test_span / kDay) + "d test";
  Split s;
  for (std::size_t i = 0; i < data.x.rows; ++i) {
    if (data.participants[i] != p.participant) continue;
    if (data.delivered[i] < *first + p.train_span) s.train.push_back(i);
    else if (data.delivered[i] < *first + p.train_span + p.test_span) s.test.push_back(i);
  }
  if (s.test.empty()) throw DegenerateData("participant " + p.participant + " has no rows after the training span");
  splits.push_back(std::move(s));
  return splits;
}

// Training order follows row ids, so permuting the input rows cannot change a
// model trained under the same seed.
void order_by_id(const Dataset& data, std::vector<Split>& splits) {
  auto by_id = [&](std::size_t a, std::size_t b) { return std::pair{data.ids[a], a} < std::pair{data.ids[b], b}; };
  for (auto& s : splits) {
    std::sort(s.train.begin(), s.train.end(), by_id);
    std::sort(s.test.begin(), s.test.end(), by_id);
  }
}

EvalReport assemble(const Dataset& data, const ClassifierSpec& spec, const std::vector<Split>& splits,
                    const std::vector<Confusion>& confusions, std::string label) {
  (void)data;
  EvalReport r;
  r.kind = spec.kind;
  r.split = std::move(label);
  for (std::size_t f = 0; f < splits.size(); ++f) {
    r.confusion += confusions[f];
    r.folds.push_back(metrics_from(confusions[f]));
    r.train_rows += splits[f].train.size();
    r.test_rows += splits[f].test.size();
  }
  r.metrics = metrics_from(r.confusion);
  for (const auto& m : r.folds) {
    r.fold_mean.accuracy += m.accuracy / double(r.folds.size());
    r.fold_mean.kappa += m.kappa / double(r.folds.size());
    r.fold_mean.precision += m.precision / double(r.folds.size());
    r.fold_mean.recall += m.recall / double(r.folds.size());
    r.fold_mean.f1 += m.f1 / double(r.folds.size());
  }
  return r;
}

} // namespace

EvalReport train_eval_serial(const Dataset& data, const ClassifierSpec& spec, const Protocol& protocol) {
  std::string label;
  auto splits = make_splits(data, spec, protocol, label);
  order_by_id(data, splits);
  std::vector<Confusion> confusions;
  for (std::size_t f = 0; f < splits.size(); ++f) confusions.push_back(run_split(data, spec, splits[f], f + 1));
  return assemble(data, spec, splits, confusions, std::move(label));
}

EvalReport train_eval(const Dataset& data, const ClassifierSpec& spec, const Protocol& protocol) {
  std::string label;
  auto splits = make_splits(data, spec, protocol, label);
  order_by_id(data, splits);
  std::vector<Confusion> confusions(splits.size());
  std::vector<std::exception_ptr> errors(splits.size());
  const auto n = static_cast<std::ptrdiff_t>(splits.size());
#if defined(ILOG_HAVE_OPENMP)
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::ptrdiff_t f = 0; f < n; ++f) {
    try {
      confusions[std::size_t(f)] = run_split(data, spec, splits[std::size_t(f)], std::uint64_t(f) + 1);
    } catch (...) {
      errors[std::size_t(f)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return assemble(data, spec, splits, confusions, std::move(label));
}

std::vector<ParticipantResult> evaluate_participants(const Dataset& data, const ClassifierSpec& spec,
                                                     Duration train_span, Duration test_span) {
  std::set<std::string> ids(data.participants.begin(), data.participants.end());
  std::vector<ParticipantResult> out;
  for (const auto& id : ids) out.push_back({id, std::nullopt, {}});
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#if defined(ILOG_HAVE_OPENMP)
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto& r = out[std::size_t(i)];
    try {
      r.report = train_eval_serial(data, spec, PerParticipantSplit{r.participant, train_span, test_span});
    } catch (const DegenerateData& e) {
      r.skipped = e.what();
    }
  }
  return out;
}

namespace {

nlohmann::ordered_json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"kappa", m.kappa}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

} // namespace

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  for (const auto& m : r.folds) folds.push_back(metrics_json(m));
  return {{"classifier", to_string(r.kind)},
          {"split", r.split},
          {"metrics", metrics_json(r.metrics)},
          {"confusion", {{r.confusion.m[0][0], r.confusion.m[0][1]}, {r.confusion.m[1][0], r.confusion.m[1][1]}}},
          {"fold_mean", metrics_json(r.fold_mean)},
          {"folds", std::move(folds)},
          {"train_rows", r.train_rows},
          {"test_rows", r.test_rows}};
}

// Recommendations ---------------------------------------------------------------------------

WindowRecommendation recommend_windows(const Dataset& data, const std::string& participant, const ClassifierSpec& spec,
                                       double indifference) {
  WindowRecommendation rec;
  rec.participant = participant;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.x.rows; ++i)
    if (data.participants[i] == participant) rows.push_back(i);
  if (rows.empty()) throw NotFound("no rows for participant " + participant);
  auto own = subset(data, rows);

  std::unique_ptr<Classifier> model;
  std::optional<double> constant;
  try {
    model = make_classifier(spec);
    model->fit(own.x, own.y);
  } catch (const DegenerateData&) {
    constant = double(own.y.front());
  }

  const auto& enc = data.encoder;
  Matrix probe = own.x;
  for (int w = 1; w <= 7; ++w)
    for (int p = 0; p < 4; ++p) {
      auto period = static_cast<DayPeriod>(p);
      double sum = 0;
      if (!constant) {
        for (std::size_t i = 0; i < probe.rows; ++i) {
          auto* r = probe.row(i);
          for (int ww = 1; ww <= 7; ++ww) r[enc.weekday_column(ww)] = ww == w;
          for (int pp = 0; pp < 4; ++pp) r[enc.period_column(static_cast<DayPeriod>(pp))] = pp == p;
        }
        for (double s : model->score_all(probe)) sum += s;
      }
      rec.ranked.push_back({w, period, constant ? *constant : sum / double(probe.rows)});
    }
  std::stable_sort(rec.ranked.begin(), rec.ranked.end(),
                   [](const CellScore& a, const CellScore& b) { return a.probability > b.probability; });
  rec.no_preference = rec.ranked.front().probability - rec.ranked.back().probability < indifference;
  return rec;
}

namespace {

// Local [start, end) hours of each day period.
std::pair<int, int> band(DayPeriod p) {
  switch (p) {
  case DayPeriod::Morning: return {6, 12};
  case DayPeriod::Afternoon: return {12, 18};
  case DayPeriod::Evening: return {18, 24};
  case DayPeriod::Night: return {0, 6};
  }
  return {0, 0};
}

} // namespace

RevisionPlan plan_revisions(const WindowRecommendation& rec, const schedule::Timeline& timeline,
                            const schedule::RevisionPolicy& policy, const std::string& timezone, Instant now,
                            Duration horizon, double indifference) {
  RevisionPlan plan{timeline, {}};
  if (rec.no_preference || rec.ranked.empty()) return plan;
  double best = rec.ranked.front().probability;
  std::set<std::pair<int, DayPeriod>> preferred;
  for (const auto& c : rec.ranked)
    if (c.probability >= best - indifference) preferred.insert({c.weekday, c.period});

  auto tz = TimeZone::load(timezone);
  for (const auto& entry : timeline.entries) {
    const auto& occ = entry.occurrence;
    if (entry.cancelled || occ.source.kind != schedule::SourceKind::Question) continue;
    if (occ.scheduled_at < now || occ.scheduled_at >= now + horizon) continue;
    auto local = tz.to_local(occ.scheduled_at);
    if (preferred.contains({iso_weekday(local), day_period(hour_of_day(local))})) continue;

    std::optional<Duration> shift;
    auto day = floor_day(local);
    for (int offset = -1; offset <= 1; ++offset) {
      auto d = day + offset * kDay;
      int weekday = iso_weekday(d);
      for (const auto& [w, p] : preferred) {
        if (w != weekday) continue;
        auto [from_h, to_h] = band(p);
        Instant start = d + from_h * kHour, end = d + to_h * kHour;
        Instant target = local < start ? start : end - kMinute;
        Duration delta = target - local;
        if (!shift || std::chrono::abs(delta) < std::chrono::abs(*shift) ||
            (std::chrono::abs(delta) == std::chrono::abs(*shift) && delta < *shift))
          shift = delta;
      }
    }
    if (!shift) continue;
    ProposedRevision p{{schedule::Actor::Platform, timeline.participant,
                        schedule::OccurrenceTarget{occ.source, occ.seq_no}, schedule::Shift{*shift}, now},
                       false,
                       {}};
    try {
      plan.timeline = schedule::apply_revision(plan.timeline, p.revision, policy);
      p.applied = true;
    } catch (const Error& e) {
      p.reason = e.what();
    }
    plan.proposals.push_back(std::move(p));
  }
  return plan;
}

nlohmann::ordered_json recommendation_to_json(const WindowRecommendation& r) {
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& c : r.ranked)
    cells.push_back({{"weekday", c.weekday}, {"day_period", to_string(c.period)}, {"probability", c.probability}});
  return {{"participant", r.participant}, {"no_preference", r.no_preference}, {"ranked", std::move(cells)}};
}

} // namespace ilog::predict
