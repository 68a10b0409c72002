#pragma once

#include <cstddef>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssn/tensor.hpp"

namespace ssn {

/// C x C counts; rows index the true class, columns the predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : c_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes < 1)
      throw ConfigError("confusion matrix needs at least one class");
  }

  void update(std::size_t true_class, std::size_t predicted_class) {
    if (true_class >= c_ || predicted_class >= c_)
      throw ShapeError("confusion matrix update out of range: (" +
                       std::to_string(true_class) + "," +
                       std::to_string(predicted_class) + ") with " +
                       std::to_string(c_) + " classes");
    ++counts_[true_class * c_ + predicted_class];
  }

  std::size_t at(std::size_t t, std::size_t p) const { return counts_[t * c_ + p]; }
  std::size_t num_classes() const { return c_; }

  std::size_t total() const {
    std::size_t n = 0;
    for (std::size_t v : counts_) n += v;
    return n;
  }

  std::size_t row_sum(std::size_t t) const {
    std::size_t n = 0;
    for (std::size_t p = 0; p < c_; ++p) n += at(t, p);
    return n;
  }

  std::size_t col_sum(std::size_t p) const {
    std::size_t n = 0;
    for (std::size_t t = 0; t < c_; ++t) n += at(t, p);
    return n;
  }

  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < c_; ++i) n += at(i, i);
    return n;
  }

  void merge(const ConfusionMatrix& other) {
    if (other.c_ != c_)
      throw ShapeError("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  /// Per-row rates; a row with no samples stays all-zero.
  std::vector<std::vector<double>> normalized_rows() const {
    std::vector<std::vector<double>> rows(c_, std::vector<double>(c_, 0.0));
    for (std::size_t t = 0; t < c_; ++t) {
      const std::size_t rs = row_sum(t);
      if (rs == 0) continue;
      for (std::size_t p = 0; p < c_; ++p)
        rows[t][p] = static_cast<double>(at(t, p)) / static_cast<double>(rs);
    }
    return rows;
  }

  /// CSV with a header row of predicted-class labels; raw counts or
  /// row-normalized rates.
  std::string to_csv(bool normalized = false) const {
    std::ostringstream os;
    os << "true\\pred";
    for (std::size_t p = 0; p < c_; ++p) os << ",c" << p;
    os << "\n";
    const auto rates = normalized ? normalized_rows()
                                  : std::vector<std::vector<double>>{};
    for (std::size_t t = 0; t < c_; ++t) {
      os << "c" << t;
      for (std::size_t p = 0; p < c_; ++p) {
        if (normalized)
          os << "," << std::setprecision(17) << rates[t][p];
        else
          os << "," << at(t, p);
      }
      os << "\n";
    }
    return os.str();
  }

 private:
  std::size_t c_;
  std::vector<std::size_t> counts_;
};

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double specificity = 0;
  double f1 = 0;
  std::size_t support = 0;
  bool zero_division = false;  // some denominator was 0 and reported as 0
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0;
  double macro_f1 = 0;
  double weighted_f1 = 0;
  bool any_zero_division = false;
};

inline MetricsReport per_class_metrics(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0)
    throw ConfigError("metrics requested on an empty confusion matrix");
  const std::size_t c = cm.num_classes();
  MetricsReport rep;
  rep.per_class.resize(c);
  double f1_sum = 0, f1_weighted = 0;
  for (std::size_t i = 0; i < c; ++i) {
    const double tp = static_cast<double>(cm.at(i, i));
    const double fn = static_cast<double>(cm.row_sum(i)) - tp;
    const double fp = static_cast<double>(cm.col_sum(i)) - tp;
    const double tn = static_cast<double>(total) - tp - fn - fp;
    ClassMetrics& m = rep.per_class[i];
    m.support = cm.row_sum(i);
    auto safe_div = [&m](double num, double den) {
      if (den == 0) {
        m.zero_division = true;
        return 0.0;
      }
      return num / den;
    };
    m.precision = safe_div(tp, tp + fp);
    m.recall = safe_div(tp, tp + fn);
    m.specificity = safe_div(tn, tn + fp);
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
    rep.any_zero_division = rep.any_zero_division || m.zero_division;
    f1_sum += m.f1;
    f1_weighted += m.f1 * static_cast<double>(m.support);
  }
  rep.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  rep.macro_f1 = f1_sum / static_cast<double>(c);
  rep.weighted_f1 = f1_weighted / static_cast<double>(total);
  return rep;
}

inline std::pair<double, double> aggregate_f1(const MetricsReport& rep) {
  double macro = 0, weighted = 0, support = 0;
  for (const auto& m : rep.per_class) {
    macro += m.f1;
    weighted += m.f1 * static_cast<double>(m.support);
    support += static_cast<double>(m.support);
  }
  macro /= static_cast<double>(rep.per_class.size());
  weighted = support > 0 ? weighted / support : 0.0;
  return {macro, weighted};
}

inline nlohmann::ordered_json metrics_to_json(const MetricsReport& rep) {
  nlohmann::ordered_json j;
  j["accuracy"] = rep.accuracy;
  j["macro_f1"] = rep.macro_f1;
  j["weighted_f1"] = rep.weighted_f1;
  j["any_zero_division"] = rep.any_zero_division;
  j["per_class"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < rep.per_class.size(); ++i) {
    const auto& m = rep.per_class[i];
    j["per_class"].push_back({{"class", i},
                              {"precision", m.precision},
                              {"recall", m.recall},
                              {"specificity", m.specificity},
                              {"f1", m.f1},
                              {"support", m.support},
                              {"zero_division", m.zero_division}});
  }
  return j;
}

inline std::string metrics_to_table(const MetricsReport& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "class  precision  recall  specificity      f1  support\n";
  for (std::size_t i = 0; i < rep.per_class.size(); ++i) {
    const auto& m = rep.per_class[i];
    os << std::setw(5) << i << "  " << std::setw(9) << m.precision << "  "
       << std::setw(6) << m.recall << "  " << std::setw(11) << m.specificity
       << "  " << std::setw(6) << m.f1 << "  " << std::setw(7) << m.support
       << "\n";
  }
  os << "accuracy " << rep.accuracy << "  macro_f1 " << rep.macro_f1
     << "  weighted_f1 " << rep.weighted_f1 << "\n";
  return os.str();
}

}  // namespace ssn
