#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "gsde/metrics.hpp"
#include "gsde/random.hpp"

namespace gsde {

struct LabeledImage {
  Tensor<float> image;  // [0, 1]
  int label = 0;
  int subject = -1;
};

struct ClassifierOptions {
  int n_classes = 6;
  int iterations = 1000;
  double learning_rate = 2.0;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

// Multinomial logistic regression on 2x2 mean-pooled, centred pixels.
struct Classifier {
  int n_classes = 0;
  int feature_dim = 0;
  Eigen::MatrixXd weights;  // n_classes x feature_dim
  Eigen::VectorXd bias;

  int predict(const Tensor<float>& image) const;
  std::vector<int> predict(const std::vector<LabeledImage>& data) const;
};

inline Eigen::VectorXd pooled_features(const Tensor<float>& img) {
  require_single_channel(img, "classifier features");
  if (img.height() % 2 != 0 || img.width() % 2 != 0) throw ShapeError("classifier: image sides must be even");
  const int h = img.height() / 2, w = img.width() / 2;
  Eigen::VectorXd f(h * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      f(r * w + c) = 0.25 * (static_cast<double>(img(0, 2 * r, 2 * c)) + img(0, 2 * r, 2 * c + 1) +
                             img(0, 2 * r + 1, 2 * c) + img(0, 2 * r + 1, 2 * c + 1)) -
                     0.5;
  return f;
}

// Feature matrix with one column per sample.
inline Eigen::MatrixXd feature_matrix(const std::vector<LabeledImage>& data) {
  if (data.empty()) return {};
  const Eigen::VectorXd f0 = pooled_features(data[0].image);
  Eigen::MatrixXd X(f0.size(), static_cast<Eigen::Index>(data.size()));
  X.col(0) = f0;
  for (std::size_t i = 1; i < data.size(); ++i) {
    const Eigen::VectorXd f = pooled_features(data[i].image);
    if (f.size() != f0.size()) throw ShapeError("classifier: images have different sizes");
    X.col(static_cast<Eigen::Index>(i)) = f;
  }
  return X;
}

struct ObjectiveGrad {
  double value = 0.0;
  Eigen::MatrixXd d_weights;
  Eigen::VectorXd d_bias;
};

// Mean cross-entropy plus 0.5 l2 ||W||^2, and its gradient.
inline ObjectiveGrad classifier_objective(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const Eigen::MatrixXd& X,
                                          const std::vector<int>& y, double l2) {
  const Eigen::Index n = X.cols();
  Eigen::MatrixXd logits = W * X;
  logits.colwise() += b;
  ObjectiveGrad out;
  Eigen::MatrixXd p(logits.rows(), n);
  double ce = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.col(i).maxCoeff();
    p.col(i) = (logits.col(i).array() - m).exp();
    const double z = p.col(i).sum();
    p.col(i) /= z;
    ce -= logits(y[i], i) - m - std::log(z);
    p(y[i], i) -= 1.0;
  }
  out.value = ce / static_cast<double>(n) + 0.5 * l2 * W.squaredNorm();
  out.d_weights = p * X.transpose() / static_cast<double>(n) + l2 * W;
  out.d_bias = p.rowwise().sum() / static_cast<double>(n);
  return out;
}

inline Classifier train_classifier(const std::vector<LabeledImage>& data, const ClassifierOptions& opts) {
  if (data.empty()) throw ConfigError("train_classifier: empty training set");
  std::set<int> classes;
  std::vector<int> y;
  for (const auto& d : data) {
    if (d.label < 0 || d.label >= opts.n_classes) throw ConfigError("train_classifier: label out of range");
    classes.insert(d.label);
    y.push_back(d.label);
  }
  if (classes.size() < 2) throw ConfigError("train_classifier: training set contains a single class");
  const Eigen::MatrixXd X = feature_matrix(data);
  Classifier c;
  c.n_classes = opts.n_classes;
  c.feature_dim = static_cast<int>(X.rows());
  Rng rng(opts.seed);
  c.weights.resize(opts.n_classes, X.rows());
  for (Eigen::Index i = 0; i < c.weights.size(); ++i) c.weights.data()[i] = 0.01 * rng.normal();
  c.bias = Eigen::VectorXd::Zero(opts.n_classes);
  for (int it = 0; it < opts.iterations; ++it) {
    const ObjectiveGrad g = classifier_objective(c.weights, c.bias, X, y, opts.l2);
    c.weights -= opts.learning_rate * g.d_weights;
    c.bias -= opts.learning_rate * g.d_bias;
  }
  return c;
}

inline int Classifier::predict(const Tensor<float>& image) const {
  const Eigen::VectorXd f = pooled_features(image);
  if (f.size() != feature_dim) throw ShapeError("classifier: image size does not match training data");
  Eigen::VectorXd logits = weights * f + bias;
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

inline std::vector<int> Classifier::predict(const std::vector<LabeledImage>& data) const {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back(predict(d.image));
  return out;
}

struct FERReport {
  std::string condition;  // without_translation | with_translation
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  ConfusionMatrix confusion;
};

inline FERReport evaluate_classifier(const Classifier& c, const std::vector<LabeledImage>& test, std::string condition) {
  std::vector<int> truth;
  for (const auto& d : test) truth.push_back(d.label);
  const std::vector<int> preds = c.predict(test);
  FERReport r;
  r.condition = std::move(condition);
  r.accuracy = accuracy(preds, truth);
  r.confusion = confusion_matrix(preds, truth, c.n_classes);
  r.per_class_f1 = per_class_f1(r.confusion);
  r.macro_f1 = macro_f1(preds, truth, c.n_classes);
  return r;
}

struct FERComparison {
  FERReport without_translation;
  FERReport with_translation;
  double accuracy_gain() const { return with_translation.accuracy - without_translation.accuracy; }
};

// Trains on real_train, then on real_train + synthetic_extra, and scores both
// on test. Any test subject appearing in a training set is an error.
inline FERComparison evaluate_fer_protocol(const std::vector<LabeledImage>& real_train,
                                           const std::vector<LabeledImage>& synthetic_extra,
                                           const std::vector<LabeledImage>& test, const ClassifierOptions& opts) {
  if (test.empty()) throw ConfigError("evaluate_fer_protocol: empty test set");
  std::set<int> test_subjects;
  for (const auto& d : test) test_subjects.insert(d.subject);
  for (const auto* set : {&real_train, &synthetic_extra})
    for (const auto& d : *set)
      if (test_subjects.count(d.subject))
        throw ConfigError("evaluate_fer_protocol: subject " + std::to_string(d.subject) +
                          " appears in both training and test data");
  FERComparison out;
  out.without_translation = evaluate_classifier(train_classifier(real_train, opts), test, "without_translation");
  std::vector<LabeledImage> augmented = real_train;
  augmented.insert(augmented.end(), synthetic_extra.begin(), synthetic_extra.end());
  out.with_translation = evaluate_classifier(train_classifier(augmented, opts), test, "with_translation");
  return out;
}

}  // namespace gsde
