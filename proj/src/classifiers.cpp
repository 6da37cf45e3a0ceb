#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cctype>
#include <numbers>
#include <numeric>

#include "drowsy/baselines.hpp"

namespace drowsy {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_eigen(const Matrix& m) {
  Mat out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

Vec to_vec(std::span<const double> x) {
  return Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size()));
}

struct ClassData {
  std::array<std::vector<Eigen::Index>, 2> rows;
  std::array<Vec, 2> mean;
  std::array<double, 2> log_prior{};
};

ClassData split_classes(const Mat& X, std::span<const int> labels) {
  ClassData d;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("fit_classifier: labels must be 0 or 1");
    d.rows[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
  }
  for (int c = 0; c < 2; ++c) {
    const auto& idx = d.rows[c];
    if (idx.empty()) throw DataError("fit_classifier: each class needs at least one sample");
    d.mean[c] = X(idx, Eigen::all).colwise().mean().transpose();
    d.log_prior[c] = std::log(static_cast<double>(idx.size()) / static_cast<double>(labels.size()));
  }
  return d;
}

// Scatter matrix of the rows `idx` around `mean`.
Mat scatter(const Mat& X, const std::vector<Eigen::Index>& idx, const Vec& mean) {
  const Mat centered = X(idx, Eigen::all).rowwise() - mean.transpose();
  return centered.transpose() * centered;
}

Eigen::LLT<Mat> factor(const Mat& cov, const char* who) {
  Eigen::LLT<Mat> llt(cov);
  // Reciprocal condition below machine epsilon counts as singular too.
  if (llt.info() != Eigen::Success || !(llt.rcond() > std::numeric_limits<double>::epsilon()))
    throw NumericalError(std::string(who) + ": covariance is singular");
  return llt;
}

int argmax2(double s0, double s1) { return s1 > s0 ? 1 : 0; }

class Gnb final : public ClassifierModel {
 public:
  Gnb(const Mat& X, std::span<const int> labels, const ClassifierOptions& o) {
    const ClassData d = split_classes(X, labels);
    const Vec overall_mean = X.colwise().mean().transpose();
    const double max_var =
        ((X.rowwise() - overall_mean.transpose()).array().square().colwise().mean()).maxCoeff();
    const double floor = o.gnb_var_smoothing * max_var;
    for (int c = 0; c < 2; ++c) {
      mean_[c] = d.mean[c];
      const Mat centered = X(d.rows[c], Eigen::all).rowwise() - d.mean[c].transpose();
      var_[c] = (centered.array().square().colwise().mean().transpose() + floor).matrix();
      if ((var_[c].array() <= 0.0).any()) throw NumericalError("gnb: zero feature variance");
      log_prior_[c] = d.log_prior[c];
    }
  }
  ClassifierKind kind() const override { return ClassifierKind::kGnb; }
  std::size_t feature_count() const override { return static_cast<std::size_t>(mean_[0].size()); }

 protected:
  int predict_row(std::span<const double> x) const override {
    const Vec v = to_vec(x);
    std::array<double, 2> s{};
    for (int c = 0; c < 2; ++c)
      s[c] = log_prior_[c] -
             0.5 * ((2.0 * std::numbers::pi * var_[c].array()).log() + (v - mean_[c]).array().square() / var_[c].array()).sum();
    return argmax2(s[0], s[1]);
  }

 private:
  std::array<Vec, 2> mean_, var_;
  std::array<double, 2> log_prior_{};
};

class Lda final : public ClassifierModel {
 public:
  Lda(const Mat& X, std::span<const int> labels, const ClassifierOptions& o) {
    const ClassData d = split_classes(X, labels);
    const Eigen::Index p = X.cols();
    const double dof = std::max<double>(1.0, static_cast<double>(X.rows()) - 2.0);
    Mat cov = (scatter(X, d.rows[0], d.mean[0]) + scatter(X, d.rows[1], d.mean[1])) / dof;
    cov += o.ridge * Mat::Identity(p, p);
    const auto llt = factor(cov, "lda");
    for (int c = 0; c < 2; ++c) {
      coef_[c] = llt.solve(d.mean[c]);
      intercept_[c] = -0.5 * d.mean[c].dot(coef_[c]) + d.log_prior[c];
    }
  }
  ClassifierKind kind() const override { return ClassifierKind::kLda; }
  std::size_t feature_count() const override { return static_cast<std::size_t>(coef_[0].size()); }

 protected:
  int predict_row(std::span<const double> x) const override {
    const Vec v = to_vec(x);
    return argmax2(coef_[0].dot(v) + intercept_[0], coef_[1].dot(v) + intercept_[1]);
  }

 private:
  std::array<Vec, 2> coef_;
  std::array<double, 2> intercept_{};
};

class Qda final : public ClassifierModel {
 public:
  Qda(const Mat& X, std::span<const int> labels, const ClassifierOptions& o) {
    const ClassData d = split_classes(X, labels);
    const Eigen::Index p = X.cols();
    for (int c = 0; c < 2; ++c) {
      const double dof = std::max<double>(1.0, static_cast<double>(d.rows[c].size()) - 1.0);
      Mat cov = scatter(X, d.rows[c], d.mean[c]) / dof + o.ridge * Mat::Identity(p, p);
      llt_[c] = factor(cov, "qda");
      const Vec diag = Mat(llt_[c].matrixL()).diagonal();
      log_det_[c] = 2.0 * diag.array().log().sum();
      mean_[c] = d.mean[c];
      log_prior_[c] = d.log_prior[c];
    }
  }
  ClassifierKind kind() const override { return ClassifierKind::kQda; }
  std::size_t feature_count() const override { return static_cast<std::size_t>(mean_[0].size()); }

 protected:
  int predict_row(std::span<const double> x) const override {
    const Vec v = to_vec(x);
    std::array<double, 2> s{};
    for (int c = 0; c < 2; ++c) {
      const Vec diff = v - mean_[c];
      const Vec z = llt_[c].matrixL().solve(diff);
      s[c] = log_prior_[c] - 0.5 * log_det_[c] - 0.5 * z.squaredNorm();
    }
    return argmax2(s[0], s[1]);
  }

 private:
  std::array<Eigen::LLT<Mat>, 2> llt_;
  std::array<Vec, 2> mean_;
  std::array<double, 2> log_det_{}, log_prior_{};
};

// L2-penalised logistic regression, intercept unpenalised, damped Newton.
class LogReg final : public ClassifierModel {
 public:
  LogReg(const Mat& X, std::span<const int> labels, const ClassifierOptions& o) {
    split_classes(X, labels);  // label validation
    const Eigen::Index n = X.rows(), p = X.cols();
    Mat A(n, p + 1);
    A.leftCols(p) = X;
    A.col(p).setOnes();
    Vec y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)];
    Vec penalty = Vec::Constant(p + 1, o.lr_lambda);
    penalty(p) = 0.0;

    auto objective = [&](const Vec& w) {
      const Vec z = A * w;
      double f = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        // log(1 + exp(z)) - y z, evaluated stably.
        const double zi = z(i);
        f += (zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi))) - y(i) * zi;
      }
      return f + 0.5 * (penalty.array() * w.array().square()).sum();
    };

    Vec w = Vec::Zero(p + 1);
    double f = objective(w);
    for (iterations_ = 0; iterations_ < o.lr_max_iterations; ++iterations_) {
      const Vec z = A * w;
      const Vec prob = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      const Vec grad = A.transpose() * (prob - y) + penalty.cwiseProduct(w);
      grad_norm_ = grad.norm();
      if (grad_norm_ <= o.lr_tolerance) break;
      const Vec s = prob.cwiseProduct((Vec::Ones(n) - prob));
      Mat H = A.transpose() * s.asDiagonal() * A;
      H.diagonal() += penalty;
      Eigen::LDLT<Mat> ldlt(H);
      if (ldlt.info() != Eigen::Success) throw NumericalError("lr: Hessian factorisation failed");
      const Vec step = ldlt.solve(grad);
      double t = 1.0;
      Vec next = w - step;
      double fn = objective(next);
      while (fn > f - 1e-4 * t * grad.dot(step) && t > 1e-10) {
        t *= 0.5;
        next = w - t * step;
        fn = objective(next);
      }
      w = next;
      f = fn;
    }
    coef_ = w.head(p);
    intercept_ = w(p);
  }
  ClassifierKind kind() const override { return ClassifierKind::kLr; }
  std::size_t feature_count() const override { return static_cast<std::size_t>(coef_.size()); }

 protected:
  int predict_row(std::span<const double> x) const override {
    return coef_.dot(to_vec(x)) + intercept_ > 0.0 ? 1 : 0;
  }

 private:
  Vec coef_;
  double intercept_ = 0.0;
  int iterations_ = 0;
  double grad_norm_ = 0.0;
};

class Knn final : public ClassifierModel {
 public:
  Knn(const Mat& X, std::span<const int> labels, const ClassifierOptions& o)
      : X_(X), labels_(labels.begin(), labels.end()), k_(o.knn_k) {
    split_classes(X, labels);
    if (k_ == 0) throw UsageError("knn: k must be positive");
    k_ = std::min<std::size_t>(k_, labels_.size());
  }
  ClassifierKind kind() const override { return ClassifierKind::kKnn; }
  std::size_t feature_count() const override { return static_cast<std::size_t>(X_.cols()); }

 protected:
  int predict_row(std::span<const double> x) const override {
    const Eigen::RowVectorXd v = to_vec(x).transpose();
    const Vec d2 = (X_.rowwise() - v).rowwise().squaredNorm();
    std::vector<std::size_t> order(labels_.size());
    std::iota(order.begin(), order.end(), 0);
    const auto kk = static_cast<std::ptrdiff_t>(k_);
    std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](std::size_t a, std::size_t b) {
      const double da = d2(static_cast<Eigen::Index>(a)), db = d2(static_cast<Eigen::Index>(b));
      return da != db ? da < db : a < b;
    });
    std::size_t votes = 0;
    for (std::ptrdiff_t i = 0; i < kk; ++i) votes += labels_[order[static_cast<std::size_t>(i)]] == 1;
    const std::size_t other = k_ - votes;
    if (votes != other) return votes > other ? 1 : 0;
    return labels_[order[0]];  // tied vote: nearest neighbour decides
  }

 private:
  Mat X_;
  std::vector<int> labels_;
  std::size_t k_;
};

}  // namespace

std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::kGnb: return "gnb";
    case ClassifierKind::kLda: return "lda";
    case ClassifierKind::kQda: return "qda";
    case ClassifierKind::kLr: return "lr";
    case ClassifierKind::kKnn: return "knn";
  }
  return "?";
}

ClassifierKind classifier_from_string(const std::string& s) {
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (ClassifierKind k : kAllClassifiers)
    if (to_string(k) == lower) return k;
  throw UsageError("unknown classifier '" + s + "'");
}

std::vector<int> ClassifierModel::predict(const Matrix& features) const {
  if (features.cols() != feature_count())
    throw ShapeError("predict: feature length " + std::to_string(features.cols()) + " differs from fitted " +
                     std::to_string(feature_count()));
  std::vector<int> out(features.rows());
  for (std::size_t r = 0; r < features.rows(); ++r) out[r] = predict_row(features.row(r));
  return out;
}

std::unique_ptr<ClassifierModel> fit_classifier(ClassifierKind kind, const Matrix& features,
                                                std::span<const int> labels,
                                                const ClassifierOptions& options) {
  if (features.rows() != labels.size()) throw ShapeError("fit_classifier: label count mismatch");
  if (features.cols() == 0) throw ShapeError("fit_classifier: no features");
  const Mat X = to_eigen(features);
  if (!X.allFinite()) throw NumericalError("fit_classifier: non-finite feature value");
  switch (kind) {
    case ClassifierKind::kGnb: return std::make_unique<Gnb>(X, labels, options);
    case ClassifierKind::kLda: return std::make_unique<Lda>(X, labels, options);
    case ClassifierKind::kQda: return std::make_unique<Qda>(X, labels, options);
    case ClassifierKind::kLr: return std::make_unique<LogReg>(X, labels, options);
    case ClassifierKind::kKnn: return std::make_unique<Knn>(X, labels, options);
  }
  throw UsageError("unknown classifier kind");
}

}  // namespace drowsy
