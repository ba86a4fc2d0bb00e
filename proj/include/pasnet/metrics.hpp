#pragma once

#include <string>
#include <vector>

#include "pasnet/error.hpp"
#include "pasnet/tensor.hpp"

namespace pasnet {

// Row = true class, column = predicted class.
inline Tensor confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred,
                               std::size_t classes) {
  require(truth.size() == pred.size() && !truth.empty(), "confusion_matrix: size mismatch");
  Tensor m({classes, classes});
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && static_cast<std::size_t>(truth[i]) < classes &&
                pred[i] >= 0 && static_cast<std::size_t>(pred[i]) < classes,
            "confusion_matrix: class index out of range");
    m.at2(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i])) += 1.0;
  }
  return m;
}

inline double accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
  require(truth.size() == pred.size() && !truth.empty(), "accuracy: size mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i];
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

// Unweighted mean of per-class F1. Classes with no true and no predicted
// samples contribute 0 (the conservative convention).
inline double macro_f1(const std::vector<int>& truth, const std::vector<int>& pred,
                       std::size_t classes) {
  const Tensor cm = confusion_matrix(truth, pred, classes);
  double total = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    double tp = cm.at2(k, k), fp = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (j == k) continue;
      fp += cm.at2(j, k);
      fn += cm.at2(k, j);
    }
    const double denom = 2.0 * tp + fp + fn;
    total += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  return total / static_cast<double>(classes);
}

inline std::string confusion_csv(const Tensor& cm) {
  std::string out;
  for (std::size_t i = 0; i < cm.dim(0); ++i) {
    for (std::size_t j = 0; j < cm.dim(1); ++j) {
      out += std::to_string(static_cast<long long>(cm.at2(i, j)));
      out += j + 1 < cm.dim(1) ? "," : "\n";
    }
  }
  return out;
}

}  // namespace pasnet
