#include "apnet/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "apnet/conv_kernels.hpp"

namespace apnet {

void LossConfig::validate() const {
  if (weight_decay < 0.0) throw std::invalid_argument("LossConfig: weight_decay must be >= 0");
  if (similarity_weight >= 0.0 && !std::isfinite(similarity_weight))
    throw std::invalid_argument("LossConfig: similarity_weight must be finite");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw std::invalid_argument("LossConfig: label_smoothing must be in [0, 1)");
}

double cross_pathway_similarity(const std::vector<PathwayGroup>& groups,
                                std::vector<std::vector<Tensor>>* grads) {
  if (grads) {
    grads->clear();
    grads->reserve(groups.size());
  }
  double total = 0.0;
  for (const PathwayGroup& group : groups) {
    std::vector<Tensor>* group_grads = nullptr;
    if (grads) {
      grads->emplace_back();
      group_grads = &grads->back();
      for (const Tensor* t : group.outputs) group_grads->emplace_back(t->shape());
    }
    for (std::size_t a = 0; a < group.outputs.size(); ++a) {
      for (std::size_t b = a + 1; b < group.outputs.size(); ++b) {
        const Tensor& u = *group.outputs[a];
        const Tensor& v = *group.outputs[b];
        if (u.rank() != 4 || v.rank() != 4)
          throw std::invalid_argument("cross_pathway_similarity: outputs must be NCHW");
        if (u.dim(0) != v.dim(0) || u.dim(2) != v.dim(2) || u.dim(3) != v.dim(3))
          throw std::invalid_argument(
              "cross_pathway_similarity: pathway outputs disagree on batch/spatial dims: " +
              shape_string(u) + " vs " + shape_string(v));
        const std::int64_t n = u.dim(0), cu = u.dim(1), cv = v.dim(1);
        const std::int64_t plane = u.dim(2) * u.dim(3);
        const double norm = static_cast<double>(n * plane);

        // D[cu][cv] = sum_{batch, spatial} u * v; G = || D / norm ||_F^2.
        Tensor dots({cu, cv});
        for (std::int64_t i = 0; i < n; ++i)
          gemm_nt(u.data() + i * cu * plane, v.data() + i * cv * plane, dots.data(), cu, plane, cv,
                  i > 0);
        double g = 0.0;
        for (std::int64_t i = 0; i < dots.numel(); ++i) {
          const double mean_dot = dots[i] / norm;
          g += mean_dot * mean_dot;
        }
        total += g;

        if (group_grads) {
          // dG/du = (2 / norm^2) * D * v, dG/dv = (2 / norm^2) * D^T * u.
          Tensor scaled = dots;
          scaled.scale_(2.0 / (norm * norm));
          Tensor& du = (*group_grads)[a];
          Tensor& dv = (*group_grads)[b];
          for (std::int64_t i = 0; i < n; ++i) {
            Tensor du_i({cu, plane});
            gemm_nn(scaled.data(), v.data() + i * cv * plane, du_i.data(), cu, cv, plane, false);
            double* dst = du.data() + i * cu * plane;
            for (std::int64_t q = 0; q < cu * plane; ++q) dst[q] += du_i[q];
            Tensor dv_i({cv, plane});
            gemm_tn(scaled.data(), u.data() + i * cu * plane, dv_i.data(), cv, cu, plane, false);
            double* dstv = dv.data() + i * cv * plane;
            for (std::int64_t q = 0; q < cv * plane; ++q) dstv[q] += dv_i[q];
          }
        }
      }
    }
  }
  return total;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax: expected (N, C) logits");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    double* orow = out.data() + i * c;
    for (std::int64_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (std::int64_t j = 0; j < c; ++j) orow[j] /= denom;
  }
  return out;
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels, double label_smoothing,
                     Tensor* dlogits) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: expected (N, C) logits");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  if (dlogits) *dlogits = Tensor(logits.shape());
  const double off_mass = label_smoothing / static_cast<double>(c);
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(c) + ")");
    const double* row = logits.data() + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    // loss_i = lse - sum_j q_j * logit_j with q = smoothed one-hot
    double weighted = (1.0 - label_smoothing) * row[label];
    if (label_smoothing > 0.0)
      for (std::int64_t j = 0; j < c; ++j) weighted += off_mass * row[j];
    loss += lse - weighted;
    if (dlogits) {
      double* drow = dlogits->data() + i * c;
      for (std::int64_t j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - lse);
        const double q = off_mass + (j == label ? 1.0 - label_smoothing : 0.0);
        drow[j] = (p - q) / static_cast<double>(n);
      }
    }
  }
  return loss / static_cast<double>(n);
}

LossBreakdown total_loss(const std::vector<Tensor>& logits_per_level, const std::vector<int>& labels,
                         double similarity, const LossConfig& cfg, std::vector<Tensor>* dlogits) {
  cfg.validate();
  if (logits_per_level.empty()) throw std::invalid_argument("total_loss: no logits");
  LossBreakdown out;
  out.similarity = similarity;
  out.lambda = cfg.lambda();
  if (dlogits) dlogits->assign(logits_per_level.size(), Tensor());
  for (std::size_t j = 0; j < logits_per_level.size(); ++j) {
    Tensor* grad = dlogits ? &(*dlogits)[j] : nullptr;
    const double l = cross_entropy(logits_per_level[j], labels, cfg.label_smoothing, grad);
    if (!std::isfinite(l))
      throw std::runtime_error("total_loss: non-finite cross-entropy at level " + std::to_string(j));
    out.head_losses.push_back(l);
    out.total += l;
  }
  if (!std::isfinite(similarity))
    throw std::runtime_error("total_loss: non-finite cross-pathway similarity");
  out.total += out.lambda * similarity;
  if (!std::isfinite(out.total)) throw std::runtime_error("total_loss: non-finite total");
  return out;
}

}  // namespace apnet
