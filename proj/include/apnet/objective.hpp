#pragma once

#include <vector>

#include "apnet/tensor.hpp"

namespace apnet {

/// Loss weighting. The similarity weight follows the weight-decay coefficient
/// (lambda = 0.1 * weight_decay) unless set explicitly; it is recomputed on
/// every call so a decay schedule carries over automatically.
struct LossConfig {
  double weight_decay = 1e-4;       // omega
  double similarity_weight = -1.0;  // lambda; negative derives 0.1 * weight_decay
  double label_smoothing = 0.0;

  double lambda() const { return similarity_weight >= 0.0 ? similarity_weight : 0.1 * weight_decay; }
  void validate() const;
};

struct LossBreakdown {
  std::vector<double> head_losses;  // one cross-entropy per view level
  double similarity = 0.0;          // S
  double lambda = 0.0;
  double total = 0.0;               // sum of head losses + lambda * S
};

/// The sub-convolution outputs of one replaced layer on one view level
/// (pathways level..k-1, in order). Entries must share batch and spatial
/// dims; channel counts may differ.
struct PathwayGroup {
  std::vector<const Tensor*> outputs;
};

/// Cross-pathway similarity: for every group and every pathway pair (a, b)
/// inside it, the squared mean batch-spatial dot product of every cross
/// channel pair, summed:
///   S = sum_groups sum_{a<b} sum_{u in a, v in b} ( <u, v> / (B*H*W) )^2.
/// Non-negative; zero exactly when all cross-pathway channel pairs have zero
/// mean dot product. When `grads` is non-null it receives dS/d(output) per
/// group member, aligned with `groups`.
double cross_pathway_similarity(const std::vector<PathwayGroup>& groups,
                                std::vector<std::vector<Tensor>>* grads = nullptr);

/// Row-wise softmax of (N, C) logits.
Tensor softmax(const Tensor& logits);

/// Mean cross-entropy with optional label smoothing; fills dlogits
/// (d loss / d logits, already divided by the batch size) when non-null.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels, double label_smoothing,
                     Tensor* dlogits);

/// Per-head cross-entropy on each level's own view plus lambda * S. Aborts
/// with std::runtime_error when any component is not finite. When `dlogits`
/// is non-null it receives the per-head logit gradients.
LossBreakdown total_loss(const std::vector<Tensor>& logits_per_level, const std::vector<int>& labels,
                         double similarity, const LossConfig& cfg,
                         std::vector<Tensor>* dlogits = nullptr);

}  // namespace apnet
