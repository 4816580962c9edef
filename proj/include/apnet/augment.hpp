#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "apnet/rng.hpp"
#include "apnet/tensor.hpp"

namespace apnet {

enum class PolicyKind { Identity, Crop, Flip, Gray, Blur, GridShuffle, Mpn, RandAugment };

const char* policy_kind_name(PolicyKind kind);
PolicyKind policy_kind_from_name(const std::string& name);

/// One augmentation policy with its hyperparameters and (after grading) a
/// deviation level. Level 1 is the lightest view of an experiment.
struct PolicySpec {
  PolicyKind kind = PolicyKind::Identity;
  std::map<std::string, double> params;
  int level = 0;

  /// Throws std::invalid_argument when a hyperparameter is out of range
  /// (alpha outside [0,1], even blur kernel, non-positive grid count, ...).
  void validate() const;

  double alpha() const { return get("alpha", 1.0); }                 // Gray
  int kernel() const { return static_cast<int>(get("kernel", 3)); }  // Blur
  int grids() const { return static_cast<int>(get("grids", 1)); }    // GridShuffle
  double scale() const { return get("scale", 1.0); }                 // Mpn
  int count() const { return static_cast<int>(get("count", 1)); }    // RandAugment n
  double magnitude() const { return get("magnitude", 9.0); }         // RandAugment m
  int pad() const { return static_cast<int>(get("pad", 4)); }        // Crop

  std::string describe() const;

  static PolicySpec identity() { return {PolicyKind::Identity, {}, 0}; }
  static PolicySpec crop(int pad);
  static PolicySpec flip();
  static PolicySpec gray(double alpha);
  static PolicySpec blur(int kernel);
  static PolicySpec grid_shuffle(int grids);
  static PolicySpec mpn(double scale);
  static PolicySpec rand_augment(int count, double magnitude);

private:
  double get(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

/// Raised when two policies cannot be ordered by deviation: different
/// non-identity families, mixed RandAugment hyperparameters, or equal
/// deviation (levels must be strictly increasing).
class IncomparablePoliciesError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Deviation comparison: -1 when a is lighter than b, +1 when heavier.
/// Policies are ordered either by hyperparameter aggressiveness within one
/// family or by the proper-superset rule (identity is the empty composition,
/// lighter than everything else). Throws IncomparablePoliciesError otherwise.
int compare_deviation(const PolicySpec& a, const PolicySpec& b);

/// Sorts ascending by deviation and assigns levels 1..K. Total order required.
std::vector<PolicySpec> grade_policies(std::vector<PolicySpec> policies);

/// Applies one policy to a CHW image in [0,1]. Pure given the RNG stream:
/// equal (image, policy, seed) gives bitwise-equal output.
Tensor apply_policy(const Tensor& img, const PolicySpec& policy, Rng& rng);

/// Aligned per-level views of one labeled batch. views[0] is the lightest;
/// all levels share batch size and label order.
struct ViewBatch {
  std::vector<Tensor> views;  // per level: N x C x H x W
  std::vector<int> labels;
  std::uint64_t seed = 0;

  int levels() const { return static_cast<int>(views.size()); }
  std::int64_t batch_size() const { return labels.empty() ? 0 : static_cast<std::int64_t>(labels.size()); }
};

/// Builds the multi-view batch: views[0] applies the light pipeline to each
/// image; views[j] for j >= 1 applies the level-(j+1) graded policy on top of
/// the light view (all levels of one sample share the light view's geometry).
/// The per-image stream for (image i, level j) is rng.fork(Rng::mix(i, j)),
/// which is what makes per-image replay possible.
ViewBatch make_view_batch(const std::vector<Tensor>& images, const std::vector<int>& labels,
                          const std::vector<PolicySpec>& graded, const std::vector<PolicySpec>& light,
                          const Rng& rng);

}  // namespace apnet
