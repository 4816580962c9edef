#include "apnet/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "apnet/image.hpp"

namespace apnet {

const char* policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Identity: return "identity";
    case PolicyKind::Crop: return "crop";
    case PolicyKind::Flip: return "flip";
    case PolicyKind::Gray: return "gray";
    case PolicyKind::Blur: return "blur";
    case PolicyKind::GridShuffle: return "gridshuffle";
    case PolicyKind::Mpn: return "mpn";
    case PolicyKind::RandAugment: return "randaugment";
  }
  throw std::invalid_argument("unknown policy kind");
}

PolicyKind policy_kind_from_name(const std::string& name) {
  static const std::array<PolicyKind, 8> kinds = {
      PolicyKind::Identity, PolicyKind::Crop,        PolicyKind::Flip, PolicyKind::Gray,
      PolicyKind::Blur,     PolicyKind::GridShuffle, PolicyKind::Mpn,  PolicyKind::RandAugment};
  for (PolicyKind k : kinds)
    if (name == policy_kind_name(k)) return k;
  throw std::invalid_argument("unknown policy kind: " + name);
}

PolicySpec PolicySpec::crop(int pad) { return {PolicyKind::Crop, {{"pad", double(pad)}}, 0}; }
PolicySpec PolicySpec::flip() { return {PolicyKind::Flip, {}, 0}; }
PolicySpec PolicySpec::gray(double alpha) { return {PolicyKind::Gray, {{"alpha", alpha}}, 0}; }
PolicySpec PolicySpec::blur(int kernel) { return {PolicyKind::Blur, {{"kernel", double(kernel)}}, 0}; }
PolicySpec PolicySpec::grid_shuffle(int grids) {
  return {PolicyKind::GridShuffle, {{"grids", double(grids)}}, 0};
}
PolicySpec PolicySpec::mpn(double scale) { return {PolicyKind::Mpn, {{"scale", scale}}, 0}; }
PolicySpec PolicySpec::rand_augment(int count, double magnitude) {
  return {PolicyKind::RandAugment, {{"count", double(count)}, {"magnitude", magnitude}}, 0};
}

void PolicySpec::validate() const {
  switch (kind) {
    case PolicyKind::Identity:
    case PolicyKind::Flip:
      break;
    case PolicyKind::Crop:
      if (pad() < 0) throw std::invalid_argument("crop: pad must be >= 0");
      break;
    case PolicyKind::Gray:
      if (alpha() < 0.0 || alpha() > 1.0) throw std::invalid_argument("gray: alpha must be in [0,1]");
      break;
    case PolicyKind::Blur:
      if (kernel() < 1 || kernel() % 2 == 0)
        throw std::invalid_argument("blur: kernel must be odd and >= 1, got " + std::to_string(kernel()));
      break;
    case PolicyKind::GridShuffle:
      if (grids() < 1) throw std::invalid_argument("gridshuffle: grids must be >= 1");
      break;
    case PolicyKind::Mpn:
      if (!(scale() > 0.0)) throw std::invalid_argument("mpn: scale must be > 0");
      break;
    case PolicyKind::RandAugment:
      if (count() < 0) throw std::invalid_argument("randaugment: count must be >= 0");
      if (magnitude() < 0.0) throw std::invalid_argument("randaugment: magnitude must be >= 0");
      break;
  }
}

std::string PolicySpec::describe() const {
  std::string s = policy_kind_name(kind);
  for (const auto& [k, v] : params) {
    s += " " + k + "=";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    s += buf;
  }
  return s;
}

namespace {

Tensor pad_zero(const Tensor& img, int pad) {
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h + 2 * pad, w + 2 * pad});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) out.at(ch, y + pad, x + pad) = img.at(ch, y, x);
  return out;
}

Tensor random_crop(const Tensor& img, int pad, Rng& rng) {
  if (pad == 0) return img;
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor padded = pad_zero(img, pad);
  const std::int64_t dy = rng.uniform_int(2 * pad + 1);
  const std::int64_t dx = rng.uniform_int(2 * pad + 1);
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) out.at(ch, y, x) = padded.at(ch, y + dy, x + dx);
  return out;
}

Tensor hflip(const Tensor& img) {
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y, w - 1 - x);
  return out;
}

Tensor gray_blend(const Tensor& img, double alpha) {
  if (alpha == 0.0) return img;
  const Tensor gray = grayscale(img);
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        out.at(ch, y, x) = alpha * gray.at(0, y, x) + (1.0 - alpha) * img.at(ch, y, x);
  return out;
}

Tensor mean_blur(const Tensor& img, int kernel) {
  if (kernel == 1) return img;
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int r = kernel / 2;
  const double inv = 1.0 / (double(kernel) * double(kernel));
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ky = -r; ky <= r; ++ky) {
          const std::int64_t yy = std::clamp<std::int64_t>(y + ky, 0, h - 1);
          for (int kx = -r; kx <= r; ++kx) {
            const std::int64_t xx = std::clamp<std::int64_t>(x + kx, 0, w - 1);
            acc += img.at(ch, yy, xx);
          }
        }
        out.at(ch, y, x) = acc * inv;
      }
  return out;
}

// Reflect-pads bottom/right to the next multiple of g (row h+i mirrors row
// h-2-i), shuffles the g x g tiles, then center-crops back to the original
// size. Divisible inputs take the pad-free path and stay bitwise exact.
Tensor grid_shuffle(const Tensor& img, int grids, Rng& rng) {
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (grids == 1) return img;
  const std::int64_t g = grids;
  const std::int64_t pad_h = (g - h % g) % g;
  const std::int64_t pad_w = (g - w % g) % g;
  if (pad_h > h - 1 || pad_w > w - 1)
    throw std::invalid_argument("gridshuffle: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " cannot be reflect-padded to a multiple of " + std::to_string(g));
  const std::int64_t ph = h + pad_h, pw = w + pad_w;

  Tensor padded({c, ph, pw});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < ph; ++y) {
      const std::int64_t sy = y < h ? y : 2 * h - 2 - y;
      for (std::int64_t x = 0; x < pw; ++x) {
        const std::int64_t sx = x < w ? x : 2 * w - 2 - x;
        padded.at(ch, y, x) = img.at(ch, sy, sx);
      }
    }

  std::vector<std::int64_t> perm(static_cast<std::size_t>(g * g));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  const std::int64_t th = ph / g, tw = pw / g;
  Tensor shuffled({c, ph, pw});
  for (std::int64_t t = 0; t < g * g; ++t) {
    const std::int64_t src = perm[static_cast<std::size_t>(t)];
    const std::int64_t dst_y = (t / g) * th, dst_x = (t % g) * tw;
    const std::int64_t src_y = (src / g) * th, src_x = (src % g) * tw;
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < th; ++y)
        for (std::int64_t x = 0; x < tw; ++x)
          shuffled.at(ch, dst_y + y, dst_x + x) = padded.at(ch, src_y + y, src_x + x);
  }

  if (pad_h == 0 && pad_w == 0) return shuffled;
  const std::int64_t y0 = pad_h / 2, x0 = pad_w / 2;
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) out.at(ch, y, x) = shuffled.at(ch, y0 + y, x0 + x);
  return out;
}

Tensor multiply_pixels(const Tensor& img, double scale) {
  Tensor out = img;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = clamp01(out[i] * scale);
  return out;
}

// ---- RandAugment transformation list (14 entries, fixed) ----
//
// Magnitude m maps linearly onto each transform's range with m = 30 at the
// far end, matching the 30-bin convention of the searched-policy line this
// implements. Signed transforms flip direction with probability 1/2.

constexpr double kMagnitudeCap = 30.0;

double mag_fraction(double magnitude) { return std::min(magnitude, kMagnitudeCap) / kMagnitudeCap; }

double signed_amount(double amount, Rng& rng) { return rng.bernoulli(0.5) ? amount : -amount; }

double enhance_factor(double magnitude, Rng& rng) {
  return 1.0 + signed_amount(0.9 * mag_fraction(magnitude), rng);
}

Tensor clip_all(Tensor t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = clamp01(t[i]);
  return t;
}

Tensor autocontrast_op(const Tensor& img) {
  const std::int64_t c = img.dim(0), plane = img.dim(1) * img.dim(2);
  Tensor out = img;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double lo = 1.0, hi = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double v = img[ch * plane + i];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi <= lo) continue;
    const double s = 1.0 / (hi - lo);
    for (std::int64_t i = 0; i < plane; ++i) out[ch * plane + i] = (img[ch * plane + i] - lo) * s;
  }
  return out;
}

Tensor equalize_op(const Tensor& img) {
  const std::int64_t c = img.dim(0), plane = img.dim(1) * img.dim(2);
  Tensor out = img;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    std::array<std::int64_t, 256> hist{};
    for (std::int64_t i = 0; i < plane; ++i) {
      const int q = std::clamp(static_cast<int>(std::lround(img[ch * plane + i] * 255.0)), 0, 255);
      ++hist[static_cast<std::size_t>(q)];
    }
    int last_nonzero = -1;
    std::int64_t total = 0;
    for (int i = 0; i < 256; ++i)
      if (hist[static_cast<std::size_t>(i)]) {
        last_nonzero = i;
        total += hist[static_cast<std::size_t>(i)];
      }
    if (last_nonzero < 0) continue;
    const std::int64_t step = (total - hist[static_cast<std::size_t>(last_nonzero)]) / 255;
    if (step == 0) continue;
    std::array<int, 256> lut{};
    std::int64_t n = step / 2;
    for (int i = 0; i < 256; ++i) {
      lut[static_cast<std::size_t>(i)] = static_cast<int>(std::min<std::int64_t>(255, n / step));
      n += hist[static_cast<std::size_t>(i)];
    }
    for (std::int64_t i = 0; i < plane; ++i) {
      const int q = std::clamp(static_cast<int>(std::lround(img[ch * plane + i] * 255.0)), 0, 255);
      out[ch * plane + i] = lut[static_cast<std::size_t>(q)] / 255.0;
    }
  }
  return out;
}

Tensor posterize_op(const Tensor& img, double magnitude) {
  const int bits = std::clamp(8 - static_cast<int>(std::lround(mag_fraction(magnitude) * 4.0)), 4, 8);
  const int mask = 0xff << (8 - bits);
  Tensor out = img;
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const int q = std::clamp(static_cast<int>(img[i] * 255.0), 0, 255);
    out[i] = (q & mask) / 255.0;
  }
  return out;
}

Tensor solarize_op(const Tensor& img, double magnitude) {
  const double threshold = 1.0 - mag_fraction(magnitude);
  Tensor out = img;
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] >= threshold) out[i] = 1.0 - out[i];
  return out;
}

Tensor color_op(const Tensor& img, double factor) {
  const Tensor gray = grayscale(img);
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        out.at(ch, y, x) = clamp01(gray.at(0, y, x) + factor * (img.at(ch, y, x) - gray.at(0, y, x)));
  return out;
}

Tensor contrast_op(const Tensor& img, double factor) {
  const Tensor gray = grayscale(img);
  const double mean = gray.sum() / static_cast<double>(gray.numel());
  Tensor out = img;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = clamp01(mean + factor * (img[i] - mean));
  return out;
}

Tensor brightness_op(const Tensor& img, double factor) {
  Tensor out = img;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = clamp01(factor * img[i]);
  return out;
}

Tensor sharpness_op(const Tensor& img, double factor) {
  // 3x3 smoothing kernel (center weight 5, total 13), edge replicated.
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor smooth({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ky = -1; ky <= 1; ++ky) {
          const std::int64_t yy = std::clamp<std::int64_t>(y + ky, 0, h - 1);
          for (int kx = -1; kx <= 1; ++kx) {
            const std::int64_t xx = std::clamp<std::int64_t>(x + kx, 0, w - 1);
            const double wgt = (ky == 0 && kx == 0) ? 5.0 : 1.0;
            acc += wgt * img.at(ch, yy, xx);
          }
        }
        smooth.at(ch, y, x) = acc / 13.0;
      }
  Tensor out({c, h, w});
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = clamp01(smooth[i] + factor * (img[i] - smooth[i]));
  return out;
}

constexpr double kWarpFill = 0.5;

Tensor rotate_op(const Tensor& img, double magnitude, Rng& rng) {
  const double deg = signed_amount(mag_fraction(magnitude) * 30.0, rng);
  const double rad = deg * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  return warp_affine(img, cs, -sn, 0.0, sn, cs, 0.0, kWarpFill);
}

Tensor shear_op(const Tensor& img, double magnitude, bool horizontal, Rng& rng) {
  const double s = signed_amount(mag_fraction(magnitude) * 0.3, rng);
  if (horizontal) return warp_affine(img, 1.0, s, 0.0, 0.0, 1.0, 0.0, kWarpFill);
  return warp_affine(img, 1.0, 0.0, 0.0, s, 1.0, 0.0, kWarpFill);
}

Tensor translate_op(const Tensor& img, double magnitude, bool horizontal, Rng& rng) {
  const double extent = horizontal ? static_cast<double>(img.dim(2)) : static_cast<double>(img.dim(1));
  const double t = signed_amount(mag_fraction(magnitude) * extent / 3.0, rng);
  if (horizontal) return warp_affine(img, 1.0, 0.0, t, 0.0, 1.0, 0.0, kWarpFill);
  return warp_affine(img, 1.0, 0.0, 0.0, 0.0, 1.0, t, kWarpFill);
}

Tensor apply_rand_augment_transform(const Tensor& img, int index, double magnitude, Rng& rng) {
  switch (index) {
    case 0: return shear_op(img, magnitude, true, rng);
    case 1: return shear_op(img, magnitude, false, rng);
    case 2: return translate_op(img, magnitude, true, rng);
    case 3: return translate_op(img, magnitude, false, rng);
    case 4: return rotate_op(img, magnitude, rng);
    case 5: return color_op(img, enhance_factor(magnitude, rng));
    case 6: return posterize_op(img, magnitude);
    case 7: return solarize_op(img, magnitude);
    case 8: return contrast_op(img, enhance_factor(magnitude, rng));
    case 9: return sharpness_op(img, enhance_factor(magnitude, rng));
    case 10: return brightness_op(img, enhance_factor(magnitude, rng));
    case 11: return autocontrast_op(img);
    case 12: return equalize_op(img);
    case 13: return img;  // identity
    default: throw std::invalid_argument("randaugment: bad transform index");
  }
}

constexpr int kRandAugmentTransforms = 14;

Tensor rand_augment(const Tensor& img, int count, double magnitude, Rng& rng) {
  Tensor out = img;
  for (int i = 0; i < count; ++i) {
    const int pick = static_cast<int>(rng.uniform_int(kRandAugmentTransforms));
    out = apply_rand_augment_transform(out, pick, magnitude, rng);
  }
  return clip_all(std::move(out));
}

}  // namespace

Tensor apply_policy(const Tensor& img, const PolicySpec& policy, Rng& rng) {
  check_image(img);
  policy.validate();
  switch (policy.kind) {
    case PolicyKind::Identity: return img;
    case PolicyKind::Crop: return random_crop(img, policy.pad(), rng);
    case PolicyKind::Flip: return rng.bernoulli(0.5) ? hflip(img) : img;
    case PolicyKind::Gray: return gray_blend(img, policy.alpha());
    case PolicyKind::Blur: return mean_blur(img, policy.kernel());
    case PolicyKind::GridShuffle: return grid_shuffle(img, policy.grids(), rng);
    case PolicyKind::Mpn: return multiply_pixels(img, policy.scale());
    case PolicyKind::RandAugment: return rand_augment(img, policy.count(), policy.magnitude(), rng);
  }
  throw std::invalid_argument("apply_policy: unknown policy kind");
}

namespace {

[[noreturn]] void throw_incomparable(const PolicySpec& a, const PolicySpec& b, const char* why) {
  throw IncomparablePoliciesError("policies '" + a.describe() + "' and '" + b.describe() +
                                  "' are not deviation-ordered: " + why);
}

int sign_of(double d) { return d < 0 ? -1 : (d > 0 ? 1 : 0); }

}  // namespace

int compare_deviation(const PolicySpec& a, const PolicySpec& b) {
  a.validate();
  b.validate();
  if (a.kind != b.kind) {
    // The only cross-family ordering is the proper-superset rule; a single
    // policy is only a superset of the empty composition (identity).
    if (a.kind == PolicyKind::Identity) return -1;
    if (b.kind == PolicyKind::Identity) return 1;
    throw_incomparable(a, b, "different augmentation families");
  }
  switch (a.kind) {
    case PolicyKind::Identity:
    case PolicyKind::Flip:
      throw_incomparable(a, b, "equal deviation");
    case PolicyKind::Crop: {
      const int s = sign_of(double(a.pad() - b.pad()));
      if (s) return s;
      throw_incomparable(a, b, "equal deviation");
    }
    case PolicyKind::Gray: {
      const int s = sign_of(a.alpha() - b.alpha());
      if (s) return s;
      throw_incomparable(a, b, "equal deviation");
    }
    case PolicyKind::Blur: {
      const int s = sign_of(double(a.kernel() - b.kernel()));
      if (s) return s;
      throw_incomparable(a, b, "equal deviation");
    }
    case PolicyKind::GridShuffle: {
      const int s = sign_of(double(a.grids() - b.grids()));
      if (s) return s;
      throw_incomparable(a, b, "equal deviation");
    }
    case PolicyKind::Mpn: {
      // Deviation of a pixel-scaling policy is its distance from scale 1.
      const int s = sign_of(std::abs(a.scale() - 1.0) - std::abs(b.scale() - 1.0));
      if (s) return s;
      if (a.scale() != b.scale())
        throw_incomparable(a, b, "equal deviation magnitude on opposite sides of 1");
      throw_incomparable(a, b, "equal deviation");
    }
    case PolicyKind::RandAugment: {
      const int sn = sign_of(double(a.count() - b.count()));
      const int sm = sign_of(a.magnitude() - b.magnitude());
      if (sn == 0 && sm == 0) throw_incomparable(a, b, "equal deviation");
      if (sn <= 0 && sm <= 0) return -1;
      if (sn >= 0 && sm >= 0) return 1;
      throw_incomparable(a, b, "mixed transformation count and magnitude");
    }
  }
  throw std::invalid_argument("compare_deviation: unknown policy kind");
}

std::vector<PolicySpec> grade_policies(std::vector<PolicySpec> policies) {
  for (const PolicySpec& p : policies) p.validate();
  // Verify totality up front so sorting never sees an incomparable pair.
  for (std::size_t i = 0; i < policies.size(); ++i)
    for (std::size_t j = i + 1; j < policies.size(); ++j) compare_deviation(policies[i], policies[j]);
  std::sort(policies.begin(), policies.end(),
            [](const PolicySpec& a, const PolicySpec& b) { return compare_deviation(a, b) < 0; });
  for (std::size_t i = 0; i < policies.size(); ++i) policies[i].level = static_cast<int>(i) + 1;
  return policies;
}

ViewBatch make_view_batch(const std::vector<Tensor>& images, const std::vector<int>& labels,
                          const std::vector<PolicySpec>& graded, const std::vector<PolicySpec>& light,
                          const Rng& rng) {
  if (images.empty()) throw std::invalid_argument("make_view_batch: empty batch");
  if (images.size() != labels.size())
    throw std::invalid_argument("make_view_batch: " + std::to_string(images.size()) + " images vs " +
                                std::to_string(labels.size()) + " labels");
  for (const Tensor& img : images) {
    check_image(img);
    if (!img.same_shape(images.front()))
      throw std::invalid_argument("make_view_batch: images must share one shape");
  }
  const int levels = std::max<int>(1, static_cast<int>(graded.size()));
  for (std::size_t j = 0; j < graded.size(); ++j) {
    graded[j].validate();
    if (graded[j].level != static_cast<int>(j) + 1)
      throw std::invalid_argument("make_view_batch: graded policies must carry levels 1..K in order");
  }
  for (const PolicySpec& p : light) p.validate();

  const std::int64_t n = static_cast<std::int64_t>(images.size());
  const std::int64_t c = images.front().dim(0);
  const std::int64_t h = images.front().dim(1);
  const std::int64_t w = images.front().dim(2);

  ViewBatch out;
  out.labels = labels;
  out.seed = rng.seed();
  out.views.reserve(static_cast<std::size_t>(levels));
  for (int j = 0; j < levels; ++j) out.views.emplace_back(std::vector<std::int64_t>{n, c, h, w});

  const std::int64_t plane = c * h * w;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    Rng light_rng = rng.fork(Rng::mix(static_cast<std::uint64_t>(i), 0));
    Tensor base = images[static_cast<std::size_t>(i)];
    for (const PolicySpec& p : light) base = apply_policy(base, p, light_rng);
    std::copy(base.data(), base.data() + plane, out.views[0].data() + i * plane);
    for (int j = 1; j < levels; ++j) {
      Rng level_rng = rng.fork(Rng::mix(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)));
      Tensor view = apply_policy(base, graded[static_cast<std::size_t>(j)], level_rng);
      std::copy(view.data(), view.data() + plane,
                out.views[static_cast<std::size_t>(j)].data() + i * plane);
    }
  }
  return out;
}

}  // namespace apnet
