#include "apnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

#include "apnet/image.hpp"
#include "apnet/rng.hpp"

namespace apnet {

namespace fs = std::filesystem;

const char* data_format_name(DataFormat f) {
  switch (f) {
    case DataFormat::Tree: return "tree";
    case DataFormat::Packed: return "packed";
    case DataFormat::Synth: return "synth";
  }
  throw std::invalid_argument("unknown data format");
}

DataFormat data_format_from_name(const std::string& name) {
  if (name == "tree") return DataFormat::Tree;
  if (name == "packed") return DataFormat::Packed;
  if (name == "synth") return DataFormat::Synth;
  throw std::invalid_argument("unknown data format: " + name);
}

std::filesystem::path resolve_data_path(const std::string& path) {
  fs::path p(path);
  if (fs::exists(p)) return p;
  if (!p.is_absolute()) {
    if (const char* root = std::getenv("APNET_DATA_ROOT")) {
      fs::path prefixed = fs::path(root) / p;
      if (fs::exists(prefixed)) return prefixed;
    }
  }
  return p;
}

// ------------------------------------------------------------------ netpbm

namespace {

int pnm_next_int(std::istream& in) {
  // Skips whitespace and '#' comments.
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw std::runtime_error("pnm: malformed header");
  return value;
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + file.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  const bool color = magic == "P6";
  if (!color && magic != "P5") throw std::runtime_error("unsupported image format in " + file.string());
  const std::int64_t w = pnm_next_int(in);
  const std::int64_t h = pnm_next_int(in);
  const std::int64_t maxval = pnm_next_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("unsupported pnm geometry in " + file.string());
  in.get();  // single whitespace after header
  const std::int64_t channels = color ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * channels));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("truncated image data in " + file.string());
  Tensor img({channels, h, w});
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < channels; ++c)
        img.at(c, y, x) = raw[static_cast<std::size_t>((y * w + x) * channels + c)] * scale;
  return img;
}

void write_pnm(const std::filesystem::path& file, const Tensor& image) {
  check_image(image);
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + file.string());
  out << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * c));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t ch = 0; ch < c; ++ch)
        raw[static_cast<std::size_t>((y * w + x) * c + ch)] =
            static_cast<unsigned char>(std::lround(clamp01(image.at(ch, y, x)) * 255.0));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("short write: " + file.string());
}

// -------------------------------------------------------------------- tree

DataSplit load_tree_split(const std::filesystem::path& root, const std::string& split) {
  const fs::path dir = root / split;
  if (!fs::is_directory(dir)) throw std::runtime_error("missing split directory: " + dir.string());
  std::vector<std::string> class_names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
  std::sort(class_names.begin(), class_names.end());
  if (class_names.empty()) throw std::runtime_error("no class directories under " + dir.string());

  DataSplit out;
  out.classes = static_cast<std::int64_t>(class_names.size());
  for (std::size_t label = 0; label < class_names.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir / class_names[label]))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      out.images.push_back(read_pnm(f));
      out.labels.push_back(static_cast<int>(label));
      out.ids.push_back(split + "/" + class_names[label] + "/" + f.filename().string());
    }
  }
  return out;
}

// ------------------------------------------------------------------ packed

namespace {

void read_packed_file(const fs::path& file, DataSplit& out) {
  constexpr std::int64_t kSide = 32, kRecord = 1 + 3 * kSide * kSide;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open packed batch: " + file.string());
  std::vector<unsigned char> record(kRecord);
  std::int64_t index = 0;
  while (in.read(reinterpret_cast<char*>(record.data()), kRecord)) {
    Tensor img({3, kSide, kSide});
    for (std::int64_t i = 0; i < 3 * kSide * kSide; ++i) img[i] = record[static_cast<std::size_t>(1 + i)] / 255.0;
    out.images.push_back(std::move(img));
    out.labels.push_back(record[0]);
    out.ids.push_back(file.filename().string() + ":" + std::to_string(index++));
  }
  if (in.gcount() != 0) throw std::runtime_error("trailing partial record in " + file.string());
}

}  // namespace

DataSplit load_packed_split(const std::filesystem::path& dir, bool train) {
  DataSplit out;
  std::vector<fs::path> files;
  if (train) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("data_batch_", 0) == 0 && name.ends_with(".bin")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no data_batch_*.bin under " + dir.string());
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  for (const fs::path& f : files) read_packed_file(f, out);
  int max_label = 0;
  for (int l : out.labels) max_label = std::max(max_label, l);
  out.classes = max_label + 1;
  return out;
}

// ------------------------------------------------------------------- synth

namespace {

// Ten procedural glyph classes; geometry, palette and noise are jittered per
// sample. Classes stay separable but not trivially so once noise kicks in.
void draw_shape(Tensor& img, int shape, Rng& rng) {
  const std::int64_t size = img.dim(1);
  const double half = static_cast<double>(size) / 2.0;
  const double cx = half + rng.uniform(-0.18, 0.18) * half;
  const double cy = half + rng.uniform(-0.18, 0.18) * half;
  const double radius = half * rng.uniform(0.45, 0.8);

  double bg[3], fg[3];
  for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(0.0, 0.35);
  for (int c = 0; c < 3; ++c) fg[c] = rng.uniform(0.55, 1.0);

  const double bar = std::max(1.5, radius * 0.3);
  const double period = std::max(3.0, radius * 0.6);

  auto inside = [&](double x, double y) -> bool {
    const double dx = x - cx, dy = y - cy;
    switch (shape) {
      case 0:  // filled circle
        return dx * dx + dy * dy <= radius * radius;
      case 1: {  // ring
        const double r2 = dx * dx + dy * dy;
        const double inner = radius * 0.55;
        return r2 <= radius * radius && r2 >= inner * inner;
      }
      case 2:  // filled square
        return std::abs(dx) <= radius * 0.82 && std::abs(dy) <= radius * 0.82;
      case 3: {  // square outline
        const double a = std::abs(dx), b = std::abs(dy);
        const double outer = radius * 0.85, inner = radius * 0.5;
        return a <= outer && b <= outer && !(a <= inner && b <= inner);
      }
      case 4:  // triangle
        return dy >= -radius * 0.8 && dy <= radius * 0.75 &&
               std::abs(dx) <= (dy + radius * 0.8) * 0.6;
      case 5:  // plus
        return (std::abs(dx) <= bar && std::abs(dy) <= radius) ||
               (std::abs(dy) <= bar && std::abs(dx) <= radius);
      case 6:  // diagonal cross
        return (std::abs(dx - dy) <= bar || std::abs(dx + dy) <= bar) &&
               std::abs(dx) <= radius && std::abs(dy) <= radius;
      case 7:  // horizontal stripes
        return std::abs(dx) <= radius && std::abs(dy) <= radius &&
               std::fmod(std::abs(dy), period) < period * 0.5;
      case 8:  // vertical stripes
        return std::abs(dx) <= radius && std::abs(dy) <= radius &&
               std::fmod(std::abs(dx), period) < period * 0.5;
      case 9:  // checkerboard
        return std::abs(dx) <= radius && std::abs(dy) <= radius &&
               (static_cast<int>(std::floor(std::abs(dx) / period)) +
                static_cast<int>(std::floor(std::abs(dy) / period))) %
                       2 ==
                   0;
      default:
        throw std::invalid_argument("synth: bad shape index");
    }
  };

  for (std::int64_t y = 0; y < size; ++y)
    for (std::int64_t x = 0; x < size; ++x) {
      const bool in = inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      for (std::int64_t c = 0; c < 3; ++c) img.at(c, y, x) = in ? fg[c] : bg[c];
    }
}

}  // namespace

DataSplit synth_shapes(const SynthSpec& spec, bool train) {
  if (spec.classes < 2 || spec.classes > 10)
    throw std::invalid_argument("synth: classes must be in [2, 10]");
  if (spec.size < 8) throw std::invalid_argument("synth: size must be >= 8");
  if (spec.noise < 0.0) throw std::invalid_argument("synth: noise must be >= 0");
  const std::int64_t per_class = train ? spec.train_per_class : spec.val_per_class;
  if (per_class <= 0) throw std::invalid_argument("synth: per-class count must be positive");

  DataSplit out;
  out.classes = spec.classes;
  const std::uint64_t split_tag = train ? 1 : 2;
  for (std::int64_t cls = 0; cls < spec.classes; ++cls) {
    for (std::int64_t i = 0; i < per_class; ++i) {
      Rng rng(Rng::mix(Rng::mix(spec.seed, split_tag), Rng::mix(static_cast<std::uint64_t>(cls),
                                                                static_cast<std::uint64_t>(i))));
      Tensor img({3, spec.size, spec.size});
      draw_shape(img, static_cast<int>(cls), rng);
      if (spec.noise > 0.0)
        for (std::int64_t p = 0; p < img.numel(); ++p)
          img[p] = clamp01(img[p] + spec.noise * rng.normal());
      out.images.push_back(std::move(img));
      out.labels.push_back(static_cast<int>(cls));
      out.ids.push_back((train ? std::string("train/") : std::string("val/")) + std::to_string(cls) +
                        "/" + std::to_string(i));
    }
  }
  return out;
}

// ------------------------------------------------------------------ ingest

IngestResult ingest(const DataSourceConfig& src, std::int64_t images_per_class, std::uint64_t seed) {
  IngestResult out;
  switch (src.format) {
    case DataFormat::Tree: {
      const fs::path root = resolve_data_path(src.path);
      out.train = load_tree_split(root, "train");
      out.val = load_tree_split(root, "val");
      break;
    }
    case DataFormat::Packed: {
      const fs::path root = resolve_data_path(src.path);
      out.train = load_packed_split(root, true);
      out.val = load_packed_split(root, false);
      break;
    }
    case DataFormat::Synth: {
      out.train = synth_shapes(src.synth, true);
      out.val = synth_shapes(src.synth, false);
      break;
    }
  }

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < out.train.size(); ++i)
    by_class[out.train.labels[i]].push_back(i);
  for (std::int64_t c = 0; c < out.train.classes; ++c) {
    auto it = by_class.find(static_cast<int>(c));
    if (it == by_class.end() || it->second.empty())
      throw std::runtime_error("ingest: class " + std::to_string(c) + " has no training images");
  }
  if (images_per_class <= 0) return out;

  // Per-class seeded selection, kept in original order so the uncapped
  // ordering is independent of the seed.
  std::vector<std::size_t> keep;
  for (auto& [cls, indices] : by_class) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(cls)));
    std::vector<std::size_t> pool = indices;
    rng.shuffle(pool);
    const std::size_t take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(images_per_class));
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    keep.insert(keep.end(), pool.begin(), pool.end());
  }
  std::sort(keep.begin(), keep.end());

  DataSplit capped;
  capped.classes = out.train.classes;
  for (std::size_t idx : keep) {
    capped.images.push_back(std::move(out.train.images[idx]));
    capped.labels.push_back(out.train.labels[idx]);
    capped.ids.push_back(out.train.ids[idx]);
  }
  out.train = std::move(capped);
  return out;
}

}  // namespace apnet
