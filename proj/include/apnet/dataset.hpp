#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apnet/tensor.hpp"

namespace apnet {

struct DataSplit {
  std::vector<Tensor> images;   // CHW, [0,1]
  std::vector<int> labels;
  std::vector<std::string> ids;  // stable per-sample identity (path or record index)
  std::int64_t classes = 0;

  std::size_t size() const { return images.size(); }
};

enum class DataFormat { Tree, Packed, Synth };

const char* data_format_name(DataFormat f);
DataFormat data_format_from_name(const std::string& name);

struct SynthSpec {
  std::int64_t classes = 10;
  std::int64_t train_per_class = 200;
  std::int64_t val_per_class = 50;
  std::uint64_t seed = 7;
  double noise = 0.06;
  std::int64_t size = 32;
};

struct DataSourceConfig {
  DataFormat format = DataFormat::Synth;
  std::string path;  // tree root or packed-batch directory
  SynthSpec synth;
};

/// Applies the APNET_DATA_ROOT prefix when `path` does not resolve as given.
std::filesystem::path resolve_data_path(const std::string& path);

// Netpbm codec (P5/P6 binary, maxval <= 255) used by the image-tree format.
Tensor read_pnm(const std::filesystem::path& file);
void write_pnm(const std::filesystem::path& file, const Tensor& image);

/// Class-subdirectory image tree: root/<split>/<class>/<image>. Class names
/// are sorted lexically and become labels 0..C-1.
DataSplit load_tree_split(const std::filesystem::path& root, const std::string& split);

/// Packed binary batches (CIFAR-10 layout: one label byte followed by
/// 32*32*3 plane-major pixel bytes per record). Train: data_batch_*.bin,
/// validation: test_batch.bin.
DataSplit load_packed_split(const std::filesystem::path& dir, bool train);

/// Deterministic synthetic shape-classification set (up to 10 classes of
/// procedural glyphs with jittered geometry, colors and noise). `which`
/// selects an independent stream for train/val.
DataSplit synth_shapes(const SynthSpec& spec, bool train);

struct IngestResult {
  DataSplit train;  // capped per class
  DataSplit val;    // untouched by the cap
};

/// Loads the source and keeps a deterministic per-class subsample of exactly
/// min(cap, available) training images; cap <= 0 means unlimited. The
/// selection depends only on (source, cap, seed). Classes with no training
/// image are an error.
IngestResult ingest(const DataSourceConfig& src, std::int64_t images_per_class, std::uint64_t seed);

}  // namespace apnet
