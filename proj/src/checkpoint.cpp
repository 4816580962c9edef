#include "apnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace apnet {

namespace {

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::string header = ckpt.header.dump();
    write_pod<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_pod<std::uint64_t>(out, ckpt.arrays.size());
    for (const auto& [name, tensor] : ckpt.arrays) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
      for (std::int64_t d : tensor.shape()) write_pod<std::int64_t>(out, d);
      out.write(reinterpret_cast<const char*>(tensor.data()),
                static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    out.flush();
    if (!out) throw std::runtime_error("checkpoint: short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  Checkpoint ckpt;
  const std::uint64_t header_len = read_pod<std::uint64_t>(in);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  ckpt.header = nlohmann::json::parse(header);
  const std::uint64_t n_arrays = read_pod<std::uint64_t>(in);
  for (std::uint64_t a = 0; a < n_arrays; ++a) {
    const std::uint32_t name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = read_pod<std::uint32_t>(in);
    std::vector<std::int64_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = read_pod<std::int64_t>(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated array " + name);
    ckpt.arrays.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace apnet
