#include "qad/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "qad/binary_io.hpp"
#include "qad/error.hpp"

namespace qad::nn {

namespace {

constexpr char kMagic[8] = {'Q', 'A', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterSet& params) {
  out.write(kMagic, sizeof(kMagic));
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    io::put_u32(out, static_cast<std::uint32_t>(p.tensor.shape.size()));
    for (std::size_t dim : p.tensor.shape) io::put_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : p.tensor.values) io::put_f32(out, static_cast<float>(v));
  }
  if (!out) fail(ErrorKind::io, "failed to write checkpoint");
}

ParameterSet read_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(kMagic), kMagic)) {
    fail(ErrorKind::format, "not a checkpoint (bad magic)");
  }
  const std::uint32_t version = io::get_u32(in, "checkpoint header");
  if (version != kCheckpointVersion) {
    fail(ErrorKind::format, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = io::get_u32(in, "checkpoint header");
  ParameterSet params(Precision::f32);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = io::get_u32(in, "tensor header");
    if (name_len > kMaxName) fail(ErrorKind::format, "corrupt tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) fail(ErrorKind::format, "truncated tensor name");
    const std::uint32_t rank = io::get_u32(in, "tensor header");
    if (rank == 0 || rank > kMaxRank) fail(ErrorKind::format, "corrupt tensor rank");
    Shape shape(rank);
    for (auto& dim : shape) dim = io::get_u32(in, "tensor shape");
    Tensor tensor(shape);
    for (double& v : tensor.values) v = static_cast<double>(io::get_f32(in, "tensor data"));
    params.add(std::move(name), std::move(tensor));
  }
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorKind::format, "trailing bytes in checkpoint");
  return params;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, params);
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

ParameterSet load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec) {
  ParameterSet params = load_checkpoint(path);
  check_parameters(spec, params);
  return params;
}

std::string checkpoint_bytes(const ParameterSet& params) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, params);
  return out.str();
}

}  // namespace qad::nn
