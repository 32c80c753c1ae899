#include "labelformer/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "labelformer/error.hpp"
#include "labelformer/fileio.hpp"

namespace labelformer::nn {

namespace {

template <class U>
void put_le(std::ostream& out, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, sizeof(U));
}

template <class U>
U get_le(std::istream& in, const std::string& what) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw DataError("checkpoint truncated reading " + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

std::string read_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("checkpoint truncated reading " + what);
  return line;
}

std::size_t parse_count(const std::string& line, const std::string& prefix) {
  if (line.rfind(prefix, 0) != 0) throw DataError("checkpoint: expected '" + prefix + "', got '" + line + "'");
  try {
    return std::stoull(line.substr(prefix.size()));
  } catch (const std::exception&) {
    throw DataError("checkpoint: bad count in '" + line + "'");
  }
}

std::string read_header(std::istream& in) {
  const std::string magic = read_line(in, "header");
  if (magic != "LFCKPT " + std::to_string(kCheckpointVersion)) {
    throw DataError("checkpoint: unsupported header '" + magic + "'");
  }
  const std::size_t n = parse_count(read_line(in, "config size"), "config ");
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint truncated in config");
  return text;
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  return in;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const std::string& config_text) {
  fileio::write_atomic(path, [&](std::ostream& out) {
    out << "LFCKPT " << kCheckpointVersion << '\n';
    out << "config " << config_text.size() << '\n' << config_text;
    out << "params " << store.size() << '\n';
    for (std::size_t i = 0; i < store.size(); ++i) {
      const Parameter& p = store[i];
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
      for (std::size_t d : p.shape) put_le<std::uint64_t>(out, d);
      for (Real v : p.value) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  });
}

std::string read_checkpoint_config(const std::filesystem::path& path) {
  auto in = open(path);
  return read_header(in);
}

std::string load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
  auto in = open(path);
  std::string config = read_header(in);
  const std::size_t count = parse_count(read_line(in, "parameter count"), "params ");
  if (count != store.size()) {
    throw DataError("checkpoint has " + std::to_string(count) + " parameters, model expects " +
                    std::to_string(store.size()));
  }
  std::vector<std::vector<Real>> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Parameter& p = store[i];
    const auto name_len = get_le<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw DataError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("checkpoint truncated in parameter name");
    if (name != p.name) throw DataError("checkpoint parameter " + std::to_string(i) + " is '" + name +
                                        "', model expects '" + p.name + "'");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(in, "shape");
    if (shape != p.shape) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                      shape_str(p.shape));
    }
    values[i].resize(p.value.size());
    for (Real& v : values[i]) v = std::bit_cast<Real>(get_le<std::uint64_t>(in, name));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint has trailing bytes");
  for (std::size_t i = 0; i < count; ++i) store[i].value = std::move(values[i]);
  return config;
}

}  // namespace labelformer::nn
