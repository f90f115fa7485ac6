#include "c2d/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "c2d/error.hpp"
#include "c2d/io.hpp"

namespace c2d::num {

namespace {

constexpr std::string_view kMagic = "c2d-checkpoint";
constexpr std::string_view kVersion = "v1";

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char b[8];
  std::memcpy(b, &bits, 8);
  out.append(b, 8);
}

double get_f64(const char* p) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, p, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string encode_checkpoint(std::span<const Parameter* const> params) {
  std::string out(kMagic);
  out += ' ';
  out += kVersion;
  for (const Parameter* p : params) {
    if (p->name.empty() || p->name.find_first_of(" :\n") != std::string::npos) {
      throw ConfigError("checkpoint: invalid tensor name '" + p->name + "'");
    }
    out += ' ' + p->name + ':' + std::to_string(p->value.rows()) + 'x' +
           std::to_string(p->value.cols());
  }
  out += '\n';
  for (const Parameter* p : params)
    for (double v : p->value.data()) put_f64(out, v);
  return out;
}

std::vector<Parameter> decode_checkpoint(std::string_view bytes, const std::string& origin) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw IoError(origin + ": missing checkpoint header line");
  const auto fields = io::split(bytes.substr(0, nl), ' ');
  if (fields.size() < 2 || fields[0] != kMagic || fields[1] != kVersion) {
    throw IoError(origin + ": not a c2d checkpoint (bad magic)");
  }
  std::vector<Parameter> params;
  std::size_t offset = nl + 1;
  for (std::size_t k = 2; k < fields.size(); ++k) {
    const auto colon = fields[k].rfind(':');
    const auto x = fields[k].rfind('x');
    if (colon == std::string::npos || x == std::string::npos || x < colon) {
      throw IoError(origin + ": malformed tensor entry '" + fields[k] + "'");
    }
    const auto rows = io::parse_int(std::string_view(fields[k]).substr(colon + 1, x - colon - 1), origin);
    const auto cols = io::parse_int(std::string_view(fields[k]).substr(x + 1), origin);
    if (rows < 0 || cols < 0) throw IoError(origin + ": negative tensor dimension");
    const std::size_t n = static_cast<std::size_t>(rows * cols);
    if (bytes.size() < offset + 8 * n) throw IoError(origin + ": truncated tensor data");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_f64(bytes.data() + offset + 8 * i);
    offset += 8 * n;
    params.emplace_back(fields[k].substr(0, colon),
                        Tensor(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(data)));
  }
  if (offset != bytes.size()) throw IoError(origin + ": trailing bytes after tensor data");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params) {
  io::write_file_atomic(path, encode_checkpoint(params));
}

std::vector<Parameter> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace c2d::num
