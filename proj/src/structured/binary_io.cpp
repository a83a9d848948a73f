#include "cdflow/binary_io.hpp"

#include <fstream>
#include <iterator>

#include "cdflow/error.hpp"

namespace cdflow::io {

void ByteReader::require(std::size_t n) const {
  if (!has(n)) throw ConfigError("truncated binary data");
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const char> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw ConfigError("write failed: " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span<const char>(text.data(), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_f64_array(const std::filesystem::path& path, std::span<const double> values) {
  ByteWriter w;
  w.f64s(values);
  write_file(path, w.buffer());
}

std::vector<double> read_f64_array(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_file(path);
  if (bytes.size() % 8 != 0) throw ConfigError("malformed float64 array: " + path.string());
  ByteReader r(bytes);
  std::vector<double> out(bytes.size() / 8);
  for (double& v : out) v = r.f64();
  return out;
}

}  // namespace cdflow::io
