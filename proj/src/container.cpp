#include "zimm/container.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "zimm/errors.hpp"
#include "zimm/rng.hpp"

namespace zimm {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_container(const Container& c) {
  if (c.magic.size() != 8) throw std::invalid_argument("container magic must be 8 bytes");
  const std::string header = c.header.dump();
  std::string out;
  out.reserve(17 + header.size() + 8 * c.payload.size());
  out += c.magic;
  out.push_back(static_cast<char>(c.version));
  put_u64(out, header.size());
  out += header;
  for (double v : c.payload) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Container decode_container(const std::string& bytes, const std::string& expected_magic,
                           std::uint8_t expected_version) {
  if (bytes.size() < 17 || bytes.compare(0, 8, expected_magic) != 0) {
    throw ValidationError("not a " + expected_magic + " container");
  }
  Container c;
  c.magic = expected_magic;
  c.version = static_cast<std::uint8_t>(bytes[8]);
  if (c.version != expected_version) {
    throw ValidationError(expected_magic + " container version " + std::to_string(c.version) +
                          " is not supported (expected " + std::to_string(expected_version) + ")");
  }
  const std::uint64_t header_len = get_u64(bytes, 9);
  if (17 + header_len > bytes.size()) throw ValidationError("truncated container header");
  try {
    c.header = nlohmann::json::parse(bytes.substr(17, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("corrupt container header: ") + e.what());
  }
  const std::size_t body = 17 + header_len;
  if ((bytes.size() - body) % 8 != 0) throw ValidationError("container payload is not a whole number of doubles");
  c.payload.resize((bytes.size() - body) / 8);
  for (std::size_t i = 0; i < c.payload.size(); ++i) {
    c.payload[i] = std::bit_cast<double>(get_u64(bytes, body + 8 * i));
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  const std::string bytes = encode_container(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing " + path.string());
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Container read_container(const std::filesystem::path& path, const std::string& expected_magic,
                         std::uint8_t expected_version) {
  return decode_container(read_file_bytes(path), expected_magic, expected_version);
}

nlohmann::json pack_tensors(const std::map<std::string, Tensor>& tensors, std::vector<double>& payload) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    payload.insert(payload.end(), t.data().begin(), t.data().end());
  }
  return table;
}

std::map<std::string, Tensor> unpack_tensors(const nlohmann::json& table, const std::vector<double>& payload) {
  std::map<std::string, Tensor> out;
  for (const auto& entry : table) {
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = shape_size(shape);
    if (offset + n > payload.size()) throw ValidationError("tensor table points past the payload");
    std::vector<double> data(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                             payload.begin() + static_cast<std::ptrdiff_t>(offset + n));
    out.emplace(entry.at("name").get<std::string>(), Tensor(shape, std::move(data)));
  }
  return out;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) { return hash_hex(fnv1a64(read_file_bytes(path))); }

}  // namespace zimm
