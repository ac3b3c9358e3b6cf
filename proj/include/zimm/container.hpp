#pragma once

// Single-file artifact container:
//
//   magic    8 bytes, e.g. "ZIMMCKPT"
//   version  1 byte
//   length   8 bytes, little-endian size of the header
//   header   UTF-8 JSON (keys sorted, so the bytes are deterministic)
//   payload  little-endian IEEE-754 doubles referenced from the header

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "zimm/tensor.hpp"

namespace zimm {

struct Container {
  std::string magic;
  std::uint8_t version = 1;
  nlohmann::json header;
  std::vector<double> payload;
};

std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes, const std::string& expected_magic,
                           std::uint8_t expected_version);

void write_container(const std::filesystem::path& path, const Container& c);
/// Throws ValidationError for a missing file, wrong magic or version.
Container read_container(const std::filesystem::path& path, const std::string& expected_magic,
                         std::uint8_t expected_version);

/// Appends tensors to the payload and returns a header table of
/// {name, shape, offset} entries.
nlohmann::json pack_tensors(const std::map<std::string, Tensor>& tensors, std::vector<double>& payload);
std::map<std::string, Tensor> unpack_tensors(const nlohmann::json& table, const std::vector<double>& payload);

std::string read_file_bytes(const std::filesystem::path& path);
/// 16 hex digits of FNV-1a over the file contents.
std::string file_hash(const std::filesystem::path& path);
std::string hash_hex(std::uint64_t h);

}  // namespace zimm
