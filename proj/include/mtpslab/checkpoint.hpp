#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mtpslab/errors.hpp"

namespace mtpslab::ckpt {

inline constexpr char kMagic[9] = "MTPSLAB1";  // 8 payload bytes
inline constexpr uint32_t kVersion = 1;

uint32_t crc32(const uint8_t* data, size_t n);

/// Sequential little-endian checkpoint writer. Layout:
///   magic[8] | u32 version | u32 config_len | config | u64 n_records |
///   records: u16 name_len | name | u8 dtype | u8 rank | u32 dims[rank] |
///            u64 payload_bytes | payload | u32 crc32(payload)
class Writer {
 public:
  explicit Writer(const std::string& path);
  void write_header(const std::string& config_json, size_t n_records);
  void write_record(const std::string& name, int dtype_code,
                    const std::vector<int64_t>& dims, const uint8_t* payload,
                    size_t nbytes);
  void finish();

 private:
  std::string path_;
  std::ofstream out_;
};

/// Sequential reader; every deviation from the expected stream raises a
/// distinct FormatError (magic, version, truncation, name order, dtype,
/// dims, checksum).
class Reader {
 public:
  explicit Reader(const std::string& path);
  const std::string& config_json() const { return config_json_; }
  size_t record_count() const { return n_records_; }
  void read_record_into(const std::string& expected_name,
                        int expected_dtype_code,
                        const std::vector<int64_t>& expected_dims,
                        uint8_t* dest, size_t nbytes);
  void finish();

 private:
  std::string path_;
  std::ifstream in_;
  std::string config_json_;
  size_t n_records_ = 0;
  size_t records_read_ = 0;
};

/// Header-only peek used to dispatch on dtype/variant before loading.
std::string read_checkpoint_config_json(const std::string& path);

}  // namespace mtpslab::ckpt
