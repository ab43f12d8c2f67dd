#include "mtpslab/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>

namespace mtpslab::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian");

namespace {

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> table{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

template <typename U>
void put(std::ofstream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::ifstream& in, const std::string& path, const char* what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) {
    throw FormatError("checkpoint " + path + ": truncated while reading " +
                      what);
  }
  return v;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t n) {
  static const auto table = make_crc_table();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

Writer::Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw IoError("checkpoint: cannot open " + path + " for writing");
}

void Writer::write_header(const std::string& config_json, size_t n_records) {
  out_.write(kMagic, 8);
  put<uint32_t>(out_, kVersion);
  put<uint32_t>(out_, static_cast<uint32_t>(config_json.size()));
  out_.write(config_json.data(),
             static_cast<std::streamsize>(config_json.size()));
  put<uint64_t>(out_, static_cast<uint64_t>(n_records));
}

void Writer::write_record(const std::string& name, int dtype_code,
                          const std::vector<int64_t>& dims,
                          const uint8_t* payload, size_t nbytes) {
  put<uint16_t>(out_, static_cast<uint16_t>(name.size()));
  out_.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<uint8_t>(out_, static_cast<uint8_t>(dtype_code));
  put<uint8_t>(out_, static_cast<uint8_t>(dims.size()));
  for (int64_t d : dims) put<uint32_t>(out_, static_cast<uint32_t>(d));
  put<uint64_t>(out_, static_cast<uint64_t>(nbytes));
  out_.write(reinterpret_cast<const char*>(payload),
             static_cast<std::streamsize>(nbytes));
  put<uint32_t>(out_, crc32(payload, nbytes));
}

void Writer::finish() {
  out_.flush();
  if (!out_) throw IoError("checkpoint: write failed for " + path_);
  out_.close();
}

Reader::Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  in_.read(magic, 8);
  if (!in_ || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError("checkpoint " + path + ": bad magic");
  }
  const auto version = get<uint32_t>(in_, path_, "version");
  if (version != kVersion) {
    throw FormatError("checkpoint " + path + ": version " +
                      std::to_string(version) + " unsupported (expected " +
                      std::to_string(kVersion) + ")");
  }
  const auto config_len = get<uint32_t>(in_, path_, "config length");
  config_json_.resize(config_len);
  in_.read(config_json_.data(), config_len);
  if (!in_) throw FormatError("checkpoint " + path + ": truncated config");
  n_records_ = get<uint64_t>(in_, path_, "record count");
}

void Reader::read_record_into(const std::string& expected_name,
                              int expected_dtype_code,
                              const std::vector<int64_t>& expected_dims,
                              uint8_t* dest, size_t nbytes) {
  const auto name_len = get<uint16_t>(in_, path_, "name length");
  std::string name(name_len, '\0');
  in_.read(name.data(), name_len);
  if (!in_) throw FormatError("checkpoint " + path_ + ": truncated name");
  if (name != expected_name) {
    throw FormatError("checkpoint " + path_ + ": parameter order mismatch, got '" +
                      name + "', expected '" + expected_name + "'");
  }
  const auto dtype = get<uint8_t>(in_, path_, "dtype");
  if (dtype != expected_dtype_code) {
    throw FormatError("checkpoint " + path_ + ": dtype mismatch for " + name);
  }
  const auto rank = get<uint8_t>(in_, path_, "rank");
  if (rank != expected_dims.size()) {
    throw FormatError("checkpoint " + path_ + ": rank mismatch for " + name);
  }
  for (int64_t expected : expected_dims) {
    const auto dim = get<uint32_t>(in_, path_, "dim");
    if (static_cast<int64_t>(dim) != expected) {
      throw FormatError("checkpoint " + path_ + ": dim mismatch for " + name);
    }
  }
  const auto payload = get<uint64_t>(in_, path_, "payload size");
  if (payload != nbytes) {
    throw FormatError("checkpoint " + path_ + ": payload size mismatch for " +
                      name);
  }
  in_.read(reinterpret_cast<char*>(dest), static_cast<std::streamsize>(nbytes));
  if (!in_) {
    throw FormatError("checkpoint " + path_ + ": truncated payload for " + name);
  }
  const auto stored_crc = get<uint32_t>(in_, path_, "checksum");
  if (stored_crc != crc32(dest, nbytes)) {
    throw FormatError("checkpoint " + path_ + ": checksum mismatch for " + name);
  }
  ++records_read_;
}

void Reader::finish() {
  if (records_read_ != n_records_) {
    throw FormatError("checkpoint " + path_ + ": read " +
                      std::to_string(records_read_) + " of " +
                      std::to_string(n_records_) + " records");
  }
  in_.peek();
  if (!in_.eof()) {
    throw FormatError("checkpoint " + path_ + ": trailing bytes after records");
  }
}

std::string read_checkpoint_config_json(const std::string& path) {
  Reader r(path);
  return r.config_json();
}

}  // namespace mtpslab::ckpt
