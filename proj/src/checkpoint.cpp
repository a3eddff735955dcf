// SPDX-License-Identifier: Apache-2.0
#include "dvit/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "dvit/errors.hpp"

namespace dvit {
namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(std::uint8_t(v & 0xFF));
  b.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<std::uint8_t>& b, float f) {
  put_u32(b, std::bit_cast<std::uint32_t>(f));
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > b.size())
      throw TruncatedFileError("checkpoint: file ends inside a record");
  }
  std::uint8_t u8() {
    need(1);
    return b[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(b[pos]) | std::uint16_t(b[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

// Metadata rides as tensors: u32/u64 values are bit-cast into f32 lanes so
// the payload survives the f32-only entry format exactly.
Tensor encode_u32(std::uint32_t v) {
  return Tensor({1}, std::vector<float>{std::bit_cast<float>(v)});
}

Tensor encode_u64(std::uint64_t v) {
  return Tensor({2}, std::vector<float>{
                         std::bit_cast<float>(std::uint32_t(v & 0xFFFFFFFFu)),
                         std::bit_cast<float>(std::uint32_t(v >> 32))});
}

Tensor encode_text(const std::string& s) {
  const std::size_t lanes = (s.size() + 3) / 4;
  std::vector<float> data(lanes ? lanes : 1, 0.0f);
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::uint32_t lane = std::bit_cast<std::uint32_t>(data[i / 4]);
    lane |= std::uint32_t(std::uint8_t(s[i])) << (8 * (i % 4));
    data[i / 4] = std::bit_cast<float>(lane);
  }
  const std::size_t n = data.size();  // before the move, evaluation order is unspecified
  return Tensor({n}, std::move(data));
}

std::string decode_text(const Tensor& t, std::uint32_t len) {
  std::string s;
  s.reserve(len);
  for (std::uint32_t i = 0; i < len; ++i) {
    if (i / 4 >= t.numel())
      throw TruncatedFileError("checkpoint: embedded config shorter than its length");
    const std::uint32_t lane = std::bit_cast<std::uint32_t>(t.at(i / 4));
    s.push_back(char(std::uint8_t((lane >> (8 * (i % 4))) & 0xFF)));
  }
  return s;
}

}  // namespace

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len) {
  static const std::array<std::uint32_t, 256> table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, Tensor>> all = ckpt.entries;
  for (const auto& [name, t] : all) {
    (void)t;
    if (name.rfind("meta.", 0) == 0)
      throw ContractError("checkpoint: entry name '" + name + "' is reserved");
  }
  all.emplace_back("meta.step", encode_u32(ckpt.step));
  all.emplace_back("meta.fingerprint", encode_u64(ckpt.fingerprint));
  all.emplace_back("meta.config", encode_text(ckpt.config_text));
  all.emplace_back("meta.config_len",
                   encode_u32(std::uint32_t(ckpt.config_text.size())));
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), {'M', 'V', 'K', 'D'});
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, std::uint32_t(all.size()));
  std::set<std::string> seen;
  for (const auto& [name, t] : all) {
    if (!seen.insert(name).second)
      throw ContractError("checkpoint: duplicate entry name '" + name + "'");
    if (name.empty() || name.size() > 0xFFFF)
      throw ContractError("checkpoint: entry name length out of range");
    if (t.ndim() > 0xFF)
      throw ContractError("checkpoint: entry rank out of range");
    put_u16(buf, std::uint16_t(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    buf.push_back(std::uint8_t(t.ndim()));
    for (std::size_t a = 0; a < t.ndim(); ++a) put_u32(buf, std::uint32_t(t.dim(a)));
    for (std::size_t i = 0; i < t.numel(); ++i) put_f32(buf, t.at(i));
  }
  put_u32(buf, crc32_of(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size()));
  if (!out) throw IoError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());

  if (buf.size() < 4) throw TruncatedFileError("checkpoint: shorter than the magic");
  if (std::memcmp(buf.data(), "MVKD", 4) != 0)
    throw BadMagicError("checkpoint: bad magic bytes");
  Reader r{buf, 4};
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatchError("checkpoint: version " + std::to_string(version) +
                               ", expected " + std::to_string(kCheckpointVersion));
  const std::uint32_t count = r.u32();

  std::vector<std::pair<std::string, Tensor>> all;
  all.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint16_t name_len = r.u16();
    r.need(name_len);
    std::string name(reinterpret_cast<const char*>(buf.data() + r.pos), name_len);
    r.pos += name_len;
    const std::uint8_t ndim = r.u8();
    Shape shape(ndim);
    std::size_t numel = 1;
    for (std::uint8_t a = 0; a < ndim; ++a) {
      shape[a] = r.u32();
      if (shape[a] == 0 || numel > (std::size_t(1) << 32) / shape[a])
        throw TruncatedFileError("checkpoint: implausible dimensions in '" + name +
                                 "'");
      numel *= shape[a];
    }
    r.need(numel * 4);
    std::vector<float> data(numel);
    for (std::size_t i = 0; i < numel; ++i) data[i] = r.f32();
    all.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }

  const std::uint32_t stored = r.u32();
  const std::uint32_t actual = crc32_of(buf.data(), r.pos - 4);
  if (stored != actual)
    throw ChecksumError("checkpoint: CRC mismatch, file is corrupt");
  if (r.pos != buf.size())
    throw ChecksumError("checkpoint: trailing bytes after the checksum");

  Checkpoint ck;
  std::uint32_t config_len = 0;
  Tensor config_blob;
  for (auto& [name, t] : all) {
    if (name == "meta.step") ck.step = std::bit_cast<std::uint32_t>(t.at(0));
    else if (name == "meta.fingerprint")
      ck.fingerprint = std::uint64_t(std::bit_cast<std::uint32_t>(t.at(0))) |
                       std::uint64_t(std::bit_cast<std::uint32_t>(t.at(1))) << 32;
    else if (name == "meta.config") config_blob = t;
    else if (name == "meta.config_len")
      config_len = std::bit_cast<std::uint32_t>(t.at(0));
    else ck.entries.emplace_back(std::move(name), std::move(t));
  }
  if (config_blob.defined() && config_len > 0)
    ck.config_text = decode_text(config_blob, config_len);
  return ck;
}

}  // namespace dvit
