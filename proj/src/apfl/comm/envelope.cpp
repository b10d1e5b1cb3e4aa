#include "apfl/comm/envelope.hpp"

#include <fstream>
#include <random>

#include <openssl/evp.h>

namespace apfl {

Sha256 sha256(ByteView data) {
  Sha256 out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    fail(Errc::internal, "sha256 failed");
  return out;
}

std::string to_hex(ByteView data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (auto b : data) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

namespace {

std::string fresh_key() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::array<std::uint8_t, 16> raw{};
  for (auto& b : raw) b = static_cast<std::uint8_t>(rng());
  raw[6] = static_cast<std::uint8_t>((raw[6] & 0x0F) | 0x40);  // uuid v4 bits
  raw[8] = static_cast<std::uint8_t>((raw[8] & 0x3F) | 0x80);
  return to_hex(raw);
}

void verify(const DataRef& ref, const Bytes& data) {
  if (data.size() != ref.size || sha256(data) != ref.digest)
    fail(Errc::checksum_mismatch, "data for key " + ref.key + " fails its checksum");
}

DataRef make_ref(const std::string& connector, ByteView data) {
  return {connector, fresh_key(), data.size(), sha256(data)};
}

}  // namespace

DataRef MemoryConnector::put(ByteView data) {
  DataRef ref = make_ref(id_, data);
  std::lock_guard lock(mu_);
  store_.emplace(ref.key, Bytes(data.begin(), data.end()));
  return ref;
}

Bytes MemoryConnector::get(const DataRef& ref) const {
  Bytes copy;
  {
    std::lock_guard lock(mu_);
    auto it = store_.find(ref.key);
    if (it == store_.end()) fail(Errc::missing_key, "no stored object " + ref.key);
    copy = it->second;
  }
  verify(ref, copy);
  return copy;
}

void MemoryConnector::remove(const DataRef& ref) {
  std::lock_guard lock(mu_);
  store_.erase(ref.key);
}

Bytes* MemoryConnector::raw_slot(const std::string& key) {
  std::lock_guard lock(mu_);
  auto it = store_.find(key);
  return it == store_.end() ? nullptr : &it->second;
}

FilesystemConnector::FilesystemConnector(std::filesystem::path root, std::string id)
    : root_(std::move(root)), id_(std::move(id)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) fail(Errc::io_error, "cannot create connector root " + root_.string() + ": " + ec.message());
}

DataRef FilesystemConnector::put(ByteView data) {
  DataRef ref = make_ref(id_, data);
  const auto final_path = path_of(ref.key);
  const auto tmp = final_path.string() + ".part";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) fail(Errc::io_error, "cannot write " + tmp);
  }
  std::filesystem::rename(tmp, final_path);
  return ref;
}

Bytes FilesystemConnector::get(const DataRef& ref) const {
  if (ref.key.find('/') != std::string::npos || ref.key.find("..") != std::string::npos)
    fail(Errc::missing_key, "malformed key");
  std::ifstream in(path_of(ref.key), std::ios::binary);
  if (!in) fail(Errc::missing_key, "no stored object " + ref.key);
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  verify(ref, data);
  return data;
}

void FilesystemConnector::remove(const DataRef& ref) {
  std::error_code ec;
  std::filesystem::remove(path_of(ref.key), ec);
}

void ConnectorRegistry::add(std::shared_ptr<DataConnector> c) {
  const std::string id = c->id();
  connectors_[id] = std::move(c);
}

DataConnector& ConnectorRegistry::at(const std::string& id) const {
  auto it = connectors_.find(id);
  if (it == connectors_.end()) fail(Errc::unknown_connector, "no data connector '" + id + "'");
  return *it->second;
}

const std::string& Envelope::get(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) fail(Errc::protocol_error, "envelope lacks '" + key + "'");
  return it->second;
}

std::string Envelope::get_or(const std::string& key, std::string fallback) const {
  auto it = meta.find(key);
  return it == meta.end() ? fallback : it->second;
}

Envelope make_envelope(std::map<std::string, std::string> meta, Bytes payload, DataConnector* connector,
                       std::size_t inline_limit) {
  Envelope env;
  env.meta = std::move(meta);
  if (payload.size() <= inline_limit) {
    env.body = std::move(payload);
    return env;
  }
  if (connector == nullptr) fail(Errc::unknown_connector, "payload over the inline limit and no data connector");
  env.body = connector->put(payload);
  return env;
}

Bytes resolve_body(const Envelope& env, const ConnectorRegistry& registry) {
  if (const auto* b = std::get_if<Bytes>(&env.body)) return *b;
  const auto& ref = std::get<DataRef>(env.body);
  return registry.at(ref.connector_id).get(ref);
}

// u16 meta count, (u16 key, u32 value) pairs; u8 kind 0 = inline (u64 len,
// bytes), 1 = ref (u16 connector, u16 key, u64 size, 32-byte sha256).
Bytes encode_envelope(const Envelope& env) {
  Bytes out;
  ByteWriter w(out);
  if (env.meta.size() > 0xFFFF) fail(Errc::invalid_argument, "too many envelope fields");
  w.u16be(static_cast<std::uint16_t>(env.meta.size()));
  for (const auto& [k, v] : env.meta) {
    if (k.size() > 0xFFFF) fail(Errc::invalid_argument, "envelope key too long");
    w.u16be(static_cast<std::uint16_t>(k.size()));
    w.raw(std::string_view(k));
    w.u32be(static_cast<std::uint32_t>(v.size()));
    w.raw(std::string_view(v));
  }
  if (const auto* b = std::get_if<Bytes>(&env.body)) {
    w.u8(0);
    w.u64be(b->size());
    w.raw(*b);
  } else {
    const auto& ref = std::get<DataRef>(env.body);
    w.u8(1);
    w.u16be(static_cast<std::uint16_t>(ref.connector_id.size()));
    w.raw(std::string_view(ref.connector_id));
    w.u16be(static_cast<std::uint16_t>(ref.key.size()));
    w.raw(std::string_view(ref.key));
    w.u64be(ref.size);
    w.raw(ref.digest);
  }
  return out;
}

Envelope decode_envelope(ByteView bytes) {
  ByteReader r(bytes, Errc::protocol_error);
  Envelope env;
  const std::uint16_t n = r.u16be();
  for (std::uint16_t i = 0; i < n; ++i) {
    std::string k = r.str(r.u16be());
    std::string v = r.str(r.u32be());
    env.meta[std::move(k)] = std::move(v);
  }
  const std::uint8_t kind = r.u8();
  if (kind == 0) {
    const std::uint64_t len = r.u64be();
    if (len > r.remaining()) fail(Errc::protocol_error, "inline body overruns envelope");
    auto v = r.take(static_cast<std::size_t>(len));
    env.body = Bytes(v.begin(), v.end());
  } else if (kind == 1) {
    DataRef ref;
    ref.connector_id = r.str(r.u16be());
    ref.key = r.str(r.u16be());
    ref.size = r.u64be();
    auto d = r.take(32);
    std::copy(d.begin(), d.end(), ref.digest.begin());
    env.body = std::move(ref);
  } else {
    fail(Errc::protocol_error, "unknown envelope body kind");
  }
  if (!r.done()) fail(Errc::protocol_error, "trailing bytes after envelope");
  return env;
}

}  // namespace apfl
