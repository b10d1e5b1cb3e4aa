#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <variant>

#include "apfl/core/bytes.hpp"

namespace apfl {

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(ByteView data);
std::string to_hex(ByteView data);

struct DataRef {
  std::string connector_id;
  std::string key;
  std::uint64_t size = 0;
  Sha256 digest{};

  friend bool operator==(const DataRef&, const DataRef&) = default;
};

/// Out-of-band storage behind a DataRef.
class DataConnector {
 public:
  virtual ~DataConnector() = default;
  virtual const std::string& id() const = 0;
  virtual DataRef put(ByteView data) = 0;
  /// Verifies size and sha256 before returning.
  virtual Bytes get(const DataRef& ref) const = 0;
  virtual void remove(const DataRef& ref) = 0;
};

class MemoryConnector final : public DataConnector {
 public:
  explicit MemoryConnector(std::string id = "memory") : id_(std::move(id)) {}
  const std::string& id() const override { return id_; }
  DataRef put(ByteView data) override;
  Bytes get(const DataRef& ref) const override;
  void remove(const DataRef& ref) override;
  // test hook
  Bytes* raw_slot(const std::string& key);

 private:
  std::string id_;
  mutable std::mutex mu_;
  std::map<std::string, Bytes> store_;
};

class FilesystemConnector final : public DataConnector {
 public:
  explicit FilesystemConnector(std::filesystem::path root, std::string id = "filesystem");
  const std::string& id() const override { return id_; }
  DataRef put(ByteView data) override;
  Bytes get(const DataRef& ref) const override;
  void remove(const DataRef& ref) override;
  std::filesystem::path path_of(const std::string& key) const { return root_ / key; }

 private:
  std::filesystem::path root_;
  std::string id_;
};

class ConnectorRegistry {
 public:
  void add(std::shared_ptr<DataConnector> c);
  DataConnector& at(const std::string& id) const;
  bool empty() const { return connectors_.empty(); }

 private:
  std::map<std::string, std::shared_ptr<DataConnector>> connectors_;
};

inline constexpr std::size_t kDefaultInlineLimit = std::size_t{10} << 20;

struct Envelope {
  std::map<std::string, std::string> meta;
  std::variant<Bytes, DataRef> body;

  bool is_inline() const { return std::holds_alternative<Bytes>(body); }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, std::string fallback) const;
};

/// Inline when the payload fits `inline_limit`, otherwise stored through
/// `connector` and replaced by a DataRef.
Envelope make_envelope(std::map<std::string, std::string> meta, Bytes payload, DataConnector* connector,
                       std::size_t inline_limit = kDefaultInlineLimit);

Bytes resolve_body(const Envelope& env, const ConnectorRegistry& registry);

Bytes encode_envelope(const Envelope& env);
Envelope decode_envelope(ByteView bytes);

}  // namespace apfl
