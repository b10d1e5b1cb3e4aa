#pragma once

#include <map>
#include <optional>
#include <string>

namespace apfl {

bool constant_time_equal(std::string_view a, std::string_view b);

/// Two halves: the client side makes a token, the server side maps a token
/// to an identity.
class Authenticator {
 public:
  virtual ~Authenticator() = default;
  virtual std::string generate_token(const std::string& client_id) const = 0;
  virtual std::optional<std::string> verify(std::string_view token) const = 0;
};

/// Accepts anything; identity comes from the request itself.
class NoAuthenticator final : public Authenticator {
 public:
  std::string generate_token(const std::string&) const override { return {}; }
  std::optional<std::string> verify(std::string_view) const override { return std::string(); }
};

/// Shared secrets: server keeps token -> client id, client keeps its own token.
class StaticTokenAuthenticator final : public Authenticator {
 public:
  explicit StaticTokenAuthenticator(std::map<std::string, std::string> client_to_token)
      : table_(std::move(client_to_token)) {}

  std::string generate_token(const std::string& client_id) const override;
  std::optional<std::string> verify(std::string_view token) const override;

 private:
  std::map<std::string, std::string> table_;
};

}  // namespace apfl
