#include "apfl/comm/auth.hpp"

#include "apfl/error.hpp"

namespace apfl {

bool constant_time_equal(std::string_view a, std::string_view b) {
  // Length is not secret here; contents are compared without early exit.
  volatile unsigned char diff = a.size() == b.size() ? 0 : 1;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) diff = diff | static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

std::string StaticTokenAuthenticator::generate_token(const std::string& client_id) const {
  auto it = table_.find(client_id);
  if (it == table_.end()) fail(Errc::unauthenticated, "no token for client " + client_id);
  return it->second;
}

std::optional<std::string> StaticTokenAuthenticator::verify(std::string_view token) const {
  if (token.empty()) return std::nullopt;
  std::optional<std::string> who;
  // Scan the whole table so timing does not depend on which entry matched.
  for (const auto& [client, secret] : table_)
    if (constant_time_equal(secret, token)) who = client;
  return who;
}

}  // namespace apfl
