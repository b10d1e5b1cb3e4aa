#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "apfl/comm/envelope.hpp"
#include "apfl/comm/transport.hpp"
#include "doctest.h"

using namespace apfl;

namespace {

Errc code_of_decode(ByteView b) {
  try {
    decode_frame(b);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::ok;
}

Errc code_of_reply(const Frame& f) {
  try {
    raise_if_error(f);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::ok;
}

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

Frame echo(const Frame& req, const std::string& identity) {
  Frame r;
  r.type = req.type == MessageType::custom_task ? MessageType::custom_task : MessageType::update_reply;
  r.payload = req.payload;
  r.payload.insert(r.payload.end(), identity.begin(), identity.end());
  return r;
}

std::shared_ptr<const Authenticator> two_clients() {
  return std::make_shared<StaticTokenAuthenticator>(
      std::map<std::string, std::string>{{"alice", "tok-alice-0001"}, {"bob", "tok-bob-0002"}});
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::mt19937_64 rng{std::random_device{}()};
    path = std::filesystem::temp_directory_path() / ("apfl_test_" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace

TEST_CASE("empty config request encodes to the fixed 12-byte layout") {
  Frame f;
  f.type = MessageType::config_request;
  const Bytes b = encode_frame(f);
  const Bytes golden{0x41, 0x50, 0x46, 0x4C, 0x01, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00};
  CHECK(b == golden);
  CHECK(b.size() == kFrameFixedBytes);
  CHECK(decode_frame(b) == f);
}

TEST_CASE("frames round trip with token and payload") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    Frame f;
    f.type = static_cast<MessageType>(1 + rng() % 8);
    f.token = std::string(rng() % 40, 'k');
    f.payload = random_bytes(rng, rng() % 2000);
    const Bytes b = encode_frame(f);
    CHECK(b.size() == kFrameFixedBytes + f.token.size() + f.payload.size());
    CHECK(decode_frame(b) == f);
  }
}

TEST_CASE("decode rejects bad magic, version, truncation, trailing bytes and oversize") {
  Frame f;
  f.type = MessageType::model_request;
  f.token = "abc";
  f.payload = {1, 2, 3, 4};
  const Bytes good = encode_frame(f);

  Bytes bad = good;
  bad[0] = 'X';
  CHECK(code_of_decode(bad) == Errc::bad_magic);

  bad = good;
  bad[4] = 2;
  CHECK(code_of_decode(bad) == Errc::unsupported_version);

  for (std::size_t cut = 0; cut < good.size(); ++cut) {
    Bytes shortb(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    const Errc c = code_of_decode(shortb);
    CHECK(c != Errc::ok);
  }

  bad = good;
  bad.push_back(0);
  CHECK(code_of_decode(bad) == Errc::length_mismatch);

  CHECK_THROWS_AS(decode_frame(good, 3), Error);
  try {
    decode_frame(good, 3);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::oversized_payload);
  }
}

TEST_CASE("decoder survives random and mutated input") {
  std::mt19937_64 rng(77);
  Frame base;
  base.type = MessageType::update_submit;
  base.token = "token";
  base.payload = random_bytes(rng, 64);
  const Bytes good = encode_frame(base);
  int decoded = 0;
  for (int i = 0; i < 10000; ++i) {
    Bytes b;
    if (i % 2 == 0) {
      b = random_bytes(rng, rng() % 96);
      if (i % 4 == 0 && b.size() >= 5) std::copy_n("APFL\x01", 5, b.begin());
    } else {
      b = good;
      const int flips = 1 + static_cast<int>(rng() % 4);
      for (int k = 0; k < flips; ++k) b[rng() % b.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
      if (rng() % 3 == 0) b.resize(rng() % b.size());
    }
    try {
      const Frame f = decode_frame(b);
      CHECK(encode_frame(f) == b);
      ++decoded;
    } catch (const Error& e) {
      CHECK(e.code() != Errc::internal);
    }
  }
  MESSAGE("fuzz inputs that decoded: " << decoded);
}

TEST_CASE("error frames carry code and message") {
  const Frame e = error_frame(Errc::missing_key, "gone");
  CHECK(e.type == MessageType::error_reply);
  CHECK(e.payload.size() == 2 + 4);
  CHECK(e.payload[0] == 0);
  CHECK(e.payload[1] == static_cast<int>(Errc::missing_key));
  CHECK(code_of_reply(e) == Errc::missing_key);
  Frame ok;
  ok.type = MessageType::model_reply;
  CHECK_NOTHROW(raise_if_error(ok));
}

TEST_CASE("static tokens: exact match only") {
  StaticTokenAuthenticator auth({{"alice", "tok-alice-0001"}, {"bob", "tok-bob-0002"}});
  CHECK(auth.verify("tok-alice-0001") == std::optional<std::string>("alice"));
  CHECK(auth.verify("tok-bob-0002") == std::optional<std::string>("bob"));
  CHECK_FALSE(auth.verify(""));
  CHECK_FALSE(auth.verify("tok-alice-0002"));  // differs in the last byte
  CHECK_FALSE(auth.verify("tok-alice-000"));
  CHECK_FALSE(auth.verify("tok-alice-00010"));
  CHECK(auth.generate_token("bob") == "tok-bob-0002");
  CHECK_THROWS_AS(auth.generate_token("carol"), Error);
  CHECK(constant_time_equal("abc", "abc"));
  CHECK_FALSE(constant_time_equal("abc", "abd"));
  CHECK_FALSE(constant_time_equal("abc", "ab"));
}

TEST_CASE("dispatcher: rejected frames never reach the handler") {
  int calls = 0;
  Dispatcher d(
      [&](const Frame& r, const std::string& who) {
        ++calls;
        return echo(r, who);
      },
      two_clients());
  InProcTransport t(d);

  Frame req;
  req.type = MessageType::custom_task;
  req.payload = {9};
  CHECK(code_of_reply(t.roundtrip(req)) == Errc::unauthenticated);
  req.token = "tok-alice-0002";
  CHECK(code_of_reply(t.roundtrip(req)) == Errc::unauthenticated);
  CHECK(calls == 0);
  CHECK(d.dispatched() == 0);
  CHECK(d.rejected() == 2);

  req.token = "tok-alice-0001";
  const Frame rep = t.roundtrip(req);
  CHECK(rep.type == MessageType::custom_task);
  CHECK(rep.payload == Bytes{9, 'a', 'l', 'i', 'c', 'e'});
  CHECK(calls == 1);
  CHECK(d.dispatched() == 1);

  req.type = static_cast<MessageType>(99);
  CHECK(code_of_reply(t.roundtrip(req)) == Errc::unknown_type);
  CHECK(calls == 1);
}

TEST_CASE("dispatcher turns handler errors into error replies") {
  Dispatcher d([](const Frame&, const std::string&) -> Frame { fail(Errc::dim_mismatch, "nope"); },
               std::make_shared<NoAuthenticator>());
  Frame req;
  req.type = MessageType::update_submit;
  CHECK(code_of_reply(d.handle(req)) == Errc::dim_mismatch);
}

TEST_CASE("envelopes round trip inline and by reference") {
  Envelope e = make_envelope({{"client_id", "3"}, {"epoch", "12"}}, Bytes{1, 2, 3}, nullptr);
  CHECK(e.is_inline());
  Envelope back = decode_envelope(encode_envelope(e));
  CHECK(back.meta == e.meta);
  CHECK(std::get<Bytes>(back.body) == Bytes{1, 2, 3});
  CHECK(back.get("epoch") == "12");
  CHECK(back.get_or("missing", "x") == "x");
  CHECK_THROWS_AS(back.get("missing"), Error);

  auto mem = std::make_shared<MemoryConnector>();
  Envelope r = make_envelope({}, Bytes(100, 7), mem.get(), 10);
  CHECK_FALSE(r.is_inline());
  back = decode_envelope(encode_envelope(r));
  CHECK(std::get<DataRef>(back.body) == std::get<DataRef>(r.body));
  ConnectorRegistry reg;
  CHECK_THROWS_AS(resolve_body(back, reg), Error);
  reg.add(mem);
  CHECK(resolve_body(back, reg) == Bytes(100, 7));

  Bytes enc = encode_envelope(e);
  enc.pop_back();
  CHECK_THROWS_AS(decode_envelope(enc), Error);
  enc = encode_envelope(e);
  enc.push_back(0);
  CHECK_THROWS_AS(decode_envelope(enc), Error);
}

TEST_CASE("payloads over 10 MiB become references automatically") {
  auto mem = std::make_shared<MemoryConnector>();
  std::mt19937_64 rng(5);
  const Bytes exactly = random_bytes(rng, kDefaultInlineLimit);
  CHECK(make_envelope({}, exactly, mem.get()).is_inline());
  const Bytes big = random_bytes(rng, kDefaultInlineLimit + 1);
  const Envelope e = make_envelope({}, big, mem.get());
  REQUIRE_FALSE(e.is_inline());
  const auto& ref = std::get<DataRef>(e.body);
  CHECK(ref.size == big.size());
  CHECK(ref.digest == sha256(big));
  CHECK(ref.key.size() == 32);
  ConnectorRegistry reg;
  reg.add(mem);
  CHECK(resolve_body(decode_envelope(encode_envelope(e)), reg) == big);
  CHECK_THROWS_AS(make_envelope({}, big, nullptr), Error);
}

TEST_CASE("sha256 matches a known digest") {
  const std::string abc = "abc";
  CHECK(to_hex(sha256(as_bytes(abc))) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("filesystem connector round trips 10 MiB and detects tampering") {
  TempDir dir;
  FilesystemConnector fs(dir.path / "store");
  std::mt19937_64 rng(11);
  const Bytes data = random_bytes(rng, std::size_t{10} << 20);
  const DataRef ref = fs.put(data);
  CHECK(std::filesystem::file_size(fs.path_of(ref.key)) == data.size());
  CHECK(fs.get(ref) == data);

  {
    std::fstream f(fs.path_of(ref.key), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(12345);
    const char c = static_cast<char>(data[12345] ^ 0x40);
    f.write(&c, 1);
  }
  try {
    fs.get(ref);
    FAIL("tampered object was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::checksum_mismatch);
  }

  fs.remove(ref);
  try {
    fs.get(ref);
    FAIL("removed object was returned");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_key);
  }
  DataRef evil = ref;
  evil.key = "../escape";
  CHECK_THROWS_AS(fs.get(evil), Error);
}

TEST_CASE("memory connector detects tampering") {
  MemoryConnector mem;
  const DataRef ref = mem.put(Bytes{1, 2, 3, 4});
  CHECK(mem.get(ref) == Bytes{1, 2, 3, 4});
  (*mem.raw_slot(ref.key))[2] = 9;
  try {
    mem.get(ref);
    FAIL("tampered object was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::checksum_mismatch);
  }
}

TEST_CASE("tcp loopback with several concurrent clients") {
  Dispatcher d(echo, two_clients());
  TcpServer server({}, d);
  REQUIRE(server.port() != 0);

  auto run = [&](const std::string& token, const std::string& who, int n) {
    TcpClientTransport c("127.0.0.1", server.port());
    for (int i = 0; i < n; ++i) {
      Frame req;
      req.type = MessageType::update_submit;
      req.token = token;
      req.payload = Bytes(static_cast<std::size_t>(i * 997 % 5000), static_cast<std::uint8_t>(i));
      const Frame rep = c.roundtrip(req);
      REQUIRE(rep.type == MessageType::update_reply);
      Bytes expect = req.payload;
      expect.insert(expect.end(), who.begin(), who.end());
      CHECK(rep.payload == expect);
    }
  };
  std::thread a(run, "tok-alice-0001", "alice", 50);
  std::thread b(run, "tok-bob-0002", "bob", 50);
  a.join();
  b.join();
  CHECK(d.dispatched() == 100);

  TcpClientTransport bad("127.0.0.1", server.port());
  Frame req;
  req.type = MessageType::config_request;
  req.token = "wrong";
  CHECK(code_of_reply(bad.roundtrip(req)) == Errc::unauthenticated);
  req.token = "tok-bob-0002";
  req.type = static_cast<MessageType>(99);
  CHECK(code_of_reply(bad.roundtrip(req)) == Errc::unknown_type);
  CHECK(d.rejected() == 1);
  server.stop();
}

TEST_CASE("tcp server answers garbage with an error reply and hangs up") {
  Dispatcher d(echo, std::make_shared<NoAuthenticator>());
  TcpServer server({}, d);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(server.port());
  ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  const char junk[] = "GET / HTTP/1.1\r\n\r\n";
  REQUIRE(::send(fd, junk, sizeof junk - 1, 0) > 0);
  const auto rep = read_frame(fd, kDefaultMaxPayload);
  REQUIRE(rep);
  CHECK(code_of_reply(*rep) == Errc::bad_magic);
  CHECK_FALSE(read_frame(fd, kDefaultMaxPayload));  // closed
  ::close(fd);
  CHECK(d.dispatched() == 0);
}

TEST_CASE("oversized frames are refused by the server") {
  Dispatcher d(echo, std::make_shared<NoAuthenticator>());
  TcpServerOptions opts;
  opts.max_payload = 1024;
  TcpServer server(opts, d);
  TcpClientTransport c("127.0.0.1", server.port());
  Frame req;
  req.type = MessageType::update_submit;
  req.payload = Bytes(2048, 1);
  CHECK(code_of_reply(c.roundtrip(req)) == Errc::oversized_payload);
  req.payload = Bytes(1024, 1);
  CHECK(c.roundtrip(req).type == MessageType::update_reply);  // reconnects
}

TEST_CASE("client gives up with ConnectionRefused after its retries") {
  std::uint16_t port = 0;
  {
    Dispatcher d(echo, std::make_shared<NoAuthenticator>());
    TcpServer s({}, d);
    port = s.port();
  }
  TcpClientTransport c("127.0.0.1", port, RetryPolicy{3, std::chrono::milliseconds(5)});
  Frame req;
  try {
    c.roundtrip(req);
    FAIL("connected to a closed port");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::connection_refused);
  }
}

TEST_CASE("client retries until a late server comes up") {
  std::uint16_t port = 0;
  {
    Dispatcher tmp(echo, std::make_shared<NoAuthenticator>());
    TcpServer s({}, tmp);
    port = s.port();
  }
  Dispatcher d(echo, std::make_shared<NoAuthenticator>());
  std::unique_ptr<TcpServer> late;
  std::thread starter([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(150));
    TcpServerOptions o;
    o.port = port;
    late = std::make_unique<TcpServer>(o, d);
  });
  TcpClientTransport c("127.0.0.1", port, RetryPolicy{40, std::chrono::milliseconds(25)});
  Frame req;
  req.type = MessageType::custom_task;
  req.payload = {4};
  const Frame rep = c.roundtrip(req);
  starter.join();
  CHECK(rep.payload == Bytes{4});
}
