#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace loglake::net {

struct Address {
  std::string host;
  std::uint16_t port = 0;
};

// "host:port", "[v6]:port" or ":port" (all interfaces).
std::optional<Address> parse_address(std::string_view text);

// Owning socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  int release() noexcept {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void close() noexcept;
  // Wakes any thread blocked on this socket.
  void shutdown() noexcept;

 private:
  int fd_ = -1;
};

// Throws IoError.
Socket listen_tcp(const Address& addr, int backlog = 64);
std::uint16_t local_port(const Socket& s);
std::optional<Socket> connect_tcp(const Address& addr,
                                  std::chrono::milliseconds timeout);
Socket accept_tcp(const Socket& listener);  // invalid socket on failure

// Sends everything or returns false (never raises SIGPIPE).
bool send_all(const Socket& s, std::string_view data);

// Buffered reader of '\n'-terminated lines.
class LineReader {
 public:
  enum class Status { kLine, kTimeout, kClosed };

  explicit LineReader(const Socket& s) : socket_(s) {}

  // Negative timeout blocks indefinitely. The line excludes its newline.
  Status read_line(std::string& line, std::chrono::milliseconds timeout);
  // True when a complete line is already buffered.
  bool has_buffered_line() const;

 private:
  const Socket& socket_;
  std::string buffer_;
};

}  // namespace loglake::net
