// server.hpp - TCP ingestion/broadcast thread: raw length-prefixed or WebSocket
#pragma once

#include "kst/pipeline.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

namespace kst {

class ServerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::pair<std::string, int> parse_listen_address(const std::string& s) {
  const auto c = s.rfind(':');
  if (c == std::string::npos) throw ServerError("listen address must be host:port, got '" + s + "'");
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(s.substr(c + 1), &used);
    if (used != s.size() - c - 1) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw ServerError("bad port in listen address '" + s + "'");
  return {s.substr(0, c), port};
}

/// Accepts any number of clients. Each connection is sniffed on its first
/// bytes: "GET " starts a WebSocket handshake, anything else is raw framing.
class Server {
 public:
  using Clock = std::function<double()>;
  static constexpr std::size_t kMaxPendingWrite = 8u << 20;

  Server(Ingestor& ingestor, SessionChannels& ch, Clock clock) : ingestor_(&ingestor), ch_(&ch), clock_(std::move(clock)) {}
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  /// Binds and starts the thread. Port 0 picks a free port.
  void start(const std::string& listen_address) {
    const auto [host, port] = parse_listen_address(listen_address);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ServerError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    const std::string h = host == "localhost" ? "127.0.0.1" : host;
    if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1) {
      close_listen();
      throw ServerError("bad listen host '" + host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
      const std::string err = std::strerror(errno);
      close_listen();
      throw ServerError("cannot listen on " + listen_address + ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    set_nonblocking(listen_fd_);
    running_ = true;
    thread_ = std::thread([this] { loop(); });
  }

  void stop() {
    running_ = false;
    if (thread_.joinable()) thread_.join();
    for (auto& c : clients_) ::close(c.fd);
    clients_.clear();
    close_listen();
  }

  int port() const { return port_; }
  std::size_t clients() const { return client_count_.load(); }

 private:
  enum class Framing { unknown, raw, websocket };

  struct Client {
    int id;
    int fd;
    Framing framing = Framing::unknown;
    std::string in;  // bytes before the framing is known
    LengthPrefixDecoder raw;
    ws::Decoder ws;
    std::string out;
    bool closing = false;
  };

  static void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

  void close_listen() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
  }

  void send_to(Client& c, const std::string& text) {
    if (c.framing == Framing::raw) c.out += frame_length_prefixed(text);
    else if (c.framing == Framing::websocket) c.out += ws::encode_frame(text);
    if (c.out.size() > kMaxPendingWrite) c.closing = true;  // client stopped reading
  }

  void deliver(const std::string& text, Client& c) {
    ingestor_->handle(text, clock_(), c.id);
  }

  void on_bytes(Client& c, const char* data, std::size_t n) {
    try {
      if (c.framing == Framing::unknown) {
        c.in.append(data, n);
        if (c.in.size() < 4) return;
        if (c.in.compare(0, 4, "GET ") == 0) {
          auto h = ws::parse_handshake(c.in);
          if (!h) return;
          c.framing = Framing::websocket;
          c.out += h->response;
          c.ws.feed(std::string_view(c.in).substr(h->consumed));
        } else {
          c.framing = Framing::raw;
          c.raw.feed(c.in);
        }
        c.in.clear();
      } else if (c.framing == Framing::raw) {
        c.raw.feed(std::string_view(data, n));
      } else {
        c.ws.feed(std::string_view(data, n));
      }
      if (c.framing == Framing::raw) {
        while (auto m = c.raw.next()) deliver(*m, c);
      } else {
        while (auto m = c.ws.next()) {
          if (m->opcode == ws::close) {
            c.out += ws::encode_frame(m->payload.substr(0, 2), ws::close);
            c.closing = true;
            return;
          }
          if (m->opcode == ws::ping) c.out += ws::encode_frame(m->payload, ws::pong);
          else if (m->opcode == ws::text || m->opcode == ws::binary) deliver(m->payload, c);
        }
      }
    } catch (const ProtocolError& e) {
      // framing is broken past this point; report and hang up
      Envelope err = error_message(e.code(), e.what());
      if (c.framing == Framing::unknown) c.framing = Framing::raw;
      send_to(c, encode(err));
      c.closing = true;
    }
  }

  void flush(Client& c) {
    while (!c.out.empty()) {
      const ssize_t w = ::send(c.fd, c.out.data(), c.out.size(), MSG_NOSIGNAL);
      if (w <= 0) {
        if (w < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
        c.out.clear();
        c.closing = true;
        return;
      }
      c.out.erase(0, static_cast<std::size_t>(w));
    }
  }

  void loop() {
    std::vector<pollfd> fds;
    char buf[65536];
    while (running_) {
      fds.clear();
      fds.push_back({listen_fd_, POLLIN, 0});
      for (const auto& c : clients_)
        fds.push_back({c.fd, static_cast<short>(POLLIN | (c.out.empty() ? 0 : POLLOUT)), 0});
      ::poll(fds.data(), fds.size(), 1);

      if (fds[0].revents & POLLIN) {
        while (true) {
          const int fd = ::accept(listen_fd_, nullptr, nullptr);
          if (fd < 0) break;
          set_nonblocking(fd);
          int one = 1;
          ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
          clients_.push_back(Client{next_id_++, fd});
        }
      }
      for (std::size_t i = 1; i < fds.size(); ++i) {
        Client& c = clients_[i - 1];
        if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        while (!c.closing) {
          const ssize_t r = ::recv(c.fd, buf, sizeof buf, 0);
          if (r > 0) {
            on_bytes(c, buf, static_cast<std::size_t>(r));
            continue;
          }
          if (r == 0 || (errno != EAGAIN && errno != EWOULDBLOCK)) c.closing = true;
          break;
        }
      }

      for (const auto& o : ch_->outbound.drain()) {
        for (auto& c : clients_)
          if (o.client == kBroadcast || o.client == c.id) send_to(c, o.text);
      }
      for (auto& c : clients_) flush(c);
      for (auto it = clients_.begin(); it != clients_.end();) {
        if (it->closing) {
          flush(*it);
          ::close(it->fd);
          it = clients_.erase(it);
        } else {
          ++it;
        }
      }
      client_count_ = clients_.size();
    }
  }

  Ingestor* ingestor_;
  SessionChannels* ch_;
  Clock clock_;
  int listen_fd_ = -1;
  int port_ = 0;
  int next_id_ = 1;
  std::vector<Client> clients_;
  std::atomic<bool> running_{false};
  std::atomic<std::size_t> client_count_{0};
  std::thread thread_;
};

}  // namespace kst
