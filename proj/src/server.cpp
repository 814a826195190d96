#include <deque>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "adapt/io.hpp"
#include "adapt/service.hpp"

namespace adapt {

namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

constexpr std::uint64_t kBodyLimit = 1ULL << 30;

// Looks up the session named by "/sessions/{id}/stream", or null.
std::shared_ptr<Session> stream_target(SessionStore& store, std::string_view target) {
  constexpr std::string_view prefix = "/sessions/";
  constexpr std::string_view suffix = "/stream";
  if (target.size() <= prefix.size() + suffix.size()) return nullptr;
  if (target.substr(0, prefix.size()) != prefix) return nullptr;
  if (target.substr(target.size() - suffix.size()) != suffix) return nullptr;
  const std::string_view id = target.substr(prefix.size(), target.size() - prefix.size() - suffix.size());
  if (id.find('/') != std::string_view::npos) return nullptr;
  return store.get(std::string(id));
}

class Subscriber : public std::enable_shared_from_this<Subscriber> {
 public:
  Subscriber(tcp::socket socket, std::shared_ptr<Session> session)
      : ws_(std::move(socket)), session_(std::move(session)) {}

  ~Subscriber() {
    if (token_) session_->unsubscribe(token_);
  }

  void run(http::request<http::string_body> req) {
    auto self = shared_from_this();
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self](beast::error_code ec) { self->on_accept(ec); });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    std::weak_ptr<Subscriber> weak = shared_from_this();
    auto executor = ws_.get_executor();
    token_ = session_->subscribe([weak, executor](std::shared_ptr<const std::string> msg) {
      net::post(executor, [weak, msg = std::move(msg)]() {
        if (auto s = weak.lock()) s->send(msg);
      });
    });
    // The current state opens every stream so late joiners can render.
    auto hello = std::make_shared<const std::string>("{\"schema\":" + std::to_string(kSchemaVersion) +
                                                     ",\"type\":\"hello\",\"state\":" + *session_->state() + "}");
    send(hello);
    read();
  }

  void read() {
    auto self = shared_from_this();
    ws_.async_read(buffer_, [self](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->buffer_.consume(self->buffer_.size());
      self->read();
    });
  }

  void send(std::shared_ptr<const std::string> msg) {
    if (closed_) return;
    queue_.push_back(std::move(msg));
    if (queue_.size() == 1) write();
  }

  void write() {
    auto self = shared_from_this();
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  void close() {
    closed_ = true;
    queue_.clear();
    if (token_) session_->unsubscribe(token_);
    token_ = 0;
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Session> session_;
  std::uint64_t token_ = 0;
  std::deque<std::shared_ptr<const std::string>> queue_;
  beast::flat_buffer buffer_;
  bool closed_ = false;
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, SessionStore& store) : stream_(std::move(socket)), store_(store) {}

  void run() {
    net::dispatch(stream_.get_executor(), [self = shared_from_this()]() { self->read(); });
  }

 private:
  void read() {
    parser_.emplace();
    parser_->body_limit(kBodyLimit);
    stream_.expires_after(std::chrono::seconds(120));
    http::async_read(stream_, buffer_, *parser_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec == http::error::body_limit) {
      reply(413, "{\"schema\":1,\"error\":\"payload too large\"}", false);
      return;
    }
    if (ec) return;
    http::request<http::string_body> req = parser_->release();
    if (websocket::is_upgrade(req)) {
      auto session = stream_target(store_, std::string_view(req.target().data(), req.target().size()));
      if (!session) {
        reply(404, "{\"schema\":1,\"error\":\"unknown session\"}", false);
        return;
      }
      stream_.expires_never();
      std::make_shared<Subscriber>(stream_.release_socket(), std::move(session))->run(std::move(req));
      return;
    }
    const HttpReply r = handle_request(store_, std::string_view(req.method_string().data(), req.method_string().size()),
                                       std::string_view(req.target().data(), req.target().size()), req.body());
    reply(r.status, r.body, req.keep_alive());
  }

  void reply(int status, std::string body, bool keep_alive) {
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(status), 11);
    res->set(http::field::content_type, "application/json");
    res->keep_alive(keep_alive);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  SessionStore& store_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
};

}  // namespace

struct Server::Impl {
  Impl(SessionStore& s, std::string h, unsigned short p, std::size_t t)
      : store(s), host(std::move(h)), port(p), threads(std::max<std::size_t>(1, t)), ioc(static_cast<int>(threads)) {}

  void accept() {
    acceptor->async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (!ec) std::make_shared<Connection>(std::move(socket), store)->run();
      if (acceptor->is_open()) accept();
    });
  }

  SessionStore& store;
  std::string host;
  unsigned short port;
  std::size_t threads;
  net::io_context ioc;
  std::optional<tcp::acceptor> acceptor;
  std::vector<std::thread> pool;
};

Server::Server(SessionStore& store, std::string host, unsigned short port, std::size_t threads)
    : impl_(std::make_unique<Impl>(store, std::move(host), port, threads)) {}

Server::~Server() { stop(); }

unsigned short Server::start() {
  Impl& s = *impl_;
  const tcp::endpoint endpoint(net::ip::make_address(s.host), s.port);
  s.acceptor.emplace(s.ioc);
  s.acceptor->open(endpoint.protocol());
  s.acceptor->set_option(net::socket_base::reuse_address(true));
  s.acceptor->bind(endpoint);
  s.acceptor->listen(net::socket_base::max_listen_connections);
  const unsigned short bound = s.acceptor->local_endpoint().port();
  s.accept();
  for (std::size_t i = 0; i < s.threads; ++i) s.pool.emplace_back([&s]() { s.ioc.run(); });
  return bound;
}

void Server::stop() {
  if (!impl_) return;
  impl_->ioc.stop();
  for (auto& t : impl_->pool) {
    if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
  }
  impl_->pool.clear();
}

void Server::wait() {
  for (auto& t : impl_->pool) {
    if (t.joinable()) t.join();
  }
}

}  // namespace adapt
