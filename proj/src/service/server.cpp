#include <algorithm>
#include <cctype>
#include <chrono>
#include <deque>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "mvp/error.hpp"
#include "mvp/service/service.hpp"

namespace mvp::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

constexpr std::size_t kBodyLimit = 64u << 20;
constexpr auto kSsePoll = std::chrono::milliseconds(200);

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string error_json(const std::string& message) {
  return json{{"type", "error"}, {"message", message}}.dump();
}

}  // namespace

struct Server::Impl {
  explicit Impl(ServiceConfig c)
      : config(std::move(c)),
        jobs(config.jobs_dir),
        sessions(config.sessions_dir, config.traces_dir, config.charcha, config.session_ttl_s),
        clients(make_clients(config)),
        runner(jobs, render::Clients{*clients.generator, *clients.llm, nullptr},
               render::RunOptions{config.render_workers, config.render_max_attempts,
                                  std::chrono::milliseconds(config.render_backoff_ms), nullptr, {}}),
        api(config, jobs, sessions, runner, eval::EvalClients{*clients.face, *clients.embedding}),
        blocking(static_cast<std::size_t>(config.threads)) {}

  ServiceConfig config;
  render::JobStore jobs;
  SessionStore sessions;
  ClientSet clients;
  JobRunner runner;
  Api api;

  net::thread_pool blocking;  // Api::handle may touch disk or call out
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::vector<std::thread> threads;
  std::uint16_t port = 0;
  std::atomic<int> live_streams{0};  // WebSocket sessions

  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool started = false;
  bool stopped = false;
  bool finished = false;

  void accept();
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Server::Impl& impl, std::string id)
      : ws_(std::move(socket)), impl_(impl), id_(std::move(id)) {
    ++impl_.live_streams;
  }
  ~WsSession() { --impl_.live_streams; }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    ws_.read_message_max(1 << 20);
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    std::weak_ptr<WsSession> weak = shared_from_this();
    auto executor = ws_.get_executor();
    try {
      impl_.sessions.attach(id_, [weak, executor](const std::vector<charcha::SessionEvent>& events) {
        std::vector<std::string> msgs;
        for (const auto& e : events) msgs.push_back(e.to_json().dump());
        net::post(executor, [weak, msgs = std::move(msgs)] {
          if (auto self = weak.lock()) {
            for (const auto& m : msgs) self->send(m);
            self->close_after_flush();
          }
        });
      });
      attached_ = true;
    } catch (const Error& e) {
      send(error_json(e.what()));
      close_after_flush();
      return;
    }
    read();
  }

  void read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      if (attached_) impl_.sessions.detach(id_);
      attached_ = false;
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    bool done = false;
    try {
      json j;
      try {
        j = json::parse(text);
      } catch (const json::parse_error&) {
        throw Error(ErrorKind::Protocol, "message is not valid JSON");
      }
      const auto msg = charcha::parse_client_message(j);
      for (const auto& e : impl_.sessions.feed(id_, msg)) {
        send(e.to_json().dump());
        if (e.type == charcha::SessionEvent::Type::Verdict && e.verdict && e.verdict->final) done = true;
      }
    } catch (const Error& e) {
      // A malformed message is answered and skipped; the stream stays open.
      send(error_json(e.what()));
      if (e.kind() != ErrorKind::Protocol || std::string_view(e.what()) == "session already finished") {
        done = true;
      }
    }
    if (done) {
      if (attached_) impl_.sessions.detach(id_);
      attached_ = false;
      close_after_flush();
      return;
    }
    read();
  }

  void send(std::string msg) {
    out_.push_back(std::move(msg));
    if (!writing_) write_next();
  }

  void close_after_flush() {
    closing_ = true;
    if (!writing_) write_next();
  }

  void write_next() {
    if (out_.empty()) {
      writing_ = false;
      if (closing_ && !closed_) {
        closed_ = true;
        ws_.async_close(websocket::close_code::normal,
                        [self = shared_from_this()](beast::error_code) {});
      }
      return;
    }
    writing_ = true;
    ws_.async_write(net::buffer(out_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->out_.pop_front();
                      if (ec) {
                        self->out_.clear();
                        self->writing_ = false;
                        return;
                      }
                      self->write_next();
                    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  Server::Impl& impl_;
  std::string id_;
  beast::flat_buffer buffer_;
  std::deque<std::string> out_;
  bool writing_ = false;
  bool closing_ = false;
  bool closed_ = false;
  bool attached_ = false;
};

// text/event-stream of job progress; one "progress" event per change and a
// final "end" event once the job is terminal.
class SseSession : public std::enable_shared_from_this<SseSession> {
 public:
  SseSession(tcp::socket socket, Server::Impl& impl, std::string id)
      : stream_(std::move(socket)), timer_(stream_.get_executor()), impl_(impl), id_(std::move(id)) {}

  void run() {
    write(
        "HTTP/1.1 200 OK\r\nContent-Type: text/event-stream\r\nCache-Control: no-cache\r\n"
        "Connection: close\r\n\r\n",
        false);
  }

 private:
  void tick() {
    bool terminal = false;
    std::string chunk;
    try {
      const auto p = impl_.jobs.progress(id_);
      json j{{"status", render::to_string(p.status)},
             {"frames_done", p.frames_done},
             {"total_frames", p.total_frames},
             {"degraded", p.degraded}};
      if (!p.failure_reason.empty()) j["failure_reason"] = p.failure_reason;
      const std::string data = j.dump();
      terminal = render::is_terminal(p.status);
      if (data != last_) chunk += "event: progress\ndata: " + data + "\n\n";
      if (terminal) chunk += "event: end\ndata: " + data + "\n\n";
      last_ = data;
    } catch (const std::exception& e) {
      chunk = "event: error\ndata: " + json{{"message", e.what()}}.dump() + "\n\n";
      terminal = true;
    }
    if (chunk.empty() && ++idle_ticks_ >= 75) chunk = ": keepalive\n\n";
    if (chunk.empty()) return wait();
    idle_ticks_ = 0;
    write(std::move(chunk), terminal);
  }

  void wait() {
    timer_.expires_after(kSsePoll);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->tick();
    });
  }

  void write(std::string data, bool last) {
    pending_ = std::move(data);
    net::async_write(stream_, net::buffer(pending_),
                     [self = shared_from_this(), last](beast::error_code ec, std::size_t) {
                       if (ec) return;
                       if (last) {
                         beast::error_code ignored;
                         self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                         return;
                       }
                       self->tick();
                     });
  }

  beast::tcp_stream stream_;
  net::steady_timer timer_;
  Server::Impl& impl_;
  std::string id_;
  std::string last_;
  std::string pending_;
  int idle_ticks_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, Server::Impl& impl) : stream_(std::move(socket)), impl_(impl) {}

  void run() { read(); }

 private:
  void read() {
    parser_.emplace();
    parser_->body_limit(kBodyLimit);
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, *parser_,
                     beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) return close();
    if (ec) {
      if (ec == http::error::body_limit) reply(413, error_body("request body too large"), false);
      return;
    }
    req_ = parser_->release();
    keep_alive_ = req_.keep_alive();
    const std::string target(req_.target());
    const auto t = parse_target(target);
    const auto& s = t.segments;

    if (s.size() == 5 && s[0] == "v1" && s[1] == "charcha" && s[2] == "sessions" && s[4] == "stream" &&
        websocket::is_upgrade(req_)) {
      const std::string& id = s[3];
      const auto tok = t.query.find("token");
      try {
        if (!impl_.sessions.exists(id)) throw Error(ErrorKind::NotFound, "unknown session: " + id);
        impl_.sessions.authorize(id, tok == t.query.end() ? "" : tok->second);
      } catch (const Error& e) {
        return reply(e.kind() == ErrorKind::NotFound ? 404 : 403, error_body(e.what()), false);
      }
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), impl_, id)->run(std::move(req_));
      return;
    }
    if (s.size() == 4 && s[0] == "v1" && s[1] == "jobs" && s[3] == "events" &&
        req_.method() == http::verb::get) {
      if (!render::valid_id(s[2]) || !impl_.jobs.exists(s[2])) {
        return reply(404, error_body("unknown job: " + s[2]), keep_alive_);
      }
      stream_.expires_never();
      std::make_shared<SseSession>(stream_.release_socket(), impl_, s[2])->run();
      return;
    }

    HttpRequest r;
    r.method = std::string(req_.method_string());
    r.target = target;
    r.body = std::move(req_.body());
    for (const auto& f : req_) r.headers[lower(std::string(f.name_string()))] = std::string(f.value());
    net::post(impl_.blocking, [self = shared_from_this(), r = std::move(r)] {
      const auto started = std::chrono::steady_clock::now();
      HttpResponse res = self->impl_.api.handle(r);
      const auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                          std::chrono::steady_clock::now() - started)
                          .count();
      spdlog::debug("event=request method={} target={} status={} us={}", r.method, r.target, res.status, us);
      net::post(self->stream_.get_executor(), [self, res = std::move(res)]() mutable {
        self->send(std::move(res));
      });
    });
  }

  static std::string error_body(const std::string& message) {
    return json{{"error", {{"kind", "request"}, {"message", message}}}}.dump();
  }

  void reply(int status, std::string body, bool keep_alive) {
    keep_alive_ = keep_alive;
    send({status, "application/json", std::move(body), {}});
  }

  void send(HttpResponse r) {
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status), 11);
    res->set(http::field::server, "mvp");
    res->set(http::field::content_type, r.content_type);
    for (const auto& [k, v] : r.headers) res->set(k, v);
    res->keep_alive(keep_alive_);
    res->body() = std::move(r.body);
    res->prepare_payload();
    res_ = res;
    http::async_write(stream_, *res, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->res_.reset();
      if (ec) return;
      if (!self->keep_alive_) return self->close();
      self->read();
    });
  }

  void close() {
    beast::error_code ec;
    stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
  }

  beast::tcp_stream stream_;
  Server::Impl& impl_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  http::request<http::string_body> req_;
  std::shared_ptr<void> res_;
  bool keep_alive_ = true;
};

}  // namespace

void Server::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (!acceptor.is_open()) return;
    if (ec) {
      if (ec != net::error::operation_aborted) spdlog::warn("event=accept_failed reason=\"{}\"", ec.message());
    } else {
      std::make_shared<HttpSession>(std::move(socket), *this)->run();
    }
    accept();
  });
}

Server::Server(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Server::~Server() { stop(); }

void Server::start() {
  auto& m = *impl_;
  m.sessions.recover();
  m.runner.start(true);

  beast::error_code ec;
  const tcp::endpoint ep(net::ip::make_address(m.config.host, ec), m.config.port);
  if (ec) throw Error(ErrorKind::Config, "bad listen host \"" + m.config.host + "\": " + ec.message());
  m.acceptor.open(ep.protocol());
  m.acceptor.set_option(net::socket_base::reuse_address(true));
  m.acceptor.bind(ep, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot bind " + m.config.host + ":" + std::to_string(m.config.port) + ": " + ec.message());
  m.acceptor.listen(net::socket_base::max_listen_connections);
  m.port = m.acceptor.local_endpoint().port();
  m.accept();
  for (int i = 0; i < m.config.threads; ++i) m.threads.emplace_back([&m] { m.ioc.run(); });
  {
    std::lock_guard lock(m.stop_mu);
    m.started = true;
  }
  spdlog::info("event=listening host={} port={} mock_generator={} mock_llm={}", m.config.host, m.port,
               m.config.generator.mock, m.config.llm.mock);
}

std::uint16_t Server::port() const { return impl_->port; }

void Server::stop() {
  auto& m = *impl_;
  {
    std::lock_guard lock(m.stop_mu);
    if (m.stopped) return;
    m.stopped = true;
  }
  spdlog::info("event=shutdown_begin");
  net::post(m.acceptor.get_executor(), [&m] {
    beast::error_code ec;
    m.acceptor.close(ec);
  });
  m.sessions.shutdown();
  m.runner.stop();
  // Let streams deliver their final verdicts before the loop goes away.
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
  while (m.live_streams > 0 && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  m.ioc.stop();
  for (auto& t : m.threads) {
    if (t.joinable()) t.join();
  }
  m.blocking.join();
  spdlog::info("event=shutdown_done");
  {
    std::lock_guard lock(m.stop_mu);
    m.finished = true;
  }
  m.stop_cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->stop_mu);
  impl_->stop_cv.wait(lock, [this] { return impl_->finished; });
}

SessionStore& Server::sessions() { return impl_->sessions; }
render::JobStore& Server::jobs() { return impl_->jobs; }
JobRunner& Server::runner() { return impl_->runner; }

}  // namespace mvp::service
