#include "wlds/ingestd.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>
#include <iostream>

#include <json.hpp>

namespace wlds::ingest {

std::uint8_t ack_code(const AdmissionResult& r) {
  switch (r.kind) {
    case Admission::Accept: return 0x00;
    case Admission::Duplicate: return 0x01;
    case Admission::Stale: return 0x02;
    case Admission::Invalid: return 0xFF;
  }
  return 0xFF;
}

std::string_view to_string(Admission a) {
  switch (a) {
    case Admission::Accept: return "Accept";
    case Admission::Duplicate: return "Duplicate";
    case Admission::Stale: return "Stale";
    case Admission::Invalid: return "Invalid";
  }
  return "?";
}

AdmissionResult admit(const TelemetryReading& r, SessionState& s, std::uint64_t now_ms,
                      std::uint64_t staleness_window_ms) {
  if (s.node_id && *s.node_id != r.node_id) return {Admission::Invalid, "node identity change"};
  if (s.last_seq && r.seq <= *s.last_seq) return {Admission::Duplicate, {}};
  if (r.timestamp_ms + staleness_window_ms < now_ms) return {Admission::Stale, {}};
  s.node_id = r.node_id;
  s.last_seq = r.seq;
  s.last_timestamp_ms = r.timestamp_ms;
  return {Admission::Accept, {}};
}

void count(SessionState& s, const AdmissionResult& r) {
  switch (r.kind) {
    case Admission::Accept: ++s.counters.accepted; break;
    case Admission::Duplicate: ++s.counters.duplicate; break;
    case Admission::Stale: ++s.counters.stale; break;
    case Admission::Invalid: ++s.counters.invalid; break;
  }
}

SpecRegistry::SpecRegistry(std::vector<PipeSpec> specs) {
  for (auto& s : specs) specs_.insert_or_assign(s.node_id, s);
}

std::optional<PipeSpec> SpecRegistry::get(const NodeId& node) const {
  std::lock_guard lk(mu_);
  auto it = specs_.find(node);
  if (it == specs_.end()) return std::nullopt;
  return it->second;
}

std::vector<PipeSpec> SpecRegistry::all() const {
  std::lock_guard lk(mu_);
  std::vector<PipeSpec> out;
  for (const auto& [id, s] : specs_) out.push_back(s);
  return out;
}

std::vector<std::string> SpecRegistry::put(const PipeSpec& spec) {
  auto v = validate_pipe_spec(spec);
  if (!v.empty()) return v;
  std::lock_guard lk(mu_);
  specs_.insert_or_assign(spec.node_id, spec);
  return v;
}

Pipeline::Pipeline(store::Store& store, SpecRegistry& specs, alerting::AlertEngine& alerts,
                   PipelineOptions options, alerting::Dispatcher* dispatcher)
    : store_(store), specs_(specs), alerts_(alerts), options_(std::move(options)), dispatcher_(dispatcher) {}

const wire::Key& Pipeline::key_for(std::span<const std::uint8_t> frame) const {
  if (options_.node_keys.empty() || frame.size() < 20) return options_.fleet_key;
  NodeId::Bytes b{};
  std::memcpy(b.data(), frame.data() + 4, b.size());
  bool nil = true;
  for (auto x : b) nil = nil && x == 0;
  if (nil) return options_.fleet_key;
  auto it = options_.node_keys.find(NodeId(b));
  return it == options_.node_keys.end() ? options_.fleet_key : it->second;
}

std::uint64_t Pipeline::now_ms() const {
  if (options_.clock) return options_.clock();
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

Pipeline::NodeLane& Pipeline::lane(const NodeId& node) {
  std::lock_guard lk(lanes_mu_);
  auto& slot = lanes_[node];
  if (!slot) slot = std::make_unique<NodeLane>();
  return *slot;
}

AdmissionResult Pipeline::submit(const TelemetryReading& reading, SessionState& session) {
  if (session.node_id && *session.node_id != reading.node_id) return {Admission::Invalid, "node identity change"};
  const auto spec = specs_.get(reading.node_id);
  if (!spec) return {Admission::Invalid, "unknown node"};

  auto& l = lane(reading.node_id);
  std::lock_guard lk(l.mu);
  if (!l.seeded) {
    if (auto latest = store_.latest(reading.node_id)) l.last_seq = latest->reading.seq;
    l.seeded = true;
  }
  // Dedup is per node, across connections and restarts.
  if (l.last_seq && (!session.last_seq || *session.last_seq < *l.last_seq)) session.last_seq = l.last_seq;

  auto result = admit(reading, session, now_ms(), options_.staleness_window_ms);
  if (result.kind != Admission::Accept) return result;

  const auto record = store_.append(reading, *spec, options_.sonic_speed_mps);
  l.last_seq = reading.seq;
  auto transition = alerts_.observe(record);
  if (listener_) listener_(record, transition);
  if (transition && transition->direction == alerting::Direction::Raised && dispatcher_) {
    for (const auto& o : alerts_.offices())
      if (o.office_id == transition->dispatched_to) dispatcher_->enqueue(*transition, o);
  }
  return result;
}

void Pipeline::claim(const NodeId& node, const std::shared_ptr<SessionHandle>& handle) {
  std::shared_ptr<SessionHandle> previous;
  {
    std::lock_guard lk(sessions_mu_);
    auto& slot = sessions_[node];
    previous = slot.lock();
    slot = handle;
  }
  if (previous && previous != handle) previous->supersede();
}

void Pipeline::release(const NodeId& node, const SessionHandle* handle) {
  std::lock_guard lk(sessions_mu_);
  auto it = sessions_.find(node);
  if (it != sessions_.end() && it->second.lock().get() == handle) sessions_.erase(it);
}

void SessionHandle::supersede() {
  superseded_ = true;
  std::lock_guard lk(mu_);
  if (stream_) stream_->shutdown();
}

void SessionHandle::detach() {
  std::lock_guard lk(mu_);
  stream_ = nullptr;
}

namespace {

bool read_exact(ByteStream& s, std::span<std::uint8_t> buf) {
  std::size_t got = 0;
  while (got < buf.size()) {
    const auto n = s.read_some(buf.subspan(got));
    if (n == 0) return false;
    got += n;
  }
  return true;
}

}  // namespace

SessionSummary handle_session(ByteStream& stream, Pipeline& pipeline, const SessionOptions& options) {
  SessionState session;
  SessionSummary summary;
  auto handle = std::make_shared<SessionHandle>(&stream);
  std::uint32_t consecutive_invalid = 0;
  std::vector<std::uint8_t> buf;

  auto finish = [&](std::string reason) {
    handle->detach();
    if (session.node_id) pipeline.release(*session.node_id, handle.get());
    summary.node_id = session.node_id;
    summary.counters = session.counters;
    summary.close_reason = handle->superseded() ? "superseded" : std::move(reason);
    return summary;
  };

  try {
    for (;;) {
      std::array<std::uint8_t, 2> len_bytes{};
      if (!read_exact(stream, len_bytes)) return finish("eof");
      const std::uint16_t len = static_cast<std::uint16_t>(len_bytes[0] << 8 | len_bytes[1]);
      if (len == 0 || len > options.max_record_length) return finish("malformed length prefix");
      buf.resize(len);
      if (!read_exact(stream, buf)) return finish("eof mid-record");
      if (handle->superseded()) return finish("superseded");

      AdmissionResult result;
      const auto decoded = wire::decode_frame(buf, pipeline.key_for(buf));
      if (const auto* rej = std::get_if<wire::Rejection>(&decoded)) {
        result = {Admission::Invalid, std::string(wire::to_string(rej->error))};
      } else {
        const auto& reading = std::get<wire::Decoded>(decoded).reading;
        const bool first = !session.node_id;
        try {
          result = pipeline.submit(reading, session);
        } catch (const store::AppendError& e) {
          std::cerr << R"({"event":"append_failed","error":)" << nlohmann::json(e.what()).dump() << "}\n";
          return finish("storage failure");
        }
        if (first && session.node_id) pipeline.claim(*session.node_id, handle);
      }
      count(session, result);
      consecutive_invalid = result.kind == Admission::Invalid ? consecutive_invalid + 1 : 0;
      const std::uint8_t ack = ack_code(result);
      stream.write_all(std::span(&ack, 1));
      if (consecutive_invalid >= options.max_consecutive_invalid) return finish("too many invalid frames");
    }
  } catch (const std::exception& e) {
    return finish(std::string("transport error: ") + e.what());
  }
}

std::string session_log_line(const SessionSummary& s, const std::string& peer, std::uint64_t duration_ms) {
  nlohmann::json j{{"event", "session_close"},
                   {"peer", peer},
                   {"node_id", s.node_id ? nlohmann::json(s.node_id->to_string()) : nlohmann::json(nullptr)},
                   {"accepted", s.counters.accepted},
                   {"duplicate", s.counters.duplicate},
                   {"stale", s.counters.stale},
                   {"invalid", s.counters.invalid},
                   {"reason", s.close_reason},
                   {"duration_ms", duration_ms}};
  return j.dump();
}

HostPort parse_host_port(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    throw std::invalid_argument("expected HOST:PORT, got '" + std::string(text) + "'");
  unsigned port = 0;
  const auto* first = text.data() + colon + 1;
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, port);
  if (ec != std::errc{} || ptr != last || first == last || port > 65535)
    throw std::invalid_argument("bad port in '" + std::string(text) + "'");
  return HostPort{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

namespace {

class SocketStream final : public ByteStream {
 public:
  explicit SocketStream(int fd) : fd_(fd) {}
  std::size_t read_some(std::span<std::uint8_t> buf) override {
    for (;;) {
      const auto n = ::recv(fd_, buf.data(), buf.size(), 0);
      if (n >= 0) return static_cast<std::size_t>(n);
      if (errno == EINTR) continue;
      if (errno == ECONNRESET || errno == ENOTCONN) return 0;
      throw std::runtime_error(std::string("recv: ") + std::strerror(errno));
    }
  }
  void write_all(std::span<const std::uint8_t> bytes) override {
    std::size_t done = 0;
    while (done < bytes.size()) {
      const auto n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw std::runtime_error(std::string("send: ") + std::strerror(errno));
      done += static_cast<std::size_t>(n);
    }
  }
  void shutdown() override { ::shutdown(fd_, SHUT_RDWR); }

 private:
  int fd_;
};

std::string peer_name(const sockaddr_storage& addr) {
  char host[INET6_ADDRSTRLEN] = {};
  std::uint16_t port = 0;
  if (addr.ss_family == AF_INET) {
    const auto* a = reinterpret_cast<const sockaddr_in*>(&addr);
    ::inet_ntop(AF_INET, &a->sin_addr, host, sizeof host);
    port = ntohs(a->sin_port);
  } else if (addr.ss_family == AF_INET6) {
    const auto* a = reinterpret_cast<const sockaddr_in6*>(&addr);
    ::inet_ntop(AF_INET6, &a->sin6_addr, host, sizeof host);
    port = ntohs(a->sin6_port);
  }
  return std::string(host) + ":" + std::to_string(port);
}

int resolve_and(const HostPort& hp, bool listen, std::uint16_t* bound_port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (listen) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const auto port = std::to_string(hp.port);
  const char* host = hp.host.empty() ? nullptr : hp.host.c_str();
  if (int rc = ::getaddrinfo(host, port.c_str(), &hints, &res); rc != 0)
    throw std::runtime_error("resolve " + hp.host + ": " + ::gai_strerror(rc));
  std::string last_error = "no addresses";
  int fd = -1;
  for (auto* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    if (listen) {
      ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 256) == 0) {
        sockaddr_storage ss{};
        socklen_t sl = sizeof ss;
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&ss), &sl);
        *bound_port = ntohs(ss.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port
                                                     : reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
        break;
      }
    } else {
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    }
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0)
    throw std::runtime_error(std::string(listen ? "listen on " : "connect to ") + hp.host + ":" +
                             std::to_string(hp.port) + ": " + last_error);
  return fd;
}

}  // namespace

struct TcpServer::Connection {
  int fd;
  std::string peer;
  std::thread thread;
  std::atomic<bool> done{false};
};

TcpServer::TcpServer(Pipeline& pipeline, HostPort listen, SessionOptions options, LogSink log)
    : pipeline_(pipeline), listen_(std::move(listen)), options_(options), log_(std::move(log)) {
  if (!log_) log_ = [](const std::string& line) { std::cerr << line << '\n'; };
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start() {
  listen_fd_ = resolve_and(listen_, true, &port_);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpServer::accept_loop() {
  while (running_) {
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    const int fd = ::accept4(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      if (!running_) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
      continue;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lk(conns_mu_);
    conns_.remove_if([](const std::unique_ptr<Connection>& c) {
      if (!c->done) return false;
      c->thread.join();
      return true;
    });
    if (!running_) {
      ::close(fd);
      return;
    }
    auto conn = std::make_unique<Connection>();
    conn->fd = fd;
    conn->peer = peer_name(addr);
    auto* c = conn.get();
    conn->thread = std::thread([this, c] {
      const auto t0 = std::chrono::steady_clock::now();
      SocketStream stream(c->fd);
      const auto summary = handle_session(stream, pipeline_, options_);
      ::shutdown(c->fd, SHUT_RDWR);
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
      log_(session_log_line(summary, c->peer, static_cast<std::uint64_t>(ms.count())));
      c->done = true;
    });
    conns_.push_back(std::move(conn));
  }
}

void TcpServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::lock_guard lk(conns_mu_);
  for (auto& c : conns_) ::shutdown(c->fd, SHUT_RDWR);
  for (auto& c : conns_) {
    if (c->thread.joinable()) c->thread.join();
    ::close(c->fd);
  }
  conns_.clear();
}

FrameClient FrameClient::connect(const HostPort& target) { return FrameClient(resolve_and(target, false, nullptr)); }

FrameClient::FrameClient(FrameClient&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
FrameClient& FrameClient::operator=(FrameClient&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = std::exchange(o.fd_, -1);
  }
  return *this;
}
FrameClient::~FrameClient() { close(); }

void FrameClient::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

std::uint8_t FrameClient::send(std::span<const std::uint8_t> frame) {
  if (fd_ < 0) throw std::runtime_error("frame client is closed");
  if (frame.size() > 0xFFFF) throw std::invalid_argument("record too long");
  std::vector<std::uint8_t> buf;
  buf.reserve(frame.size() + 2);
  buf.push_back(static_cast<std::uint8_t>(frame.size() >> 8));
  buf.push_back(static_cast<std::uint8_t>(frame.size()));
  buf.insert(buf.end(), frame.begin(), frame.end());
  SocketStream s(fd_);
  s.write_all(buf);
  std::uint8_t ack = 0;
  if (s.read_some(std::span(&ack, 1)) != 1) throw std::runtime_error("connection closed before ack");
  return ack;
}

Uplink::Uplink(HostPort target, wire::Key fleet_key, std::unordered_map<NodeId, wire::Key> node_keys)
    : target_(std::move(target)), fleet_key_(fleet_key), node_keys_(std::move(node_keys)) {}

void Uplink::operator()(const TelemetryReading& reading) {
  auto it = links_.find(reading.node_id);
  if (it == links_.end()) it = links_.emplace(reading.node_id, FrameClient::connect(target_)).first;
  auto kit = node_keys_.find(reading.node_id);
  const auto frame = wire::encode_frame(reading, kit == node_keys_.end() ? fleet_key_ : kit->second);
  std::uint8_t ack;
  try {
    ack = it->second.send(frame);
  } catch (...) {
    links_.erase(it);
    throw;
  }
  switch (ack) {
    case 0x00:
      ++stats_.accepted;
      if (on_accept_) on_accept_(reading);
      return;
    case 0x01: ++stats_.duplicate; break;
    case 0x02: ++stats_.stale; break;
    default: ++stats_.invalid; break;
  }
  if (require_accept_)
    throw std::runtime_error("reading " + reading.node_id.to_string() + "#" + std::to_string(reading.seq) +
                             " not accepted (ack 0x" + wire::to_hex(std::span(&ack, 1)) + ")");
}

void Uplink::close() { links_.clear(); }

}  // namespace wlds::ingest
