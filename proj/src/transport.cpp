#include "elastic_group/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>

#include "elastic_group/errors.hpp"

namespace eg::transport {

namespace {

// Handshake status travels in the src_rank field of a tag-0 frame.
enum HandshakeStatus : std::int32_t {
  kHello = 0,
  kAccept = 1,
  kDuplicate = 2,
  kFenced = 3,
};

using Clock = std::chrono::steady_clock;

std::string errno_text(int err) { return std::strerror(err); }

sockaddr_in resolve(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw ArgumentError("malformed address '" + address + "', expected host:port");
  }
  std::string host = address.substr(0, colon);
  std::string port = address.substr(colon + 1);

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &result);
  if (rc != 0 || result == nullptr) {
    throw ArgumentError("cannot resolve '" + address + "': " + ::gai_strerror(rc));
  }
  sockaddr_in out{};
  std::memcpy(&out, result->ai_addr, sizeof(out));
  ::freeaddrinfo(result);
  return out;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

Bytes handshake_payload(const std::string& id, Epoch epoch) {
  Bytes out;
  put_u32(out, static_cast<std::uint32_t>(id.size()));
  out.insert(out.end(), id.begin(), id.end());
  put_u64(out, epoch);
  return out;
}

std::pair<std::string, Epoch> parse_handshake(const Bytes& payload) {
  if (payload.size() < 12) throw ProtocolError("short handshake payload");
  std::uint32_t len = get_u32(payload.data());
  if (payload.size() != 4 + std::size_t{len} + 8) throw ProtocolError("bad handshake payload length");
  std::string id(payload.begin() + 4, payload.begin() + 4 + len);
  return {id, get_u64(payload.data() + 4 + len)};
}

void raw_write_all(int fd, const Bytes& data) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::send(fd, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ConnectError("handshake write failed: " + errno_text(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void read_exact(int fd, std::uint8_t* out, std::size_t count, Clock::time_point deadline) {
  std::size_t done = 0;
  while (done < count) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) throw TimeoutError("timed out waiting for handshake reply");
    pollfd pfd{fd, POLLIN, 0};
    int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ConnectError("poll failed: " + errno_text(errno));
    }
    if (rc == 0) continue;
    ssize_t n = ::recv(fd, out + done, count - done, 0);
    if (n == 0) throw ConnectError("peer closed during handshake");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ConnectError("handshake read failed: " + errno_text(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

Envelope read_frame(int fd, Clock::time_point deadline) {
  Bytes frame(kLengthPrefixSize);
  read_exact(fd, frame.data(), kLengthPrefixSize, deadline);
  std::uint32_t body = get_u32(frame.data());
  if (body < kHeaderSize || body > 1u << 20) throw ProtocolError("bad handshake frame length");
  frame.resize(kLengthPrefixSize + body);
  read_exact(fd, frame.data() + kLengthPrefixSize, body, deadline);
  return deserialize(frame);
}

}  // namespace

// ---------------------------------------------------------------------------
// Framing

Bytes serialize(const Envelope& envelope) {
  std::size_t body = kHeaderSize + envelope.payload.size();
  if (body > kMaxFrameBody) throw ArgumentError("payload too large for one frame");
  Bytes out;
  out.reserve(kLengthPrefixSize + body);
  put_u32(out, static_cast<std::uint32_t>(body));
  put_u64(out, envelope.epoch);
  put_u32(out, envelope.tag);
  put_u32(out, static_cast<std::uint32_t>(envelope.src_rank));
  put_u32(out, static_cast<std::uint32_t>(envelope.dst_rank));
  out.insert(out.end(), envelope.payload.begin(), envelope.payload.end());
  return out;
}

Envelope deserialize(ByteView frame) {
  if (frame.size() < kLengthPrefixSize + kHeaderSize) throw ProtocolError("frame shorter than header");
  std::uint32_t body = get_u32(frame.data());
  if (body < kHeaderSize || body > kMaxFrameBody || frame.size() != kLengthPrefixSize + body) {
    throw ProtocolError("frame length prefix does not match frame size");
  }
  const std::uint8_t* p = frame.data() + kLengthPrefixSize;
  Envelope e;
  e.epoch = get_u64(p);
  e.tag = get_u32(p + 8);
  e.src_rank = static_cast<std::int32_t>(get_u32(p + 12));
  e.dst_rank = static_cast<std::int32_t>(get_u32(p + 16));
  e.payload.assign(p + kHeaderSize, frame.data() + frame.size());
  return e;
}

void FrameDecoder::feed(ByteView data) {
  if (pos_ > 0 && pos_ == buffer_.size()) {
    buffer_.clear();
    pos_ = 0;
  } else if (pos_ > (std::size_t{1} << 20) && pos_ * 2 > buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buffer_.insert(buffer_.end(), data.begin(), data.end());
}

std::optional<Envelope> FrameDecoder::next() {
  if (buffered() < kLengthPrefixSize) return std::nullopt;
  std::uint32_t body = get_u32(buffer_.data() + pos_);
  if (body < kHeaderSize || body > kMaxFrameBody) throw ProtocolError("invalid frame length in stream");
  if (buffered() < kLengthPrefixSize + body) return std::nullopt;
  Envelope e = deserialize(ByteView(buffer_.data() + pos_, kLengthPrefixSize + body));
  pos_ += kLengthPrefixSize + body;
  return e;
}

bool Match::matches(const Envelope& envelope, std::string_view from_peer) const {
  if (epoch && envelope.epoch != *epoch) return false;
  if (tag && envelope.tag != *tag) return false;
  if (src_rank && envelope.src_rank != *src_rank) return false;
  if (peer && from_peer != *peer) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Channel

Channel::Channel(int fd, std::string peer_id, bool initiated)
    : fd_(fd), peer_id_(std::move(peer_id)), initiated_(initiated) {}

Channel::~Channel() {
  if (fd_ >= 0) ::close(fd_);
}

void Channel::write_all(const Bytes& frame) {
  std::lock_guard lock(write_mutex_);
  if (!open_) throw DeliveryError(peer_id_, "channel closed");
  std::size_t done = 0;
  while (done < frame.size()) {
    ssize_t n = ::send(fd_, frame.data() + done, frame.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      open_ = false;
      throw DeliveryError(peer_id_, errno_text(err));
    }
    done += static_cast<std::size_t>(n);
  }
}

void Channel::shutdown() {
  if (open_.exchange(false)) ::shutdown(fd_, SHUT_RDWR);
}

void Channel::raise_peer_floor(Epoch epoch) {
  Epoch cur = peer_floor_.load();
  while (cur < epoch && !peer_floor_.compare_exchange_weak(cur, epoch)) {
  }
}

// ---------------------------------------------------------------------------
// Endpoint

struct Endpoint::Connection {
  int fd;
  FrameDecoder decoder;
  ChannelPtr channel;  // null until the handshake completes
  bool dead = false;
};

std::shared_ptr<Endpoint> Endpoint::listen(const std::string& address, std::string incarnation_id) {
  if (incarnation_id.empty()) throw ArgumentError("endpoint needs an incarnation id");
  sockaddr_in addr = resolve(address);
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw SetupError(address, errno_text(errno));
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd, SOMAXCONN) != 0) {
    int err = errno;
    ::close(fd);
    throw SetupError(address, errno_text(err));
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  char ip[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &bound.sin_addr, ip, sizeof(ip));
  std::uint16_t port = ntohs(bound.sin_port);
  return std::shared_ptr<Endpoint>(
      new Endpoint(fd, std::string(ip) + ":" + std::to_string(port), port, std::move(incarnation_id)));
}

Endpoint::Endpoint(int listen_fd, std::string address, std::uint16_t port, std::string incarnation_id)
    : listen_fd_(listen_fd), address_(std::move(address)), port_(port), incarnation_id_(std::move(incarnation_id)) {
  if (::pipe2(wake_fds_, O_CLOEXEC | O_NONBLOCK) != 0) {
    ::close(listen_fd_);
    throw SetupError(address_, "cannot create wake pipe");
  }
  reader_ = std::thread([this] { reader_loop(); });
}

Endpoint::~Endpoint() { close(); }

void Endpoint::wake() {
  std::uint8_t b = 1;
  [[maybe_unused]] auto n = ::write(wake_fds_[1], &b, 1);
}

void Endpoint::close() {
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    closed_ = true;
  }
  cv_.notify_all();
  wake();
  if (reader_.joinable()) reader_.join();
  std::map<std::string, ChannelPtr, std::less<>> channels;
  {
    std::lock_guard lock(mutex_);
    channels.swap(channels_);
    to_poll_.clear();
  }
  for (auto& [_, ch] : channels) ch->shutdown();
  ::close(listen_fd_);
  ::close(wake_fds_[0]);
  ::close(wake_fds_[1]);
}

bool Endpoint::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

void Endpoint::reader_loop() {
  std::vector<std::unique_ptr<Connection>> conns;
  std::vector<pollfd> fds;
  std::array<std::uint8_t, 64 * 1024> buf{};

  for (;;) {
    {
      std::lock_guard lock(mutex_);
      if (closed_) break;
      for (auto& ch : to_poll_) conns.push_back(std::make_unique<Connection>(Connection{ch->fd_, {}, ch}));
      to_poll_.clear();
    }

    fds.clear();
    fds.push_back({wake_fds_[0], POLLIN, 0});
    fds.push_back({listen_fd_, POLLIN, 0});
    for (auto& c : conns) fds.push_back({c->fd, POLLIN, 0});

    int rc = ::poll(fds.data(), fds.size(), -1);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }

    if (fds[0].revents & POLLIN) {
      while (::read(wake_fds_[0], buf.data(), buf.size()) > 0) {
      }
    }
    if (fds[1].revents & POLLIN) {
      int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd >= 0) {
        set_nodelay(fd);
        conns.push_back(std::make_unique<Connection>(Connection{fd, {}, nullptr}));
      }
    }

    for (std::size_t i = 2; i < fds.size(); ++i) {
      if (fds[i].revents == 0) continue;
      Connection& conn = *conns[i - 2];
      ssize_t n = ::recv(conn.fd, buf.data(), buf.size(), 0);
      if (n < 0 && (errno == EINTR || errno == EAGAIN)) continue;
      if (n <= 0) {
        conn.dead = true;
        continue;
      }
      try {
        conn.decoder.feed(ByteView(buf.data(), static_cast<std::size_t>(n)));
        while (!conn.dead) {
          auto env = conn.decoder.next();
          if (!env) break;
          if (!conn.channel) {
            handle_handshake(conn, *env);
          } else {
            handle_frame(conn, std::move(*env));
          }
        }
      } catch (const Error&) {
        conn.dead = true;
      }
    }

    bool changed = false;
    for (auto& c : conns) {
      if (!c->dead) continue;
      changed = true;
      if (c->channel) {
        c->channel->shutdown();
      } else {
        ::close(c->fd);
      }
    }
    if (changed) {
      std::erase_if(conns, [](const auto& c) { return c->dead; });
      cv_.notify_all();
    }
  }

  for (auto& c : conns) {
    if (c->channel) {
      c->channel->shutdown();
    } else {
      ::close(c->fd);
    }
  }
}

void Endpoint::register_channel_locked(const ChannelPtr& channel) {
  auto it = channels_.find(channel->peer_id());
  if (it != channels_.end() && it->second != channel) it->second->shutdown();
  channels_[channel->peer_id()] = channel;
}

void Endpoint::handle_handshake(Connection& conn, const Envelope& hello) {
  if (hello.tag != kHandshakeTag || hello.src_rank != kHello) {
    conn.dead = true;
    return;
  }
  auto [peer, peer_epoch] = parse_handshake(hello.payload);

  std::unique_lock lock(mutex_);
  HandshakeStatus status = kAccept;
  auto fence = fenced_peers_.find(peer);
  if (fence != fenced_peers_.end() || peer_epoch < floor_) {
    status = kFenced;
  } else if (incarnation_id_ < peer) {
    auto existing = channels_.find(peer);
    bool own_live = existing != channels_.end() && existing->second->is_open() && existing->second->initiated();
    if (pending_out_.contains(peer) || own_live) status = kDuplicate;
  }

  Envelope reply;
  reply.epoch = floor_;
  reply.tag = kHandshakeTag;
  reply.src_rank = status;
  reply.payload = handshake_payload(incarnation_id_, floor_);
  Bytes frame = serialize(reply);

  if (status != kAccept) {
    lock.unlock();
    try {
      raw_write_all(conn.fd, frame);
    } catch (const Error&) {
    }
    conn.dead = true;
    return;
  }

  // The reply goes out before the channel becomes visible so no application
  // frame can overtake it.
  auto channel = std::make_shared<Channel>(conn.fd, peer, false);
  try {
    channel->write_all(frame);
  } catch (const Error&) {
    channel->fd_ = -1;  // the connection owns the descriptor until registration
    conn.dead = true;
    return;
  }
  conn.channel = channel;
  register_channel_locked(channel);
  lock.unlock();
  cv_.notify_all();
}

void Endpoint::handle_frame(Connection& conn, Envelope envelope) {
  const ChannelPtr& channel = conn.channel;
  const std::string& peer = channel->peer_id();

  if (envelope.tag == kRejectTag) {
    if (envelope.payload.size() != 20) return;
    Rejection r;
    r.peer = peer;
    r.peer_epoch = get_u64(envelope.payload.data());
    r.stale_epoch = get_u64(envelope.payload.data() + 8);
    r.tag = get_u32(envelope.payload.data() + 16);
    channel->raise_peer_floor(r.peer_epoch);
    {
      std::lock_guard lock(mutex_);
      rejections_.push_back(std::move(r));
    }
    cv_.notify_all();
    return;
  }
  if (envelope.tag == kHandshakeTag) return;

  bool reject = false;
  Epoch floor = 0;
  {
    std::lock_guard lock(mutex_);
    if (!is_unfenced(envelope.tag)) {
      auto fence = fenced_peers_.find(peer);
      if (fence != fenced_peers_.end()) {
        reject = true;
        floor = std::max(floor_, fence->second);
      } else if (envelope.epoch < floor_) {
        reject = true;
        floor = floor_;
      }
    }
    if (reject) {
      ++stale_rejected_;
    } else {
      mailbox_.push_back(Delivery{std::move(envelope), peer});
    }
  }
  if (reject) {
    send_reject(channel, envelope, floor);
  } else {
    cv_.notify_all();
  }
}

void Endpoint::send_reject(const ChannelPtr& channel, const Envelope& stale, Epoch floor) {
  if (!channel) return;
  Envelope notice;
  notice.epoch = floor;
  notice.tag = kRejectTag;
  notice.src_rank = stale.dst_rank;
  notice.dst_rank = stale.src_rank;
  put_u64(notice.payload, floor);
  put_u64(notice.payload, stale.epoch);
  put_u32(notice.payload, stale.tag);
  try {
    channel->write_all(serialize(notice));
  } catch (const Error&) {
  }
}

ChannelPtr Endpoint::connect(const std::string& address, std::string_view expected_peer, Duration timeout) {
  std::string expected(expected_peer);
  Epoch my_epoch = 0;
  {
    std::lock_guard lock(mutex_);
    if (closed_) throw ShutdownError("endpoint closed");
    if (!expected.empty()) {
      auto fence = fenced_peers_.find(expected);
      if (fence != fenced_peers_.end()) throw FencingError(floor_, fence->second, "peer " + expected + " fenced");
      auto it = channels_.find(expected);
      if (it != channels_.end() && it->second->is_open()) return it->second;
      pending_out_.insert(expected);
    }
    my_epoch = floor_;
  }
  struct PendingGuard {
    Endpoint* self;
    std::string peer;
    ~PendingGuard() {
      if (peer.empty()) return;
      std::lock_guard lock(self->mutex_);
      self->pending_out_.erase(peer);
    }
  } guard{this, expected};

  sockaddr_in addr = resolve(address);
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw ConnectError("socket: " + errno_text(errno));
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    int err = errno;
    ::close(fd);
    throw ConnectError("cannot connect to " + address + ": " + errno_text(err));
  }
  set_nodelay(fd);

  Envelope hello;
  hello.epoch = my_epoch;
  hello.tag = kHandshakeTag;
  hello.src_rank = kHello;
  hello.payload = handshake_payload(incarnation_id_, my_epoch);

  Envelope reply;
  try {
    raw_write_all(fd, serialize(hello));
    reply = read_frame(fd, Clock::now() + timeout);
  } catch (...) {
    ::close(fd);
    throw;
  }
  if (reply.tag != kHandshakeTag) {
    ::close(fd);
    throw ProtocolError("expected handshake reply from " + address);
  }
  auto [peer, peer_epoch] = parse_handshake(reply.payload);
  if (!expected.empty() && peer != expected) {
    ::close(fd);
    throw ProtocolError("connected to " + peer + " but expected " + expected);
  }

  switch (reply.src_rank) {
    case kAccept: {
      auto channel = std::make_shared<Channel>(fd, peer, true);
      {
        std::lock_guard lock(mutex_);
        register_channel_locked(channel);
        to_poll_.push_back(channel);
      }
      wake();
      cv_.notify_all();
      return channel;
    }
    case kDuplicate:
      ::close(fd);
      return await_channel(peer, timeout);
    case kFenced:
      ::close(fd);
      throw FencingError(my_epoch, peer_epoch, "handshake refused by " + peer);
    default:
      ::close(fd);
      throw ProtocolError("unknown handshake status from " + address);
  }
}

ChannelPtr Endpoint::channel(std::string_view peer_id) const {
  std::lock_guard lock(mutex_);
  auto it = channels_.find(peer_id);
  if (it == channels_.end() || !it->second->is_open()) return nullptr;
  return it->second;
}

ChannelPtr Endpoint::await_channel(std::string_view peer_id, Duration timeout) {
  std::unique_lock lock(mutex_);
  auto deadline = Clock::now() + timeout;
  for (;;) {
    auto it = channels_.find(peer_id);
    if (it != channels_.end() && it->second->is_open()) return it->second;
    if (closed_) throw ShutdownError("endpoint closed");
    if (cv_.wait_until(lock, deadline) == std::cv_status::timeout) {
      it = channels_.find(peer_id);
      if (it != channels_.end() && it->second->is_open()) return it->second;
      throw TimeoutError("no channel from " + std::string(peer_id));
    }
  }
}

std::size_t Endpoint::open_channel_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(channels_.begin(), channels_.end(), [](const auto& kv) { return kv.second->is_open(); }));
}

void Endpoint::send(const ChannelPtr& channel, const Envelope& envelope) {
  if (!channel) throw ArgumentError("send on a null channel");
  if (!is_unfenced(envelope.tag)) {
    if (channel->fenced()) {
      throw FencingError(envelope.epoch, channel->fenced_at_.load(), "peer " + channel->peer_id() + " was removed");
    }
    if (envelope.epoch < channel->peer_floor()) {
      throw FencingError(envelope.epoch, channel->peer_floor(), "rejected by " + channel->peer_id());
    }
  }
  channel->write_all(serialize(envelope));
}

Envelope Endpoint::recv(const Match& match, Duration timeout) {
  return recv_delivery(match, timeout).envelope;
}

Delivery Endpoint::recv_delivery(const Match& match, Duration timeout) {
  auto got = try_recv(match, timeout);
  if (!got) throw TimeoutError("timed out waiting for an envelope");
  return std::move(*got);
}

std::optional<Delivery> Endpoint::try_recv(const Match& match, Duration timeout) {
  std::unique_lock lock(mutex_);
  auto deadline = Clock::now() + timeout;
  for (;;) {
    for (auto it = mailbox_.begin(); it != mailbox_.end(); ++it) {
      if (match.matches(it->envelope, it->peer)) {
        Delivery d = std::move(*it);
        mailbox_.erase(it);
        return d;
      }
    }
    if (closed_) throw ShutdownError("endpoint closed while receiving");
    if (cv_.wait_until(lock, deadline) == std::cv_status::timeout && Clock::now() >= deadline) {
      for (auto it = mailbox_.begin(); it != mailbox_.end(); ++it) {
        if (match.matches(it->envelope, it->peer)) {
          Delivery d = std::move(*it);
          mailbox_.erase(it);
          return d;
        }
      }
      return std::nullopt;
    }
  }
}

void Endpoint::advance_epoch(Epoch epoch) {
  std::vector<Delivery> stale;
  Epoch floor = 0;
  {
    std::lock_guard lock(mutex_);
    if (epoch <= floor_) return;
    floor_ = floor = epoch;
    for (auto it = mailbox_.begin(); it != mailbox_.end();) {
      if (!is_unfenced(it->envelope.tag) && it->envelope.epoch < floor_) {
        stale.push_back(std::move(*it));
        it = mailbox_.erase(it);
      } else {
        ++it;
      }
    }
    stale_rejected_ += stale.size();
  }
  for (auto& d : stale) send_reject(channel(d.peer), d.envelope, floor);
}

Epoch Endpoint::epoch() const {
  std::lock_guard lock(mutex_);
  return floor_;
}

void Endpoint::fence_peer(const std::string& peer_id, Epoch at_epoch) {
  std::vector<Delivery> stale;
  ChannelPtr ch;
  Epoch floor = 0;
  {
    std::lock_guard lock(mutex_);
    Epoch& slot = fenced_peers_[peer_id];
    slot = std::max(slot, at_epoch);
    floor = std::max(floor_, slot);
    auto it = channels_.find(peer_id);
    if (it != channels_.end()) {
      ch = it->second;
      ch->fenced_at_ = slot;
      ch->fenced_ = true;
    }
    for (auto m = mailbox_.begin(); m != mailbox_.end();) {
      if (m->peer == peer_id && !is_unfenced(m->envelope.tag)) {
        stale.push_back(std::move(*m));
        m = mailbox_.erase(m);
      } else {
        ++m;
      }
    }
    stale_rejected_ += stale.size();
  }
  for (auto& d : stale) send_reject(ch, d.envelope, floor);
}

bool Endpoint::is_fenced(std::string_view peer_id) const {
  std::lock_guard lock(mutex_);
  return fenced_peers_.find(peer_id) != fenced_peers_.end();
}

std::optional<Rejection> Endpoint::next_rejection(Duration timeout) {
  std::unique_lock lock(mutex_);
  if (!cv_.wait_for(lock, timeout, [&] { return !rejections_.empty() || closed_; })) return std::nullopt;
  if (rejections_.empty()) return std::nullopt;
  Rejection r = std::move(rejections_.front());
  rejections_.pop_front();
  return r;
}

std::size_t Endpoint::stale_rejected() const {
  std::lock_guard lock(mutex_);
  return stale_rejected_;
}

}  // namespace eg::transport
