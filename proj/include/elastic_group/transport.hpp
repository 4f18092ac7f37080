#pragma once

// Framed, epoch-tagged point-to-point messaging over TCP stream sockets.
//
// Wire format of one frame:
//   u32 BE  body length (header + payload)
//   u64 BE  epoch
//   u32 BE  tag
//   i32 BE  source rank
//   i32 BE  destination rank
//   ...     payload

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "elastic_group/bytes.hpp"

namespace eg::transport {

using Epoch = std::uint64_t;
using Tag = std::uint32_t;
using Duration = std::chrono::milliseconds;

inline constexpr Tag kHandshakeTag = 0;
inline constexpr Tag kControlTagFirst = 1;
inline constexpr Tag kControlTagLast = 15;
inline constexpr Tag kRejectTag = 16;
inline constexpr Tag kSpawnerTagFirst = 17;
inline constexpr Tag kCollectiveTagFirst = 32;
inline constexpr Tag kUserTagFirst = 64;

/// Handshake, control-plane and reject traffic is never subject to epoch fencing.
constexpr bool is_unfenced(Tag tag) { return tag <= kRejectTag; }

inline constexpr std::size_t kLengthPrefixSize = 4;
inline constexpr std::size_t kHeaderSize = 20;
inline constexpr std::size_t kMaxFrameBody = std::size_t{1} << 30;

struct Envelope {
  Epoch epoch = 0;
  Tag tag = 0;
  std::int32_t src_rank = 0;
  std::int32_t dst_rank = 0;
  Bytes payload;

  bool operator==(const Envelope&) const = default;
};

/// Encodes a complete frame, length prefix included.
Bytes serialize(const Envelope& envelope);

/// Decodes exactly one complete frame; throws ProtocolError on malformed input.
Envelope deserialize(ByteView frame);

/// Incremental frame parser for a byte stream.
class FrameDecoder {
 public:
  void feed(ByteView data);
  std::optional<Envelope> next();
  std::size_t buffered() const { return buffer_.size() - pos_; }

 private:
  Bytes buffer_;
  std::size_t pos_ = 0;
};

/// Selective-receive predicate. Unset fields match anything.
struct Match {
  std::optional<Epoch> epoch;
  std::optional<Tag> tag;
  std::optional<std::int32_t> src_rank;
  std::optional<std::string> peer;

  bool matches(const Envelope& envelope, std::string_view from_peer) const;
};

struct Delivery {
  Envelope envelope;
  std::string peer;
};

/// A reject notice received from a peer that refused one of our envelopes.
struct Rejection {
  std::string peer;
  Epoch stale_epoch = 0;
  Epoch peer_epoch = 0;
  Tag tag = 0;
};

class Endpoint;

/// One live stream connection to a peer incarnation.
class Channel {
 public:
  Channel(int fd, std::string peer_id, bool initiated);
  ~Channel();
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;

  const std::string& peer_id() const { return peer_id_; }
  /// True when this side performed the connect.
  bool initiated() const { return initiated_; }
  bool is_open() const { return open_.load(); }
  /// Lowest epoch the peer still accepts, learned from reject notices.
  Epoch peer_floor() const { return peer_floor_.load(); }
  bool fenced() const { return fenced_.load(); }

 private:
  friend class Endpoint;

  void write_all(const Bytes& frame);
  void shutdown();
  void raise_peer_floor(Epoch epoch);

  int fd_;
  std::string peer_id_;
  bool initiated_;
  std::mutex write_mutex_;
  std::atomic<bool> open_{true};
  std::atomic<Epoch> peer_floor_{0};
  std::atomic<bool> fenced_{false};
  std::atomic<Epoch> fenced_at_{0};
};

using ChannelPtr = std::shared_ptr<Channel>;

/// A listening socket plus every channel of one process incarnation. A
/// background thread accepts connections, runs handshakes, and buffers inbound
/// envelopes; envelopes older than the fence floor are answered with a reject
/// notice and never reach recv().
class Endpoint {
 public:
  static constexpr Duration kDefaultTimeout{30000};

  /// Binds and starts accepting. Throws SetupError when the bind fails.
  static std::shared_ptr<Endpoint> listen(const std::string& address, std::string incarnation_id);

  ~Endpoint();
  Endpoint(const Endpoint&) = delete;
  Endpoint& operator=(const Endpoint&) = delete;

  /// Bound address with the resolved port, e.g. "127.0.0.1:41233".
  const std::string& address() const { return address_; }
  std::uint16_t port() const { return port_; }
  const std::string& incarnation_id() const { return incarnation_id_; }

  /// Opens (or reuses) a channel. With expected_peer set, concurrent connects
  /// between the same pair collapse onto the channel initiated by the smaller
  /// incarnation id.
  ChannelPtr connect(const std::string& address, std::string_view expected_peer = {},
                     Duration timeout = kDefaultTimeout);

  /// Open channel to peer, or nullptr.
  ChannelPtr channel(std::string_view peer_id) const;
  ChannelPtr await_channel(std::string_view peer_id, Duration timeout = kDefaultTimeout);
  std::size_t open_channel_count() const;

  void send(const ChannelPtr& channel, const Envelope& envelope);

  /// Blocks until a buffered envelope satisfies the predicate. Non-matching
  /// envelopes stay buffered. Throws TimeoutError or ShutdownError.
  Envelope recv(const Match& match, Duration timeout = kDefaultTimeout);
  Delivery recv_delivery(const Match& match, Duration timeout = kDefaultTimeout);
  std::optional<Delivery> try_recv(const Match& match, Duration timeout);

  /// Raises the fence floor. Buffered envelopes below it are rejected.
  void advance_epoch(Epoch epoch);
  Epoch epoch() const;

  /// Refuses all further traffic with a peer incarnation, in both directions.
  void fence_peer(const std::string& peer_id, Epoch at_epoch);
  bool is_fenced(std::string_view peer_id) const;

  std::optional<Rejection> next_rejection(Duration timeout);
  /// Number of inbound envelopes refused for being stale or from a fenced peer.
  std::size_t stale_rejected() const;

  void close();
  bool closed() const;

 private:
  struct Connection;

  Endpoint(int listen_fd, std::string address, std::uint16_t port, std::string incarnation_id);

  void reader_loop();
  void handle_handshake(Connection& conn, const Envelope& hello);
  void handle_frame(Connection& conn, Envelope envelope);
  void send_reject(const ChannelPtr& channel, const Envelope& stale, Epoch floor);
  void register_channel_locked(const ChannelPtr& channel);
  void wake();

  int listen_fd_;
  int wake_fds_[2] = {-1, -1};
  std::string address_;
  std::uint16_t port_;
  std::string incarnation_id_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::string, ChannelPtr, std::less<>> channels_;
  std::set<std::string, std::less<>> pending_out_;
  std::map<std::string, Epoch, std::less<>> fenced_peers_;
  std::deque<Delivery> mailbox_;
  std::deque<Rejection> rejections_;
  std::vector<ChannelPtr> to_poll_;
  Epoch floor_ = 0;
  std::size_t stale_rejected_ = 0;
  bool closed_ = false;

  std::thread reader_;
};

}  // namespace eg::transport
