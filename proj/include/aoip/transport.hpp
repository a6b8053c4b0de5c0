#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "aoip/audio.hpp"
#include "aoip/clock.hpp"
#include "aoip/errors.hpp"
#include "aoip/netem.hpp"
#include "aoip/rng.hpp"
#include "aoip/util.hpp"

namespace aoip::transport {

constexpr int kDefaultSignalingPort = 5061;
constexpr int kMediaPortMin = 3000;
constexpr int kMediaPortMax = 9000;
constexpr double kEstablishPollMs = 5.0;

struct EndpointAddress {
  std::string host = "127.0.0.1";
  int signaling_port = kDefaultSignalingPort;
  int media_port = kMediaPortMin;

  friend bool operator==(const EndpointAddress&, const EndpointAddress&) = default;

  void check() const {
    if (media_port < kMediaPortMin || media_port > kMediaPortMax) {
      fail(Err::MalformedValue, strprintf("media port %d outside [%d, %d]",
                                          media_port, kMediaPortMin, kMediaPortMax));
    }
  }
};

// ---------------------------------------------------------------------------
// Signaling messages and wire format

enum class SignalKind : std::uint8_t { Invite = 1, Answer200 = 2, Bye = 3 };

struct CallSignal {
  SignalKind kind = SignalKind::Invite;
  std::string call_id;
  EndpointAddress from_addr;
  EndpointAddress to_addr;

  friend bool operator==(const CallSignal&, const CallSignal&) = default;
};

namespace detail {

inline void put_addr(std::vector<std::uint8_t>& out, const EndpointAddress& a) {
  audio::detail::put_u16le(out, static_cast<std::uint16_t>(a.host.size()));
  out.insert(out.end(), a.host.begin(), a.host.end());
  audio::detail::put_u16le(out, static_cast<std::uint16_t>(a.signaling_port));
  audio::detail::put_u16le(out, static_cast<std::uint16_t>(a.media_port));
}

inline EndpointAddress get_addr(std::span<const std::uint8_t> bytes, size_t& pos) {
  if (pos + 2 > bytes.size()) fail(Err::MalformedValue, "short signal address");
  std::uint16_t len = audio::detail::read_u16le(bytes.data() + pos);
  pos += 2;
  if (pos + len + 4 > bytes.size()) fail(Err::MalformedValue, "short signal address");
  EndpointAddress a;
  a.host.assign(bytes.begin() + pos, bytes.begin() + pos + len);
  pos += len;
  a.signaling_port = audio::detail::read_u16le(bytes.data() + pos);
  a.media_port = audio::detail::read_u16le(bytes.data() + pos + 2);
  pos += 4;
  return a;
}

}  // namespace detail

// u16 body length | u8 kind | 16-byte call id (NUL padded) | from | to,
// addresses as u16 host length + host + two u16 ports.  Little-endian.
inline std::vector<std::uint8_t> encode_signal(const CallSignal& s) {
  std::vector<std::uint8_t> body;
  body.push_back(static_cast<std::uint8_t>(s.kind));
  for (size_t i = 0; i < 16; ++i) {
    body.push_back(i < s.call_id.size() ? static_cast<std::uint8_t>(s.call_id[i]) : 0);
  }
  detail::put_addr(body, s.from_addr);
  detail::put_addr(body, s.to_addr);
  std::vector<std::uint8_t> out;
  audio::detail::put_u16le(out, static_cast<std::uint16_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

inline CallSignal decode_signal(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) fail(Err::MalformedValue, "short signal");
  std::uint16_t len = audio::detail::read_u16le(bytes.data());
  if (2 + static_cast<size_t>(len) > bytes.size() || len < 17) {
    fail(Err::MalformedValue, "truncated signal");
  }
  auto body = bytes.subspan(2, len);
  CallSignal s;
  std::uint8_t kind = body[0];
  if (kind < 1 || kind > 3) fail(Err::MalformedValue, "bad signal kind");
  s.kind = static_cast<SignalKind>(kind);
  size_t id_end = 17;
  while (id_end > 1 && body[id_end - 1] == 0) --id_end;
  s.call_id.assign(body.begin() + 1, body.begin() + id_end);
  size_t pos = 17;
  s.from_addr = detail::get_addr(body, pos);
  s.to_addr = detail::get_addr(body, pos);
  return s;
}

// ---------------------------------------------------------------------------
// Call state machine

enum class CallPhase { Idle, Inviting, Established, Terminated };

inline const char* to_string(CallPhase p) {
  switch (p) {
    case CallPhase::Idle: return "Idle";
    case CallPhase::Inviting: return "Inviting";
    case CallPhase::Established: return "Established";
    case CallPhase::Terminated: return "Terminated";
  }
  return "?";
}

// Caller walks Idle -> Inviting -> Established -> Terminated; an auto-answer
// callee jumps Idle -> Established; hangup is legal from Inviting too.
inline bool transition_allowed(CallPhase from, CallPhase to) {
  switch (from) {
    case CallPhase::Idle:
      return to == CallPhase::Inviting || to == CallPhase::Established;
    case CallPhase::Inviting:
      return to == CallPhase::Established || to == CallPhase::Terminated;
    case CallPhase::Established:
      return to == CallPhase::Terminated;
    case CallPhase::Terminated:
      return false;
  }
  return false;
}

struct CallState {
  CallPhase phase = CallPhase::Idle;
  std::string call_id;
  int local_media_port = 0;
  int remote_media_port = 0;
};

inline void advance_phase(CallState& call, CallPhase to) {
  if (!transition_allowed(call.phase, to)) {
    fail(Err::MalformedValue, strprintf("illegal call transition %s -> %s",
                                        to_string(call.phase), to_string(to)));
  }
  call.phase = to;
}

// ---------------------------------------------------------------------------
// Address resolution

// Identity resolver for single-host runs: every name maps to loopback with a
// stable (signaling, media) port pair.  This is the seam where a STUN client
// would plug in.  Ports are assigned sequentially and recycled on release;
// both endpoints of the paper setup use signaling port 5061 on separate
// hosts, so on one host we offset per endpoint.
class LocalResolver {
 public:
  EndpointAddress resolve(const std::string& name) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = table_.find(name);
    if (it != table_.end()) return it->second;
    int index;
    if (!free_indices_.empty()) {
      index = *free_indices_.begin();
      free_indices_.erase(free_indices_.begin());
    } else {
      index = next_index_++;
    }
    if (kMediaPortMin + index > kMediaPortMax) {
      fail(Err::ResolutionFailure, "media port range exhausted");
    }
    EndpointAddress addr;
    addr.host = "127.0.0.1";
    addr.signaling_port = kDefaultSignalingPort + index;
    addr.media_port = kMediaPortMin + index;
    table_[name] = addr;
    index_of_[name] = index;
    return addr;
  }

  void release(const std::string& name) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = index_of_.find(name);
    if (it == index_of_.end()) return;
    free_indices_.insert(it->second);
    table_.erase(name);
    index_of_.erase(it);
  }

 private:
  std::mutex mu_;
  std::map<std::string, EndpointAddress> table_;
  std::map<std::string, int> index_of_;
  std::set<int> free_indices_;
  int next_index_ = 0;
};

inline EndpointAddress resolve_address(LocalResolver& resolver, const std::string& name) {
  return resolver.resolve(name);
}

// ---------------------------------------------------------------------------
// In-memory signaling exchange (deterministic backend)

class SignalingEndpoint {
 public:
  virtual ~SignalingEndpoint() = default;
  // Handles one inbound signal; the optional result is sent back inline
  // (auto-answer path).
  virtual std::optional<CallSignal> on_signal(const CallSignal& signal) = 0;
};

class LocalExchange {
 public:
  void bind(const EndpointAddress& addr, SignalingEndpoint* endpoint) {
    std::lock_guard<std::mutex> lock(mu_);
    endpoints_[key(addr)] = endpoint;
  }

  void unbind(const EndpointAddress& addr) {
    std::lock_guard<std::mutex> lock(mu_);
    endpoints_.erase(key(addr));
  }

  bool is_bound(const EndpointAddress& addr) {
    std::lock_guard<std::mutex> lock(mu_);
    return endpoints_.count(key(addr)) > 0;
  }

  // Loses the next signal (fire-and-forget semantics made testable).
  void drop_next_signal() { drop_next_ = true; }

  std::optional<CallSignal> send(const CallSignal& signal) {
    SignalingEndpoint* target = nullptr;
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (drop_next_.exchange(false)) return std::nullopt;
      auto it = endpoints_.find(key(signal.to_addr));
      if (it != endpoints_.end()) target = it->second;
    }
    if (target == nullptr) return std::nullopt;
    // Wire round trip so both backends exercise the same codec.
    CallSignal delivered = decode_signal(encode_signal(signal));
    return target->on_signal(delivered);
  }

 private:
  static std::string key(const EndpointAddress& addr) {
    return addr.host + ":" + std::to_string(addr.signaling_port);
  }

  std::mutex mu_;
  std::map<std::string, SignalingEndpoint*> endpoints_;
  std::atomic<bool> drop_next_{false};
};

// ---------------------------------------------------------------------------
// Endpoints over the in-memory exchange

// Callee: answers any Invite immediately with a 200 (the only policy
// implemented), tracks call states, terminates on Bye.
class ReceiverEndpoint : public SignalingEndpoint {
 public:
  ReceiverEndpoint(LocalExchange& exchange, EndpointAddress addr, bool auto_answer = true)
      : exchange_(exchange), addr_(std::move(addr)), auto_answer_(auto_answer) {
    addr_.check();
    exchange_.bind(addr_, this);
  }

  ~ReceiverEndpoint() override { exchange_.unbind(addr_); }

  ReceiverEndpoint(const ReceiverEndpoint&) = delete;
  ReceiverEndpoint& operator=(const ReceiverEndpoint&) = delete;

  const EndpointAddress& address() const { return addr_; }

  std::optional<CallSignal> on_signal(const CallSignal& signal) override {
    std::lock_guard<std::mutex> lock(mu_);
    if (signal.kind == SignalKind::Invite) {
      if (!auto_answer_) return std::nullopt;
      auto it = calls_.find(signal.call_id);
      if (it == calls_.end()) {
        CallState call;
        call.call_id = signal.call_id;
        call.local_media_port = addr_.media_port;
        call.remote_media_port = signal.from_addr.media_port;
        advance_phase(call, CallPhase::Established);  // auto-answer edge
        calls_[signal.call_id] = call;
      }
      CallSignal answer;
      answer.kind = SignalKind::Answer200;
      answer.call_id = signal.call_id;
      answer.from_addr = addr_;
      answer.to_addr = signal.from_addr;
      return answer;
    }
    if (signal.kind == SignalKind::Bye) {
      auto it = calls_.find(signal.call_id);
      if (it != calls_.end() && it->second.phase == CallPhase::Established) {
        advance_phase(it->second, CallPhase::Terminated);
      }
    }
    return std::nullopt;
  }

  std::optional<CallState> call(const std::string& call_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = calls_.find(call_id);
    if (it == calls_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<CallState> calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<CallState> out;
    for (const auto& [id, call] : calls_) out.push_back(call);
    return out;
  }

 private:
  LocalExchange& exchange_;
  EndpointAddress addr_;
  bool auto_answer_;
  mutable std::mutex mu_;
  std::map<std::string, CallState> calls_;
};

class CallerEndpoint : public SignalingEndpoint {
 public:
  CallerEndpoint(LocalExchange& exchange, EndpointAddress addr, std::uint64_t seed)
      : exchange_(exchange), addr_(std::move(addr)), rng_(seed) {
    addr_.check();
    exchange_.bind(addr_, this);
  }

  ~CallerEndpoint() override { exchange_.unbind(addr_); }

  CallerEndpoint(const CallerEndpoint&) = delete;
  CallerEndpoint& operator=(const CallerEndpoint&) = delete;

  const EndpointAddress& address() const { return addr_; }

  std::optional<CallSignal> on_signal(const CallSignal&) override {
    return std::nullopt;  // caller side expects no inbound requests
  }

  // Invite/Answer200 handshake.  The invite is re-sent each poll tick until
  // the answer arrives or timeout_ms of clock time passes.
  CallState establish_call(const EndpointAddress& callee, double timeout_ms, Clock& clock) {
    CallState call;
    call.call_id = next_call_id();
    call.local_media_port = addr_.media_port;
    advance_phase(call, CallPhase::Inviting);

    CallSignal invite;
    invite.kind = SignalKind::Invite;
    invite.call_id = call.call_id;
    invite.from_addr = addr_;
    invite.to_addr = callee;

    double deadline = clock.now_ms() + timeout_ms;
    for (;;) {
      std::optional<CallSignal> reply = exchange_.send(invite);
      if (reply && reply->kind == SignalKind::Answer200 && reply->call_id == call.call_id) {
        call.remote_media_port = reply->from_addr.media_port;
        advance_phase(call, CallPhase::Established);
        return call;
      }
      if (clock.now_ms() >= deadline) {
        advance_phase(call, CallPhase::Terminated);
        fail(Err::Timeout, strprintf("no answer from %s:%d after %.0f ms",
                                     callee.host.c_str(), callee.signaling_port, timeout_ms));
      }
      clock.sleep_ms(kEstablishPollMs);
    }
  }

  // Fire-and-forget Bye; idempotent.  Authoritative teardown is the
  // orchestrator's duration deadline, so a lost Bye is not an error.
  void hangup(CallState& call, const EndpointAddress& callee) {
    if (call.phase == CallPhase::Terminated || call.phase == CallPhase::Idle) return;
    CallSignal bye;
    bye.kind = SignalKind::Bye;
    bye.call_id = call.call_id;
    bye.from_addr = addr_;
    bye.to_addr = callee;
    exchange_.send(bye);
    advance_phase(call, CallPhase::Terminated);
  }

 private:
  std::string next_call_id() {
    std::lock_guard<std::mutex> lock(mu_);
    return strprintf("%016llx", static_cast<unsigned long long>(rng_.next()));
  }

  LocalExchange& exchange_;
  EndpointAddress addr_;
  std::mutex mu_;
  SplitMix64 rng_;
};

// ---------------------------------------------------------------------------
// Media channels

struct DeliveredPacket {
  audio::MediaPacket packet;
  double arrive_ms = 0;

  friend bool operator==(const DeliveredPacket&, const DeliveredPacket&) = default;
};

// Carries the surviving packets of a netem schedule to the peer.  The two
// backends must deliver identical packet multisets for the same schedule;
// arrival stamps always come from the schedule, which is the authority for
// timing in both modes.
class MediaChannel {
 public:
  virtual ~MediaChannel() = default;
  virtual std::vector<DeliveredPacket> transmit(
      const std::vector<netem::ScheduledDelivery>& schedule) = 0;
};

class InMemoryChannel final : public MediaChannel {
 public:
  std::vector<DeliveredPacket> transmit(
      const std::vector<netem::ScheduledDelivery>& schedule) override {
    std::vector<DeliveredPacket> out;
    out.reserve(schedule.size());
    for (const auto& d : schedule) {
      if (!d.dropped()) out.push_back({d.packet, *d.arrive_ms});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const DeliveredPacket& a, const DeliveredPacket& b) {
                       return a.arrive_ms < b.arrive_ms;
                     });
    return out;
  }
};

namespace detail {

constexpr char kEndSentinel[] = "AOIP_END";

class UdpSocket {
 public:
  UdpSocket() : fd_(::socket(AF_INET, SOCK_DGRAM, 0)) {
    if (fd_ < 0) fail(Err::IoFailure, "socket()");
    int rcvbuf = 4 * 1024 * 1024;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &rcvbuf, sizeof(rcvbuf));
  }

  ~UdpSocket() {
    if (fd_ >= 0) ::close(fd_);
  }

  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  bool bind(const std::string& host, int port) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) return false;
    return ::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0;
  }

  // Binds to the first free port in [port, limit]; returns the bound port.
  int bind_in_range(const std::string& host, int port, int limit) {
    for (int p = port; p <= limit; ++p) {
      if (bind(host, p)) return p;
    }
    fail(Err::ResolutionFailure, strprintf("no free UDP port in [%d, %d]", port, limit));
  }

  void send_to(const std::uint8_t* data, size_t size, const std::string& host, int port) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, host.c_str(), &sa.sin_addr);
    ::sendto(fd_, data, size, 0, reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
  }

  // Blocks up to timeout_ms; empty result on timeout.
  std::optional<std::vector<std::uint8_t>> recv(int timeout_ms) {
    pollfd pfd{fd_, POLLIN, 0};
    int r = ::poll(&pfd, 1, timeout_ms);
    if (r <= 0) return std::nullopt;
    std::vector<std::uint8_t> buf(2048);
    ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0, nullptr, nullptr);
    if (n < 0) return std::nullopt;
    buf.resize(static_cast<size_t>(n));
    return buf;
  }

  int fd() const { return fd_; }

 private:
  int fd_;
};

inline bool is_end_sentinel(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() == sizeof(kEndSentinel) - 1 &&
         std::memcmp(bytes.data(), kEndSentinel, bytes.size()) == 0;
}

}  // namespace detail

// Real loopback datagrams.  The receive socket lives in this object; each
// transmit() spins up a collector thread, blasts the surviving packets in
// arrival order, then reconciles stamps against the schedule.
class UdpLoopbackChannel final : public MediaChannel {
 public:
  explicit UdpLoopbackChannel(int preferred_port = kMediaPortMin) {
    port_ = recv_socket_.bind_in_range("127.0.0.1", preferred_port, kMediaPortMax);
  }

  int port() const { return port_; }

  std::vector<DeliveredPacket> transmit(
      const std::vector<netem::ScheduledDelivery>& schedule) override {
    std::vector<const netem::ScheduledDelivery*> survivors;
    for (const auto& d : schedule) {
      if (!d.dropped()) survivors.push_back(&d);
    }
    std::stable_sort(survivors.begin(), survivors.end(),
                     [](const netem::ScheduledDelivery* a, const netem::ScheduledDelivery* b) {
                       return *a->arrive_ms < *b->arrive_ms;
                     });

    std::vector<std::vector<std::uint8_t>> received;
    std::atomic<bool> done{false};
    std::thread collector([&] {
      int idle_budget_ms = 2000;
      while (idle_budget_ms > 0) {
        auto datagram = recv_socket_.recv(100);
        if (!datagram) {
          if (done.load()) idle_budget_ms -= 100;
          continue;
        }
        if (detail::is_end_sentinel(*datagram)) break;
        received.push_back(std::move(*datagram));
      }
    });

    {
      detail::UdpSocket sender;
      int in_flight = 0;
      for (const auto* d : survivors) {
        auto bytes = audio::encode_packet(d->packet);
        sender.send_to(bytes.data(), bytes.size(), "127.0.0.1", port_);
        if (++in_flight % 64 == 0) {
          std::this_thread::sleep_for(std::chrono::milliseconds(1));
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      done.store(true);
      const auto* sentinel = reinterpret_cast<const std::uint8_t*>(detail::kEndSentinel);
      for (int i = 0; i < 3; ++i) {
        sender.send_to(sentinel, sizeof(detail::kEndSentinel) - 1, "127.0.0.1", port_);
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      }
    }
    collector.join();

    // Stamp arrivals from the schedule: timing authority stays with netem.
    std::map<std::uint32_t, double> arrive_of;
    for (const auto* d : survivors) arrive_of[d->packet.seq] = *d->arrive_ms;
    std::vector<DeliveredPacket> out;
    out.reserve(received.size());
    for (const auto& bytes : received) {
      audio::MediaPacket p = audio::decode_packet(bytes);
      auto it = arrive_of.find(p.seq);
      out.push_back({std::move(p), it != arrive_of.end() ? it->second : 0.0});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const DeliveredPacket& a, const DeliveredPacket& b) {
                       return a.arrive_ms < b.arrive_ms;
                     });
    return out;
  }

 private:
  detail::UdpSocket recv_socket_;
  int port_ = 0;
};

// Media guard + path traversal in one place: packets flow only on an
// established call, through the composed uplink/downlink channel.
inline std::vector<DeliveredPacket> send_media(const CallState& call,
                                               const std::vector<netem::TimedPacket>& stream,
                                               const netem::ImpairmentProfile& uplink,
                                               const netem::ImpairmentProfile& downlink,
                                               MediaChannel& channel) {
  if (call.phase != CallPhase::Established) {
    fail(Err::CallNotEstablished, to_string(call.phase));
  }
  return channel.transmit(netem::effective_path(stream, uplink, downlink));
}

// ---------------------------------------------------------------------------
// UDP signaling endpoints (integration mode)

// Callee service: answers Invites and collects media datagrams on real
// loopback sockets until stopped or Bye.
class UdpReceiverAgent {
 public:
  explicit UdpReceiverAgent(const EndpointAddress& preferred, bool auto_answer = true)
      : auto_answer_(auto_answer) {
    addr_ = preferred;
    addr_.signaling_port =
        signal_socket_.bind_in_range(preferred.host, preferred.signaling_port, 65000);
    addr_.media_port =
        media_socket_.bind_in_range(preferred.host, preferred.media_port, kMediaPortMax);
  }

  ~UdpReceiverAgent() { stop(); }

  const EndpointAddress& address() const { return addr_; }

  void start() {
    running_ = true;
    thread_ = std::thread([this] { serve(); });
  }

  void stop() {
    running_ = false;
    if (thread_.joinable()) thread_.join();
  }

  std::vector<audio::MediaPacket> media() const {
    std::lock_guard<std::mutex> lock(mu_);
    return media_;
  }

  std::vector<CallState> calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<CallState> out;
    for (const auto& [id, call] : calls_) out.push_back(call);
    return out;
  }

  bool bye_seen() const { return bye_seen_.load(); }

 private:
  void serve() {
    while (running_.load()) {
      pollfd fds[2] = {{signal_socket_.fd(), POLLIN, 0}, {media_socket_.fd(), POLLIN, 0}};
      int r = ::poll(fds, 2, 50);
      if (r <= 0) continue;
      if (fds[0].revents & POLLIN) {
        if (auto bytes = signal_socket_.recv(0)) handle_signal(*bytes);
      }
      if (fds[1].revents & POLLIN) {
        if (auto bytes = media_socket_.recv(0)) {
          if (!detail::is_end_sentinel(*bytes)) {
            std::lock_guard<std::mutex> lock(mu_);
            media_.push_back(audio::decode_packet(*bytes));
          }
        }
      }
    }
  }

  void handle_signal(const std::vector<std::uint8_t>& bytes) {
    CallSignal s;
    try {
      s = decode_signal(bytes);
    } catch (const Error&) {
      return;  // garbage datagram
    }
    if (s.kind == SignalKind::Invite && auto_answer_) {
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (!calls_.count(s.call_id)) {
          CallState call;
          call.call_id = s.call_id;
          call.local_media_port = addr_.media_port;
          call.remote_media_port = s.from_addr.media_port;
          advance_phase(call, CallPhase::Established);
          calls_[s.call_id] = call;
        }
      }
      CallSignal answer;
      answer.kind = SignalKind::Answer200;
      answer.call_id = s.call_id;
      answer.from_addr = addr_;
      answer.to_addr = s.from_addr;
      auto wire = encode_signal(answer);
      signal_socket_.send_to(wire.data(), wire.size(), s.from_addr.host,
                             s.from_addr.signaling_port);
    } else if (s.kind == SignalKind::Bye) {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = calls_.find(s.call_id);
      if (it != calls_.end() && it->second.phase == CallPhase::Established) {
        advance_phase(it->second, CallPhase::Terminated);
      }
      bye_seen_.store(true);
    }
  }

  EndpointAddress addr_;
  bool auto_answer_;
  detail::UdpSocket signal_socket_;
  detail::UdpSocket media_socket_;
  std::thread thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> bye_seen_{false};
  mutable std::mutex mu_;
  std::vector<audio::MediaPacket> media_;
  std::map<std::string, CallState> calls_;
};

// Caller over real datagrams; waits on the socket for the answer.
class UdpCallerEndpoint {
 public:
  explicit UdpCallerEndpoint(const EndpointAddress& preferred, std::uint64_t seed)
      : rng_(seed) {
    addr_ = preferred;
    addr_.signaling_port =
        signal_socket_.bind_in_range(preferred.host, preferred.signaling_port, 65000);
    addr_.media_port = preferred.media_port;
  }

  const EndpointAddress& address() const { return addr_; }

  CallState establish_call(const EndpointAddress& callee, double timeout_ms) {
    CallState call;
    call.call_id = strprintf("%016llx", static_cast<unsigned long long>(rng_.next()));
    call.local_media_port = addr_.media_port;
    advance_phase(call, CallPhase::Inviting);

    CallSignal invite;
    invite.kind = SignalKind::Invite;
    invite.call_id = call.call_id;
    invite.from_addr = addr_;
    invite.to_addr = callee;
    auto wire = encode_signal(invite);

    auto started = std::chrono::steady_clock::now();
    for (;;) {
      signal_socket_.send_to(wire.data(), wire.size(), callee.host, callee.signaling_port);
      if (auto bytes = signal_socket_.recv(50)) {
        try {
          CallSignal reply = decode_signal(*bytes);
          if (reply.kind == SignalKind::Answer200 && reply.call_id == call.call_id) {
            call.remote_media_port = reply.from_addr.media_port;
            advance_phase(call, CallPhase::Established);
            return call;
          }
        } catch (const Error&) {
        }
      }
      double elapsed = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - started)
                           .count();
      if (elapsed >= timeout_ms) {
        advance_phase(call, CallPhase::Terminated);
        fail(Err::Timeout, strprintf("no answer after %.0f ms", timeout_ms));
      }
    }
  }

  void hangup(CallState& call, const EndpointAddress& callee) {
    if (call.phase == CallPhase::Terminated || call.phase == CallPhase::Idle) return;
    CallSignal bye;
    bye.kind = SignalKind::Bye;
    bye.call_id = call.call_id;
    bye.from_addr = addr_;
    bye.to_addr = callee;
    auto wire = encode_signal(bye);
    signal_socket_.send_to(wire.data(), wire.size(), callee.host, callee.signaling_port);
    advance_phase(call, CallPhase::Terminated);
  }

  // Sends surviving packets of a schedule to the callee's media port.
  void send_media_datagrams(const CallState& call,
                            const std::vector<netem::ScheduledDelivery>& schedule,
                            const std::string& host) {
    if (call.phase != CallPhase::Established) {
      fail(Err::CallNotEstablished, to_string(call.phase));
    }
    std::vector<const netem::ScheduledDelivery*> survivors;
    for (const auto& d : schedule) {
      if (!d.dropped()) survivors.push_back(&d);
    }
    std::stable_sort(survivors.begin(), survivors.end(),
                     [](const netem::ScheduledDelivery* a, const netem::ScheduledDelivery* b) {
                       return *a->arrive_ms < *b->arrive_ms;
                     });
    int in_flight = 0;
    for (const auto* d : survivors) {
      auto bytes = audio::encode_packet(d->packet);
      media_socket_.send_to(bytes.data(), bytes.size(), host, call.remote_media_port);
      if (++in_flight % 64 == 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }

 private:
  EndpointAddress addr_;
  detail::UdpSocket signal_socket_;
  detail::UdpSocket media_socket_;
  SplitMix64 rng_;
};

}  // namespace aoip::transport
