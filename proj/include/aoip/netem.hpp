#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "aoip/audio.hpp"
#include "aoip/errors.hpp"
#include "aoip/rng.hpp"

namespace aoip::netem {

// Fixed per-packet cost on top of the payload: IP + UDP + framing
// approximation.
constexpr int kHeaderOverheadBytes = 40;
constexpr int kDefaultBucketDepthBytes = 2400;  // two full frames of headroom
// Rates at or above this are treated as unlimited: identity scheduling.
constexpr int kUnlimitedRateKbps = 1 << 30;

// One direction of the channel.  rate_kbps feeds the token bucket;
// base_latency_ms / jitter_ms / loss_prob are applied after shaping.
// jitter is uniform in [-jitter_ms, +jitter_ms].
struct ImpairmentProfile {
  int rate_kbps = 0;
  double base_latency_ms = 0;
  double jitter_ms = 0;
  double loss_prob = 0;
  std::uint64_t seed = 0;
  int bucket_depth_bytes = kDefaultBucketDepthBytes;

  friend bool operator==(const ImpairmentProfile&, const ImpairmentProfile&) = default;

  bool unlimited() const { return rate_kbps >= kUnlimitedRateKbps; }

  // Unlimited rate: the shaper passes packets through untouched.
  static ImpairmentProfile unconstrained(std::uint64_t seed = 0) {
    ImpairmentProfile p;
    p.rate_kbps = kUnlimitedRateKbps;
    p.seed = seed;
    return p;
  }

  void check() const {
    if (rate_kbps <= 0) fail(Err::NonPositive, "rate_kbps");
    if (bucket_depth_bytes <= 0) fail(Err::NonPositive, "bucket_depth_bytes");
    if (loss_prob < 0 || loss_prob > 1) fail(Err::MalformedValue, "loss_prob");
    if (base_latency_ms < 0 || jitter_ms < 0) fail(Err::MalformedValue, "latency/jitter");
  }
};

struct TimedPacket {
  audio::MediaPacket packet;
  double depart_ms = 0;
};

// Scheduling outcome for one packet.  arrive_ms is empty when the packet was
// dropped; otherwise arrive_ms >= depart_ms.
struct ScheduledDelivery {
  audio::MediaPacket packet;
  double depart_ms = 0;
  std::optional<double> arrive_ms;

  bool dropped() const { return !arrive_ms.has_value(); }
};

inline double packet_cost_bytes(const audio::MediaPacket& p) {
  return static_cast<double>(p.payload.size() + kHeaderOverheadBytes);
}

// Token-bucket shaping.  The bucket starts empty and fills at
// rate_kbps * 1000 / 8 bytes per second, capped at bucket_depth_bytes; a
// packet is released once the bucket holds its full cost (payload + 40-byte
// header).  Order is preserved: a packet never releases before its
// predecessor.  A cost above the bucket depth is served by letting the
// bucket fill past the cap for that packet alone, so oversized packets delay
// rather than starve.
inline std::vector<ScheduledDelivery> shape(const std::vector<TimedPacket>& stream,
                                            const ImpairmentProfile& profile) {
  profile.check();
  std::vector<ScheduledDelivery> out;
  out.reserve(stream.size());
  if (profile.unlimited()) {
    double prev_release_ms = -std::numeric_limits<double>::infinity();
    for (const TimedPacket& tp : stream) {
      prev_release_ms = std::max(prev_release_ms, tp.depart_ms);
      out.push_back({tp.packet, tp.depart_ms, prev_release_ms});
    }
    return out;
  }
  const double rate_bytes_per_ms = static_cast<double>(profile.rate_kbps) * 1000.0 / 8.0 / 1000.0;
  const double depth = static_cast<double>(profile.bucket_depth_bytes);

  double tokens = 0;
  double prev_update_ms = 0;
  double prev_release_ms = 0;
  bool first = true;
  for (const TimedPacket& tp : stream) {
    double cost = packet_cost_bytes(tp.packet);
    double head_ms = first ? tp.depart_ms : std::max(tp.depart_ms, prev_release_ms);
    if (first) {
      prev_update_ms = tp.depart_ms;
      first = false;
    }
    tokens = std::min(depth, tokens + (head_ms - prev_update_ms) * rate_bytes_per_ms);
    double release_ms = head_ms;
    if (tokens < cost) {
      release_ms = head_ms + (cost - tokens) / rate_bytes_per_ms;
      tokens = cost;
    }
    tokens -= cost;
    prev_update_ms = release_ms;
    prev_release_ms = release_ms;
    out.push_back({tp.packet, tp.depart_ms, release_ms});
  }
  return out;
}

// Seeded loss and jitter on an already-shaped schedule.  Each packet draws a
// drop decision first; survivors draw one jitter offset.  Dropped inputs
// stay dropped.  Arrival never precedes departure, but arrival order across
// packets may change (the receiver reassembles by seq).
inline std::vector<ScheduledDelivery> impair(std::vector<ScheduledDelivery> deliveries,
                                             const ImpairmentProfile& profile) {
  profile.check();
  SplitMix64 rng(profile.seed);
  for (ScheduledDelivery& d : deliveries) {
    if (d.dropped()) continue;
    if (profile.loss_prob > 0 && rng.next_unit() < profile.loss_prob) {
      d.arrive_ms.reset();
      continue;
    }
    double arrive = *d.arrive_ms + profile.base_latency_ms;
    if (profile.jitter_ms > 0) {
      arrive += rng.next_uniform(-profile.jitter_ms, profile.jitter_ms);
    }
    d.arrive_ms = std::max(arrive, d.depart_ms);
  }
  return deliveries;
}

// Series composition: sender uplink first, then receiver downlink.  The
// downlink bucket sees each surviving packet at its uplink arrival time.
// Steady-state throughput is the minimum of the two rates.
inline std::vector<ScheduledDelivery> effective_path(const std::vector<TimedPacket>& stream,
                                                     const ImpairmentProfile& uplink,
                                                     const ImpairmentProfile& downlink) {
  std::vector<ScheduledDelivery> first = impair(shape(stream, uplink), uplink);

  std::vector<TimedPacket> survivors;
  std::vector<size_t> survivor_index;
  survivors.reserve(first.size());
  for (size_t i = 0; i < first.size(); ++i) {
    if (!first[i].dropped()) {
      survivors.push_back({first[i].packet, *first[i].arrive_ms});
      survivor_index.push_back(i);
    }
  }
  std::vector<ScheduledDelivery> second = impair(shape(survivors, downlink), downlink);

  std::vector<ScheduledDelivery> out;
  out.reserve(first.size());
  size_t k = 0;
  for (size_t i = 0; i < first.size(); ++i) {
    ScheduledDelivery d;
    d.packet = first[i].packet;
    d.depart_ms = stream[i].depart_ms;
    if (k < survivor_index.size() && survivor_index[k] == i) {
      d.arrive_ms = second[k].arrive_ms;
      ++k;
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace aoip::netem
