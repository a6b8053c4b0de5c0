#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "aoip/audio.hpp"
#include "aoip/config.hpp"
#include "aoip/errors.hpp"
#include "aoip/netem.hpp"
#include "aoip/rng.hpp"
#include "aoip/session.hpp"
#include "aoip/storage.hpp"
#include "aoip/transport.hpp"
#include "aoip/util.hpp"

namespace aoip::evalkit {

struct MetricsReport {
  double packet_loss_rate = 0;  // in [0, 1]
  double mean_latency_ms = 0;
  double p50_latency_ms = 0;
  double p95_latency_ms = 0;
  double p99_latency_ms = 0;
  // Mean absolute deviation of inter-arrival spacing vs the send spacing.
  double jitter_ms = 0;
  double throughput_kbps = 0;  // delivered payload bits / duration / 1000
  double snr_db = std::numeric_limits<double>::infinity();
  double duration_checked_s = 0;
  std::uint64_t packets_sent = 0;
  std::uint64_t packets_received = 0;
};

// Channel-side metrics straight off one call's schedule; totals reconcile
// with the transport counters by construction (same schedule object).
inline MetricsReport channel_stats(const std::vector<netem::ScheduledDelivery>& schedule) {
  MetricsReport report;
  report.packets_sent = schedule.size();
  if (schedule.empty()) return report;

  std::vector<double> latencies;
  double first_depart = schedule.front().depart_ms;
  double last_arrive = -std::numeric_limits<double>::infinity();
  std::uint64_t payload_bytes = 0;

  std::vector<const netem::ScheduledDelivery*> survivors;
  for (const auto& d : schedule) {
    first_depart = std::min(first_depart, d.depart_ms);
    if (d.dropped()) continue;
    survivors.push_back(&d);
    latencies.push_back(*d.arrive_ms - d.depart_ms);
    last_arrive = std::max(last_arrive, *d.arrive_ms);
    payload_bytes += d.packet.payload.size();
  }
  report.packets_received = survivors.size();
  report.packet_loss_rate =
      1.0 - static_cast<double>(survivors.size()) / static_cast<double>(schedule.size());
  if (survivors.empty()) return report;

  double sum = 0;
  for (double l : latencies) sum += l;
  report.mean_latency_ms = sum / static_cast<double>(latencies.size());
  report.p50_latency_ms = percentile(latencies, 50);
  report.p95_latency_ms = percentile(latencies, 95);
  report.p99_latency_ms = percentile(latencies, 99);

  // Arrival-order spacing vs the matching departure spacing.
  std::vector<const netem::ScheduledDelivery*> by_arrival = survivors;
  std::stable_sort(by_arrival.begin(), by_arrival.end(),
                   [](const netem::ScheduledDelivery* a, const netem::ScheduledDelivery* b) {
                     return *a->arrive_ms < *b->arrive_ms;
                   });
  if (by_arrival.size() > 1) {
    double dev_sum = 0;
    for (size_t i = 1; i < by_arrival.size(); ++i) {
      double gap = *by_arrival[i]->arrive_ms - *by_arrival[i - 1]->arrive_ms;
      double nominal = by_arrival[i]->depart_ms - by_arrival[i - 1]->depart_ms;
      dev_sum += std::abs(gap - nominal);
    }
    report.jitter_ms = dev_sum / static_cast<double>(by_arrival.size() - 1);
  }

  double duration_ms = last_arrive - first_depart;
  report.duration_checked_s = duration_ms / 1000.0;
  if (duration_ms > 0) {
    report.throughput_kbps =
        static_cast<double>(payload_bytes) * 8.0 / (duration_ms / 1000.0) / 1000.0;
  }
  return report;
}

// Signal-to-noise ratio of a degraded clip against its clean reference:
// 10*log10(sum(c^2) / sum((c-d)^2)), +inf when identical.
inline double snr(const audio::AudioClip& clean, const audio::AudioClip& degraded) {
  if (clean.samples.size() != degraded.samples.size()) {
    fail(Err::LengthMismatch, strprintf("%zu vs %zu samples", clean.samples.size(),
                                        degraded.samples.size()));
  }
  double signal = 0, error = 0;
  for (size_t i = 0; i < clean.samples.size(); ++i) {
    double c = clean.samples[i];
    double e = c - degraded.samples[i];
    signal += c * c;
    error += e * e;
  }
  if (error == 0) return std::numeric_limits<double>::infinity();
  if (signal == 0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / error);
}

// ---------------------------------------------------------------------------
// Impairment sweeps

struct SweepOptions {
  int frame_ms = audio::kDefaultFrameMs;
  // When set, cells carry a synthetic constant-bit-rate tone stream at this
  // offered rate (packet cost including the 40-byte header) instead of the
  // corpus clip; lets stress cells offer less than the raw audio bit rate.
  int synthetic_offered_kbps = 0;
  double synthetic_duration_s = 10;
};

struct SweepRow {
  netem::ImpairmentProfile profile;
  MetricsReport metrics;
};

namespace detail {

// A deterministic tone chopped into fixed-cost frames; stands in for media
// when the sweep needs a controlled offered load.
inline std::vector<netem::TimedPacket> synthetic_stream(int offered_kbps, double duration_s,
                                                        int frame_ms) {
  double cost_bytes = static_cast<double>(offered_kbps) * frame_ms / 8.0;
  int payload_bytes = static_cast<int>(cost_bytes) - netem::kHeaderOverheadBytes;
  payload_bytes -= payload_bytes % 2;
  if (payload_bytes <= 0) fail(Err::MalformedValue, "offered rate below header cost");
  if (static_cast<size_t>(payload_bytes) > audio::kMaxPayloadBytes) {
    fail(Err::FrameTooLarge, strprintf("%d bytes", payload_bytes));
  }
  int samples = payload_bytes / 2;
  std::uint32_t frames = static_cast<std::uint32_t>(duration_s * 1000.0 / frame_ms);
  std::vector<netem::TimedPacket> out;
  out.reserve(frames);
  for (std::uint32_t f = 0; f < frames; ++f) {
    audio::MediaPacket p;
    p.seq = f;
    p.timestamp_samples = f * static_cast<std::uint32_t>(samples);
    p.stream_id = 0;
    p.payload.resize(static_cast<size_t>(payload_bytes));
    for (int i = 0; i < samples; ++i) {
      double t = static_cast<double>(f) * samples + i;
      auto v = static_cast<std::int16_t>(
          std::lround(12000.0 * std::sin(2.0 * M_PI * 440.0 * t / 16000.0)));
      p.payload[2 * i] = static_cast<std::uint16_t>(v) & 0xFF;
      p.payload[2 * i + 1] = (static_cast<std::uint16_t>(v) >> 8) & 0xFF;
    }
    out.push_back({std::move(p), static_cast<double>(f) * frame_ms});
  }
  return out;
}

inline std::string profile_fingerprint(const netem::ImpairmentProfile& p) {
  return strprintf("rate=%d lat=%.6f jit=%.6f loss=%.9f depth=%d", p.rate_kbps,
                   p.base_latency_ms, p.jitter_ms, p.loss_prob, p.bucket_depth_bytes);
}

}  // namespace detail

// Seed for one sweep cell: keyed by the cell's parameters, not its position,
// so permuting the grid permutes rows without changing any value.
inline std::uint64_t cell_seed(std::uint64_t base_seed, const netem::ImpairmentProfile& p) {
  return mix_seed(base_seed, detail::profile_fingerprint(p));
}

// One in-memory relay per grid cell.  The cell profile replaces the sender
// uplink; the receiver downlink comes from the base config.  SNR compares
// the zero-loss reassembly of the offered stream against what survived.
inline std::vector<SweepRow> sweep(const std::vector<netem::ImpairmentProfile>& grid,
                                   const config::SimulationConfig& base,
                                   const std::filesystem::path& corpus_root,
                                   const SweepOptions& options = {}) {
  if (grid.empty()) fail(Err::MalformedValue, "empty sweep grid");

  std::vector<netem::TimedPacket> stream;
  std::uint32_t expected_frames = 0;
  if (options.synthetic_offered_kbps > 0) {
    stream = detail::synthetic_stream(options.synthetic_offered_kbps,
                                      options.synthetic_duration_s, options.frame_ms);
  } else {
    auto files = storage::fetch_source(base.src_audio_config, corpus_root);
    if (files.empty()) fail(Err::NoSource, base.src_audio_config);
    audio::AudioClip clip = audio::canonicalize(audio::read_wav(files.front()));
    stream = session::sender_schedule(clip, base.duration_s * 1000.0, options.frame_ms);
  }
  expected_frames = static_cast<std::uint32_t>(stream.size());
  int spf_bytes = stream.empty() ? 0 : static_cast<int>(stream.front().packet.payload.size());
  int spf = spf_bytes / 2;

  // Zero-loss reference reassembly.
  std::vector<audio::MediaPacket> all_packets;
  all_packets.reserve(stream.size());
  for (const auto& tp : stream) all_packets.push_back(tp.packet);
  audio::AudioClip reference;
  reference.samples.resize(static_cast<size_t>(expected_frames) * spf);
  for (const auto& p : all_packets) {
    for (size_t i = 0; i + 1 < p.payload.size(); i += 2) {
      reference.samples[static_cast<size_t>(p.seq) * spf + i / 2] =
          static_cast<std::int16_t>(p.payload[i] | (p.payload[i + 1] << 8));
    }
  }

  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const auto& cell : grid) {
    netem::ImpairmentProfile uplink = cell;
    uplink.seed = cell_seed(base.seed, cell);
    netem::ImpairmentProfile downlink = netem::ImpairmentProfile::unconstrained();
    if (base.receiver_down_kbps > 0) downlink.rate_kbps = base.receiver_down_kbps;
    downlink.seed = mix_seed(uplink.seed, "downlink");

    auto schedule = netem::effective_path(stream, uplink, downlink);
    SweepRow row;
    row.profile = cell;
    row.metrics = channel_stats(schedule);

    std::vector<audio::MediaPacket> received;
    for (const auto& d : schedule) {
      if (!d.dropped()) received.push_back(d.packet);
    }
    audio::AudioClip degraded;
    degraded.samples.resize(reference.samples.size());
    for (const auto& p : received) {
      if (p.seq >= expected_frames) continue;
      for (size_t i = 0; i + 1 < p.payload.size(); i += 2) {
        degraded.samples[static_cast<size_t>(p.seq) * spf + i / 2] =
            static_cast<std::int16_t>(p.payload[i] | (p.payload[i + 1] << 8));
      }
    }
    row.metrics.snr_db = snr(reference, degraded);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string render_table(const std::vector<SweepRow>& rows) {
  std::string out =
      "rate_kbps\tlatency_ms\tjitter_ms\tloss_prob\t"
      "loss_rate\tmean_lat_ms\tp95_lat_ms\tthroughput_kbps\tsnr_db\tduration_s\n";
  for (const auto& row : rows) {
    const auto& m = row.metrics;
    std::string snr_text = std::isinf(m.snr_db) ? (m.snr_db > 0 ? "inf" : "-inf")
                                                : strprintf("%.3f", m.snr_db);
    out += strprintf("%d\t%.3f\t%.3f\t%.4f\t%.6f\t%.3f\t%.3f\t%.3f\t%s\t%.3f\n",
                     row.profile.rate_kbps, row.profile.base_latency_ms,
                     row.profile.jitter_ms, row.profile.loss_prob, m.packet_loss_rate,
                     m.mean_latency_ms, m.p95_latency_ms, m.throughput_kbps,
                     snr_text.c_str(), m.duration_checked_s);
  }
  return out;
}

}  // namespace aoip::evalkit
