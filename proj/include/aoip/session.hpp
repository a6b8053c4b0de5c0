#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aoip/audio.hpp"
#include "aoip/clock.hpp"
#include "aoip/errors.hpp"
#include "aoip/netem.hpp"
#include "aoip/transport.hpp"

namespace aoip::session {

struct SenderSpec {
  std::filesystem::path play_file;
  bool vad_enabled = false;  // stays false: unaltered audio transmission
  transport::EndpointAddress target;
};

struct ReceiverSpec {
  std::filesystem::path record_file;
  bool auto_answer = true;
};

struct SendStats {
  std::uint64_t packets_sent = 0;
  std::uint64_t bytes_sent = 0;
  double duration_ms = 0;
};

struct PathProfiles {
  netem::ImpairmentProfile uplink;
  netem::ImpairmentProfile downlink;
};

inline std::uint32_t frames_for_duration_ms(double duration_ms, int frame_ms) {
  return static_cast<std::uint32_t>(
      (static_cast<std::uint64_t>(duration_ms) + frame_ms - 1) / frame_ms);
}

// The sender's emission plan: one frame every frame_ms, packet k departing
// at k * frame_ms, silence carried like any other frame (no VAD).  A clip
// shorter than the deadline loops; frames past the final sample are silence
// only when the clip is empty.
inline std::vector<netem::TimedPacket> sender_schedule(const audio::AudioClip& canonical,
                                                       double deadline_ms, int frame_ms,
                                                       std::uint32_t stream_id = 0) {
  int spf = audio::samples_per_frame(frame_ms);
  size_t frame_bytes = static_cast<size_t>(spf) * 2;
  if (frame_bytes > audio::kMaxPayloadBytes) {
    fail(Err::FrameTooLarge, strprintf("%zu bytes > %zu", frame_bytes, audio::kMaxPayloadBytes));
  }
  std::uint32_t total_frames = frames_for_duration_ms(deadline_ms, frame_ms);
  size_t n = canonical.samples.size();
  std::vector<netem::TimedPacket> out;
  out.reserve(total_frames);
  for (std::uint32_t f = 0; f < total_frames; ++f) {
    audio::MediaPacket p;
    p.seq = f;
    p.timestamp_samples = f * static_cast<std::uint32_t>(spf);
    p.stream_id = stream_id;
    p.payload.assign(frame_bytes, 0);
    if (n > 0) {
      for (int i = 0; i < spf; ++i) {
        size_t src = (static_cast<size_t>(f) * spf + i) % n;  // loop the clip
        std::uint16_t u = static_cast<std::uint16_t>(canonical.samples[src]);
        p.payload[2 * i] = u & 0xFF;
        p.payload[2 * i + 1] = (u >> 8) & 0xFF;
      }
    }
    out.push_back({std::move(p), static_cast<double>(f) * frame_ms});
  }
  return out;
}

struct RelayOutcome {
  SendStats stats;
  std::vector<netem::ScheduledDelivery> schedule;
  std::vector<transport::DeliveredPacket> delivered;
};

// One call's media path end to end: pace, shape, impair, deliver.  The
// clock lands exactly on the deadline afterwards.
inline RelayOutcome relay_clip(const audio::AudioClip& canonical, double deadline_ms,
                               const PathProfiles& path, int frame_ms,
                               transport::MediaChannel& channel,
                               const transport::CallState& call, Clock& clock,
                               std::uint32_t stream_id = 0) {
  if (call.phase != transport::CallPhase::Established) {
    fail(Err::CallNotEstablished, transport::to_string(call.phase));
  }
  double start_ms = clock.now_ms();
  std::vector<netem::TimedPacket> stream =
      sender_schedule(canonical, deadline_ms, frame_ms, stream_id);

  RelayOutcome outcome;
  // Channel arithmetic runs in call-relative time so results are bit-equal
  // regardless of when the call started; stamps shift afterwards.
  outcome.schedule = netem::effective_path(stream, path.uplink, path.downlink);
  for (auto& d : outcome.schedule) {
    d.depart_ms += start_ms;
    if (d.arrive_ms) *d.arrive_ms += start_ms;
  }
  // The receiver is gone once the call ends: anything scheduled past the
  // deadline never reaches the recording.
  std::vector<transport::DeliveredPacket> delivered = channel.transmit(outcome.schedule);
  outcome.delivered.reserve(delivered.size());
  for (auto& d : delivered) {
    if (d.arrive_ms <= start_ms + deadline_ms) outcome.delivered.push_back(std::move(d));
  }
  for (const auto& tp : stream) {
    outcome.stats.packets_sent++;
    outcome.stats.bytes_sent += tp.packet.payload.size();
  }
  clock.advance_to(start_ms + deadline_ms);
  outcome.stats.duration_ms = deadline_ms;
  return outcome;
}

// Streams the spec's file over an established call until the deadline.
inline RelayOutcome run_sender(const SenderSpec& spec, const transport::CallState& call,
                               double deadline_ms, const PathProfiles& path,
                               transport::MediaChannel& channel, Clock& clock,
                               int frame_ms = audio::kDefaultFrameMs) {
  audio::AudioClip clip;
  try {
    clip = audio::read_wav(spec.play_file);
  } catch (const Error& e) {
    fail(Err::FileUnreadable, spec.play_file.string() + " (" + e.what() + ")");
  }
  audio::AudioClip canonical = audio::canonicalize(clip);
  return relay_clip(canonical, deadline_ms, path, frame_ms, channel, call, clock);
}

// Writes every received frame in seq order with zero-fill for gaps; the
// recording spans the expected duration.  When no call ever arrived the
// recording is empty rather than zero-filled (that distinguishes an absent
// caller from a total-loss call).
inline std::filesystem::path run_receiver(const ReceiverSpec& spec,
                                          const std::vector<transport::DeliveredPacket>& delivered,
                                          int expected_duration_s, Clock& clock,
                                          int frame_ms = audio::kDefaultFrameMs,
                                          bool call_arrived = true) {
  (void)clock;
  std::uint32_t expected_frames =
      call_arrived ? frames_for_duration_ms(expected_duration_s * 1000.0, frame_ms) : 0;
  std::vector<audio::MediaPacket> packets;
  packets.reserve(delivered.size());
  for (const auto& d : delivered) packets.push_back(d.packet);
  audio::AudioClip recording = audio::depacketize(packets, expected_frames, frame_ms);
  audio::write_wav(recording, spec.record_file);
  return spec.record_file;
}

// The ffmpeg step over the raw recording: canonical WAV out, idempotent for
// already-canonical input.
inline std::filesystem::path post_process(const std::filesystem::path& raw_path) {
  audio::AudioClip raw = audio::read_wav(raw_path);
  audio::AudioClip canonical = audio::canonicalize(raw);
  std::filesystem::path out = raw_path;
  out.replace_extension();
  out += "_canonical.wav";
  audio::write_wav(canonical, out);
  return out;
}

}  // namespace aoip::session
