#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "aoip/errors.hpp"
#include "aoip/util.hpp"

namespace aoip::audio {

// Canonical relay format: signed 16-bit little-endian PCM, mono, 16 kHz.
constexpr int kCanonicalRateHz = 16000;
constexpr int kCanonicalChannels = 1;
constexpr int kDefaultFrameMs = 20;
constexpr size_t kMaxPayloadBytes = 1200;

enum class SampleFormat { S16LE };

struct AudioClip {
  int sample_rate = kCanonicalRateHz;
  int channels = kCanonicalChannels;
  SampleFormat format = SampleFormat::S16LE;
  std::vector<std::int16_t> samples;  // interleaved by channel

  friend bool operator==(const AudioClip&, const AudioClip&) = default;

  size_t frames() const { return channels > 0 ? samples.size() / channels : 0; }
  double duration_ms() const {
    return sample_rate > 0 ? 1000.0 * static_cast<double>(frames()) / sample_rate : 0.0;
  }
  bool is_canonical() const {
    return sample_rate == kCanonicalRateHz && channels == kCanonicalChannels;
  }
};

// Sequence-numbered, timestamped datagram payload; the unit shaped, delayed,
// and dropped by the channel.
struct MediaPacket {
  std::uint32_t seq = 0;
  std::uint32_t timestamp_samples = 0;
  std::uint32_t stream_id = 0;
  std::vector<std::uint8_t> payload;  // whole 16-bit samples, <= 1200 bytes

  friend bool operator==(const MediaPacket&, const MediaPacket&) = default;
};

inline int samples_per_frame(int frame_ms) {
  return kCanonicalRateHz * frame_ms / 1000;
}

// ---------------------------------------------------------------------------
// WAV file I/O (RIFF/WAVE, 16-bit PCM only)

namespace detail {

inline std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(v & 0xFF);
  out.push_back((v >> 8) & 0xFF);
  out.push_back((v >> 16) & 0xFF);
  out.push_back((v >> 24) & 0xFF);
}
inline void put_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back((v >> 8) & 0xFF);
}

}  // namespace detail

inline AudioClip read_wav(const std::filesystem::path& path) {
  std::vector<std::uint8_t> data = read_file_bytes(path);
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0) {
    fail(Err::NotRiff, path.string());
  }

  AudioClip clip;
  bool have_fmt = false;
  bool have_data = false;
  size_t pos = 12;
  while (pos + 8 <= data.size()) {
    char id[5] = {0};
    std::memcpy(id, data.data() + pos, 4);
    std::uint32_t size = detail::read_u32le(data.data() + pos + 4);
    size_t body = pos + 8;
    if (body + size > data.size()) size = static_cast<std::uint32_t>(data.size() - body);

    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) fail(Err::NotRiff, "short fmt chunk in " + path.string());
      std::uint16_t format_tag = detail::read_u16le(data.data() + body);
      std::uint16_t channels = detail::read_u16le(data.data() + body + 2);
      std::uint32_t rate = detail::read_u32le(data.data() + body + 4);
      std::uint16_t bits = detail::read_u16le(data.data() + body + 14);
      if (format_tag != 1 || bits != 16) {
        fail(Err::UnsupportedEncoding,
             strprintf("format tag %u, %u bits in %s", format_tag, bits, path.c_str()));
      }
      if (channels == 0 || rate == 0) fail(Err::NotRiff, "bad fmt in " + path.string());
      clip.channels = channels;
      clip.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) fail(Err::NotRiff, "data before fmt in " + path.string());
      size_t n = size / 2;
      clip.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        std::uint16_t u = detail::read_u16le(data.data() + body + 2 * i);
        clip.samples[i] = static_cast<std::int16_t>(u);
      }
      have_data = true;
    }
    pos = body + size + (size % 2);  // chunks are word-aligned
  }
  if (!have_fmt || !have_data) fail(Err::NotRiff, path.string());
  // Drop any trailing partial frame so length divides by channel count.
  clip.samples.resize(clip.samples.size() - clip.samples.size() % clip.channels);
  return clip;
}

inline void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::uint32_t byte_rate = static_cast<std::uint32_t>(clip.sample_rate) * clip.channels * 2;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32le(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  detail::put_u32le(out, 16);
  detail::put_u16le(out, 1);  // PCM
  detail::put_u16le(out, static_cast<std::uint16_t>(clip.channels));
  detail::put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put_u32le(out, byte_rate);
  detail::put_u16le(out, static_cast<std::uint16_t>(clip.channels * 2));  // block align
  detail::put_u16le(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32le(out, data_bytes);
  for (std::int16_t s : clip.samples) {
    detail::put_u16le(out, static_cast<std::uint16_t>(s));
  }
  write_file_bytes(path, out.data(), out.size());
}

// ---------------------------------------------------------------------------
// Canonical-format conversion

namespace detail {

inline std::int16_t clamp_sample(double v) {
  double r = static_cast<double>(round_half_away(v));
  r = std::clamp(r, -32768.0, 32767.0);
  return static_cast<std::int16_t>(r);
}

// Arithmetic mean across channels, rounded half away from zero.
inline std::vector<std::int16_t> downmix(const AudioClip& clip) {
  if (clip.channels == 1) return clip.samples;
  size_t frames = clip.frames();
  std::vector<std::int16_t> mono(frames);
  for (size_t f = 0; f < frames; ++f) {
    double sum = 0;
    for (int c = 0; c < clip.channels; ++c) {
      sum += clip.samples[f * clip.channels + c];
    }
    mono[f] = clamp_sample(sum / clip.channels);
  }
  return mono;
}

// Linear-interpolation resampler; output length is round(n * to / from) so
// duration is preserved within one output sample.
inline std::vector<std::int16_t> resample(const std::vector<std::int16_t>& in,
                                          int from_rate, int to_rate) {
  if (from_rate == to_rate || in.empty()) return in;
  size_t n = in.size();
  size_t out_len = static_cast<size_t>(
      round_half_away(static_cast<double>(n) * to_rate / from_rate));
  std::vector<std::int16_t> out(out_len);
  double step = static_cast<double>(from_rate) / to_rate;
  for (size_t i = 0; i < out_len; ++i) {
    double pos = static_cast<double>(i) * step;
    size_t i0 = static_cast<size_t>(pos);
    if (i0 >= n - 1) {
      out[i] = in[n - 1];
      continue;
    }
    double frac = pos - static_cast<double>(i0);
    double v = in[i0] + (in[i0 + 1] - in[i0]) * frac;
    out[i] = clamp_sample(v);
  }
  return out;
}

}  // namespace detail

// The ffmpeg step: S16LE, mono, 16 kHz.  Idempotent on canonical clips.
inline AudioClip canonicalize(const AudioClip& clip) {
  AudioClip out;
  out.sample_rate = kCanonicalRateHz;
  out.channels = kCanonicalChannels;
  std::vector<std::int16_t> mono = detail::downmix(clip);
  out.samples = detail::resample(mono, clip.sample_rate, kCanonicalRateHz);
  return out;
}

// ---------------------------------------------------------------------------
// Packetization

// Splits a canonical clip into fixed-size frames.  The last frame is
// zero-padded to full length; seq starts at 0 and counts up by one.
inline std::vector<MediaPacket> packetize(const AudioClip& clip, int frame_ms,
                                          std::uint32_t stream_id = 0) {
  int spf = samples_per_frame(frame_ms);
  size_t frame_bytes = static_cast<size_t>(spf) * 2;
  if (frame_bytes > kMaxPayloadBytes) {
    fail(Err::FrameTooLarge, strprintf("%zu bytes > %zu", frame_bytes, kMaxPayloadBytes));
  }
  size_t n = clip.samples.size();
  size_t frames = (n + spf - 1) / spf;
  std::vector<MediaPacket> packets;
  packets.reserve(frames);
  for (size_t f = 0; f < frames; ++f) {
    MediaPacket p;
    p.seq = static_cast<std::uint32_t>(f);
    p.timestamp_samples = static_cast<std::uint32_t>(f * spf);
    p.stream_id = stream_id;
    p.payload.assign(frame_bytes, 0);
    size_t begin = f * static_cast<size_t>(spf);
    size_t count = std::min(static_cast<size_t>(spf), n - begin);
    for (size_t i = 0; i < count; ++i) {
      std::uint16_t u = static_cast<std::uint16_t>(clip.samples[begin + i]);
      p.payload[2 * i] = u & 0xFF;
      p.payload[2 * i + 1] = (u >> 8) & 0xFF;
    }
    packets.push_back(std::move(p));
  }
  return packets;
}

// Reassembles by sequence number.  Missing slots stay zero, the first copy
// of a duplicate seq wins, and packets at or past expected_frames are late
// arrivals and ignored.
inline AudioClip depacketize(const std::vector<MediaPacket>& packets,
                             std::uint32_t expected_frames, int frame_ms) {
  int spf = samples_per_frame(frame_ms);
  AudioClip out;
  out.samples.assign(static_cast<size_t>(expected_frames) * spf, 0);
  std::vector<bool> seen(expected_frames, false);
  for (size_t i = 0; i < packets.size(); ++i) {
    if (packets[i].stream_id != packets[0].stream_id) {
      fail(Err::MixedStreams,
           strprintf("stream %u vs %u", packets[i].stream_id, packets[0].stream_id));
    }
    std::uint32_t seq = packets[i].seq;
    if (seq >= expected_frames || seen[seq]) continue;
    seen[seq] = true;
    size_t base = static_cast<size_t>(seq) * spf;
    size_t count = std::min(packets[i].payload.size() / 2, static_cast<size_t>(spf));
    for (size_t s = 0; s < count; ++s) {
      std::uint16_t u = static_cast<std::uint16_t>(
          packets[i].payload[2 * s] | (packets[i].payload[2 * s + 1] << 8));
      out.samples[base + s] = static_cast<std::int16_t>(u);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datagram wire format: seq u32 | timestamp u32 | stream u32 | len u16 |
// payload bytes, all little-endian.

inline std::vector<std::uint8_t> encode_packet(const MediaPacket& p) {
  std::vector<std::uint8_t> out;
  out.reserve(14 + p.payload.size());
  detail::put_u32le(out, p.seq);
  detail::put_u32le(out, p.timestamp_samples);
  detail::put_u32le(out, p.stream_id);
  detail::put_u16le(out, static_cast<std::uint16_t>(p.payload.size()));
  out.insert(out.end(), p.payload.begin(), p.payload.end());
  return out;
}

inline MediaPacket decode_packet(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 14) fail(Err::MalformedValue, "short media datagram");
  MediaPacket p;
  p.seq = detail::read_u32le(bytes.data());
  p.timestamp_samples = detail::read_u32le(bytes.data() + 4);
  p.stream_id = detail::read_u32le(bytes.data() + 8);
  std::uint16_t len = detail::read_u16le(bytes.data() + 12);
  if (14 + static_cast<size_t>(len) > bytes.size()) {
    fail(Err::MalformedValue, "truncated media datagram");
  }
  p.payload.assign(bytes.begin() + 14, bytes.begin() + 14 + len);
  return p;
}

}  // namespace aoip::audio
