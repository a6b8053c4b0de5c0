#include "aoip/transport.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <thread>

#include "test_util.hpp"

using namespace aoip;
using transport::CallPhase;
using transport::CallSignal;
using transport::EndpointAddress;
using transport::SignalKind;

namespace {

TEST(StateMachine, ExhaustiveTransitionTable) {
  using P = CallPhase;
  const P all[] = {P::Idle, P::Inviting, P::Established, P::Terminated};
  // The only legal edges: caller chain, auto-answer shortcut, hangup from
  // Inviting.  Everything else is rejected.
  auto expected = [](P from, P to) {
    if (from == P::Idle && to == P::Inviting) return true;
    if (from == P::Idle && to == P::Established) return true;
    if (from == P::Inviting && to == P::Established) return true;
    if (from == P::Inviting && to == P::Terminated) return true;
    if (from == P::Established && to == P::Terminated) return true;
    return false;
  };
  for (P from : all) {
    for (P to : all) {
      EXPECT_EQ(transport::transition_allowed(from, to), expected(from, to))
          << transport::to_string(from) << " -> " << transport::to_string(to);
    }
  }
}

TEST(SignalCodec, RoundTripAllKinds) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    CallSignal s;
    s.kind = static_cast<SignalKind>(1 + rng() % 3);
    s.call_id = strprintf("%016llx", static_cast<unsigned long long>(rng()));
    s.from_addr = {"127.0.0.1", 5061 + static_cast<int>(rng() % 100),
                   3000 + static_cast<int>(rng() % 6000)};
    s.to_addr = {"127.0.0.1", 5061 + static_cast<int>(rng() % 100),
                 3000 + static_cast<int>(rng() % 6000)};
    EXPECT_EQ(transport::decode_signal(transport::encode_signal(s)), s);
  }
}

TEST(SignalCodec, TruncatedDatagramRejected) {
  CallSignal s;
  s.kind = SignalKind::Invite;
  s.call_id = "abc";
  auto bytes = transport::encode_signal(s);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(transport::decode_signal(bytes), Error);
}

TEST(Resolver, IdentityToLoopback) {
  transport::LocalResolver resolver;
  EndpointAddress a = transport::resolve_address(resolver, "A");
  EXPECT_EQ(a.host, "127.0.0.1");
  EXPECT_GE(a.media_port, transport::kMediaPortMin);
  EXPECT_LE(a.media_port, transport::kMediaPortMax);
}

TEST(Resolver, DistinctEndpointsDistinctMediaPorts) {
  transport::LocalResolver resolver;
  EndpointAddress a = resolver.resolve("A");
  EndpointAddress b = resolver.resolve("B");
  EXPECT_NE(a.media_port, b.media_port);
  EXPECT_NE(a.signaling_port, b.signaling_port);
  for (const auto& addr : {a, b}) {
    EXPECT_GE(addr.media_port, transport::kMediaPortMin);
    EXPECT_LE(addr.media_port, transport::kMediaPortMax);
  }
}

TEST(Resolver, SameNameSameAddress) {
  transport::LocalResolver resolver;
  EXPECT_EQ(resolver.resolve("A"), resolver.resolve("A"));
}

TEST(Resolver, ReleasedIndexRecycled) {
  transport::LocalResolver resolver;
  EndpointAddress a = resolver.resolve("A");
  resolver.resolve("B");
  resolver.release("A");
  EndpointAddress c = resolver.resolve("C");
  EXPECT_EQ(c.media_port, a.media_port);
}

TEST(EstablishCall, HappyPathBothSidesEstablished) {
  transport::LocalExchange exchange;
  transport::LocalResolver resolver;
  VirtualClock clock;
  transport::ReceiverEndpoint callee(exchange, resolver.resolve("callee"));
  transport::CallerEndpoint caller(exchange, resolver.resolve("caller"), 7);

  auto call = caller.establish_call(callee.address(), 1000, clock);
  EXPECT_EQ(call.phase, CallPhase::Established);
  EXPECT_EQ(call.remote_media_port, callee.address().media_port);
  auto callee_side = callee.call(call.call_id);
  ASSERT_TRUE(callee_side.has_value());
  EXPECT_EQ(callee_side->phase, CallPhase::Established);
  EXPECT_EQ(callee_side->remote_media_port, caller.address().media_port);
}

TEST(EstablishCall, AbsentCalleeTimesOutOnVirtualClock) {
  transport::LocalExchange exchange;
  transport::LocalResolver resolver;
  VirtualClock clock;
  transport::CallerEndpoint caller(exchange, resolver.resolve("caller"), 7);
  EndpointAddress ghost{"127.0.0.1", 6000, 4000};
  double t0 = clock.now_ms();
  try {
    caller.establish_call(ghost, 2000, clock);
    FAIL() << "expected Timeout";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Err::Timeout);
  }
  EXPECT_GE(clock.now_ms() - t0, 2000.0);
}

TEST(EstablishCall, ConcurrentCallsGetDistinctIds) {
  transport::LocalExchange exchange;
  transport::LocalResolver resolver;
  transport::ReceiverEndpoint callee(exchange, resolver.resolve("callee"));
  transport::CallerEndpoint caller_a(exchange, resolver.resolve("a"), 1);
  transport::CallerEndpoint caller_b(exchange, resolver.resolve("b"), 2);

  transport::CallState call_a, call_b;
  std::thread ta([&] {
    VirtualClock clock;
    call_a = caller_a.establish_call(callee.address(), 1000, clock);
  });
  std::thread tb([&] {
    VirtualClock clock;
    call_b = caller_b.establish_call(callee.address(), 1000, clock);
  });
  ta.join();
  tb.join();
  EXPECT_EQ(call_a.phase, CallPhase::Established);
  EXPECT_EQ(call_b.phase, CallPhase::Established);
  EXPECT_NE(call_a.call_id, call_b.call_id);
  EXPECT_EQ(callee.calls().size(), 2u);
}

TEST(Hangup, TerminatesBothSidesAndIsIdempotent) {
  transport::LocalExchange exchange;
  transport::LocalResolver resolver;
  VirtualClock clock;
  transport::ReceiverEndpoint callee(exchange, resolver.resolve("callee"));
  transport::CallerEndpoint caller(exchange, resolver.resolve("caller"), 7);
  auto call = caller.establish_call(callee.address(), 1000, clock);

  caller.hangup(call, callee.address());
  EXPECT_EQ(call.phase, CallPhase::Terminated);
  EXPECT_EQ(callee.call(call.call_id)->phase, CallPhase::Terminated);
  caller.hangup(call, callee.address());  // second is a no-op
  EXPECT_EQ(call.phase, CallPhase::Terminated);
}

TEST(Hangup, LostByeLeavesCalleeEstablished) {
  // Authoritative teardown is the orchestrator deadline; the callee side
  // here just never sees the Bye.
  transport::LocalExchange exchange;
  transport::LocalResolver resolver;
  VirtualClock clock;
  transport::ReceiverEndpoint callee(exchange, resolver.resolve("callee"));
  transport::CallerEndpoint caller(exchange, resolver.resolve("caller"), 7);
  auto call = caller.establish_call(callee.address(), 1000, clock);

  exchange.drop_next_signal();
  caller.hangup(call, callee.address());
  EXPECT_EQ(call.phase, CallPhase::Terminated);
  EXPECT_EQ(callee.call(call.call_id)->phase, CallPhase::Established);
}

TEST(SendMedia, RejectedUnlessEstablished) {
  transport::CallState call;  // Idle
  transport::InMemoryChannel channel;
  auto profile = netem::ImpairmentProfile::unconstrained();
  try {
    transport::send_media(call, {}, profile, profile, channel);
    FAIL() << "expected CallNotEstablished";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Err::CallNotEstablished);
  }
}

TEST(SendMedia, AfterByeRejected) {
  transport::LocalExchange exchange;
  transport::LocalResolver resolver;
  VirtualClock clock;
  transport::ReceiverEndpoint callee(exchange, resolver.resolve("callee"));
  transport::CallerEndpoint caller(exchange, resolver.resolve("caller"), 7);
  auto call = caller.establish_call(callee.address(), 1000, clock);
  caller.hangup(call, callee.address());
  transport::InMemoryChannel channel;
  auto profile = netem::ImpairmentProfile::unconstrained();
  EXPECT_THROW(transport::send_media(call, {}, profile, profile, channel), Error);
}

TEST(SendMedia, LosslessChannelDeliversEverything) {
  transport::LocalExchange exchange;
  transport::LocalResolver resolver;
  VirtualClock clock;
  transport::ReceiverEndpoint callee(exchange, resolver.resolve("callee"));
  transport::CallerEndpoint caller(exchange, resolver.resolve("caller"), 7);
  auto call = caller.establish_call(callee.address(), 1000, clock);

  std::vector<netem::TimedPacket> stream;
  audio::AudioClip clip = testutil::make_tone(440, 10000, 16.0);
  auto packets = audio::packetize(clip, 20);
  for (const auto& p : packets) {
    stream.push_back({p, static_cast<double>(p.seq) * 20.0});
  }
  transport::InMemoryChannel channel;
  auto profile = netem::ImpairmentProfile::unconstrained();
  auto delivered = transport::send_media(call, stream, profile, profile, channel);
  EXPECT_EQ(delivered.size(), 800u);
}

TEST(SendMedia, SeededLossMatchesNetemDropSet) {
  transport::LocalExchange exchange;
  transport::LocalResolver resolver;
  VirtualClock clock;
  transport::ReceiverEndpoint callee(exchange, resolver.resolve("callee"));
  transport::CallerEndpoint caller(exchange, resolver.resolve("caller"), 7);
  auto call = caller.establish_call(callee.address(), 1000, clock);

  std::vector<netem::TimedPacket> stream;
  for (std::uint32_t i = 0; i < 10000; ++i) {
    audio::MediaPacket p;
    p.seq = i;
    p.payload.assign(160, 1);
    stream.push_back({p, i * 20.0});
  }
  auto up = netem::ImpairmentProfile::unconstrained(42);
  up.loss_prob = 0.1;
  auto down = netem::ImpairmentProfile::unconstrained(43);

  auto schedule = netem::effective_path(stream, up, down);
  size_t survivors = 0;
  for (const auto& d : schedule) {
    if (!d.dropped()) ++survivors;
  }
  transport::InMemoryChannel channel;
  auto delivered = transport::send_media(call, stream, up, down, channel);
  EXPECT_EQ(delivered.size(), survivors);
  EXPECT_EQ(delivered.size(), 10000u - (10000u - survivors));
}

TEST(UdpSignaling, InviteAnswerByeOverLoopback) {
  transport::UdpReceiverAgent agent({"127.0.0.1", 15061, 4500});
  agent.start();
  transport::UdpCallerEndpoint caller({"127.0.0.1", 15100, 4600}, 99);

  auto call = caller.establish_call(agent.address(), 3000);
  EXPECT_EQ(call.phase, CallPhase::Established);
  EXPECT_EQ(call.remote_media_port, agent.address().media_port);

  caller.hangup(call, agent.address());
  WallClock wall;
  double deadline = wall.now_ms() + 2000;
  while (!agent.bye_seen() && wall.now_ms() < deadline) wall.sleep_ms(10);
  EXPECT_TRUE(agent.bye_seen());
  agent.stop();
}

TEST(UdpSignaling, NoListenerTimesOut) {
  transport::UdpCallerEndpoint caller({"127.0.0.1", 15200, 4700}, 99);
  EndpointAddress ghost{"127.0.0.1", 15999, 4800};
  try {
    caller.establish_call(ghost, 300);
    FAIL() << "expected Timeout";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Err::Timeout);
  }
}

std::vector<std::pair<std::uint32_t, std::vector<std::uint8_t>>> multiset_of(
    const std::vector<transport::DeliveredPacket>& delivered) {
  std::vector<std::pair<std::uint32_t, std::vector<std::uint8_t>>> out;
  out.reserve(delivered.size());
  for (const auto& d : delivered) out.push_back({d.packet.seq, d.packet.payload});
  std::sort(out.begin(), out.end());
  return out;
}

// The in-memory channel and the loopback-datagram channel deliver identical
// packet multisets under identical netem schedules and seeds.
TEST(BackendEquivalence, RandomProfilesAndSeeds) {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 6; ++trial) {
    netem::ImpairmentProfile up;
    up.rate_kbps = 200 + static_cast<int>(rng() % 2000);
    up.loss_prob = static_cast<double>(rng() % 20) / 100.0;
    up.jitter_ms = static_cast<double>(rng() % 10);
    up.seed = rng();
    netem::ImpairmentProfile down = netem::ImpairmentProfile::unconstrained(rng());

    std::vector<netem::TimedPacket> stream;
    for (std::uint32_t i = 0; i < 400; ++i) {
      audio::MediaPacket p;
      p.seq = i;
      p.payload.resize(100 + rng() % 500);
      for (auto& b : p.payload) b = static_cast<std::uint8_t>(rng());
      stream.push_back({p, i * 5.0});
    }
    auto schedule = netem::effective_path(stream, up, down);

    transport::InMemoryChannel mem;
    transport::UdpLoopbackChannel udp(3000 + trial * 7);
    auto mem_result = mem.transmit(schedule);
    auto udp_result = udp.transmit(schedule);
    EXPECT_EQ(multiset_of(mem_result), multiset_of(udp_result)) << "trial " << trial;
  }
}

}  // namespace
