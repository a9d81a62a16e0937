#include <doctest.h>

#include <array>
#include <cmath>
#include <deque>
#include <set>

#include "lme/protocol.hpp"

using namespace lme;

namespace {

KindMask kinds(std::initializer_list<MessageKind> ks) {
  KindMask m = 0;
  for (MessageKind k : ks) m |= kind_bit(k);
  return m;
}

Transition run(const NodeState& s, ActionId a, PortSet snapshot = {}, std::optional<Incoming> in = std::nullopt,
               ActionContext ctx = {}) {
  Rng rng(123);
  return execute(s, a, snapshot, in, rng, ctx);
}

std::set<Port> ports_of(const std::vector<Send>& sends) {
  std::set<Port> out;
  for (const auto& [p, m] : sends) out.insert(p);
  return out;
}

bool sends_equal(const std::vector<Send>& sends, std::initializer_list<Send> expected) {
  std::vector<Send> a(sends), b(expected);
  auto by_port = [](const Send& x, const Send& y) { return x.first < y.first; };
  std::sort(a.begin(), a.end(), by_port);
  std::sort(b.begin(), b.end(), by_port);
  return a == b;
}

}  // namespace

TEST_CASE("enabled_actions") {
  SUBCASE("fresh node with nothing pending") {
    const Enablement e = enabled_actions(NodeState{}, 0, false, false, {});
    CHECK(e.enabled.empty());
    CHECK(e.pre_enabled.empty());
  }
  SUBCASE("CheckStart once every ready is in") {
    NodeState s;
    s.state = LockState::Prepare;
    s.L = PortSet{0, 2, 3};
    s.R = PortSet{0, 2, 3};
    CHECK(enabled_actions(s, 0, false, false, {}).enabled.contains(ActionId::CheckStart));
    s.R = PortSet{0, 2};
    CHECK_FALSE(enabled_actions(s, 0, false, false, {}).enabled.contains(ActionId::CheckStart));
  }
  SUBCASE("CheckWin pre-enabled when the missing win's port vanished") {
    NodeState s;
    s.state = LockState::Compete;
    s.L = PortSet{0, 1, 2};
    s.W.insert(0, true);
    s.W.insert(1, true);
    const Enablement e = enabled_actions(s, 0, false, false, PortSet{2});
    CHECK_FALSE(e.enabled.contains(ActionId::CheckWin));
    CHECK(e.pre_enabled.contains(ActionId::CheckWin));
    // The CleanUp oracle: applying CleanUp by hand enables it.
    NodeState cleaned = s;
    Effects scratch;
    clean_up(cleaned, PortSet{2}, scratch);
    CHECK(cleaned.L == PortSet{0, 1});
    CHECK(guards(cleaned, 0, false, false).contains(ActionId::CheckWin));
    // Something must be runnable to process the detector.
    CHECK(e.enabled.contains(ActionId::CleanUpAction));
  }
  SUBCASE("CheckWin pre-enabled when a W entry sits on a vanished port") {
    NodeState s;
    s.state = LockState::Compete;
    s.L = PortSet{0, 1, 2, 3};
    s.W.insert(0, true);
    s.W.insert(1, false);
    s.W.insert(3, true);
    const Enablement e = enabled_actions(s, 0, false, false, PortSet{2});
    CHECK(e.pre_enabled.contains(ActionId::CheckWin));
  }
  SUBCASE("receives follow message availability") {
    const ActionSet a = enabled_actions(NodeState{}, kinds({MessageKind::Prepare, MessageKind::Win}), false, false, {})
                            .enabled;
    CHECK(a.contains(ActionId::ReceivePrepare));
    CHECK(a.contains(ActionId::ReceiveWin));
    CHECK_FALSE(a.contains(ActionId::ReceiveReady));
  }
  SUBCASE("API calls") {
    const ActionSet a = enabled_actions(NodeState{}, 0, true, true, {}).enabled;
    CHECK(a.contains(ActionId::InitLock));
    CHECK(a.contains(ActionId::InitUnlock));
  }
  SUBCASE("CleanUpAction guard") {
    NodeState s;
    s.phase = Phase::Prepare;
    CHECK(guards(s, 0, false, false).contains(ActionId::CleanUpAction));
    s.phase = Phase::None;
    s.state = LockState::Unlock;
    s.L = PortSet{0, 1};
    CHECK(guards(s, 0, false, false).contains(ActionId::CleanUpAction));
  }
}

TEST_CASE("InitLock on a node with neighbors on ports 1 and 3") {
  ActionContext ctx;
  ctx.neighbor_ports = PortSet{1, 3};
  ctx.lock_called = true;
  const Transition t = run(NodeState{}, ActionId::InitLock, {}, std::nullopt, ctx);
  CHECK(t.state.state == LockState::Prepare);
  CHECK(t.state.L == PortSet{0, 1, 3});
  CHECK(sends_equal(t.effects.sends, {{0, Message::prepare()}, {1, Message::prepare()}, {3, Message::prepare()}}));
  CHECK(t.effects.api_result == ApiResult::None);

  SUBCASE("pair-only target") {
    ctx.lock_target = PortSet{0, 3};
    const Transition p = run(NodeState{}, ActionId::InitLock, {}, std::nullopt, ctx);
    CHECK(p.state.L == PortSet{0, 3});
  }
  SUBCASE("rejected while busy") {
    NodeState busy;
    busy.state = LockState::Compete;
    busy.L = PortSet{0};
    const Transition r = run(busy, ActionId::InitLock, {}, std::nullopt, ctx);
    CHECK(r.effects.api_result == ApiResult::RequestRejected);
    CHECK(r.state == busy);
    CHECK(r.effects.send_count() == 0);
  }
}

TEST_CASE("ReceivePrepare") {
  SUBCASE("competition running: put on hold, no reply") {
    NodeState s;
    s.phase = Phase::Compete;
    s.C = PortSet{1};
    const Transition t = run(s, ActionId::ReceivePrepare, {}, Incoming{2, Message::prepare()});
    CHECK(t.state.H == PortSet{2});
    CHECK(t.effects.send_count() == 0);
  }
  SUBCASE("otherwise: applicant, ready reply") {
    const Transition t = run(NodeState{}, ActionId::ReceivePrepare, {}, Incoming{2, Message::prepare()});
    CHECK(t.state.A == PortSet{2});
    CHECK(t.state.phase == Phase::Prepare);
    CHECK(sends_equal(t.effects.sends, {{2, Message::ready()}}));
  }
  SUBCASE("phase None while unlocking: applicant branch") {
    NodeState s;
    s.state = LockState::Unlock;
    s.L = PortSet{0, 1};
    const Transition t = run(s, ActionId::ReceivePrepare, {}, Incoming{1, Message::prepare()});
    CHECK(t.state.A == PortSet{1});
  }
}

TEST_CASE("ReceiveRequest") {
  SUBCASE("applicant becomes candidate") {
    NodeState s;
    s.phase = Phase::Prepare;
    s.A = PortSet{1, 2};
    const Transition t = run(s, ActionId::ReceiveRequest, {}, Incoming{1, Message::request_lock(6)});
    CHECK(t.state.A == PortSet{2});
    CHECK(t.state.C == PortSet{1});
    CHECK(t.state.P.contains(1));
    CHECK(t.state.P.priority(1) == 6);
    CHECK(t.state.phase == Phase::Compete);
    CHECK(t.effects.send_count() == 0);
  }
  SUBCASE("retry from an existing candidate") {
    NodeState s;
    s.phase = Phase::Compete;
    s.C = PortSet{1, 2};
    s.P.insert(2, 1);
    const Transition t = run(s, ActionId::ReceiveRequest, {}, Incoming{1, Message::request_lock(4)});
    CHECK(t.state.C == PortSet{1, 2});
    CHECK(t.state.P.size() == 2);
  }
  SUBCASE("late applicant after a decision loses at once") {
    NodeState s;
    s.phase = Phase::Compete;
    s.C = PortSet{1};  // winner of the last decision, no priority on record
    s.A = PortSet{0};
    const Transition t = run(s, ActionId::ReceiveRequest, {}, Incoming{0, Message::request_lock(7)});
    CHECK(t.state.C == PortSet{0, 1});
    CHECK(t.state.A.empty());
    CHECK_FALSE(t.state.P.contains(0));
    CHECK(sends_equal(t.effects.sends, {{0, Message::win(false)}}));

    ActionContext plain;
    plain.late_applicant_loses = false;
    const Transition lit = run(s, ActionId::ReceiveRequest, {}, Incoming{0, Message::request_lock(7)}, plain);
    CHECK(lit.state.P.contains(0));
    CHECK(lit.effects.send_count() == 0);
  }
}

TEST_CASE("CheckPriorities") {
  SUBCASE("tie: everybody loses") {
    NodeState s;
    s.phase = Phase::Compete;
    s.C = PortSet{1, 2};
    s.P.insert(1, 5);
    s.P.insert(2, 5);
    const Transition t = run(s, ActionId::CheckPriorities);
    CHECK(sends_equal(t.effects.sends, {{1, Message::win(false)}, {2, Message::win(false)}}));
    CHECK(t.state.P.size() == 0);
  }
  SUBCASE("already locked: the sole candidate loses") {
    NodeState s;
    s.lock = 4;
    s.phase = Phase::Compete;
    s.C = PortSet{1};
    s.P.insert(1, 7);
    const Transition t = run(s, ActionId::CheckPriorities);
    CHECK(sends_equal(t.effects.sends, {{1, Message::win(false)}}));
  }
  SUBCASE("unique highest wins") {
    NodeState s;
    s.phase = Phase::Compete;
    s.C = PortSet{0, 1, 3};
    s.P.insert(0, 2);
    s.P.insert(1, 6);
    s.P.insert(3, 5);
    const Transition t = run(s, ActionId::CheckPriorities);
    CHECK(sends_equal(t.effects.sends, {{0, Message::win(false)}, {1, Message::win(true)}, {3, Message::win(false)}}));
    CHECK(t.state.C == s.C);
  }
  SUBCASE("not enabled until every candidate has a priority") {
    NodeState s;
    s.phase = Phase::Compete;
    s.C = PortSet{1, 2};
    s.P.insert(1, 5);
    CHECK_THROWS_AS(run(s, ActionId::CheckPriorities), ProtocolError);
  }
}

TEST_CASE("CheckWin") {
  NodeState s;
  s.state = LockState::Compete;
  s.L = PortSet{0, 1};
  SUBCASE("a loss restarts the trial") {
    s.W.insert(0, true);
    s.W.insert(1, false);
    const Transition t = run(s, ActionId::CheckWin);
    CHECK(t.state.state == LockState::Compete);
    CHECK(t.state.W.size() == 0);
    CHECK(ports_of(t.effects.sends) == std::set<Port>{0, 1});
    for (const auto& [p, m] : t.effects.sends) CHECK(m.kind == MessageKind::RequestLock);
  }
  SUBCASE("all wins: set the locks") {
    s.W.insert(0, true);
    s.W.insert(1, true);
    s.R = PortSet{0};
    const Transition t = run(s, ActionId::CheckWin);
    CHECK(t.state.state == LockState::Win);
    CHECK(t.state.R.empty());
    CHECK(sends_equal(t.effects.sends, {{0, Message::set_lock()}, {1, Message::set_lock()}}));
  }
}

TEST_CASE("ReceiveSetLock sets the lock before CleanUp") {
  NodeState s;
  s.phase = Phase::Compete;
  s.C = PortSet{2};
  s.H = PortSet{1};
  const Transition t = run(s, ActionId::ReceiveSetLock, {}, Incoming{2, Message::set_lock()});
  CHECK(t.state.lock == Port{2});
  CHECK(t.state.C.empty());
  // C emptied, so the same CleanUp promotes the held node.
  CHECK(t.state.A == PortSet{1});
  CHECK(t.state.phase == Phase::Prepare);
  CHECK(sends_equal(t.effects.cleanup_sends, {{1, Message::ready()}}));
  CHECK(sends_equal(t.effects.sends, {{2, Message::ack_lock()}}));

  SUBCASE("the sender's port is in the snapshot") {
    const Transition u = run(s, ActionId::ReceiveSetLock, PortSet{2}, Incoming{2, Message::set_lock()});
    CHECK_FALSE(u.state.lock);
  }
}

TEST_CASE("CleanUp on a severed lock holder") {
  NodeState s;
  s.lock = 3;
  s.phase = Phase::Compete;
  s.C = PortSet{3};
  s.H = PortSet{1};
  NodeState n = s;
  Effects out;
  clean_up(n, PortSet{3}, out);
  CHECK_FALSE(n.lock);
  CHECK(n.C.empty());
  CHECK(n.A == PortSet{1});
  CHECK(n.H.empty());
  CHECK(n.phase == Phase::Prepare);
  CHECK(sends_equal(out.cleanup_sends, {{1, Message::ready()}}));

  SUBCASE("port 0 is never removed") {
    NodeState z;
    z.L = PortSet{0, 1};
    Effects o;
    clean_up(z, PortSet{0, 1}, o);
    CHECK(z.L == PortSet{0});
  }
}

TEST_CASE("unlock path") {
  NodeState s;
  s.state = LockState::Locked;
  s.lock = 0;
  s.L = PortSet{0, 2};
  ActionContext ctx;
  ctx.unlock_called = true;
  Transition t = run(s, ActionId::InitUnlock, {}, std::nullopt, ctx);
  CHECK(t.state.state == LockState::Unlock);
  CHECK(sends_equal(t.effects.sends, {{0, Message::release_lock()}, {2, Message::release_lock()}}));

  t = run(t.state, ActionId::ReceiveRelease, {}, Incoming{0, Message::release_lock()});
  CHECK_FALSE(t.state.lock);
  CHECK(sends_equal(t.effects.sends, {{0, Message::ack_unlock()}}));

  t = run(t.state, ActionId::ReceiveAckUnlock, {}, Incoming{0, Message::ack_unlock()});
  t = run(t.state, ActionId::ReceiveAckUnlock, {}, Incoming{2, Message::ack_unlock()});
  t = run(t.state, ActionId::CheckUnlocked);
  CHECK(t.state.state == LockState::None);
  CHECK(t.effects.api_result == ApiResult::UnlockSucceeded);

  SUBCASE("unlock without a lock is rejected") {
    const Transition r = run(NodeState{}, ActionId::InitUnlock, {}, std::nullopt, ctx);
    CHECK(r.effects.api_result == ApiResult::RequestRejected);
  }
}

TEST_CASE("isolated node happy path") {
  // One node, loopback only: deliver self messages in order and always run
  // whichever check is enabled.
  NodeState s;
  Rng rng(9);
  std::deque<Message> loop;
  ActionContext ctx;
  ctx.lock_called = true;
  auto step = [&](ActionId a, std::optional<Incoming> in) {
    const Transition t = execute(s, a, {}, in, rng, ctx);
    for (const auto& [p, m] : t.effects.cleanup_sends) loop.push_back(m);
    for (const auto& [p, m] : t.effects.sends) {
      CHECK(p == kSelfPort);
      loop.push_back(m);
    }
    s = t.state;
    return t.effects;
  };
  step(ActionId::InitLock, std::nullopt);
  ctx.lock_called = false;
  std::optional<Effects> done;
  for (int guard = 0; guard < 50 && !done; ++guard) {
    const ActionSet en = guards(s, 0, false, false);
    if (!loop.empty()) {
      const Message m = loop.front();
      loop.pop_front();
      step(receive_action(m.kind), Incoming{kSelfPort, m});
    } else if (en.contains(ActionId::CheckDone)) {
      done = step(ActionId::CheckDone, std::nullopt);
    } else {
      bool ran = false;
      for (ActionId a : {ActionId::CheckStart, ActionId::CheckPriorities, ActionId::CheckWin}) {
        if (en.contains(a)) {
          step(a, std::nullopt);
          ran = true;
          break;
        }
      }
      REQUIRE(ran);
    }
  }
  REQUIRE(done);
  CHECK(done->api_result == ApiResult::LockSucceeded);
  CHECK(done->locked == PortSet{0});
  CHECK(s.lock == Port{0});
  CHECK(s.state == LockState::Locked);
}

TEST_CASE("NotEnabled and bad messages") {
  CHECK_THROWS_AS(run(NodeState{}, ActionId::CheckStart), ProtocolError);
  CHECK_THROWS_AS(run(NodeState{}, ActionId::ReceiveReady), ProtocolError);
  CHECK_THROWS_AS(run(NodeState{}, ActionId::ReceiveReady, {}, Incoming{0, Message::prepare()}), ProtocolError);
  NodeState s;
  s.phase = Phase::Prepare;
  try {
    run(s, ActionId::CleanUpAction, {}, Incoming{0, Message::ready()});
    FAIL("expected BadMessage");
  } catch (const ProtocolError& e) {
    CHECK(e.code() == ProtocolErrorCode::BadMessage);
  }
  Effects e;
  e.send(1, Message::ready());
  try {
    e.send(1, Message::prepare());
    FAIL("expected DuplicateSend");
  } catch (const ProtocolError& err) {
    CHECK(err.code() == ProtocolErrorCode::DuplicateSend);
  }
}

TEST_CASE("draw_priority") {
  SUBCASE("K=1") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) CHECK(draw_priority(rng, 1) == 0);
  }
  SUBCASE("same seed, same draw") {
    Rng a(77), b(77);
    for (int i = 0; i < 1000; ++i) CHECK(draw_priority(a, 8) == draw_priority(b, 8));
  }
  SUBCASE("K=8 is uniform") {
    Rng rng(derive_seed(2024, 0x1000));
    const int n = 1'000'000;
    std::array<long, 8> counts{};
    for (int i = 0; i < n; ++i) ++counts[draw_priority(rng, 8)];
    const double expect = n / 8.0;
    const double sigma = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
    double chi2 = 0;
    for (long c : counts) {
      CHECK(std::abs(c - expect) <= 3 * sigma);
      chi2 += (c - expect) * (c - expect) / expect;
    }
    // 7 degrees of freedom, 99.9% quantile.
    CHECK(chi2 < 24.32);
  }
}

TEST_CASE("state legality table") {
  using S = LockState;
  CHECK(legal_state_transition(S::None, S::Prepare));
  CHECK(legal_state_transition(S::Prepare, S::Compete));
  CHECK(legal_state_transition(S::Compete, S::Compete));
  CHECK(legal_state_transition(S::Compete, S::Win));
  CHECK(legal_state_transition(S::Win, S::Locked));
  CHECK(legal_state_transition(S::Locked, S::Unlock));
  CHECK(legal_state_transition(S::Unlock, S::None));
  CHECK_FALSE(legal_state_transition(S::None, S::Compete));
  CHECK_FALSE(legal_state_transition(S::Win, S::Compete));
  CHECK_FALSE(legal_state_transition(S::Locked, S::None));
}

TEST_CASE("state codec") {
  Rng rng(31);
  for (int delta : {1, 2, 4, 8, 16, 31}) {
    for (int k : {1, 8, 256}) {
      const std::size_t bits = state_bits(delta, k);
      if (k == 8) CHECK(bits <= 32u * static_cast<std::size_t>(delta));
      for (int trial = 0; trial < 50; ++trial) {
        NodeState s;
        const std::uint32_t mask = (delta + 1 >= 32) ? 0xFFFFFFFFu : ((1u << (delta + 1)) - 1);
        auto rand_set = [&] { return PortSet(static_cast<std::uint32_t>(rng()) & mask); };
        const auto pick = uniform_below(rng, static_cast<std::uint64_t>(delta) + 2);
        if (pick > 0) s.lock = static_cast<Port>(pick - 1);
        s.state = static_cast<LockState>(uniform_below(rng, 6));
        s.phase = static_cast<Phase>(uniform_below(rng, 3));
        s.L = rand_set();
        s.R = rand_set();
        s.H = rand_set();
        s.A = rand_set();
        s.C = rand_set();
        rand_set().for_each([&](Port p) { s.W.insert(p, rng() & 1u); });
        rand_set().for_each([&](Port p) { s.P.insert(p, static_cast<std::uint8_t>(uniform_below(rng, k))); });
        const EncodedState e = encode_state(s, delta, k);
        CHECK(e.bits == bits);
        CHECK(decode_state(e, delta, k) == s);
      }
    }
  }
}
