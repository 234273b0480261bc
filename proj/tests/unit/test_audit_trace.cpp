#include <doctest.h>

#include <atomic>
#include <fstream>
#include <map>
#include <random>
#include <thread>

#include "safeguard/audit_trace.hpp"
#include "safeguard/error.hpp"
#include "temp_dir.hpp"

using namespace safeguard;
using safeguard::testing::TempDir;

namespace {

Clock fixed_clock(const char* ts) {
  const Timestamp t = parse_rfc3339(ts);
  return [t] { return t; };
}

AuditTrace::Options opts(const TempDir& dir, bool fsync = false) {
  return {dir.path(), fsync, fixed_clock("2024-03-01T10:00:00Z")};
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected safeguard::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_SUITE("time_util") {
  TEST_CASE("rfc3339 round trip and offsets") {
    CHECK(format_rfc3339(parse_rfc3339("2022-06-01T12:30:00Z")) == "2022-06-01T12:30:00Z");
    CHECK(format_rfc3339(parse_rfc3339("2022-06-01T12:30:00.25+02:00")) ==
          "2022-06-01T10:30:00.250Z");
    CHECK(format_date(utc_day(parse_rfc3339("2022-06-01T23:30:00-01:00"))) == "2022-06-02");
    CHECK(code_of([] { parse_rfc3339("2022-06-01 12:30:00"); }) == ErrorCode::InvalidDate);
    CHECK(code_of([] { parse_rfc3339("2022-02-30T00:00:00Z"); }) == ErrorCode::InvalidDate);
    CHECK(code_of([] { parse_date("2022/01/01"); }) == ErrorCode::InvalidDate);
  }
}

TEST_SUITE("append_exchange") {
  TEST_CASE("three appends to a fresh conversation") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    CHECK(trace.append_exchange("c1", "p1", Speaker::User, "hi") == 0);
    CHECK(trace.append_exchange("c1", "p1", Speaker::Bot, "hello") == 1);
    CHECK(trace.append_exchange("c1", "p1", Speaker::User, "bye") == 2);
  }

  TEST_CASE("independent counters per conversation") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    CHECK(trace.append_exchange("a", "p1", Speaker::User, "x") == 0);
    CHECK(trace.append_exchange("b", "p1", Speaker::User, "y") == 0);
    CHECK(trace.append_exchange("a", "p1", Speaker::Bot, "z") == 1);
  }

  TEST_CASE("10000 seeded interleaved appends across 50 conversations") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    std::mt19937_64 rng(10000);
    std::vector<std::string> schedule(10000);
    for (auto& conv : schedule) conv = "conv-" + std::to_string(rng() % 50);

    std::map<std::string, std::vector<std::uint64_t>> got;
    for (const auto& conv : schedule) {
      got[conv].push_back(trace.append_exchange(conv, "p", Speaker::User, "m"));
    }
    // Oracle: replay the schedule and count per conversation.
    std::map<std::string, std::uint64_t> counts;
    for (const auto& conv : schedule) ++counts[conv];
    REQUIRE(got.size() == counts.size());
    for (const auto& [conv, positions] : got) {
      REQUIRE(positions.size() == counts[conv]);
      for (std::uint64_t i = 0; i < positions.size(); ++i) CHECK(positions[i] == i);
    }
  }

  TEST_CASE("conversation is bound to its first persona") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    trace.append_exchange("c", "p1", Speaker::User, "x");
    CHECK(code_of([&] { trace.append_exchange("c", "p2", Speaker::User, "x"); }) ==
          ErrorCode::PersonaMismatch);
  }

  TEST_CASE("storage failure records nothing and consumes no position") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    trace.append_exchange("c", "p", Speaker::User, "ok", parse_rfc3339("2024-03-01T00:00:00Z"));
    // Route the next day's segment to a full device.
    std::filesystem::create_symlink("/dev/full", dir / "exchanges-2024-03-02.jsonl");
    CHECK(code_of([&] {
            trace.append_exchange("c", "p", Speaker::User, "lost",
                                  parse_rfc3339("2024-03-02T00:00:00Z"));
          }) == ErrorCode::StorageFailure);
    CHECK(trace.get_trace(TraceSelector::conversation("c")).size() == 1);
    CHECK(trace.append_exchange("c", "p", Speaker::User, "retry") == 1);
  }

  TEST_CASE("durable with fsync enabled") {
    TempDir dir;
    AuditTrace trace(opts(dir, true));
    CHECK(trace.append_exchange("c", "p", Speaker::User, "x") == 0);
    CHECK(std::filesystem::file_size(dir / "exchanges-2024-03-01.jsonl") > 0);
  }
}

TEST_SUITE("get_trace") {
  TEST_CASE("read back in order") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    trace.append_exchange("c1", "p1", Speaker::User, "hi");
    trace.append_exchange("c1", "p1", Speaker::Bot, "hello");
    trace.append_exchange("c1", "p1", Speaker::User, "bye");
    const auto t = trace.get_trace(TraceSelector::conversation("c1"));
    REQUIRE(t.size() == 3);
    CHECK(t[0].text == "hi");
    CHECK(t[1].speaker == Speaker::Bot);
    CHECK(t[2].log_position == 2);
    CHECK(t[2].timestamp == "2024-03-01T10:00:00Z");
  }

  TEST_CASE("persona trace groups by conversation") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    trace.append_exchange("c2", "p1", Speaker::User, "a");
    trace.append_exchange("c1", "p1", Speaker::User, "b");
    trace.append_exchange("c2", "p1", Speaker::Bot, "c");
    trace.append_exchange("c1", "p1", Speaker::Bot, "d");
    trace.append_exchange("c3", "p2", Speaker::User, "other");
    const auto t = trace.get_trace(TraceSelector::persona("p1"));
    REQUIRE(t.size() == 4);
    CHECK(t[0].conversation_id == "c1");
    CHECK(t[1].conversation_id == "c1");
    CHECK(t[2].conversation_id == "c2");
    CHECK(t[3].text == "c");
  }

  TEST_CASE("unknown selector is empty") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    CHECK(trace.get_trace(TraceSelector::conversation("nope")).empty());
    CHECK(trace.get_trace(TraceSelector::persona("nope")).empty());
  }

  TEST_CASE("append-only: restart replays the exact append sequence") {
    TempDir dir;
    std::vector<ExchangeRecord> before;
    {
      AuditTrace trace(opts(dir));
      // Spans two UTC days to exercise multi-segment replay.
      trace.append_exchange("c", "p", Speaker::User, "one", parse_rfc3339("2024-03-01T23:59:59Z"));
      trace.append_exchange("c", "p", Speaker::Bot, "two", parse_rfc3339("2024-03-02T00:00:01Z"));
      trace.append_exchange("d", "p", Speaker::User, "three");
      before = trace.all_exchanges();
    }
    AuditTrace reopened(opts(dir));
    CHECK(reopened.all_exchanges() == before);
    CHECK(reopened.append_exchange("c", "p", Speaker::User, "four") == 2);
  }

  TEST_CASE("torn trailing line is dropped on restart") {
    TempDir dir;
    {
      AuditTrace trace(opts(dir));
      trace.append_exchange("c", "p", Speaker::User, "whole");
    }
    std::ofstream(dir / "exchanges-2024-03-01.jsonl", std::ios::app) << "{\"log_position\":1,\"conv";
    AuditTrace reopened(opts(dir));
    CHECK(reopened.get_trace(TraceSelector::conversation("c")).size() == 1);
    CHECK(reopened.append_exchange("c", "p", Speaker::User, "next") == 1);
  }

  TEST_CASE("corrupt interior line refuses to start") {
    TempDir dir;
    std::ofstream(dir / "exchanges-2024-03-01.jsonl") << "garbage\n{}\n";
    CHECK(code_of([&] { AuditTrace t(opts(dir)); }) == ErrorCode::StorageFailure);
  }

  TEST_CASE("concurrent readers observe gapless prefixes") {
    TempDir dir;
    AuditTrace trace(opts(dir));
    std::atomic<bool> done{false};
    std::atomic<int> violations{0};

    std::thread reader([&] {
      while (!done) {
        for (const char* c : {"a", "b", "c"}) {
          const auto t = trace.get_trace(TraceSelector::conversation(c));
          for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i].log_position != i) ++violations;
          }
        }
      }
    });
    std::vector<std::thread> writers;
    for (const char* c : {"a", "b", "c"}) {
      writers.emplace_back([&trace, c] {
        for (int i = 0; i < 500; ++i) trace.append_exchange(c, "p", Speaker::User, "m");
      });
    }
    for (auto& w : writers) w.join();
    done = true;
    reader.join();
    CHECK(violations == 0);
    CHECK(trace.all_exchanges().size() == 1500);
  }
}

TEST_SUITE("flags and ratings") {
  struct Fixture {
    TempDir dir;
    AuditTrace trace{opts(dir)};
    Fixture() {
      trace.append_exchange("c", "p", Speaker::User, "hi");
      trace.append_exchange("c", "p", Speaker::Bot, "hello");
      trace.append_exchange("c", "p", Speaker::User, "bye");
    }
  };

  TEST_CASE_FIXTURE(Fixture, "flag happy path") {
    const auto f = trace.flag_response("c", 1, "rude");
    CHECK(f.resolution == FlagRecord::Resolution::Open);
    CHECK(f.flag_id == "flag-00000001");
    CHECK(trace.find_flag(f.flag_id) == f);
  }

  TEST_CASE_FIXTURE(Fixture, "flag out of bounds") {
    CHECK(code_of([&] { trace.flag_response("c", 99, "x"); }) == ErrorCode::UnknownTarget);
    CHECK(code_of([&] { trace.flag_response("zz", 0, "x"); }) == ErrorCode::UnknownTarget);
  }

  TEST_CASE_FIXTURE(Fixture, "flags on the same target are not deduplicated") {
    const auto a = trace.flag_response("c", 1, "x");
    const auto b = trace.flag_response("c", 1, "x");
    CHECK(a.flag_id != b.flag_id);
    CHECK(trace.flags().size() == 2);
  }

  TEST_CASE_FIXTURE(Fixture, "resolution happens once and survives restart") {
    const auto f = trace.flag_response("c", 1, "x");
    trace.resolve_flag(f.flag_id, "dismiss");
    CHECK(code_of([&] { trace.resolve_flag(f.flag_id, "keep"); }) ==
          ErrorCode::InvalidTransition);
    AuditTrace reopened(opts(dir));
    const auto g = reopened.find_flag(f.flag_id);
    REQUIRE(g);
    CHECK(g->resolution == FlagRecord::Resolution::Resolved);
    CHECK(g->decision == "dismiss");
    CHECK(reopened.flag_response("c", 0, "y").flag_id == "flag-00000002");
  }

  TEST_CASE_FIXTURE(Fixture, "ratings") {
    const auto up = trace.record_rating("c", 1, +1);
    CHECK(up.rating == 1);
    CHECK_FALSE(up.suggestion);
    const auto down = trace.record_rating("c", 1, -1, "a kinder reply");
    CHECK(down.suggestion == "a kinder reply");
    CHECK(code_of([&] { trace.record_rating("c", 0, 1); }) == ErrorCode::NotBotTurn);
    CHECK(code_of([&] { trace.record_rating("c", 7, 1); }) == ErrorCode::UnknownTarget);
    CHECK(code_of([&] { trace.record_rating("c", 1, 0); }) == ErrorCode::InvalidRating);
    CHECK(code_of([&] { trace.record_rating("c", 1, 5); }) == ErrorCode::InvalidRating);

    AuditTrace reopened(opts(dir));
    CHECK(reopened.ratings() == trace.ratings());
    const DateRange march1{parse_date("2024-03-01"), parse_date("2024-03-01")};
    const DateRange later{parse_date("2024-04-01"), parse_date("2024-04-30")};
    CHECK(reopened.ratings(march1).size() == 2);
    CHECK(reopened.ratings(later).empty());
  }

  TEST_CASE_FIXTURE(Fixture, "referential integrity holds for every stored flag and rating") {
    trace.flag_response("c", 2, "x");
    trace.record_rating("c", 1, 1);
    for (const auto& f : trace.flags()) CHECK(trace.find_exchange(f.conversation_id, f.log_position));
    for (const auto& r : trace.ratings()) CHECK(trace.find_exchange(r.conversation_id, r.log_position));
  }

  TEST_CASE_FIXTURE(Fixture, "event streams") {
    trace.append_event("gate_reports", {{"id", 1}});
    trace.append_event("gate_reports", {{"id", 2}});
    CHECK(trace.events("gate_reports").size() == 2);
    CHECK(code_of([&] { trace.append_event("../x", {}); }) == ErrorCode::StorageFailure);
    AuditTrace reopened(opts(dir));
    CHECK(reopened.events("gate_reports").back()["id"] == 2);
  }
}
