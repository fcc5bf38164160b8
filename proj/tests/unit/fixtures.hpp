#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "fanranker/ingestion.hpp"

namespace fanranker::testing {

inline constexpr EpochSeconds kDay = kSecondsPerDay;
inline constexpr EpochSeconds kT0 = 1700000000;

inline LiveSession make_session(std::uint64_t streamer, std::string id, EpochSeconds start, EpochSeconds stop) {
  LiveSession s;
  s.uId = StreamerId(streamer);
  s.uName = "vtb" + std::to_string(streamer);
  s.liveId = std::move(id);
  s.startDate = start;
  s.stopDate = stop;
  s.title = "t";
  return s;
}

inline InteractionEvent make_event(std::uint64_t viewer, InteractionKind kind, EpochSeconds at, std::string session,
                                   std::string message = "", std::int64_t price = 0) {
  InteractionEvent e;
  e.uId = ViewerId(viewer);
  e.uName = "u" + std::to_string(viewer);
  e.kind = kind;
  e.sendDate = at;
  e.message = kind == InteractionKind::Chat && message.empty() ? "hello" : std::move(message);
  e.price = price;
  e.count = 1;
  e.sessionRef = std::move(session);
  return e;
}

inline InteractionEvent chat(std::uint64_t viewer, EpochSeconds at, std::string session, std::string text = "hello") {
  return make_event(viewer, InteractionKind::Chat, at, std::move(session), std::move(text));
}

inline InteractionEvent enter(std::uint64_t viewer, EpochSeconds at, std::string session) {
  return make_event(viewer, InteractionKind::Enter, at, std::move(session));
}

inline InteractionEvent gift(std::uint64_t viewer, EpochSeconds at, std::string session, std::int64_t price) {
  return make_event(viewer, InteractionKind::Gift, at, std::move(session), "", price);
}

inline InteractionEvent membership(std::uint64_t viewer, EpochSeconds at, std::string session) {
  return make_event(viewer, InteractionKind::Membership, at, std::move(session), "", 19800);
}

// Removed recursively on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fanranker-test-" + std::to_string(::getpid()) + "-" + tag + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fanranker::testing
