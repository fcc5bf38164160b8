#pragma once

// ChatSim: cosine similarity between the mean embedding of a viewer's chats in
// a session and the mean embedding of every chat in that session.

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fanranker/core.hpp"
#include "fanranker/digest.hpp"
#include "fanranker/ingestion.hpp"

namespace fanranker {

using Embedding = std::vector<double>;

// Implementations must be deterministic and safe for concurrent embed calls.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual Embedding embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string name() const = 0;
};

// Offline provider: hashed character n-gram frequencies (n = 1..3 code
// points) folded into `dimension` buckets and L2-normalized.
class HashedNgramProvider final : public EmbeddingProvider {
 public:
  explicit HashedNgramProvider(std::size_t dimension = 256, int min_n = 1, int max_n = 3);

  Embedding embed(std::string_view text) const override;
  std::size_t dimension() const override { return dimension_; }
  std::string name() const override;

 private:
  std::size_t dimension_;
  int min_n_;
  int max_n_;
};

// Splits UTF-8 into code points; invalid bytes become single-byte units.
std::vector<std::string_view> utf8_code_points(std::string_view text);

// Memoizing wrapper, optionally backed by a cache file. Vectors are stored
// as f32, so returned values are always rounded through float, hit or miss.
//
// Cache file layout (little-endian):
//   bytes 0..7   magic "FRKEMB01"
//   u32          dimension
//   u64          record count
//   records      32-byte sha256(text) followed by dimension x f32
class CachingEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit CachingEmbeddingProvider(std::shared_ptr<const EmbeddingProvider> inner);

  Embedding embed(std::string_view text) const override;
  std::size_t dimension() const override { return inner_->dimension(); }
  std::string name() const override { return "cached(" + inner_->name() + ")"; }

  std::size_t size() const;
  void load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  struct DigestHash {
    std::size_t operator()(const Sha256Digest& d) const noexcept;
  };

  std::shared_ptr<const EmbeddingProvider> inner_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<Sha256Digest, std::vector<float>, DigestHash> cache_;
};

// Cosine similarity; nullopt when sizes differ or either vector has zero norm.
// Result is clamped to [-1, 1].
std::optional<double> cosine_similarity(std::span<const double> a, std::span<const double> b);

// Component-wise mean; all vectors must share one dimension.
Embedding mean_embedding(std::span<const Embedding> vectors);

struct SessionEnvironment {
  SessionId sessionId;
  Embedding meanVector;
  std::size_t chatCount = 0;
};

// Throws EmptySession when there are no chats.
SessionEnvironment session_environment(const SessionId& session, std::span<const std::string> chats,
                                       const EmbeddingProvider& provider);
SessionEnvironment session_environment_from_embeddings(const SessionId& session,
                                                       std::span<const Embedding> embeddings);

struct ChatSimScore {
  ViewerId viewerId;
  SessionId sessionId;
  std::optional<double> score;  // nullopt is UNDEFINED

  bool defined() const { return score.has_value(); }
};

ChatSimScore chatsim(ViewerId viewer, std::span<const std::string> viewer_chats, const SessionEnvironment& env,
                     const EmbeddingProvider& provider);
std::optional<double> chatsim_from_embeddings(std::span<const Embedding> viewer_embeddings,
                                              const SessionEnvironment& env);

struct WindowChatSim {
  std::optional<double> average;  // nullopt is UNDEFINED
  std::size_t definedSessions = 0;
  double sum = 0.0;
};

// Store-backed scoring with per-session environment memoization. Thread safe.
class ChatSimEngine {
 public:
  ChatSimEngine(const LogStore& store, std::shared_ptr<const EmbeddingProvider> provider);

  const EmbeddingProvider& provider() const { return *provider_; }

  // nullopt for sessions without chats.
  std::shared_ptr<const SessionEnvironment> environment(SessionIndex session) const;
  // Viewer's ChatSim in one session.
  std::optional<double> session_score(ViewerId viewer, SessionIndex session) const;
  // Unweighted mean of defined per-session scores over the streamer's sessions
  // starting in the window that the viewer chatted in.
  WindowChatSim window_average(ViewerId viewer, StreamerId vtuber, const Window& window,
                               std::optional<SessionIndex> exclude = {}) const;

 private:
  const LogStore& store_;
  std::shared_ptr<const EmbeddingProvider> provider_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<SessionIndex, std::shared_ptr<const SessionEnvironment>> environments_;
};

std::optional<double> chatsim_window_average(const LogStore& store, ViewerId viewer, StreamerId vtuber,
                                             const Window& window,
                                             std::shared_ptr<const EmbeddingProvider> provider);

}  // namespace fanranker
