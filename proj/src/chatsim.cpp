#include "fanranker/chatsim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fanranker {

namespace {

constexpr char kCacheMagic[8] = {'F', 'R', 'K', 'E', 'M', 'B', '0', '1'};

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::IoError, "truncated embedding cache");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void accumulate(Embedding& sum, const Embedding& v) {
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
}

}  // namespace

// ---------------------------------------------------------------- providers

std::vector<std::string_view> utf8_code_points(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c <= 0xF7) {
      len = 4;
    } else if (c >= 0xE0) {
      len = 3;
    } else if (c >= 0xC0) {
      len = 2;
    }
    if (c >= 0xF8 || i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

HashedNgramProvider::HashedNgramProvider(std::size_t dimension, int min_n, int max_n)
    : dimension_(dimension), min_n_(min_n), max_n_(max_n) {
  if (dimension == 0 || min_n < 1 || max_n < min_n) {
    throw Error(ErrorCode::InvalidArgument, "invalid n-gram provider parameters");
  }
}

std::string HashedNgramProvider::name() const {
  return "hashed-ngram-" + std::to_string(min_n_) + "-" + std::to_string(max_n_) + "-d" +
         std::to_string(dimension_);
}

Embedding HashedNgramProvider::embed(std::string_view text) const {
  Embedding v(dimension_, 0.0);
  const auto cps = utf8_code_points(text);
  for (int n = min_n_; n <= max_n_; ++n) {
    const std::size_t un = static_cast<std::size_t>(n);
    if (cps.size() < un) break;
    for (std::size_t i = 0; i + un <= cps.size(); ++i) {
      // A gram is a contiguous byte range of the original text.
      const char* begin = cps[i].data();
      const char* end = cps[i + un - 1].data() + cps[i + un - 1].size();
      const std::uint64_t h = fnv1a64(std::string_view(begin, static_cast<std::size_t>(end - begin)),
                                      fnv1a64(std::string_view(reinterpret_cast<const char*>(&n), sizeof n)));
      v[h % dimension_] += 1.0;
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

std::size_t CachingEmbeddingProvider::DigestHash::operator()(const Sha256Digest& d) const noexcept {
  std::size_t h;
  std::memcpy(&h, d.data(), sizeof h);
  return h;
}

CachingEmbeddingProvider::CachingEmbeddingProvider(std::shared_ptr<const EmbeddingProvider> inner)
    : inner_(std::move(inner)) {
  if (!inner_) throw Error(ErrorCode::InvalidArgument, "caching provider needs an inner provider");
}

Embedding CachingEmbeddingProvider::embed(std::string_view text) const {
  const Sha256Digest key = sha256(text);
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return Embedding(it->second.begin(), it->second.end());
  }
  const Embedding fresh = inner_->embed(text);
  std::vector<float> stored(fresh.begin(), fresh.end());
  Embedding out(stored.begin(), stored.end());
  std::lock_guard lock(mutex_);
  cache_.emplace(key, std::move(stored));
  return out;
}

std::size_t CachingEmbeddingProvider::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

void CachingEmbeddingProvider::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open embedding cache " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCacheMagic, 8) != 0) {
    throw Error(ErrorCode::IoError, "not an embedding cache: " + path.string());
  }
  const auto dim = read_le<std::uint32_t>(in);
  if (dim != inner_->dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "embedding cache dimension " + std::to_string(dim));
  }
  const auto count = read_le<std::uint64_t>(in);
  std::lock_guard lock(mutex_);
  for (std::uint64_t r = 0; r < count; ++r) {
    Sha256Digest key;
    if (!in.read(reinterpret_cast<char*>(key.data()), key.size())) {
      throw Error(ErrorCode::IoError, "truncated embedding cache");
    }
    std::vector<float> v(dim);
    for (auto& x : v) x = read_le<float>(in);
    cache_.insert_or_assign(key, std::move(v));
  }
}

void CachingEmbeddingProvider::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write embedding cache " + path.string());
  std::lock_guard lock(mutex_);
  // Sorted by key so identical caches produce identical files.
  std::vector<const std::pair<const Sha256Digest, std::vector<float>>*> entries;
  entries.reserve(cache_.size());
  for (const auto& kv : cache_) entries.push_back(&kv);
  std::sort(entries.begin(), entries.end(), [](auto* a, auto* b) { return a->first < b->first; });
  out.write(kCacheMagic, 8);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(inner_->dimension()));
  write_le<std::uint64_t>(out, entries.size());
  for (auto* kv : entries) {
    out.write(reinterpret_cast<const char*>(kv->first.data()), kv->first.size());
    for (float x : kv->second) write_le<float>(out, x);
  }
}

// ---------------------------------------------------------------- scoring

std::optional<double> cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) return std::nullopt;
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return std::nullopt;
  const double denom = std::sqrt(na * nb);
  if (!(denom > 1e-24)) return std::nullopt;
  return std::clamp(dot / denom, -1.0, 1.0);
}

Embedding mean_embedding(std::span<const Embedding> vectors) {
  if (vectors.empty()) return {};
  Embedding sum(vectors.front().size(), 0.0);
  for (const auto& v : vectors) {
    if (v.size() != sum.size()) throw Error(ErrorCode::DimensionMismatch, "embedding dimensions differ");
    accumulate(sum, v);
  }
  const double n = static_cast<double>(vectors.size());
  for (double& x : sum) x /= n;
  return sum;
}

SessionEnvironment session_environment_from_embeddings(const SessionId& session,
                                                       std::span<const Embedding> embeddings) {
  if (embeddings.empty()) throw Error(ErrorCode::EmptySession, "session " + session + " has no chats");
  return {session, mean_embedding(embeddings), embeddings.size()};
}

SessionEnvironment session_environment(const SessionId& session, std::span<const std::string> chats,
                                       const EmbeddingProvider& provider) {
  std::vector<Embedding> embeddings;
  embeddings.reserve(chats.size());
  for (const auto& c : chats) embeddings.push_back(provider.embed(c));
  return session_environment_from_embeddings(session, embeddings);
}

std::optional<double> chatsim_from_embeddings(std::span<const Embedding> viewer_embeddings,
                                              const SessionEnvironment& env) {
  if (viewer_embeddings.empty()) return std::nullopt;
  const Embedding mean = mean_embedding(viewer_embeddings);
  return cosine_similarity(mean, env.meanVector);
}

ChatSimScore chatsim(ViewerId viewer, std::span<const std::string> viewer_chats, const SessionEnvironment& env,
                     const EmbeddingProvider& provider) {
  std::vector<Embedding> embeddings;
  embeddings.reserve(viewer_chats.size());
  for (const auto& c : viewer_chats) embeddings.push_back(provider.embed(c));
  return {viewer, env.sessionId, chatsim_from_embeddings(embeddings, env)};
}

// ---------------------------------------------------------------- engine

ChatSimEngine::ChatSimEngine(const LogStore& store, std::shared_ptr<const EmbeddingProvider> provider)
    : store_(store), provider_(std::move(provider)) {
  if (!provider_) throw Error(ErrorCode::InvalidArgument, "ChatSimEngine needs a provider");
}

std::shared_ptr<const SessionEnvironment> ChatSimEngine::environment(SessionIndex session) const {
  {
    std::lock_guard lock(mutex_);
    auto it = environments_.find(session);
    if (it != environments_.end()) return it->second;
  }
  std::shared_ptr<const SessionEnvironment> env;
  std::vector<Embedding> embeddings;
  for (const auto& e : store_.session_events(session)) {
    if (e.kind == InteractionKind::Chat) embeddings.push_back(provider_->embed(e.message));
  }
  if (!embeddings.empty()) {
    env = std::make_shared<const SessionEnvironment>(
        session_environment_from_embeddings(store_.session(session).liveId, embeddings));
  }
  std::lock_guard lock(mutex_);
  environments_.emplace(session, env);
  return env;
}

std::optional<double> ChatSimEngine::session_score(ViewerId viewer, SessionIndex session) const {
  const LiveSession& s = store_.session(session);
  std::vector<Embedding> mine;
  const EpochSeconds grace = store_.grace_seconds();
  for (EventIndex i : store_.viewer_events_between(viewer, s.startDate - grace, s.stopDate + grace + 1)) {
    if (store_.session_of(i) != session) continue;
    const auto& e = store_.event(i);
    if (e.kind == InteractionKind::Chat) mine.push_back(provider_->embed(e.message));
  }
  if (mine.empty()) return std::nullopt;
  const auto env = environment(session);
  if (!env) return std::nullopt;
  return chatsim_from_embeddings(mine, *env);
}

WindowChatSim ChatSimEngine::window_average(ViewerId viewer, StreamerId vtuber, const Window& window,
                                            std::optional<SessionIndex> exclude) const {
  WindowChatSim out;
  for (const ViewerPosting& p : store_.viewer_postings(viewer)) {
    if (exclude && *exclude == p.session) continue;
    const LiveSession& s = store_.session(p.session);
    if (s.uId != vtuber || !window.contains(s.startDate)) continue;
    if (auto score = session_score(viewer, p.session)) {
      out.sum += *score;
      ++out.definedSessions;
    }
  }
  if (out.definedSessions > 0) out.average = out.sum / static_cast<double>(out.definedSessions);
  return out;
}

std::optional<double> chatsim_window_average(const LogStore& store, ViewerId viewer, StreamerId vtuber,
                                             const Window& window,
                                             std::shared_ptr<const EmbeddingProvider> provider) {
  return ChatSimEngine(store, std::move(provider)).window_average(viewer, vtuber, window).average;
}

}  // namespace fanranker
