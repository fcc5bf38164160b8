#pragma once

// Toxicity labeling through a pluggable moderation provider, plus message- and
// viewer-level toxicity proportions and the daily member series.

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fanranker/cohort.hpp"
#include "fanranker/core.hpp"
#include "fanranker/digest.hpp"
#include "fanranker/ingestion.hpp"

namespace fanranker {

enum class ToxicityCategory : std::uint8_t { Sexual = 0, Harassment = 1, Violence = 2 };

inline constexpr std::array<ToxicityCategory, 3> kToxicityCategories = {
    ToxicityCategory::Sexual, ToxicityCategory::Harassment, ToxicityCategory::Violence};

std::string_view to_string(ToxicityCategory c);  // "SEXUAL", "HARASSMENT", "VIOLENCE"

inline constexpr double kToxicThreshold = 0.5;

// Category name -> score in [0, 1]. The three first-class categories use
// their upper-case names; anything else a provider reports passes through.
using CategoryScores = std::map<std::string, double>;

class ModerationProvider {
 public:
  virtual ~ModerationProvider() = default;

  // Throws Error(ProviderFailure) when the text cannot be scored.
  virtual CategoryScores score(std::string_view text) const = 0;
  // nullopt marks an item the provider failed on. The default loops over score().
  virtual std::vector<std::optional<CategoryScores>> score_batch(std::span<const std::string> texts) const;
  virtual std::string name() const = 0;
};

// Keyword lexicon per category: score 1 if any keyword occurs as a substring.
// lexicon.json: {"SEXUAL": [..], "HARASSMENT": [..], "VIOLENCE": [..]}
class LexiconModerationProvider final : public ModerationProvider {
 public:
  explicit LexiconModerationProvider(std::map<std::string, std::vector<std::string>> lexicon);

  static LexiconModerationProvider from_json(std::string_view text);
  static LexiconModerationProvider load(const std::filesystem::path& path);
  // The lexicon the synthetic generator plants toxic chats from.
  static LexiconModerationProvider defaults();

  CategoryScores score(std::string_view text) const override;
  std::string name() const override { return "lexicon"; }
  const std::map<std::string, std::vector<std::string>>& lexicon() const { return lexicon_; }

 private:
  std::map<std::string, std::vector<std::string>> lexicon_;
};

std::map<std::string, std::vector<std::string>> default_lexicon();

struct HttpModerationConfig {
  // Full URL of an OpenAI-compatible moderation endpoint.
  std::string endpoint = "https://api.openai.com/v1/moderations";
  std::string apiKeyEnv = "MODERATION_API_KEY";
  std::string model;  // omitted from the request when empty
  std::size_t batchSize = 32;
  int maxAttempts = 3;
  std::chrono::milliseconds initialBackoff{250};
  std::chrono::seconds timeout{30};
};

// POSTs {"input": [...]} batches and reads results[i].category_scores.
// Failed batches are retried with exponential backoff; items of a batch that
// still fails are reported as nullopt.
class HttpModerationProvider final : public ModerationProvider {
 public:
  explicit HttpModerationProvider(HttpModerationConfig config);

  CategoryScores score(std::string_view text) const override;
  std::vector<std::optional<CategoryScores>> score_batch(std::span<const std::string> texts) const override;
  std::string name() const override { return "http"; }

  std::size_t requests_sent() const { return requests_; }

 private:
  std::optional<std::vector<CategoryScores>> post_batch(std::span<const std::string> texts) const;

  HttpModerationConfig config_;
  std::string api_key_;
  mutable std::size_t requests_ = 0;
};

// Memoizes another provider by sha256(text); persists as JSONL
// {"sha256": "<hex>", "scores": {...}}.
class CachingModerationProvider final : public ModerationProvider {
 public:
  explicit CachingModerationProvider(std::shared_ptr<const ModerationProvider> inner);

  CategoryScores score(std::string_view text) const override;
  std::vector<std::optional<CategoryScores>> score_batch(std::span<const std::string> texts) const override;
  std::string name() const override { return "cached(" + inner_->name() + ")"; }

  std::size_t size() const;
  void load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::shared_ptr<const ModerationProvider> inner_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, CategoryScores> cache_;
};

struct ToxicityLabel {
  bool labeled = false;  // false is UNLABELED (provider failure)
  std::array<bool, 3> flags{};

  bool is(ToxicityCategory c) const { return labeled && flags[static_cast<std::size_t>(c)]; }
  bool any() const { return labeled && (flags[0] || flags[1] || flags[2]); }
};

// score >= threshold marks the category.
ToxicityLabel label_from_scores(const CategoryScores& scores, double threshold = kToxicThreshold);

struct LabelReport {
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  std::vector<std::size_t> failedIndices;
};

struct LabelResult {
  std::vector<ToxicityLabel> labels;  // one per input chat, same order
  LabelReport report;
};

LabelResult label_chats(std::span<const std::string> chats, const ModerationProvider& provider,
                        double threshold = kToxicThreshold);

// Labels for the chat events of a store, computed on demand and memoized.
// Non-chat events have no label. Thread safe.
class ChatLabels {
 public:
  ChatLabels(const LogStore& store, std::shared_ptr<const ModerationProvider> provider,
             double threshold = kToxicThreshold);

  const LogStore& store() const { return store_; }
  double threshold() const { return threshold_; }

  // nullopt for non-chat events.
  std::optional<ToxicityLabel> label(EventIndex event) const;
  // Labels the given chat events in provider batches.
  void prefetch(std::span<const EventIndex> events) const;
  void prefetch_all() const;
  std::size_t unlabeled_count() const;

 private:
  static constexpr std::uint8_t kUnknown = 0xFF;
  static constexpr std::uint8_t kUnlabeledBit = 0x80;

  const LogStore& store_;
  std::shared_ptr<const ModerationProvider> provider_;
  double threshold_;
  mutable std::mutex mutex_;
  mutable std::vector<std::uint8_t> state_;
};

struct ViewerToxicity {
  CohortRecord record;
  std::size_t labeledChats = 0;
  std::size_t unlabeledChats = 0;
  std::array<std::size_t, 3> toxicChats{};
  std::array<double, 3> toxicProportion{};  // 0 when no labeled chats
  std::array<bool, 3> everSent{};
};

struct ToxicityStats {
  std::size_t labeledChats = 0;
  std::size_t unlabeledChats = 0;
  std::array<std::size_t, 3> toxicChats{};
  std::array<double, 3> messageProportion{};  // pooled over all records
  std::vector<ViewerToxicity> perViewer;
  std::array<double, 3> viewerEverSentRate{};
};

// Chats each record's viewer sent to the record's streamer with sendDate in
// the record-relative window. With `vtuber`, only records for that streamer.
// UNLABELED chats are left out of both numerator and denominator.
ToxicityStats toxicity_stats(const ChatLabels& labels, std::span<const CohortRecord> records, DaySpan span,
                             std::optional<StreamerId> vtuber = {}, bool exclude_anchor_session = false);

struct ToxicDailyPoint {
  int dayOffset = 0;
  std::array<double, 3> proportion{};  // members with >= 1 toxic chat that day
};

// dayOffset in [-45, 45]. Throws EmptyCohort for no members.
std::vector<ToxicDailyPoint> daily_toxic_sender_series(const ChatLabels& labels,
                                                       std::span<const CohortRecord> members,
                                                       std::optional<StreamerId> vtuber = {});

}  // namespace fanranker
