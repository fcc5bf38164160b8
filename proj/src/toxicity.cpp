#include <httplib.h>

#include "fanranker/toxicity.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace fanranker {

using nlohmann::json;

std::string_view to_string(ToxicityCategory c) {
  switch (c) {
    case ToxicityCategory::Sexual: return "SEXUAL";
    case ToxicityCategory::Harassment: return "HARASSMENT";
    case ToxicityCategory::Violence: return "VIOLENCE";
  }
  return "SEXUAL";
}

std::vector<std::optional<CategoryScores>> ModerationProvider::score_batch(
    std::span<const std::string> texts) const {
  std::vector<std::optional<CategoryScores>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    try {
      out.emplace_back(score(t));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProviderFailure) throw;
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

// ---------------------------------------------------------------- lexicon

std::map<std::string, std::vector<std::string>> default_lexicon() {
  return {
      {"SEXUAL", {"lewd", "sexy", "naughty", "色色"}},
      {"HARASSMENT", {"idiot", "loser", "stupid", "笨蛋"}},
      {"VIOLENCE", {"kill", "punch", "smash", "打死"}},
  };
}

LexiconModerationProvider::LexiconModerationProvider(std::map<std::string, std::vector<std::string>> lexicon)
    : lexicon_(std::move(lexicon)) {
  for (auto& [category, words] : lexicon_) {
    words.erase(std::remove(words.begin(), words.end(), std::string()), words.end());
  }
}

LexiconModerationProvider LexiconModerationProvider::from_json(std::string_view text) {
  json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::InvalidConfig, "lexicon must be a JSON object");
  std::map<std::string, std::vector<std::string>> lexicon;
  for (auto& [category, words] : j.items()) {
    if (!words.is_array()) throw Error(ErrorCode::InvalidConfig, "lexicon entry " + category + " is not an array");
    auto& list = lexicon[category];
    for (const auto& w : words) {
      if (!w.is_string()) throw Error(ErrorCode::InvalidConfig, "lexicon keywords must be strings");
      list.push_back(w.get<std::string>());
    }
  }
  return LexiconModerationProvider(std::move(lexicon));
}

LexiconModerationProvider LexiconModerationProvider::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open lexicon " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

LexiconModerationProvider LexiconModerationProvider::defaults() { return LexiconModerationProvider(default_lexicon()); }

CategoryScores LexiconModerationProvider::score(std::string_view text) const {
  CategoryScores scores;
  for (auto c : kToxicityCategories) scores[std::string(to_string(c))] = 0.0;
  for (const auto& [category, words] : lexicon_) {
    const bool hit = std::any_of(words.begin(), words.end(),
                                 [&](const std::string& w) { return text.find(w) != std::string_view::npos; });
    scores[category] = hit ? 1.0 : 0.0;
  }
  return scores;
}

// ---------------------------------------------------------------- http

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidConfig, "endpoint URL needs a scheme: " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  if (path_begin == std::string::npos) return {url, "/"};
  return {url.substr(0, path_begin), url.substr(path_begin)};
}

std::string category_key(const std::string& api_name) {
  // "harassment/threatening" -> "HARASSMENT/THREATENING"
  std::string out = api_name;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

}  // namespace

HttpModerationProvider::HttpModerationProvider(HttpModerationConfig config) : config_(std::move(config)) {
  if (config_.batchSize == 0 || config_.maxAttempts < 1) {
    throw Error(ErrorCode::InvalidConfig, "moderation batch size and attempts must be positive");
  }
  if (const char* key = std::getenv(config_.apiKeyEnv.c_str())) api_key_ = key;
  parse_url(config_.endpoint);
}

std::optional<std::vector<CategoryScores>> HttpModerationProvider::post_batch(
    std::span<const std::string> texts) const {
  const ParsedUrl url = parse_url(config_.endpoint);
  json body;
  body["input"] = json::array();
  for (const auto& t : texts) body["input"].push_back(t);
  if (!config_.model.empty()) body["model"] = config_.model;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto backoff = config_.initialBackoff;
  for (int attempt = 0; attempt < config_.maxAttempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(url.origin);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    ++requests_;
    auto res = client.Post(url.path, headers, payload, "application/json");
    if (!res || res->status != 200) continue;
    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("results") || !reply["results"].is_array() ||
        reply["results"].size() != texts.size()) {
      continue;
    }
    std::vector<CategoryScores> out;
    out.reserve(texts.size());
    bool ok = true;
    for (const auto& r : reply["results"]) {
      if (!r.contains("category_scores") || !r["category_scores"].is_object()) {
        ok = false;
        break;
      }
      CategoryScores scores;
      for (auto& [name, value] : r["category_scores"].items()) {
        if (value.is_number()) scores[category_key(name)] = std::clamp(value.get<double>(), 0.0, 1.0);
      }
      out.push_back(std::move(scores));
    }
    if (ok) return out;
  }
  return std::nullopt;
}

std::vector<std::optional<CategoryScores>> HttpModerationProvider::score_batch(
    std::span<const std::string> texts) const {
  std::vector<std::optional<CategoryScores>> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += config_.batchSize) {
    const auto chunk = texts.subspan(begin, std::min(config_.batchSize, texts.size() - begin));
    auto scored = post_batch(chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      if (scored) {
        out.emplace_back(std::move((*scored)[i]));
      } else {
        out.emplace_back(std::nullopt);
      }
    }
  }
  return out;
}

CategoryScores HttpModerationProvider::score(std::string_view text) const {
  const std::string one(text);
  auto result = score_batch(std::span<const std::string>(&one, 1));
  if (!result.front()) throw Error(ErrorCode::ProviderFailure, "moderation request failed");
  return std::move(*result.front());
}

// ---------------------------------------------------------------- caching

CachingModerationProvider::CachingModerationProvider(std::shared_ptr<const ModerationProvider> inner)
    : inner_(std::move(inner)) {
  if (!inner_) throw Error(ErrorCode::InvalidArgument, "caching provider needs an inner provider");
}

CategoryScores CachingModerationProvider::score(std::string_view text) const {
  const std::string key = to_hex(sha256(text));
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  CategoryScores scores = inner_->score(text);
  std::lock_guard lock(mutex_);
  cache_.emplace(key, scores);
  return scores;
}

std::vector<std::optional<CategoryScores>> CachingModerationProvider::score_batch(
    std::span<const std::string> texts) const {
  std::vector<std::optional<CategoryScores>> out(texts.size());
  std::vector<std::string> missing;
  std::vector<std::size_t> missing_at;
  std::vector<std::string> keys(texts.size());
  {
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      keys[i] = to_hex(sha256(texts[i]));
      auto it = cache_.find(keys[i]);
      if (it != cache_.end()) {
        out[i] = it->second;
      } else {
        missing.push_back(texts[i]);
        missing_at.push_back(i);
      }
    }
  }
  if (missing.empty()) return out;
  auto fresh = inner_->score_batch(missing);
  std::lock_guard lock(mutex_);
  for (std::size_t k = 0; k < missing.size(); ++k) {
    const std::size_t i = missing_at[k];
    out[i] = fresh[k];
    if (fresh[k]) cache_.emplace(keys[i], *fresh[k]);
  }
  return out;
}

std::size_t CachingModerationProvider::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

void CachingModerationProvider::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open label cache " + path.string());
  std::string line;
  std::lock_guard lock(mutex_);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("sha256") || !j.contains("scores")) {
      throw Error(ErrorCode::MalformedRecord, "bad label cache line");
    }
    CategoryScores scores;
    for (auto& [k, v] : j["scores"].items()) scores[k] = v.get<double>();
    cache_.insert_or_assign(j["sha256"].get<std::string>(), std::move(scores));
  }
}

void CachingModerationProvider::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write label cache " + path.string());
  std::lock_guard lock(mutex_);
  for (const auto& [key, scores] : cache_) {
    nlohmann::ordered_json j;
    j["sha256"] = key;
    j["scores"] = scores;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------- labels

ToxicityLabel label_from_scores(const CategoryScores& scores, double threshold) {
  ToxicityLabel label;
  label.labeled = true;
  for (auto c : kToxicityCategories) {
    auto it = scores.find(std::string(to_string(c)));
    label.flags[static_cast<std::size_t>(c)] = it != scores.end() && it->second >= threshold;
  }
  return label;
}

LabelResult label_chats(std::span<const std::string> chats, const ModerationProvider& provider,
                        double threshold) {
  LabelResult result;
  result.labels.reserve(chats.size());
  const auto scored = provider.score_batch(chats);
  for (std::size_t i = 0; i < chats.size(); ++i) {
    if (scored[i]) {
      result.labels.push_back(label_from_scores(*scored[i], threshold));
      ++result.report.labeled;
    } else {
      result.labels.push_back(ToxicityLabel{});
      ++result.report.unlabeled;
      result.report.failedIndices.push_back(i);
    }
  }
  return result;
}

ChatLabels::ChatLabels(const LogStore& store, std::shared_ptr<const ModerationProvider> provider,
                       double threshold)
    : store_(store), provider_(std::move(provider)), threshold_(threshold), state_(store.event_count(), kUnknown) {
  if (!provider_) throw Error(ErrorCode::InvalidArgument, "ChatLabels needs a provider");
}

namespace {

std::uint8_t pack(const ToxicityLabel& label) {
  if (!label.labeled) return 0x80;
  return static_cast<std::uint8_t>((label.flags[0] ? 1 : 0) | (label.flags[1] ? 2 : 0) | (label.flags[2] ? 4 : 0));
}

ToxicityLabel unpack(std::uint8_t bits) {
  ToxicityLabel label;
  if (bits & 0x80) return label;
  label.labeled = true;
  label.flags = {(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0};
  return label;
}

}  // namespace

std::optional<ToxicityLabel> ChatLabels::label(EventIndex event) const {
  const auto& e = store_.event(event);
  if (e.kind != InteractionKind::Chat) return std::nullopt;
  {
    std::lock_guard lock(mutex_);
    if (state_[event] != kUnknown) return unpack(state_[event]);
  }
  ToxicityLabel label;
  try {
    label = label_from_scores(provider_->score(e.message), threshold_);
  } catch (const Error& err) {
    if (err.code() != ErrorCode::ProviderFailure) throw;
  }
  std::lock_guard lock(mutex_);
  state_[event] = pack(label);
  return label;
}

void ChatLabels::prefetch(std::span<const EventIndex> events) const {
  std::vector<EventIndex> todo;
  std::vector<std::string> texts;
  {
    std::lock_guard lock(mutex_);
    for (EventIndex i : events) {
      if (store_.event(i).kind == InteractionKind::Chat && state_[i] == kUnknown) {
        todo.push_back(i);
        texts.push_back(store_.event(i).message);
      }
    }
  }
  if (todo.empty()) return;
  const auto result = label_chats(texts, *provider_, threshold_);
  std::lock_guard lock(mutex_);
  for (std::size_t k = 0; k < todo.size(); ++k) state_[todo[k]] = pack(result.labels[k]);
}

void ChatLabels::prefetch_all() const {
  std::vector<EventIndex> all(store_.event_count());
  for (EventIndex i = 0; i < all.size(); ++i) all[i] = i;
  prefetch(all);
}

std::size_t ChatLabels::unlabeled_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(state_.begin(), state_.end(), [](std::uint8_t s) { return s != kUnknown && (s & kUnlabeledBit); }));
}

// ---------------------------------------------------------------- stats

ToxicityStats toxicity_stats(const ChatLabels& labels, std::span<const CohortRecord> records, DaySpan span,
                             std::optional<StreamerId> vtuber, bool exclude_anchor_session) {
  const LogStore& store = labels.store();
  ToxicityStats stats;
  for (const CohortRecord& r : records) {
    if (vtuber && r.vtuberId != *vtuber) continue;
    ViewerToxicity vt;
    vt.record = r;
    const auto anchor = exclude_anchor_session ? store.find_session(r.anchorSession) : std::nullopt;
    const Window w(r.anchorTs, span);
    for (EventIndex i : query_viewer_window(store, r.viewerId, w, r.vtuberId)) {
      if (anchor && store.session_of(i) == *anchor) continue;
      const auto label = labels.label(i);
      if (!label) continue;
      if (!label->labeled) {
        ++vt.unlabeledChats;
        continue;
      }
      ++vt.labeledChats;
      for (std::size_t c = 0; c < 3; ++c) {
        if (label->flags[c]) ++vt.toxicChats[c];
      }
    }
    for (std::size_t c = 0; c < 3; ++c) {
      vt.everSent[c] = vt.toxicChats[c] > 0;
      vt.toxicProportion[c] =
          vt.labeledChats == 0 ? 0.0 : static_cast<double>(vt.toxicChats[c]) / static_cast<double>(vt.labeledChats);
      stats.toxicChats[c] += vt.toxicChats[c];
      if (vt.everSent[c]) stats.viewerEverSentRate[c] += 1.0;
    }
    stats.labeledChats += vt.labeledChats;
    stats.unlabeledChats += vt.unlabeledChats;
    stats.perViewer.push_back(vt);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    stats.messageProportion[c] = stats.labeledChats == 0 ? 0.0
                                                         : static_cast<double>(stats.toxicChats[c]) /
                                                               static_cast<double>(stats.labeledChats);
    if (!stats.perViewer.empty()) stats.viewerEverSentRate[c] /= static_cast<double>(stats.perViewer.size());
  }
  return stats;
}

std::vector<ToxicDailyPoint> daily_toxic_sender_series(const ChatLabels& labels,
                                                       std::span<const CohortRecord> members,
                                                       std::optional<StreamerId> vtuber) {
  std::vector<const CohortRecord*> cohort;
  for (const auto& m : members) {
    if (!vtuber || m.vtuberId == *vtuber) cohort.push_back(&m);
  }
  if (cohort.empty()) throw Error(ErrorCode::EmptyCohort, "toxic sender series needs at least one member");
  const LogStore& store = labels.store();
  std::vector<ToxicDailyPoint> out;
  for (int d = -45; d <= 45; ++d) {
    ToxicDailyPoint p;
    p.dayOffset = d;
    for (const CohortRecord* r : cohort) {
      std::array<bool, 3> sent{};
      for (EventIndex i : query_viewer_window(store, r->viewerId, Window(r->anchorTs, d, d + 1), r->vtuberId)) {
        const auto label = labels.label(i);
        if (!label) continue;
        for (std::size_t c = 0; c < 3; ++c) sent[c] = sent[c] || label->is(kToxicityCategories[c]);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        if (sent[c]) p.proportion[c] += 1.0;
      }
    }
    for (double& x : p.proportion) x /= static_cast<double>(cohort.size());
    out.push_back(p);
  }
  return out;
}

}  // namespace fanranker
