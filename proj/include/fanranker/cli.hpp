#pragma once

// Command-line entry points and the provider wiring they share with the
// service.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>

#include "fanranker/chatsim.hpp"
#include "fanranker/features.hpp"
#include "fanranker/ingestion.hpp"
#include "fanranker/metrics.hpp"
#include "fanranker/toxicity.hpp"

namespace fanranker {

struct PipelineOptions {
  std::size_t embeddingDim = 256;
  std::filesystem::path embeddingCache;  // loaded if present, saved by save_caches()
  std::filesystem::path lexicon;         // empty: built-in lexicon
  std::string moderationUrl;             // non-empty: HTTP moderation instead of the lexicon
  std::filesystem::path moderationCache;
  MetricOptions metrics;
};

struct Pipeline {
  PipelineOptions options;
  std::shared_ptr<CachingEmbeddingProvider> embeddings;
  std::shared_ptr<CachingModerationProvider> moderation;
  std::shared_ptr<ChatSimEngine> chatsim;
  std::shared_ptr<ChatLabels> labels;
  std::shared_ptr<FeatureExtractor> extractor;

  void save_caches() const;
};

Pipeline make_pipeline(const LogStore& store, const PipelineOptions& options);

// Exit codes: 0 success, 1 usage error, 2 data error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fanranker
