#pragma once

// The per-record feature vector: 13 base features on W1 = [T-30,T-15) and
// W2 = [T-15,T+0), 7 late-minus-early deltas against [T-45,T-30), and one
// ChatSim presence flag per window. The anchor session is always excluded.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fanranker/chatsim.hpp"
#include "fanranker/cohort.hpp"
#include "fanranker/core.hpp"
#include "fanranker/ingestion.hpp"
#include "fanranker/metrics.hpp"
#include "fanranker/toxicity.hpp"

namespace fanranker {

inline constexpr std::string_view kMatrixHeader = "fanranker-features-v1";

enum class BaseFeature : std::uint8_t {
  ChatSent,
  GiftScCount,
  GiftScValue,
  LiveWatchRate,
  OnTimeRate,
  LiveWatchTime,
  ChatPerLive,
  GiftScCountVtb,
  GiftScValueVtb,
  ChatSimAvg,
  Sexual,
  Harassment,
  Violence,
};

inline constexpr std::size_t kBaseFeatureCount = 13;
inline constexpr std::size_t kDeltaFeatureCount = 7;
inline constexpr std::size_t kFeatureWidth = 2 * kBaseFeatureCount + kDeltaFeatureCount + 2;  // 35

inline constexpr std::array<BaseFeature, kDeltaFeatureCount> kDeltaFeatures = {
    BaseFeature::LiveWatchRate,  BaseFeature::OnTimeRate,     BaseFeature::LiveWatchTime,
    BaseFeature::ChatPerLive,    BaseFeature::GiftScCountVtb, BaseFeature::GiftScValueVtb,
    BaseFeature::ChatSimAvg,
};

std::string_view to_string(BaseFeature f);  // "chat_sent", "gift_sc_count", ...

inline constexpr DaySpan kWindowD0 = spans::kPre45;  // delta baseline
inline constexpr DaySpan kWindowW1 = spans::kPre30;
inline constexpr DaySpan kWindowW2 = spans::kPre15;

// Column indices in the 35-wide vector.
constexpr std::size_t column_w1(BaseFeature f) { return static_cast<std::size_t>(f); }
constexpr std::size_t column_w2(BaseFeature f) { return kBaseFeatureCount + static_cast<std::size_t>(f); }
std::size_t column_delta(BaseFeature f);  // throws InvalidArgument for non-delta features
inline constexpr std::size_t kColumnChatSimPresentW1 = 2 * kBaseFeatureCount + kDeltaFeatureCount;
inline constexpr std::size_t kColumnChatSimPresentW2 = kColumnChatSimPresentW1 + 1;

struct FeatureColumn {
  std::string name;
  std::string window;  // "W1", "W2" or "DELTA"
  bool delta = false;
  bool chatsim = false;  // removed by the ChatSim ablation

  friend bool operator==(const FeatureColumn&, const FeatureColumn&) = default;
};

// The canonical 35 columns.
const std::vector<FeatureColumn>& feature_columns();

// Manifest JSON: {"header": ..., "columns": [{"name","window","delta","chatsim"}...]}
std::string manifest_json(std::span<const FeatureColumn> columns);
std::vector<FeatureColumn> parse_manifest_json(std::string_view text);
// FNV-1a over the compact manifest JSON.
std::uint64_t manifest_hash(std::span<const FeatureColumn> columns);

using FeatureVector = std::vector<double>;

// Raw per-window values, before imputation and deltas.
struct WindowValues {
  std::array<double, kBaseFeatureCount> base{};
  WindowChatSim chatsim;
};

struct FeatureDetail {
  ViewerId viewerId;
  StreamerId vtuberId;
  EpochSeconds anchorTs = 0;
  WindowValues d0;
  WindowValues w1;
  WindowValues w2;
  FeatureVector values;  // width 35
};

// Imputes UNDEFINED ChatSim as 0, fills deltas and presence flags.
FeatureVector assemble_vector(const WindowValues& d0, const WindowValues& w1, const WindowValues& w2);

class FeatureExtractor {
 public:
  FeatureExtractor(const LogStore& store, std::shared_ptr<const ChatSimEngine> chatsim,
                   std::shared_ptr<const ChatLabels> labels, MetricOptions options = {});

  const LogStore& store() const { return store_; }
  const ChatSimEngine& chatsim() const { return *chatsim_; }
  const ChatLabels& labels() const { return *labels_; }

  FeatureVector extract(const CohortRecord& record) const;
  FeatureDetail detail(const CohortRecord& record) const;
  // Features anchored at `anchor` with the `exclude` session left out.
  FeatureDetail detail_at(ViewerId viewer, StreamerId vtuber, EpochSeconds anchor,
                          std::optional<SessionIndex> exclude) const;

  WindowValues window_values(ViewerId viewer, StreamerId vtuber, const Window& window,
                             std::optional<SessionIndex> exclude) const;

 private:
  const LogStore& store_;
  std::shared_ptr<const ChatSimEngine> chatsim_;
  std::shared_ptr<const ChatLabels> labels_;
  MetricOptions options_;
};

// Row-major dense matrix with labels and the originating records.
struct LabeledMatrix {
  std::vector<FeatureColumn> columns;
  std::vector<double> values;
  std::vector<std::uint8_t> labels;
  std::vector<CohortRecord> records;

  std::size_t rows() const { return labels.size(); }
  std::size_t cols() const { return columns.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols(), cols()}; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols() + j]; }

  void append(const CohortRecord& record, std::span<const double> x);
  // Rows at the given indices, in that order.
  LabeledMatrix subset(std::span<const std::size_t> indices) const;
  std::size_t positives() const;
};

// One row per record, label 1 for MEMBER, rows sorted by (anchorTs, viewerId).
// Throws EmptyCohort.
LabeledMatrix build_matrix(const FeatureExtractor& extractor, std::span<const CohortRecord> cohort);

// kMatrixHeader line, then viewerId,vtuberId,liveId,anchorTs,label,<columns>.
// Values use the shortest round-trip representation.
void write_matrix_csv(std::ostream& out, const LabeledMatrix& matrix);
// Throws MalformedRecord on a bad header or row.
LabeledMatrix read_matrix_csv(std::istream& in);

// {"viewerId", "vtuberId", "anchorTs", "features": [{"name","window","value"}...],
//  "chatsim": {"D0","W1","W2"}: {"average" or null, "sessions"}}
std::string feature_detail_json(const FeatureDetail& detail, std::span<const FeatureColumn> columns);

// Shortest round-trip decimal text of a double.
std::string format_double(double v);

}  // namespace fanranker
