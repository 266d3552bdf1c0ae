#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace befa {

/// An observation instrument: ordered dimensions scored on 1..levels.
struct ProtocolDef {
  std::string name;
  std::vector<std::string> dims;
  int levels = 0;

  int dim_count() const { return static_cast<int>(dims.size()); }
  bool operator==(const ProtocolDef&) const = default;
};

/// Throws ValidationError when the protocol list breaks an invariant
/// (empty or duplicate dims, levels < 2, duplicate protocol names).
void validate_protocols(const std::vector<ProtocolDef>& protocols);

/// Score value marking an absent dimension score (`NA` in files).
inline constexpr int kMissingScore = 0;

/// One rater's score vector for one lesson segment under one protocol.
/// All ids are dense indices into the owning dataset's IdIndex maps.
struct ScoringEvent {
  int teacher = -1;
  int section = -1;
  int lesson = -1;
  int segment = -1;
  int rater = -1;
  int protocol = -1;
  std::vector<int> scores;  // protocol-local order, kMissingScore when absent

  bool operator==(const ScoringEvent&) const = default;
};

/// Opaque string ids mapped to dense integers in first-seen order.
class IdIndex {
 public:
  int intern(const std::string& id);
  int find(std::string_view id) const;
  const std::string& name(int index) const { return names_.at(index); }
  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }
  bool operator==(const IdIndex& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> lookup_;
};

/// Location of a global dimension inside its protocol.
struct DimRef {
  int protocol = 0;
  int local = 0;
  bool operator==(const DimRef&) const = default;
};

/// Crossed/nested ordinal rating data, immutable after construction.
///
/// Global dimensions: the canonical order concatenates protocols in list
/// order and dims in protocol order. `position_of[p][l]` gives the position of
/// protocol p's local dim l in the current global order, and
/// `canonical_at[q]` the canonical index sitting at position q; both are the
/// identity unless the dataset went through permute_dimensions.
struct RatingDataset {
  std::vector<ProtocolDef> protocols;
  std::vector<ScoringEvent> events;
  IdIndex event_ids, teachers, sections, lessons, segments, raters;
  std::vector<int> section_teacher;  // parent links, indexed by child id
  std::vector<int> lesson_section;
  std::vector<int> segment_lesson;
  std::vector<std::vector<int>> position_of;
  std::vector<int> canonical_at;

  int dimension_count() const { return static_cast<int>(canonical_at.size()); }
  int event_count() const { return static_cast<int>(events.size()); }
  DimRef dim_at(int position) const;
  int levels_at(int position) const { return protocols[dim_at(position).protocol].levels; }
  /// Qualified name `protocol:dim` of the dimension at `position`.
  std::string dim_name(int position) const;
  /// Position of a dimension given `protocol:dim` or an unambiguous bare dim
  /// name; -1 when absent or ambiguous.
  int find_dim(std::string_view name) const;
  /// Score at a global position, kMissingScore when the event's protocol
  /// does not cover it or the score is absent.
  int score_at(const ScoringEvent& e, int position) const;

  bool operator==(const RatingDataset& o) const;
};

/// Starts an empty dataset for `protocols` with the canonical dim order.
RatingDataset make_empty_dataset(std::vector<ProtocolDef> protocols);

/// Appends an event given string ids; enforces score ranges and the
/// section/lesson/segment nesting. `line` is used in error messages.
void add_event(RatingDataset& ds, const std::string& event_id, const std::string& teacher,
               const std::string& section, const std::string& lesson,
               const std::string& segment, const std::string& rater, int protocol,
               std::vector<int> scores, std::size_t line = 0);

/// Schema file: repeated blocks of `protocol = NAME`, `levels = L`,
/// `dims = a, b, c`.
std::vector<ProtocolDef> load_schema(const std::filesystem::path& path);
void write_schema(const std::vector<ProtocolDef>& protocols, const std::filesystem::path& path);

/// Long CSV, one row per (event, dimension):
/// `event_id,teacher_id,section_id,lesson_id,segment_id,rater_id,protocol,dimension,score`
RatingDataset load_dataset(const std::filesystem::path& path, const std::vector<ProtocolDef>& schema);
void export_dataset(const RatingDataset& ds, const std::filesystem::path& path);
/// Wide CSV for inspection: one row per event, one column per global dim.
void export_wide(const RatingDataset& ds, const std::filesystem::path& path);

inline const std::vector<std::string>& long_csv_header() {
  static const std::vector<std::string> h{"event_id", "teacher_id", "section_id",
                                          "lesson_id", "segment_id", "rater_id",
                                          "protocol", "dimension", "score"};
  return h;
}

struct ProtocolCrossing {
  std::string protocol;
  int lessons_scored = 0;
  int singly_rated_lessons = 0;
  double singly_rated_fraction = 0.0;
  int max_raters_per_lesson = 0;
  int raters_used = 0;
};

/// Summary of the crossing between raters, lessons and teachers.
struct CrossingReport {
  int events = 0, teachers = 0, sections = 0, lessons = 0, segments = 0, raters = 0;
  std::vector<ProtocolCrossing> per_protocol;
  /// Fraction of (lesson, protocol) pairs scored by exactly one rater.
  double singly_rated_fraction = 0.0;
  /// Histogram: raters_per_lesson[n] = number of (lesson, protocol) pairs with n raters.
  std::vector<int> raters_per_lesson;
  std::vector<int> lessons_per_rater;
  std::vector<int> teachers_per_rater;
  /// Histogram: protocols_per_lesson[n] = number of lessons scored on n protocols.
  std::vector<int> protocols_per_lesson;
};

CrossingReport validate_crossing(const RatingDataset& ds);
std::string format_crossing(const CrossingReport& report);

}  // namespace befa
