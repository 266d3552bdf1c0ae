#include "befa/ratings.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "befa/csv.hpp"
#include "befa/error.hpp"

namespace befa {

void validate_protocols(const std::vector<ProtocolDef>& protocols) {
  std::set<std::string> names;
  for (const auto& p : protocols) {
    if (p.name.empty()) throw ValidationError("protocol with empty name");
    if (!names.insert(p.name).second) throw ValidationError("duplicate protocol " + p.name);
    if (p.dims.empty()) throw ValidationError("protocol " + p.name + " has no dimensions");
    if (p.levels < 2) throw ValidationError("protocol " + p.name + " needs at least 2 levels");
    std::set<std::string> dims;
    for (const auto& d : p.dims) {
      if (d.empty()) throw ValidationError("protocol " + p.name + " has an empty dimension name");
      if (!dims.insert(d).second) {
        throw ValidationError("protocol " + p.name + " repeats dimension " + d);
      }
    }
  }
}

int IdIndex::intern(const std::string& id) {
  if (auto it = lookup_.find(id); it != lookup_.end()) return it->second;
  const int idx = static_cast<int>(names_.size());
  names_.push_back(id);
  lookup_.emplace(id, idx);
  return idx;
}

int IdIndex::find(std::string_view id) const {
  const auto it = lookup_.find(std::string(id));
  return it == lookup_.end() ? -1 : it->second;
}

DimRef RatingDataset::dim_at(int position) const {
  int c = canonical_at.at(position);
  for (int p = 0; p < static_cast<int>(protocols.size()); ++p) {
    if (c < protocols[p].dim_count()) return {p, c};
    c -= protocols[p].dim_count();
  }
  throw Error("dimension position out of range");
}

std::string RatingDataset::dim_name(int position) const {
  const auto r = dim_at(position);
  return protocols[r.protocol].name + ":" + protocols[r.protocol].dims[r.local];
}

int RatingDataset::find_dim(std::string_view name) const {
  const auto colon = name.find(':');
  int found = -1;
  for (int p = 0; p < static_cast<int>(protocols.size()); ++p) {
    if (colon != std::string_view::npos && protocols[p].name != name.substr(0, colon)) continue;
    const auto bare = colon == std::string_view::npos ? name : name.substr(colon + 1);
    for (int l = 0; l < protocols[p].dim_count(); ++l) {
      if (protocols[p].dims[l] == bare) {
        if (found >= 0) return -1;
        found = position_of[p][l];
      }
    }
  }
  return found;
}

int RatingDataset::score_at(const ScoringEvent& e, int position) const {
  const auto r = dim_at(position);
  if (r.protocol != e.protocol) return kMissingScore;
  return e.scores[r.local];
}

bool RatingDataset::operator==(const RatingDataset& o) const {
  return protocols == o.protocols && events == o.events && event_ids == o.event_ids &&
         teachers == o.teachers && sections == o.sections && lessons == o.lessons &&
         segments == o.segments && raters == o.raters && section_teacher == o.section_teacher &&
         lesson_section == o.lesson_section && segment_lesson == o.segment_lesson &&
         position_of == o.position_of && canonical_at == o.canonical_at;
}

RatingDataset make_empty_dataset(std::vector<ProtocolDef> protocols) {
  validate_protocols(protocols);
  RatingDataset ds;
  ds.protocols = std::move(protocols);
  int pos = 0;
  for (const auto& p : ds.protocols) {
    std::vector<int> positions(p.dims.size());
    for (auto& q : positions) q = pos++;
    ds.position_of.push_back(std::move(positions));
  }
  ds.canonical_at.resize(pos);
  std::iota(ds.canonical_at.begin(), ds.canonical_at.end(), 0);
  return ds;
}

namespace {

void link_parent(std::vector<int>& parents, int child, int parent, const char* child_kind,
                 const std::string& child_name, const char* parent_kind,
                 const std::vector<std::string>& parent_names, std::size_t line) {
  if (child >= static_cast<int>(parents.size())) parents.resize(child + 1, -1);
  if (parents[child] < 0) {
    parents[child] = parent;
  } else if (parents[child] != parent) {
    throw ValidationError("line " + std::to_string(line) + ": hierarchy violation: " + child_kind + " " +
                          child_name + " appears under " + parent_kind + "s " + parent_names[parents[child]] +
                          " and " + parent_names[parent]);
  }
}

}  // namespace

void add_event(RatingDataset& ds, const std::string& event_id, const std::string& teacher,
               const std::string& section, const std::string& lesson,
               const std::string& segment, const std::string& rater, int protocol,
               std::vector<int> scores, std::size_t line) {
  if (protocol < 0 || protocol >= static_cast<int>(ds.protocols.size())) {
    throw ParseError("unknown protocol index", line);
  }
  const auto& proto = ds.protocols[protocol];
  if (static_cast<int>(scores.size()) != proto.dim_count()) {
    throw ParseError("event " + event_id + " has " + std::to_string(scores.size()) +
                         " scores; protocol " + proto.name + " has " +
                         std::to_string(proto.dim_count()) + " dimensions",
                     line);
  }
  for (int d = 0; d < proto.dim_count(); ++d) {
    const int y = scores[d];
    if (y != kMissingScore && (y < 1 || y > proto.levels)) {
      throw ValidationError((line ? "line " + std::to_string(line) + ": " : std::string()) +
                            "score " + std::to_string(y) + " out of range 1.." +
                            std::to_string(proto.levels) + " for " + proto.name + ":" +
                            proto.dims[d]);
    }
  }
  for (const auto* id : {&event_id, &teacher, &section, &lesson, &segment, &rater}) {
    if (id->empty()) throw ParseError("empty identifier", line);
  }
  if (ds.event_ids.find(event_id) >= 0) throw ParseError("duplicate event " + event_id, line);

  ScoringEvent e;
  e.teacher = ds.teachers.intern(teacher);
  e.section = ds.sections.intern(section);
  e.lesson = ds.lessons.intern(lesson);
  e.segment = ds.segments.intern(segment);
  e.rater = ds.raters.intern(rater);
  e.protocol = protocol;
  e.scores = std::move(scores);
  link_parent(ds.section_teacher, e.section, e.teacher, "section", section, "teacher",
              ds.teachers.names(), line);
  link_parent(ds.lesson_section, e.lesson, e.section, "lesson", lesson, "section",
              ds.sections.names(), line);
  link_parent(ds.segment_lesson, e.segment, e.lesson, "segment", segment, "lesson",
              ds.lessons.names(), line);
  ds.event_ids.intern(event_id);
  ds.events.push_back(std::move(e));
}

std::vector<ProtocolDef> load_schema(const std::filesystem::path& path) {
  std::vector<ProtocolDef> out;
  for (const auto& kv : read_key_values(path)) {
    if (kv.key == "protocol") {
      out.push_back(ProtocolDef{kv.value, {}, 0});
      continue;
    }
    if (out.empty()) throw ParseError("'" + kv.key + "' before any 'protocol' entry", kv.line);
    if (kv.key == "levels") {
      out.back().levels = static_cast<int>(parse_long(kv.value, kv.line));
    } else if (kv.key == "dims") {
      out.back().dims = split_list(kv.value, kv.line);
    } else {
      throw ParseError("unknown schema key '" + kv.key + "'", kv.line);
    }
  }
  if (out.empty()) throw ValidationError(path.string() + ": no protocols defined");
  validate_protocols(out);
  return out;
}

void write_schema(const std::vector<ProtocolDef>& protocols, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& p : protocols) {
    out << "protocol = " << p.name << "\nlevels = " << p.levels << "\ndims = ";
    for (std::size_t i = 0; i < p.dims.size(); ++i) out << (i ? ", " : "") << p.dims[i];
    out << "\n\n";
  }
}

RatingDataset load_dataset(const std::filesystem::path& path, const std::vector<ProtocolDef>& schema) {
  RatingDataset ds = make_empty_dataset(schema);
  CsvReader reader(path);
  reader.expect_header(long_csv_header());

  struct Pending {
    std::string teacher, section, lesson, segment, rater;
    int protocol = -1;
    std::vector<int> scores;
    std::vector<bool> seen;
    std::size_t line = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Pending> pending;

  std::vector<std::string> f;
  while (reader.next(f)) {
    const auto line = reader.line();
    if (f.size() != 9) {
      throw ParseError("expected 9 fields, got " + std::to_string(f.size()), line);
    }
    for (auto& field : f) {
      field = trim(field);
      if (field.empty()) throw ParseError("empty field", line);
    }
    int protocol = -1;
    for (int p = 0; p < static_cast<int>(ds.protocols.size()); ++p) {
      if (ds.protocols[p].name == f[6]) protocol = p;
    }
    if (protocol < 0) throw ParseError("unknown protocol '" + f[6] + "'", line);
    const auto& proto = ds.protocols[protocol];
    const auto dim_it = std::find(proto.dims.begin(), proto.dims.end(), f[7]);
    if (dim_it == proto.dims.end()) {
      throw ParseError("protocol " + proto.name + " has no dimension '" + f[7] + "'", line);
    }
    const int local = static_cast<int>(dim_it - proto.dims.begin());
    int score = kMissingScore;
    if (f[8] != "NA") {
      score = static_cast<int>(parse_long(f[8], line));
      if (score < 1 || score > proto.levels) {
        throw ValidationError("line " + std::to_string(line) + ": score " + f[8] +
                              " out of range 1.." + std::to_string(proto.levels) + " for " +
                              proto.name + ":" + f[7]);
      }
    }

    auto [it, inserted] = pending.try_emplace(f[0]);
    Pending& ev = it->second;
    if (inserted) {
      order.push_back(f[0]);
      ev = Pending{f[1], f[2], f[3], f[4], f[5], protocol,
                   std::vector<int>(proto.dims.size(), kMissingScore),
                   std::vector<bool>(proto.dims.size(), false), line};
    } else if (ev.teacher != f[1] || ev.section != f[2] || ev.lesson != f[3] ||
               ev.segment != f[4] || ev.rater != f[5] || ev.protocol != protocol) {
      throw ParseError("event " + f[0] + " changes its ids or protocol between rows", line);
    }
    if (ev.seen[local]) throw ParseError("event " + f[0] + " repeats dimension " + f[7], line);
    ev.seen[local] = true;
    ev.scores[local] = score;
  }

  for (const auto& id : order) {
    auto& ev = pending.at(id);
    const auto& proto = ds.protocols[ev.protocol];
    for (std::size_t d = 0; d < ev.seen.size(); ++d) {
      if (!ev.seen[d]) {
        throw ParseError("event " + id + " lacks dimension " + proto.dims[d] +
                             " (write NA for a missing score)",
                         ev.line);
      }
    }
    add_event(ds, id, ev.teacher, ev.section, ev.lesson, ev.segment, ev.rater, ev.protocol,
              std::move(ev.scores), ev.line);
  }
  return ds;
}

void export_dataset(const RatingDataset& ds, const std::filesystem::path& path) {
  CsvWriter w(path);
  w.row(long_csv_header());
  for (int i = 0; i < ds.event_count(); ++i) {
    const auto& e = ds.events[i];
    const auto& proto = ds.protocols[e.protocol];
    for (int d = 0; d < proto.dim_count(); ++d) {
      w.row({ds.event_ids.name(i), ds.teachers.name(e.teacher), ds.sections.name(e.section),
             ds.lessons.name(e.lesson), ds.segments.name(e.segment), ds.raters.name(e.rater),
             proto.name, proto.dims[d],
             e.scores[d] == kMissingScore ? std::string("NA") : std::to_string(e.scores[d])});
    }
  }
}

void export_wide(const RatingDataset& ds, const std::filesystem::path& path) {
  CsvWriter w(path);
  std::vector<std::string> header{"event_id", "teacher_id", "section_id", "lesson_id",
                                  "segment_id", "rater_id", "protocol"};
  for (int q = 0; q < ds.dimension_count(); ++q) header.push_back(ds.dim_name(q));
  w.row(header);
  for (int i = 0; i < ds.event_count(); ++i) {
    const auto& e = ds.events[i];
    std::vector<std::string> row{ds.event_ids.name(i), ds.teachers.name(e.teacher),
                                 ds.sections.name(e.section), ds.lessons.name(e.lesson),
                                 ds.segments.name(e.segment), ds.raters.name(e.rater),
                                 ds.protocols[e.protocol].name};
    for (int q = 0; q < ds.dimension_count(); ++q) {
      const int y = ds.score_at(e, q);
      row.push_back(y == kMissingScore ? "NA" : std::to_string(y));
    }
    w.row(row);
  }
}

CrossingReport validate_crossing(const RatingDataset& ds) {
  CrossingReport r;
  r.events = ds.event_count();
  r.teachers = ds.teachers.size();
  r.sections = ds.sections.size();
  r.lessons = ds.lessons.size();
  r.segments = ds.segments.size();
  r.raters = ds.raters.size();

  const int np = static_cast<int>(ds.protocols.size());
  // (lesson, protocol) -> set of raters
  std::map<std::pair<int, int>, std::set<int>> raters_of;
  std::vector<std::set<int>> rater_lessons(r.raters), rater_teachers(r.raters);
  std::vector<std::set<int>> lesson_protocols(r.lessons);
  for (const auto& e : ds.events) {
    raters_of[{e.lesson, e.protocol}].insert(e.rater);
    rater_lessons[e.rater].insert(e.lesson);
    rater_teachers[e.rater].insert(e.teacher);
    lesson_protocols[e.lesson].insert(e.protocol);
  }

  r.per_protocol.resize(np);
  std::vector<std::set<int>> raters_used(np);
  int single = 0;
  for (const auto& [key, raters] : raters_of) {
    auto& pc = r.per_protocol[key.second];
    const int n = static_cast<int>(raters.size());
    ++pc.lessons_scored;
    if (n == 1) {
      ++pc.singly_rated_lessons;
      ++single;
    }
    pc.max_raters_per_lesson = std::max(pc.max_raters_per_lesson, n);
    raters_used[key.second].insert(raters.begin(), raters.end());
    if (static_cast<int>(r.raters_per_lesson.size()) <= n) r.raters_per_lesson.resize(n + 1, 0);
    ++r.raters_per_lesson[n];
  }
  for (int p = 0; p < np; ++p) {
    auto& pc = r.per_protocol[p];
    pc.protocol = ds.protocols[p].name;
    pc.raters_used = static_cast<int>(raters_used[p].size());
    pc.singly_rated_fraction =
        pc.lessons_scored ? static_cast<double>(pc.singly_rated_lessons) / pc.lessons_scored : 0.0;
  }
  r.singly_rated_fraction =
      raters_of.empty() ? 0.0 : static_cast<double>(single) / static_cast<double>(raters_of.size());
  for (int k = 0; k < r.raters; ++k) {
    r.lessons_per_rater.push_back(static_cast<int>(rater_lessons[k].size()));
    r.teachers_per_rater.push_back(static_cast<int>(rater_teachers[k].size()));
  }
  for (const auto& ps : lesson_protocols) {
    const int n = static_cast<int>(ps.size());
    if (static_cast<int>(r.protocols_per_lesson.size()) <= n) r.protocols_per_lesson.resize(n + 1, 0);
    ++r.protocols_per_lesson[n];
  }
  return r;
}

std::string format_crossing(const CrossingReport& r) {
  std::ostringstream out;
  out << "events = " << r.events << "\nteachers = " << r.teachers << "\nsections = " << r.sections
      << "\nlessons = " << r.lessons << "\nsegments = " << r.segments << "\nraters = " << r.raters
      << "\nsingly_rated_fraction = " << r.singly_rated_fraction << '\n';
  for (const auto& pc : r.per_protocol) {
    out << "protocol." << pc.protocol << " = lessons " << pc.lessons_scored << ", singly rated "
        << pc.singly_rated_fraction << ", raters " << pc.raters_used << ", max raters/lesson "
        << pc.max_raters_per_lesson << '\n';
  }
  out << "lessons_per_rater =";
  for (std::size_t i = 0; i < r.lessons_per_rater.size(); ++i) {
    out << (i ? ", " : " ") << r.lessons_per_rater[i];
  }
  out << '\n';
  return out.str();
}

}  // namespace befa
