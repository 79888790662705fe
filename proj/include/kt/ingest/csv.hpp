#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "kt/core/dataset.hpp"
#include "kt/error.hpp"

namespace kt::csv {

/// RFC-4180 record reader: quoted fields may hold commas, doubled quotes and
/// line breaks. Accepts both LF and CRLF record separators.
class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    /// Reads the next record into `fields`. Returns false at end of input.
    bool next(std::vector<std::string>& fields) {
        fields.clear();
        int c = in_.get();
        if (c == std::char_traits<char>::eof()) return false;
        ++record_;
        std::string field;
        bool quoted = false;
        bool after_quote = false;
        for (;; c = in_.get()) {
            if (c == std::char_traits<char>::eof()) {
                fields.push_back(std::move(field));
                return true;
            }
            const char ch = static_cast<char>(c);
            if (quoted) {
                if (ch == '"') {
                    if (in_.peek() == '"') {
                        in_.get();
                        field.push_back('"');
                    } else {
                        quoted = false;
                        after_quote = true;
                    }
                } else {
                    field.push_back(ch);
                }
                continue;
            }
            if (ch == ',') {
                fields.push_back(std::move(field));
                field.clear();
                after_quote = false;
            } else if (ch == '\n' || ch == '\r') {
                if (ch == '\r' && in_.peek() == '\n') in_.get();
                fields.push_back(std::move(field));
                return true;
            } else if (ch == '"' && field.empty() && !after_quote) {
                quoted = true;
            } else {
                field.push_back(ch);
            }
        }
    }

    /// 1-based index of the last record returned (header is record 1).
    std::size_t record() const noexcept { return record_; }

private:
    std::istream& in_;
    std::size_t record_ = 0;
};

inline std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void write_row(std::ostream& out, std::span<const std::string> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << escape(fields[i]);
    }
    out << '\n';
}

inline void write_row(std::ostream& out, std::initializer_list<std::string> fields) {
    write_row(out, std::span<const std::string>(fields.begin(), fields.size()));
}

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    T value{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

}  // namespace kt::csv

namespace kt {

/// Logical field -> source column header, for one file kind.
struct CsvSchemaMap {
    std::map<std::string, std::string> columns;
    std::vector<std::string> required;

    void validate() const {
        std::map<std::string, std::string> seen_headers;
        for (const auto& field : required) {
            if (!columns.contains(field)) throw SchemaError("schema does not map required field '" + field + "'");
        }
        for (const auto& [field, header] : columns) {
            auto [it, inserted] = seen_headers.emplace(header, field);
            if (!inserted) {
                throw SchemaError("column '" + header + "' mapped by both '" + it->second + "' and '" + field + "'");
            }
        }
    }
};

inline CsvSchemaMap canonical_interaction_schema() {
    CsvSchemaMap s;
    for (const char* f : {"user_id", "question_id", "answer_id", "is_correct", "correct_option", "chosen_option",
                          "timestamp", "group_id", "quiz_id", "scheme_id", "confidence"}) {
        s.columns[f] = f;
    }
    s.required = {"user_id",       "question_id", "answer_id", "is_correct", "correct_option",
                  "chosen_option", "timestamp",   "group_id",  "quiz_id"};
    return s;
}

inline CsvSchemaMap canonical_question_schema() {
    CsvSchemaMap s;
    s.columns = {{"question_id", "question_id"}, {"skill_path", "skill_path"}};
    s.required = {"question_id", "skill_path"};
    return s;
}

inline CsvSchemaMap canonical_student_schema() {
    CsvSchemaMap s;
    s.columns = {{"user_id", "user_id"}, {"gender", "gender"}, {"dob", "dob"}, {"premium_pupil", "premium_pupil"}};
    s.required = {"user_id"};
    return s;
}

struct RowError {
    std::size_t record = 0;  // 1-based CSV record number, header = 1
    std::string message;
};

template <typename T>
struct ParseResult {
    std::vector<T> rows;
    std::vector<RowError> errors;
    std::size_t inconsistent = 0;  // rows dropped for a correctness/option mismatch
    std::size_t input_rows = 0;
};

namespace detail {

/// Resolves logical fields to column positions in a header row.
class ColumnIndex {
public:
    ColumnIndex(const CsvSchemaMap& schema, const std::vector<std::string>& header) {
        schema.validate();
        for (const auto& [field, name] : schema.columns) {
            auto pos = std::find(header.begin(), header.end(), name);
            const bool required = std::find(schema.required.begin(), schema.required.end(), field) !=
                                  schema.required.end();
            if (pos == header.end()) {
                if (required) throw SchemaError("missing column '" + name + "' for field '" + field + "'");
                continue;
            }
            index_[field] = static_cast<std::size_t>(pos - header.begin());
        }
    }

    /// Empty string_view when the column is absent or the row is short.
    std::string_view get(const std::vector<std::string>& row, const std::string& field) const {
        auto it = index_.find(field);
        if (it == index_.end() || it->second >= row.size()) return {};
        return row[it->second];
    }

    bool has(const std::string& field) const { return index_.contains(field); }

private:
    std::map<std::string, std::size_t> index_;
};

inline std::vector<std::string> read_header(csv::Reader& reader) {
    std::vector<std::string> header;
    if (!reader.next(header)) throw SchemaError("empty CSV: no header row");
    if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);
    return header;
}

template <typename T>
T require_number(std::string_view s, const char* field) {
    auto v = csv::parse_number<T>(s);
    if (!v) throw ValidationError(std::string("bad ") + field + " '" + std::string(s) + "'");
    return *v;
}

inline std::optional<std::chrono::year_month_day> parse_date(std::string_view s) {
    // YYYY-MM-DD, optionally followed by a time part which is ignored
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    auto y = csv::parse_number<int>(s.substr(0, 4));
    auto m = csv::parse_number<unsigned>(s.substr(5, 2));
    auto d = csv::parse_number<unsigned>(s.substr(8, 2));
    if (!y || !m || !d) return std::nullopt;
    std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{*m}, std::chrono::day{*d}};
    if (!ymd.ok()) return std::nullopt;
    return ymd;
}

inline std::string format_date(std::chrono::year_month_day d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                  static_cast<unsigned>(d.day()));
    return buf;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path);
    return out;
}

}  // namespace detail

/// Parses interaction rows. Malformed or self-inconsistent rows are reported
/// and dropped; a missing mapped column is a SchemaError.
inline ParseResult<Interaction> read_interactions(std::istream& in,
                                                  const CsvSchemaMap& schema = canonical_interaction_schema()) {
    csv::Reader reader(in);
    const auto header = detail::read_header(reader);
    const detail::ColumnIndex cols(schema, header);
    ParseResult<Interaction> out;
    std::vector<std::string> row;
    while (reader.next(row)) {
        if (row.size() == 1 && row[0].empty()) continue;  // blank line
        ++out.input_rows;
        try {
            Interaction x;
            x.user_id = detail::require_number<Id>(cols.get(row, "user_id"), "user_id");
            x.question_id = detail::require_number<Id>(cols.get(row, "question_id"), "question_id");
            x.answer_id = detail::require_number<Id>(cols.get(row, "answer_id"), "answer_id");
            const auto correct = detail::require_number<int>(cols.get(row, "is_correct"), "is_correct");
            if (correct != 0 && correct != 1) throw ValidationError("is_correct must be 0 or 1");
            x.is_correct = static_cast<std::uint8_t>(correct);
            auto co = parse_option(cols.get(row, "correct_option"));
            auto ch = parse_option(cols.get(row, "chosen_option"));
            if (!co || !ch) throw ValidationError("bad answer option");
            x.correct_option = *co;
            x.chosen_option = *ch;
            x.timestamp = detail::require_number<Timestamp>(cols.get(row, "timestamp"), "timestamp");
            if (x.timestamp <= 0) throw ValidationError("timestamp must be positive");
            x.group_id = detail::require_number<Id>(cols.get(row, "group_id"), "group_id");
            x.quiz_id = detail::require_number<Id>(cols.get(row, "quiz_id"), "quiz_id");
            if (auto s = cols.get(row, "scheme_id"); !s.empty()) {
                x.scheme_id = detail::require_number<Id>(s, "scheme_id");
            }
            if (auto s = cols.get(row, "confidence"); !s.empty()) {
                const double c = detail::require_number<double>(s, "confidence");
                if (!(c >= 0.0 && c <= 100.0)) throw ValidationError("confidence outside [0,100]");
                x.confidence = c;
            }
            if (x.user_id < 0 || x.question_id < 0 || x.answer_id < 0 || x.group_id < 0 || x.quiz_id < 0) {
                throw ValidationError("negative id");
            }
            if ((x.is_correct == 1) != (x.correct_option == x.chosen_option)) {
                ++out.inconsistent;
                out.errors.push_back({reader.record(), "is_correct disagrees with chosen/correct options"});
                continue;
            }
            out.rows.push_back(x);
        } catch (const ValidationError& e) {
            out.errors.push_back({reader.record(), e.what()});
        }
    }
    return out;
}

inline ParseResult<Interaction> read_interactions(const std::string& path,
                                                  const CsvSchemaMap& schema = canonical_interaction_schema()) {
    auto in = detail::open_input(path);
    return read_interactions(in, schema);
}

inline void write_interactions(std::ostream& out, std::span<const Interaction> rows) {
    out << "user_id,question_id,answer_id,is_correct,correct_option,chosen_option,timestamp,group_id,quiz_id,"
           "scheme_id,confidence\n";
    for (const auto& x : rows) {
        out << x.user_id << ',' << x.question_id << ',' << x.answer_id << ',' << int(x.is_correct) << ','
            << option_char(x.correct_option) << ',' << option_char(x.chosen_option) << ',' << x.timestamp << ','
            << x.group_id << ',' << x.quiz_id << ',';
        if (x.scheme_id) out << *x.scheme_id;
        out << ',';
        if (x.confidence) out << csv::format_double(*x.confidence);
        out << '\n';
    }
}

inline void write_interactions(const std::string& path, std::span<const Interaction> rows) {
    auto out = detail::open_output(path);
    write_interactions(out, rows);
}

inline std::vector<Id> parse_skill_path(std::string_view s) {
    std::vector<Id> path;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto end = std::min(s.find('|', start), s.size());
        auto v = csv::parse_number<Id>(s.substr(start, end - start));
        if (!v || *v < 0) throw ValidationError("bad skill path '" + std::string(s) + "'");
        path.push_back(*v);
        start = end + 1;
    }
    return path;
}

inline std::string format_skill_path(std::span<const Id> path) {
    std::string out;
    for (std::size_t i = 0; i < path.size(); ++i) {
        if (i) out.push_back('|');
        out += std::to_string(path[i]);
    }
    return out;
}

struct QuestionMetaFile {
    std::vector<QuestionMeta> questions;
    SkillTree skills;
    std::vector<RowError> errors;
};

/// Reads question -> skill path rows and rebuilds the skill tree from the union
/// of the paths. Conflicting parentage for a skill is rejected.
inline QuestionMetaFile read_question_meta(std::istream& in, const CsvSchemaMap& schema = canonical_question_schema()) {
    csv::Reader reader(in);
    const auto header = detail::read_header(reader);
    const detail::ColumnIndex cols(schema, header);
    QuestionMetaFile out;
    std::map<Id, std::optional<Id>> parents;
    std::vector<std::string> row;
    while (reader.next(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        QuestionMeta q;
        try {
            q.question_id = detail::require_number<Id>(cols.get(row, "question_id"), "question_id");
            q.skill_path = parse_skill_path(cols.get(row, "skill_path"));
        } catch (const ValidationError& e) {
            out.errors.push_back({reader.record(), e.what()});
            continue;
        }
        for (std::size_t i = 0; i < q.skill_path.size(); ++i) {
            const Id skill = q.skill_path[i];
            const std::optional<Id> parent = i == 0 ? std::nullopt : std::optional<Id>(q.skill_path[i - 1]);
            auto [it, inserted] = parents.emplace(skill, parent);
            if (!inserted && it->second != parent) {
                throw ValidationError("conflicting parentage for skill " + std::to_string(skill));
            }
        }
        out.questions.push_back(std::move(q));
    }
    out.skills = SkillTree::from_parents(parents);
    return out;
}

inline QuestionMetaFile read_question_meta(const std::string& path,
                                           const CsvSchemaMap& schema = canonical_question_schema()) {
    auto in = detail::open_input(path);
    return read_question_meta(in, schema);
}

inline void write_question_meta(std::ostream& out, std::span<const QuestionMeta> questions) {
    out << "question_id,skill_path\n";
    for (const auto& q : questions) out << q.question_id << ',' << format_skill_path(q.skill_path) << '\n';
}

inline void write_question_meta(const std::string& path, std::span<const QuestionMeta> questions) {
    auto out = detail::open_output(path);
    write_question_meta(out, questions);
}

inline std::optional<Gender> parse_gender(std::string_view s) {
    if (s.empty() || s == "unspecified" || s == "0") return Gender::unspecified;
    if (s == "female" || s == "1") return Gender::female;
    if (s == "male" || s == "2") return Gender::male;
    if (s == "other" || s == "3") return Gender::other;
    return std::nullopt;
}

inline const char* gender_name(Gender g) {
    switch (g) {
        case Gender::unspecified: return "unspecified";
        case Gender::female: return "female";
        case Gender::male: return "male";
        case Gender::other: return "other";
    }
    return "unspecified";
}

inline ParseResult<StudentMeta> read_student_meta(std::istream& in,
                                                  const CsvSchemaMap& schema = canonical_student_schema()) {
    csv::Reader reader(in);
    const auto header = detail::read_header(reader);
    const detail::ColumnIndex cols(schema, header);
    ParseResult<StudentMeta> out;
    std::vector<std::string> row;
    while (reader.next(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        ++out.input_rows;
        try {
            StudentMeta s;
            s.user_id = detail::require_number<Id>(cols.get(row, "user_id"), "user_id");
            auto g = parse_gender(cols.get(row, "gender"));
            if (!g) throw ValidationError("bad gender '" + std::string(cols.get(row, "gender")) + "'");
            s.gender = *g;
            if (auto d = cols.get(row, "dob"); !d.empty()) {
                s.dob = detail::parse_date(d);
                if (!s.dob) throw ValidationError("bad date '" + std::string(d) + "'");
            }
            if (auto p = cols.get(row, "premium_pupil"); !p.empty()) {
                const auto v = detail::require_number<int>(p, "premium_pupil");
                if (v != 0 && v != 1) throw ValidationError("premium_pupil must be 0 or 1");
                s.premium_pupil = v == 1;
            }
            out.rows.push_back(s);
        } catch (const ValidationError& e) {
            out.errors.push_back({reader.record(), e.what()});
        }
    }
    return out;
}

inline ParseResult<StudentMeta> read_student_meta(const std::string& path,
                                                  const CsvSchemaMap& schema = canonical_student_schema()) {
    auto in = detail::open_input(path);
    return read_student_meta(in, schema);
}

inline void write_student_meta(std::ostream& out, std::span<const StudentMeta> students) {
    out << "user_id,gender,dob,premium_pupil\n";
    for (const auto& s : students) {
        out << s.user_id << ',' << gender_name(s.gender) << ',';
        if (s.dob) out << detail::format_date(*s.dob);
        out << ',';
        if (s.premium_pupil) out << (*s.premium_pupil ? 1 : 0);
        out << '\n';
    }
}

inline void write_student_meta(const std::string& path, std::span<const StudentMeta> students) {
    auto out = detail::open_output(path);
    write_student_meta(out, students);
}

/// Writes the three canonical files of a dataset into `dir`.
inline void write_dataset(const std::string& dir, const Dataset& ds) {
    write_interactions(dir + "/interactions.csv", ds.interactions());
    std::vector<QuestionMeta> qs;
    for (const auto& [_, q] : ds.questions()) qs.push_back(q);
    write_question_meta(dir + "/questions.csv", qs);
    std::vector<StudentMeta> ss;
    for (const auto& [_, s] : ds.students()) ss.push_back(s);
    write_student_meta(dir + "/students.csv", ss);
}

struct LoadReport {
    std::size_t interaction_errors = 0;
    std::size_t inconsistent = 0;
    std::size_t question_errors = 0;
    std::size_t student_errors = 0;
};

/// Reads the three canonical files from `dir` and builds a Dataset.
inline Dataset load_dataset(const std::string& dir, LoadReport* report = nullptr) {
    auto inter = read_interactions(dir + "/interactions.csv");
    auto qmeta = read_question_meta(dir + "/questions.csv");
    auto smeta = read_student_meta(dir + "/students.csv");
    if (report) {
        report->interaction_errors = inter.errors.size();
        report->inconsistent = inter.inconsistent;
        report->question_errors = qmeta.errors.size();
        report->student_errors = smeta.errors.size();
    }
    return build_dataset(std::move(inter.rows), std::move(qmeta.questions), std::move(smeta.rows),
                         std::move(qmeta.skills));
}

inline void write_split(const std::string& path, const Dataset& ds, const SplitLabel& split) {
    auto out = detail::open_output(path);
    out << "answer_id,split\n";
    for (const auto& x : ds.interactions()) out << x.answer_id << ',' << split_name(split.of(x.answer_id)) << '\n';
}

inline SplitLabel read_split(const std::string& path) {
    auto in = detail::open_input(path);
    csv::Reader reader(in);
    auto header = detail::read_header(reader);
    if (header.size() < 2 || header[0] != "answer_id" || header[1] != "split") {
        throw SchemaError("split file must have header answer_id,split");
    }
    SplitLabel out;
    std::vector<std::string> row;
    while (reader.next(row)) {
        if (row.size() < 2) continue;
        auto id = csv::parse_number<Id>(row[0]);
        auto s = parse_split(row[1]);
        if (!id || !s) throw ValidationError("bad split row at record " + std::to_string(reader.record()));
        out.assignment[*id] = *s;
    }
    return out;
}

/// Persists a dense <-> raw id map as CSV.
inline void write_id_map(const std::string& path, const IdMap& map) {
    auto out = detail::open_output(path);
    out << "dense,raw\n";
    for (std::size_t i = 0; i < map.size(); ++i) out << i << ',' << map.raw(static_cast<std::int32_t>(i)) << '\n';
}

}  // namespace kt
