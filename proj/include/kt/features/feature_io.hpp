#pragma once

#include <string>

#include "kt/binary_io.hpp"
#include "kt/features/features.hpp"
#include "kt/ingest/csv.hpp"

namespace kt {

inline constexpr std::uint32_t kFeatureTableVersion = 1;

/// CSV form: answer_id, one column per feature, is_correct.
inline void write_feature_csv(std::ostream& out, const FeatureTable& table) {
    out << "answer_id";
    for (const auto& name : table.column_names()) out << ',' << name;
    out << ",is_correct\n";
    for (std::size_t i = 0; i < table.rows(); ++i) {
        out << (table.answer_ids.empty() ? Id(i) : table.answer_ids[i]);
        for (double v : table.row(i)) out << ',' << csv::format_double(v);
        out << ',' << int(table.labels[i]) << '\n';
    }
}

inline void write_feature_csv(const std::string& path, const FeatureTable& table) {
    auto out = detail::open_output(path);
    write_feature_csv(out, table);
}

/// Fixed layout: "KTFT", u32 version, u64 rows, then per row 14 x f64 and a u8 label.
inline std::vector<std::uint8_t> encode_ktft(const FeatureTable& table) {
    if (table.width() != kFeatureCount) throw ValidationError("KTFT stores full-width (14 column) tables only");
    ByteWriter w;
    w.put_magic("KTFT");
    w.put<std::uint32_t>(kFeatureTableVersion);
    w.put<std::uint64_t>(table.rows());
    for (std::size_t i = 0; i < table.rows(); ++i) {
        for (double v : table.row(i)) w.put<double>(v);
        w.put<std::uint8_t>(table.labels[i]);
    }
    return w.release();
}

inline FeatureTable decode_ktft(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("KTFT");
    const auto version = r.get<std::uint32_t>();
    if (version != kFeatureTableVersion) throw ValidationError("unsupported KTFT version " + std::to_string(version));
    const auto n = r.get<std::uint64_t>();
    FeatureTable table;
    table.columns = view_columns(Granularity::full);
    table.values.reserve(n * kFeatureCount);
    table.labels.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < kFeatureCount; ++c) table.values.push_back(r.get<double>());
        table.labels.push_back(r.get<std::uint8_t>());
    }
    if (!r.done()) throw ValidationError("trailing bytes after KTFT payload");
    return table;
}

inline void write_ktft(const std::string& path, const FeatureTable& table) { write_file(path, encode_ktft(table)); }

inline FeatureTable read_ktft(const std::string& path) { return decode_ktft(read_file(path)); }

/// Restores answer ids and entity keys from the dataset the table was computed on.
inline void attach_keys(FeatureTable& table, const Dataset& ds) {
    if (table.rows() != ds.size()) {
        throw ValidationError("feature table has " + std::to_string(table.rows()) + " rows, dataset has " +
                              std::to_string(ds.size()));
    }
    table.answer_ids.clear();
    table.keys.clear();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (table.labels[i] != ds[i].is_correct) throw ValidationError("feature table labels disagree with dataset");
        table.answer_ids.push_back(ds[i].answer_id);
        table.keys.push_back(ds.keys(i));
    }
}

}  // namespace kt
