#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kt/binary_io.hpp"
#include "kt/models/model_spec.hpp"

namespace kt {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// "KTMD" container: magic, u32 version, model_id, algorithm tag, view,
/// hyperparameters as (name, f64) pairs, u64 seed, then the opaque payload.
struct ModelArtifact {
    ModelSpec spec;
    std::vector<std::uint8_t> payload;
};

inline std::vector<std::uint8_t> encode_artifact(const ModelSpec& spec, std::span<const std::uint8_t> payload) {
    ByteWriter w;
    w.put_magic("KTMD");
    w.put<std::uint32_t>(kModelFormatVersion);
    w.put_string(spec.model_id);
    w.put_string(algorithm_name(spec.algorithm));
    w.put_string(spec.view ? granularity_name(*spec.view) : "");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.hyperparameters.size()));
    for (const auto& [k, v] : spec.hyperparameters) {
        w.put_string(k);
        w.put<double>(v);
    }
    w.put<std::uint64_t>(spec.seed);
    w.put_bytes(payload);
    return w.release();
}

inline ModelArtifact decode_artifact(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("KTMD");
    const auto version = r.get<std::uint32_t>();
    if (version != kModelFormatVersion) throw ValidationError("unsupported KTMD version " + std::to_string(version));
    ModelArtifact a;
    a.spec.model_id = r.get_string();
    a.spec.algorithm = parse_algorithm(r.get_string());
    const auto view = r.get_string();
    if (!view.empty()) a.spec.view = parse_granularity(view);
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto k = r.get_string();
        a.spec.hyperparameters[k] = r.get<double>();
    }
    a.spec.seed = r.get<std::uint64_t>();
    a.payload = r.get_bytes();
    if (!r.done()) throw ValidationError("trailing bytes after KTMD payload");
    return a;
}

inline std::string artifact_path(const std::string& dir, const std::string& model_id) {
    return dir + "/" + model_id + ".ktmd";
}

/// JSON sidecar with training metadata. Wall time lives here, never in the container.
inline void write_sidecar(const std::string& path, const ModelSpec& spec, std::size_t rows, double seconds,
                          const std::string& status, const std::string& note = "") {
    nlohmann::ordered_json j;
    j["model_id"] = spec.model_id;
    j["algorithm"] = algorithm_name(spec.algorithm);
    j["rows"] = rows;
    j["seed"] = spec.seed;
    j["wall_time_seconds"] = seconds;
    j["status"] = status;
    j["note"] = note;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace kt
