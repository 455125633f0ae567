#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "safeinfer/conformal.hpp"
#include "safeinfer/rbf_network.hpp"
#include "safeinfer/world_sim.hpp"

namespace safeinfer {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kLibraryVersion = "1.0.0";

// JSON documents. Every document carries "format_version"; a newer major
// version is rejected with SchemaError.
nlohmann::json to_json(const RbfNetwork& net);
RbfNetwork network_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EpisodeConfig& cfg);
EpisodeConfig config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AcpState& state);
AcpState acp_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EpisodeSummary& summary);
EpisodeSummary summary_from_json(const nlohmann::json& j);

/// Parses a JSON file; syntax errors become ParseError naming file and line.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

void save_network(const std::filesystem::path& path, const RbfNetwork& net);
RbfNetwork load_network(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const EpisodeConfig& cfg);
EpisodeConfig load_config(const std::filesystem::path& path);
void save_acp(const std::filesystem::path& path, const AcpState& state);
AcpState load_acp(const std::filesystem::path& path);

// CSV time series, numbers printed with 17 significant digits.
std::string dataset_to_csv(std::span<const DatasetRow> rows);
std::vector<DatasetRow> dataset_from_csv(const std::string& text);
void save_dataset(const std::filesystem::path& path, std::span<const DatasetRow> rows);
std::vector<DatasetRow> load_dataset(const std::filesystem::path& path);

std::vector<std::string> trace_columns(std::size_t agents);
std::string trace_to_csv(std::span<const TraceRecord> trace, std::size_t agents);
std::vector<TraceRecord> trace_from_csv(const std::string& text);
void save_trace(const std::filesystem::path& path, std::span<const TraceRecord> trace, std::size_t agents);
std::vector<TraceRecord> load_trace(const std::filesystem::path& path);

std::string format_double(double v);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Digest of the canonical JSON form of a configuration.
std::string config_digest(const EpisodeConfig& cfg);

struct ManifestArtifact {
    std::string path;  // relative to the manifest directory
    std::string sha256;
};

struct RunManifest {
    std::string kind;
    std::string config_digest;
    std::vector<std::uint64_t> seeds;
    std::map<std::string, std::string> module_versions;
    std::vector<ManifestArtifact> artifacts;
};

inline constexpr const char* kManifestName = "manifest.json";

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Records the digest of each listed file (paths relative to dir) and writes
/// dir/manifest.json.
RunManifest write_manifest(const std::filesystem::path& dir, RunManifest manifest,
                           const std::vector<std::string>& files);

/// Loads dir/manifest.json and checks that every artifact exists and matches
/// its digest. Throws IntegrityError otherwise.
RunManifest verify_manifest(const std::filesystem::path& dir);

}  // namespace safeinfer
