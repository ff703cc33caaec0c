#pragma once

// Workspace directories and the provenance manifest.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace emslab {

std::string_view tool_version();

std::string sha256_hex(std::string_view data);
/// Throws MissingArtifacts when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

struct WorkspaceLayout {
    std::filesystem::path root;

    std::filesystem::path trips() const { return root / "trips"; }
    std::filesystem::path dp() const { return root / "dp"; }
    std::filesystem::path policies() const { return root / "policies"; }
    std::filesystem::path results() const { return root / "results"; }
    std::filesystem::path manifest() const { return root / "manifest.json"; }

    void create() const;
    /// Path relative to the root with forward slashes.
    std::string relative(const std::filesystem::path& p) const;
};

struct ManifestEntry {
    std::string kind;                           // trip, dp-table, trajectory, policy, ...
    std::map<std::string, std::string> inputs;  // relative path -> sha256
    std::string config_hash;
    std::string tool_version;
    std::string output_hash;

    bool same_provenance(const ManifestEntry& other) const;
};

class Manifest {
public:
    static Manifest load(const std::filesystem::path& path);  // empty when absent
    void save(const std::filesystem::path& path) const;

    const ManifestEntry* find(const std::string& artifact) const;
    void record(const std::string& artifact, ManifestEntry entry) { entries_[artifact] = std::move(entry); }
    const std::map<std::string, ManifestEntry>& entries() const { return entries_; }

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& doc);

private:
    std::map<std::string, ManifestEntry> entries_;
};

/// Throws ProvenanceConflict when `artifact` already exists under `layout`
/// and its recorded provenance is absent or differs from `proposed`, unless
/// `force` is set.
void check_overwrite(const WorkspaceLayout& layout, const Manifest& manifest, const std::string& artifact,
                     const ManifestEntry& proposed, bool force);

/// Artifacts whose recorded input or output hashes no longer match the files.
std::vector<std::string> stale_artifacts(const WorkspaceLayout& layout, const Manifest& manifest);

/// Hash of a JSON document in its canonical (sorted, compact) dump.
std::string config_hash(const nlohmann::json& config);

}  // namespace emslab
