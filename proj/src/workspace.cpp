#include "emslab/workspace.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <sstream>

#include "emslab/errors.hpp"

#ifndef EMSLAB_VERSION
#define EMSLAB_VERSION "0.0.0"
#endif

namespace emslab {

using nlohmann::json;

std::string_view tool_version() { return EMSLAB_VERSION; }

std::string sha256_hex(std::string_view data)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifacts("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

void WorkspaceLayout::create() const
{
    for (const auto& d : {trips(), dp(), policies(), results()}) std::filesystem::create_directories(d);
}

std::string WorkspaceLayout::relative(const std::filesystem::path& p) const
{
    return std::filesystem::proximate(p, root).generic_string();
}

bool ManifestEntry::same_provenance(const ManifestEntry& o) const
{
    return kind == o.kind && inputs == o.inputs && config_hash == o.config_hash && tool_version == o.tool_version;
}

Manifest Manifest::load(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) return {};
    std::ifstream in(path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

void Manifest::save(const std::filesystem::path& path) const
{
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << to_json().dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

const ManifestEntry* Manifest::find(const std::string& artifact) const
{
    const auto it = entries_.find(artifact);
    return it == entries_.end() ? nullptr : &it->second;
}

json Manifest::to_json() const
{
    json entries = json::object();
    for (const auto& [name, e] : entries_) {
        entries[name] = {{"kind", e.kind},
                         {"inputs", e.inputs},
                         {"config_hash", e.config_hash},
                         {"tool_version", e.tool_version},
                         {"output_hash", e.output_hash}};
    }
    return {{"kind", "emslab-manifest"}, {"schema_version", 1}, {"entries", entries}};
}

Manifest Manifest::from_json(const json& j)
{
    try {
        if (j.at("kind").get<std::string>() != "emslab-manifest") throw SchemaError("not a workspace manifest");
        Manifest m;
        for (const auto& [name, e] : j.at("entries").items()) {
            ManifestEntry me;
            me.kind = e.at("kind").get<std::string>();
            me.inputs = e.at("inputs").get<std::map<std::string, std::string>>();
            me.config_hash = e.at("config_hash").get<std::string>();
            me.tool_version = e.at("tool_version").get<std::string>();
            me.output_hash = e.at("output_hash").get<std::string>();
            m.entries_[name] = std::move(me);
        }
        return m;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("manifest: ") + e.what());
    }
}

void check_overwrite(const WorkspaceLayout& layout, const Manifest& manifest, const std::string& artifact,
                     const ManifestEntry& proposed, bool force)
{
    if (force || !std::filesystem::exists(layout.root / artifact)) return;
    const ManifestEntry* have = manifest.find(artifact);
    if (!have)
        throw ProvenanceConflict(artifact + " exists without a manifest entry; pass --force to overwrite");
    if (!have->same_provenance(proposed))
        throw ProvenanceConflict(artifact + " was produced from different inputs or config; pass --force to overwrite");
}

std::vector<std::string> stale_artifacts(const WorkspaceLayout& layout, const Manifest& manifest)
{
    std::vector<std::string> out;
    auto hash_or_empty = [&](const std::string& rel) {
        const auto p = layout.root / rel;
        return std::filesystem::exists(p) ? sha256_file(p) : std::string();
    };
    for (const auto& [name, e] : manifest.entries()) {
        bool stale = hash_or_empty(name) != e.output_hash;
        for (const auto& [in, h] : e.inputs)
            if (!stale && hash_or_empty(in) != h) stale = true;
        if (stale) out.push_back(name);
    }
    return out;
}

std::string config_hash(const json& config) { return sha256_hex(config.dump()); }

}  // namespace emslab
