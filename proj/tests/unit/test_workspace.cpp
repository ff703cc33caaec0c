#include <doctest.h>

#include <fstream>

#include "emslab/errors.hpp"
#include "emslab/workspace.hpp"
#include "helpers.hpp"

using namespace emslab;

namespace {

void write(const std::filesystem::path& p, const std::string& text)
{
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

ManifestEntry entry(const WorkspaceLayout& ws, const std::string& input, const std::string& output)
{
    ManifestEntry e;
    e.kind = "trajectory";
    e.inputs[input] = sha256_file(ws.root / input);
    e.config_hash = config_hash({{"soc_points", 201}});
    e.tool_version = std::string(tool_version());
    e.output_hash = sha256_file(ws.root / output);
    return e;
}

}  // namespace

TEST_SUITE("workspace")
{
    TEST_CASE("sha256 matches published test vectors")
    {
        CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        CHECK_THROWS_AS(sha256_file("/nonexistent/file"), MissingArtifacts);
    }

    TEST_CASE("config hash ignores key order")
    {
        const auto a = nlohmann::json::parse(R"({"b": 1, "a": {"y": 2, "x": 3}})");
        const auto b = nlohmann::json::parse(R"({"a": {"x": 3, "y": 2}, "b": 1})");
        CHECK(config_hash(a) == config_hash(b));
        CHECK(config_hash(a) != config_hash({{"b", 2}}));
    }

    TEST_CASE("layout paths")
    {
        const WorkspaceLayout ws{"/tmp/ws"};
        CHECK(ws.relative("/tmp/ws/dp/commute/x.traj.csv") == "dp/commute/x.traj.csv");
        CHECK(ws.manifest() == std::filesystem::path("/tmp/ws/manifest.json"));
    }

    TEST_CASE("manifest round trip")
    {
        test::TempDir dir("ws");
        const WorkspaceLayout ws{dir.path};
        ws.create();
        write(dir.path / "trips/r/a.csv", "in");
        write(dir.path / "dp/r/a.traj.csv", "out");
        Manifest m;
        m.record("dp/r/a.traj.csv", entry(ws, "trips/r/a.csv", "dp/r/a.traj.csv"));
        m.save(ws.manifest());
        const Manifest back = Manifest::load(ws.manifest());
        CHECK(back.to_json() == m.to_json());
        REQUIRE(back.find("dp/r/a.traj.csv"));
        CHECK(back.find("dp/r/a.traj.csv")->same_provenance(*m.find("dp/r/a.traj.csv")));
        CHECK(back.find("missing") == nullptr);
        CHECK(Manifest::load(dir.path / "absent.json").entries().empty());
        write(dir.path / "broken.json", "{not json");
        CHECK_THROWS_AS(Manifest::load(dir.path / "broken.json"), ParseError);
    }

    TEST_CASE("overwrite protection")
    {
        test::TempDir dir("ws");
        const WorkspaceLayout ws{dir.path};
        write(dir.path / "trips/r/a.csv", "in");
        write(dir.path / "dp/r/a.traj.csv", "out");
        const ManifestEntry e = entry(ws, "trips/r/a.csv", "dp/r/a.traj.csv");
        Manifest m;
        // Existing file without a manifest entry.
        CHECK_THROWS_AS(check_overwrite(ws, m, "dp/r/a.traj.csv", e, false), ProvenanceConflict);
        CHECK_NOTHROW(check_overwrite(ws, m, "dp/r/a.traj.csv", e, true));
        // Absent files never conflict.
        CHECK_NOTHROW(check_overwrite(ws, m, "dp/r/b.traj.csv", e, false));

        m.record("dp/r/a.traj.csv", e);
        CHECK_NOTHROW(check_overwrite(ws, m, "dp/r/a.traj.csv", e, false));
        ManifestEntry other = e;
        other.config_hash = config_hash({{"soc_points", 101}});
        CHECK_THROWS_AS(check_overwrite(ws, m, "dp/r/a.traj.csv", other, false), ProvenanceConflict);
        CHECK_NOTHROW(check_overwrite(ws, m, "dp/r/a.traj.csv", other, true));
        // A different output with identical provenance is a rerun, not a conflict.
        other = e;
        other.output_hash = "different";
        CHECK_NOTHROW(check_overwrite(ws, m, "dp/r/a.traj.csv", other, false));
    }

    TEST_CASE("stale detection follows input and output hashes")
    {
        test::TempDir dir("ws");
        const WorkspaceLayout ws{dir.path};
        write(dir.path / "trips/r/a.csv", "in");
        write(dir.path / "dp/r/a.traj.csv", "out");
        Manifest m;
        m.record("dp/r/a.traj.csv", entry(ws, "trips/r/a.csv", "dp/r/a.traj.csv"));
        CHECK(stale_artifacts(ws, m).empty());
        write(dir.path / "trips/r/a.csv", "edited");
        CHECK(stale_artifacts(ws, m) == std::vector<std::string>{"dp/r/a.traj.csv"});
        write(dir.path / "trips/r/a.csv", "in");
        CHECK(stale_artifacts(ws, m).empty());
        std::filesystem::remove(dir.path / "dp/r/a.traj.csv");
        CHECK(stale_artifacts(ws, m).size() == 1);
    }
}
