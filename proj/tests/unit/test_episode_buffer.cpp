#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hfkit/episode_buffer.hpp"
#include "support/temp_dir.hpp"

using namespace hfkit;
using hfkit::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::vector<EpisodeRecord> episodes(int n, std::uint64_t seed = 1) {
    auto spec = fixture("default-8x8");
    return rollout_policy(spec, PolicyKind::epsilon(0.3), n, seed);
}

}  // namespace

TEST_CASE("ingest skips duplicates") {
    TempDir dir;
    auto buffer = EpisodeBuffer::open(dir.path);
    auto eps = episodes(100);
    CHECK(buffer->ingest(eps) == 100);
    CHECK(buffer->size() == 100);
    CHECK(buffer->ingest(eps) == 0);
    CHECK(buffer->size() == 100);
}

TEST_CASE("records survive reopening unchanged") {
    TempDir dir;
    auto eps = episodes(20);
    { EpisodeBuffer::open(dir.path)->ingest(eps); }
    auto buffer = EpisodeBuffer::open(dir.path, EpisodeBuffer::Mode::read_only);
    for (const auto& ep : eps) CHECK(buffer->fetch(ep.id) == ep);
    CHECK_THROWS_AS(buffer->fetch(EpisodeId{"default-8x8", "policy-rollout", 1, 700, 999}), NotFound);
    CHECK_THROWS_AS(buffer->mark_labeled(eps[0].id), StoreLocked);
}

TEST_CASE("slices partition an episode") {
    TempDir dir;
    auto buffer = EpisodeBuffer::open(dir.path);
    auto eps = episodes(10, 4);
    buffer->ingest(eps);
    std::mt19937_64 rng(3);
    for (const auto& ep : eps) {
        const int n = ep.length();
        if (n < 2) continue;
        int k = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(n - 1));
        auto a = buffer->slice(ep.id, 0, k);
        auto b = buffer->slice(ep.id, k, n);
        CHECK(a.actions.size() + b.actions.size() == ep.actions.size());
        CHECK(a.states.back() == b.states.front());
        CHECK(a.gt_return() + b.gt_return() == doctest::Approx(ep.total_return).epsilon(1e-12));
        CHECK(a.reward_cells().size() == a.actions.size());
        CHECK_THROWS_AS(buffer->slice(ep.id, 0, n + 1), RangeError);
        CHECK_THROWS_AS(buffer->slice(ep.id, k, k), RangeError);
    }
}

TEST_CASE("label counts and flags persist") {
    TempDir dir;
    auto eps = episodes(3);
    {
        auto buffer = EpisodeBuffer::open(dir.path);
        buffer->ingest(eps);
        CHECK(buffer->mark_labeled(eps[1].id) == 1);
        CHECK(buffer->mark_labeled(eps[1].id) == 2);
        buffer->set_flagged(eps[2].id, true);
        CHECK_THROWS_AS(buffer->mark_labeled(EpisodeId{"x", "y", 0, 0, 0}), NotFound);
    }
    auto buffer = EpisodeBuffer::open(dir.path);
    auto snap = buffer->snapshot();
    CHECK(snap->entries.at(eps[1].id).labeled_count == 2);
    CHECK(snap->entries.at(eps[2].id).flagged);
    CHECK(snap->entries.at(eps[0].id).labeled_count == 0);
}

TEST_CASE("snapshots are unaffected by later writes") {
    TempDir dir;
    auto buffer = EpisodeBuffer::open(dir.path);
    auto eps = episodes(4);
    buffer->ingest(std::span(eps).first(2));
    auto before = buffer->snapshot();
    buffer->ingest(std::span(eps).subspan(2));
    CHECK(before->size() == 2);
    CHECK(buffer->size() == 4);
}

TEST_CASE("ordering sorts by skill then return") {
    TempDir dir;
    auto buffer = EpisodeBuffer::open(dir.path);
    auto spec = fixture("default-8x8");
    buffer->ingest(rollout_policy(spec, PolicyKind::epsilon(0.5), 10, 1));
    buffer->ingest(rollout_policy(spec, PolicyKind::optimal(), 2, 1));
    auto snap = buffer->snapshot();
    REQUIRE(snap->ordering.size() == snap->size());
    for (std::size_t i = 1; i < snap->ordering.size(); ++i) {
        const auto& a = snap->entries.at(snap->ordering[i - 1]);
        const auto& b = snap->entries.at(snap->ordering[i]);
        CHECK(std::pair(a.skill_level, a.total_return) <= std::pair(b.skill_level, b.total_return));
    }
}

TEST_CASE("stale or damaged index is rebuilt from the log") {
    TempDir dir;
    auto eps = episodes(6);
    BufferIndex expected;
    {
        auto buffer = EpisodeBuffer::open(dir.path);
        buffer->ingest(eps);
        buffer->mark_labeled(eps[0].id);
        expected = *buffer->snapshot();
    }
    CHECK(EpisodeBuffer::scan_log(dir.path / "episodes.log") == expected);

    SUBCASE("garbage index") {
        std::ofstream(dir.path / "episodes.idx", std::ios::trunc) << "not json\n";
        CHECK(*EpisodeBuffer::open(dir.path)->snapshot() == expected);
    }
    SUBCASE("missing index") {
        fs::remove(dir.path / "episodes.idx");
        CHECK(*EpisodeBuffer::open(dir.path)->snapshot() == expected);
    }
    SUBCASE("torn tail") {
        std::ofstream(dir.path / "episodes.log", std::ios::app) << "deadbeef {\"kind\":\"epi";
        auto buffer = EpisodeBuffer::open(dir.path);
        CHECK(*buffer->snapshot() == expected);
        auto more = episodes(2, 77);
        for (auto& ep : more) ep.id.episode_num += 1000;
        CHECK(buffer->ingest(more) == 2);
        CHECK(buffer->fetch(more[1].id) == more[1]);
    }
}

TEST_CASE("checksum mismatch is reported") {
    TempDir dir;
    auto eps = episodes(2);
    { EpisodeBuffer::open(dir.path)->ingest(eps); }
    fs::remove(dir.path / "episodes.idx");
    std::string content;
    {
        std::ifstream in(dir.path / "episodes.log", std::ios::binary);
        content.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto pos = content.find("\"total_return\"");
    REQUIRE(pos != std::string::npos);
    content[pos + 1] = 'T';
    std::ofstream(dir.path / "episodes.log", std::ios::binary | std::ios::trunc) << content;
    CHECK_THROWS_AS(EpisodeBuffer::open(dir.path), CorruptRecord);
}

TEST_CASE("inconsistent episodes are rejected whole") {
    TempDir dir;
    auto buffer = EpisodeBuffer::open(dir.path);
    auto eps = episodes(3);
    eps[2].total_return += 1.0;
    CHECK_THROWS_AS(buffer->ingest(eps), CorruptRecord);
    CHECK(buffer->size() == 0);
}

TEST_CASE("a second writer is refused") {
    TempDir dir;
    auto first = EpisodeBuffer::open(dir.path);
    CHECK_THROWS_AS(EpisodeBuffer::open(dir.path), StoreLocked);
    auto reader = EpisodeBuffer::open(dir.path, EpisodeBuffer::Mode::read_only);
    CHECK(reader->size() == 0);
}

TEST_CASE("fresh ids never collide") {
    TempDir dir;
    auto buffer = EpisodeBuffer::open(dir.path);
    auto eps = episodes(3);
    buffer->ingest(eps);
    auto copy = eps[0];
    auto id = buffer->ingest_with_fresh_id(copy);
    CHECK(id.episode_num > eps[0].id.episode_num);
    CHECK(buffer->size() == 4);
    CHECK(buffer->fetch(id).actions == copy.actions);
}

TEST_CASE("catalog consults every buffer") {
    TempDir a, b;
    auto main = EpisodeBuffer::open(a.path);
    auto calib = EpisodeBuffer::open(b.path);
    auto e1 = episodes(2, 1);
    auto e2 = rollout_policy(fixture("empty-8x8"), PolicyKind::optimal(), 1, 1);
    main->ingest(e1);
    calib->ingest(e2);
    EpisodeCatalog catalog({main, calib});
    CHECK(catalog.contains(e2[0].id));
    CHECK(catalog.owner(e2[0].id) == calib.get());
    CHECK(catalog.steps(e1[1].id) == e1[1].length());
    CHECK(catalog.fetch(e2[0].id) == e2[0]);
    CHECK_THROWS_AS(catalog.fetch(EpisodeId{"none", "x", 0, 0, 0}), NotFound);
}
