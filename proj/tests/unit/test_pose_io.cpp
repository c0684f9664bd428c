#include "doctest.h"

#include "gtanet/pose_io.hpp"
#include "gtanet/synth.hpp"

#include <cmath>
#include <filesystem>

using namespace gtanet;

namespace {

PoseSequence sample_sequence(bool conf) {
    SynthConfig sc;
    sc.frames = 5;
    sc.seed = 3;
    auto seq = synth_generate(sc).obs2d;
    if (conf) {
        Rng rng(1);
        seq = add_detector_noise(seq, 0.001, 0.2, rng);
    }
    return seq;
}

}  // namespace

TEST_SUITE("pose_io") {

TEST_CASE("JSON and binary forms round trip exactly") {
    for (bool conf : {false, true}) {
        const auto seq = sample_sequence(conf);
        CHECK(pose_from_json(pose_to_json(seq)) == seq);
        CHECK(pose_from_json(nlohmann::json::parse(pose_to_json(seq).dump())) == seq);
        CHECK(pose_from_binary(pose_to_binary(seq)) == seq);
    }
}

TEST_CASE("inline topologies survive a round trip") {
    PoseSequence seq;
    seq.topology.name = "custom";
    seq.topology.parent = {-1, 0, 1};
    seq.dims = 3;
    seq.units = Units::m;
    seq.frames = 1;
    seq.values = {0, 0, 1, 0.1, 0, 1, 0.2, 0.1, 1};
    CHECK(pose_from_json(pose_to_json(seq)) == seq);
    CHECK(pose_from_binary(pose_to_binary(seq)) == seq);
    const auto mm = seq.values_mm();
    CHECK(mm[3] == doctest::Approx(100.0));
}

TEST_CASE("save and load select the form by extension") {
    const auto dir = std::filesystem::temp_directory_path() / "gtanet_pose_io_test";
    std::filesystem::create_directories(dir);
    const auto seq = sample_sequence(true);
    save_pose(dir / "a.json", seq);
    save_pose(dir / "a.gpsq", seq);
    CHECK(load_pose(dir / "a.json") == seq);
    CHECK(load_pose(dir / "a.gpsq") == seq);
    CHECK(read_file_bytes(dir / "a.json").front() == '{');
    CHECK_THROWS(load_pose(dir / "missing.gpsq"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("malformed binary input is rejected with a byte offset") {
    const auto bytes = pose_to_binary(sample_sequence(false));
    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(pose_from_binary(bad), FormatError);
    for (std::size_t cut : {std::size_t{3}, std::size_t{9}, bytes.size() - 1}) {
        std::vector<std::uint8_t> shortened(bytes.begin(), bytes.begin() + static_cast<long>(cut));
        CHECK_THROWS_AS(pose_from_binary(shortened), FormatError);
    }
    auto trailing = bytes;
    trailing.push_back(7);
    try {
        pose_from_binary(trailing);
        FAIL("trailing byte accepted");
    } catch (const FormatError& e) {
        CHECK(e.offset() == bytes.size());
    }
}

TEST_CASE("malformed JSON input is rejected") {
    auto j = pose_to_json(sample_sequence(false));
    auto extra = j;
    extra["header"]["mystery"] = true;
    CHECK_THROWS(pose_from_json(extra));
    auto frames = j;
    frames["header"]["frames"] = 6;
    CHECK_THROWS(pose_from_json(frames));
    auto version = j;
    version["header"]["schema_version"] = 2;
    CHECK_THROWS(pose_from_json(version));
    auto nan = j;
    nan["frames"][0][0][0] = "x";
    CHECK_THROWS(pose_from_json(nan));
}

TEST_CASE("validate catches inconsistent sequences") {
    auto seq = sample_sequence(false);
    CHECK_NOTHROW(seq.validate());
    auto a = seq;
    a.values.pop_back();
    CHECK_THROWS(a.validate());
    auto b = seq;
    b.values[4] = NAN;
    CHECK_THROWS(b.validate());
    auto c = seq;
    c.dims = 4;
    CHECK_THROWS(c.validate());
    auto d = seq;
    d.frames = 0;
    d.values.clear();
    CHECK_THROWS(d.validate());
}

TEST_CASE("tensor conversion and slicing") {
    const auto seq = sample_sequence(true);
    const auto t = seq.to_tensor(true);
    CHECK(t.shape() == Shape{5, 17, 3});
    CHECK(t.at({2, 4, 0}) == seq.at(2, 4, 0));
    CHECK(t.at({2, 4, 2}) == seq.confidence[2 * 17 + 4]);
    const auto s = seq.slice(1, 3);
    CHECK(s.frames == 2);
    CHECK(s.at(0, 5, 1) == seq.at(1, 5, 1));
    CHECK(s.confidence.size() == 2 * 17);
    CHECK_THROWS(seq.slice(3, 9));
}

TEST_CASE("pixel normalization round trip and range check") {
    auto seq = sample_sequence(false);
    const auto px = denormalize_keypoints(seq, 1920, 1080);
    CHECK(px.units == Units::px);
    CHECK(px.at(0, 0, 0) == doctest::Approx(seq.at(0, 0, 0) * 1920));
    const auto back = normalize_keypoints(px, 1920, 1080);
    for (std::size_t i = 0; i < seq.values.size(); ++i) CHECK(back.values[i] == doctest::Approx(seq.values[i]).epsilon(1e-14));
    auto wild = px;
    wild.at(0, 0, 0) = 1920 * 1.6;
    CHECK_THROWS(normalize_keypoints(wild, 1920, 1080));
}

TEST_CASE("pinhole projection") {
    PinholeCamera cam;
    const auto uv = project_normalized(cam, {100.0, 200.0, 2000.0});
    CHECK(uv[0] == doctest::Approx((1000.0 * 0.05 + 500.0) / 1000.0));
    CHECK(uv[1] == doctest::Approx((500.0 - 1000.0 * 0.1) / 1000.0));
    CHECK_THROWS_AS(project_normalized(cam, {0.0, 0.0, 0.0}), std::domain_error);
    CHECK(PinholeCamera::from_json(cam.to_json()) == cam);
    CHECK(parse_units(units_name(Units::normalized)) == Units::normalized);
    CHECK_THROWS(parse_units("furlongs"));
}

}
