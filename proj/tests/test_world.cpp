#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "common/tiny_world.hpp"
#include "evr/world.hpp"

using namespace evr;

TEST_CASE("category codes round-trip and reject garbage") {
    for (int k = 0; k < kNumCategories; ++k) {
        Category c = category_from_code(k);
        CHECK(int(c) == k);
        CHECK(category_name(c) != nullptr);
    }
    CHECK_THROWS_AS(category_from_code(8), ValidationError);
    CHECK_THROWS_AS(category_from_code(-1), ValidationError);
}

TEST_CASE("same seed, same scene") {
    GenerationConfig cfg;
    Scene a = generate_scene(7, cfg);
    Scene b = generate_scene(7, cfg);
    CHECK(a == b);
    Scene c = generate_scene(8, cfg);
    CHECK(a != c);
}

TEST_CASE("generated scenes satisfy placement invariants") {
    GenerationConfig cfg;
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        Scene s = generate_scene(seed, cfg);
        CHECK(int(s.walls.size()) >= cfg.walls_min);
        CHECK(int(s.walls.size()) <= cfg.walls_max);

        int per_category[kNumCategories] = {};
        for (const auto& o : s.objects) {
            ++per_category[int(o.category)];
            CHECK(o.footprint.area() > 0);
            CHECK(o.height > 0);
            CHECK(s.bounds.contains(o.footprint.lo));
            CHECK(s.bounds.contains(o.footprint.hi));
            const auto& spec = category_specs()[std::size_t(int(o.category))];
            CHECK(o.height >= spec.h_min);
            CHECK(o.height <= spec.h_max);
        }
        for (int k = 0; k < kNumCategories; ++k) {
            CHECK(per_category[k] >= cfg.per_category_min);
            CHECK(per_category[k] <= cfg.per_category_max);
        }
        // objects keep clearance from each other and from walls
        // (walls may cross one another to form corners)
        for (std::size_t i = 0; i < s.objects.size(); ++i) {
            Quad qi = quad_of(s.objects[i].footprint);
            for (std::size_t j = i + 1; j < s.objects.size(); ++j)
                CHECK(quad_distance(qi, quad_of(s.objects[j].footprint)) >= cfg.clearance - 1e-9);
            for (const auto& w : s.walls)
                CHECK(quad_distance(qi, quad_of(w.obox())) >= cfg.clearance - 1e-9);
        }
        // ids unique and positive
        for (std::size_t i = 0; i < s.objects.size(); ++i) {
            CHECK(s.objects[i].id >= 1);
            for (std::size_t j = i + 1; j < s.objects.size(); ++j)
                CHECK(s.objects[i].id != s.objects[j].id);
        }
    }
}

TEST_CASE("wall-free config cannot satisfy the occlusion probe") {
    GenerationConfig cfg;
    cfg.walls_min = 0;
    cfg.walls_max = 0;
    cfg.max_attempts = 50;
    CHECK_THROWS_AS(generate_scene(1, cfg), GenerationError);
}

TEST_CASE("occupancy of a 1m box at half-meter cells") {
    Scene s;
    s.bounds = {{0, 0}, {2, 2}};
    s.objects.push_back({1, Category::chair, {{0.5, 0.5}, {1.5, 1.5}}, 1.0});
    OccupancyGrid g = rasterize_occupancy(s, 0.5, 0.0);
    REQUIRE(g.width == 4);
    REQUIRE(g.height == 4);
    int blocked = 0;
    for (int cy = 0; cy < 4; ++cy)
        for (int cx = 0; cx < 4; ++cx) blocked += g.is_blocked(cx, cy);
    CHECK(blocked == 4);
    CHECK(g.is_blocked(1, 1));
    CHECK(g.is_blocked(2, 1));
    CHECK(g.is_blocked(1, 2));
    CHECK(g.is_blocked(2, 2));
    CHECK_FALSE(g.is_blocked(0, 0));
}

TEST_CASE("empty scene rasterizes to all-free") {
    Scene s;
    s.bounds = {{0, 0}, {4, 4}};
    OccupancyGrid g = rasterize_occupancy(s, 0.5, 0.2);
    for (int cy = 0; cy < g.height; ++cy)
        for (int cx = 0; cx < g.width; ++cx) CHECK_FALSE(g.is_blocked(cx, cy));
}

TEST_CASE("blocked iff footprint inflated by agent radius intersects the cell") {
    Scene s = testing::one_box_scene();
    const double radius = 0.2, res = 0.125;
    OccupancyGrid g = rasterize_occupancy(s, res, radius);
    Rect inflated = s.objects[0].footprint.expanded(radius);
    for (int cy = 0; cy < g.height; ++cy)
        for (int cx = 0; cx < g.width; ++cx) {
            Rect cell = g.cell_rect(cx, cy);
            bool overlaps = rect_overlap_area(inflated, cell) > 0;
            CHECK(g.is_blocked(cx, cy) == overlaps);
        }
}

TEST_CASE("free cells admit the agent disc") {
    GenerationConfig cfg;
    Scene s = generate_scene(11, cfg);
    OccupancyGrid g = rasterize_occupancy(s, cfg.grid_resolution, cfg.agent_radius);
    // dense sampling: the disc around any free cell center clears all geometry
    for (int cy = 0; cy < g.height; cy += 3)
        for (int cx = 0; cx < g.width; cx += 3) {
            if (g.is_blocked(cx, cy)) continue;
            Vec2 c = g.cell_center(cx, cy);
            for (const auto& o : s.objects) {
                Quad q = quad_of(Rect{{c.x, c.y}, {c.x, c.y}});
                CHECK(quad_distance(q, quad_of(o.footprint)) >= cfg.agent_radius - g.resolution);
            }
        }
}

TEST_CASE("grid point queries") {
    Scene s;
    s.bounds = {{0, 0}, {2, 2}};
    OccupancyGrid g = rasterize_occupancy(s, 0.5, 0.0);
    CHECK(g.cell_of({0.3, 0.3}) == std::pair<int, int>(0, 0));
    CHECK(g.cell_of({1.9, 0.1}) == std::pair<int, int>(3, 0));
    CHECK(g.cell_of({-1, 0}) == std::pair<int, int>(-1, -1));
    CHECK(g.free_at({1.0, 1.0}));
    CHECK_FALSE(g.free_at({5.0, 5.0}));
}

TEST_CASE("scene text round-trip") {
    Scene s = generate_scene(42, {});
    const std::string path = "/tmp/evr_test_scene.txt";
    save_scene(s, path);
    Scene back = load_scene(path);
    CHECK(back == s);

    // byte-stable serialization
    save_scene(back, path + ".2");
    std::ifstream f1(path), f2(path + ".2");
    std::string a((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(a == b);
    std::remove((path + ".2").c_str());

    SUBCASE("truncated file fails to parse") {
        std::ofstream out(path, std::ios::trunc);
        out << a.substr(0, a.size() / 2);
        out.close();
        CHECK_THROWS_AS(load_scene(path), ParseError);
    }
    SUBCASE("unknown category code is rejected") {
        // object records read `object <id> <code> ...`; codes are 0..7
        std::size_t p = a.find("\nobject ");
        REQUIRE(p != std::string::npos);
        std::size_t code_pos = a.find(' ', p + 9) + 1; // skip "object <id> "
        std::string bad = a;
        bad[code_pos] = '9';
        std::ofstream out(path, std::ios::trunc);
        out << bad;
        out.close();
        CHECK_THROWS(load_scene(path));
    }
    std::remove(path.c_str());
}

TEST_CASE("find_object") {
    Scene s = testing::one_box_scene();
    REQUIRE(s.find_object(1) != nullptr);
    CHECK(s.find_object(1)->category == Category::fridge);
    CHECK(s.find_object(99) == nullptr);
}
