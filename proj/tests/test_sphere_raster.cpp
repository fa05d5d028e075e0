#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <vector>

#include "svp/geometry.hpp"
#include "svp/rng.hpp"
#include "svp/sphere_raster.hpp"

using namespace svp;

TEST_CASE("render_sphere_image draws the equator as one flat band") {
    const HomLine eq = make_line(Vec3(0, 1, 0));
    const SphereImage img = render_sphere_image(std::vector<HomLine>{eq}, 128);
    REQUIRE(img.resolution == 128);
    for (int u = 0; u < 128; ++u) {
        CHECK((img.at(u, 63) == 1.0f || img.at(u, 64) == 1.0f));
    }
    int lit = 0;
    for (float x : img.intensities) {
        CHECK((x == 0.0f || x == 1.0f));
        lit += x > 0.5f;
    }
    CHECK(lit <= 2 * 128);  // nothing outside the beta=0 band
}

TEST_CASE("render_sphere_image of nothing is all zeros") {
    const SphereImage img = render_sphere_image(std::vector<HomLine>{}, 32);
    CHECK(std::all_of(img.intensities.begin(), img.intensities.end(),
                      [](float x) { return x == 0.0f; }));
}

TEST_CASE("render_sphere_image draws a polar circle as the alpha=0 meridian") {
    const HomLine polar = make_line(Vec3(1, 0, 0));
    const SphereImage img = render_sphere_image(std::vector<HomLine>{polar}, 128);
    for (int v = 0; v < 128; ++v) {
        CHECK((img.at(63, v) == 1.0f || img.at(64, v) == 1.0f));
    }
}

TEST_CASE("rendered curves are gap free and accurate") {
    Rng rng(29);
    const int s = 128;
    const double bound = std::sin(1.5 * kPi / s) + 1e-12;
    for (int i = 0; i < 100; ++i) {
        const HomLine l = make_line(rng.unit_vector());
        const SphereImage img = render_sphere_image(std::vector<HomLine>{l}, s);
        if (std::abs(l.l2()) >= 0.1) {
            for (int u = 0; u < s; ++u) {
                bool any = false;
                for (int v = 0; v < s && !any; ++v) any = img.at(u, v) > 0.5f;
                CHECK(any);
            }
        }
        for (int v = 0; v < s; ++v) {
            for (int u = 0; u < s; ++u) {
                if (img.at(u, v) < 0.5f) continue;
                const double alpha = (u + 0.5) / s * kPi - kHalfPi;
                const double beta = (v + 0.5) / s * kPi - kHalfPi;
                CHECK(std::abs(consistency_d1(l, sphere_to_point({alpha, beta}))) <= bound);
            }
        }
    }
}

TEST_CASE("vp_to_bin quantisation") {
    CHECK(vp_to_bin({0, 0}, 20) == 210);
    CHECK(vp_to_bin({-kHalfPi, -kHalfPi}, 20) == 0);
    CHECK(vp_to_bin({kHalfPi - 1e-9, 0}, 20) == 219);
}

TEST_CASE("bin_center fixed values and bounds") {
    const SphereCoord c210 = bin_center(210, 20);
    CHECK(c210.alpha == doctest::Approx(kPi / 40).epsilon(1e-12));
    CHECK(c210.beta == doctest::Approx(kPi / 40).epsilon(1e-12));
    const SphereCoord c0 = bin_center(0, 20);
    CHECK(c0.alpha == doctest::Approx(-kHalfPi + kPi / 40).epsilon(1e-12));
    CHECK(c0.beta == doctest::Approx(-kHalfPi + kPi / 40).epsilon(1e-12));
    CHECK_THROWS_AS(bin_center(400, 20), IndexOutOfRange);
    CHECK_THROWS_AS(bin_center(-1, 20), IndexOutOfRange);
}

TEST_CASE("bin quantisation round trip") {
    for (int n : {4, 20, 32}) {
        for (int i = 0; i < n * n; ++i) {
            CHECK(vp_to_bin(bin_center(i, n), n) == i);
        }
    }
}

TEST_CASE("accumulator peaks where lines are concurrent") {
    // Three lines through the image origin: the grid point (0,0) sits on a
    // 4-bin corner for n=20, so the maximum is one of the four touching bins.
    std::vector<HomLine> through_origin = {
        make_line(Vec3(1, 0, 0)),
        make_line(Vec3(0, 1, 0)),
        make_line(Vec3(1, 1, 0)),
    };
    const BinGrid grid = accumulator_predict(through_origin, 20);
    REQUIRE(grid.values.size() == 400);
    const int argmax = static_cast<int>(
        std::max_element(grid.values.begin(), grid.values.end()) - grid.values.begin());
    const std::set<int> corner{189, 190, 209, 210};
    CHECK(corner.count(argmax) == 1);

    // Concurrent exactly at the centre of bin 210: strict argmax there.
    const Vec3 v = sphere_to_point(bin_center(210, 20));
    const Vec2 p(v.x() / v.z(), v.y() / v.z());
    std::vector<HomLine> at_center = {
        segment_to_line({p, p + Vec2(0.1, 0.0)}),
        segment_to_line({p, p + Vec2(0.0, 0.1)}),
        segment_to_line({p, p + Vec2(0.1, 0.1)}),
    };
    const BinGrid g2 = accumulator_predict(at_center, 20);
    const int argmax2 = static_cast<int>(
        std::max_element(g2.values.begin(), g2.values.end()) - g2.values.begin());
    CHECK(argmax2 == 210);
    CHECK(g2.values[210] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("accumulator scores a line's own great circle with 1") {
    // odd n puts a row of bin centres exactly on the equator
    const int n = 21;
    const BinGrid grid = accumulator_predict(std::vector<HomLine>{make_line(Vec3(0, 1, 0))}, n);
    for (int col = 0; col < n; ++col) {
        CHECK(grid.at(10, col) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("accumulator rejects empty input and stays in range") {
    CHECK_THROWS_AS(accumulator_predict(std::vector<HomLine>{}, 20), EmptyInput);
    Rng rng(31);
    std::vector<HomLine> lines;
    for (int i = 0; i < 30; ++i) lines.push_back(make_line(rng.unit_vector()));
    const BinGrid g = accumulator_predict(lines, 20);
    for (double x : g.values) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
}

TEST_CASE("accumulator is permutation and sign invariant") {
    Rng rng(37);
    std::vector<HomLine> lines;
    for (int i = 0; i < 25; ++i) lines.push_back(make_line(rng.unit_vector()));
    const BinGrid base = accumulator_predict(lines, 20);

    std::vector<HomLine> shuffled = lines;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[3], shuffled[11]);
    const BinGrid perm = accumulator_predict(shuffled, 20);

    std::vector<HomLine> flipped = lines;
    for (size_t i = 0; i < flipped.size(); i += 2) flipped[i].coeffs = -flipped[i].coeffs;
    const BinGrid sgn = accumulator_predict(flipped, 20);

    for (size_t i = 0; i < base.values.size(); ++i) {
        CHECK(perm.values[i] == doctest::Approx(base.values[i]).epsilon(1e-12));
        CHECK(sgn.values[i] == doctest::Approx(base.values[i]).epsilon(1e-12));
    }
}

TEST_CASE("accumulator argmax matches a 10x finer brute-force aggregation") {
    Rng rng(23);
    // 50-line scene concurrent at one random point plus clutter
    const Vec2 p(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
    std::vector<HomLine> lines;
    for (int i = 0; i < 50; ++i) {
        const double ang = rng.uniform(0, kPi);
        const Vec2 q = p + 0.3 * Vec2(std::cos(ang), std::sin(ang));
        lines.push_back(segment_to_line({p, q}));
    }
    for (int i = 0; i < 25; ++i) lines.push_back(make_line(rng.unit_vector()));

    const int n = 20;
    const BinGrid coarse = accumulator_predict(lines, n);
    const int coarse_arg = static_cast<int>(
        std::max_element(coarse.values.begin(), coarse.values.end()) - coarse.values.begin());

    // independent brute force on the 10x finer grid
    const int fine_n = 10 * n;
    double best = -1.0;
    int best_bin = -1;
    for (int i = 0; i < fine_n * fine_n; ++i) {
        const Vec3 v = sphere_to_point(bin_center(i, fine_n));
        double acc = 0.0;
        for (const HomLine& l : lines) {
            const double d = l.coeffs.dot(v);
            acc += std::exp(-d * d / (2.0 * kDefaultSigmaAcc * kDefaultSigmaAcc));
        }
        if (acc > best) {
            best = acc;
            best_bin = i;
        }
    }
    CHECK(vp_to_bin(bin_center(best_bin, fine_n), n) == coarse_arg);
}

TEST_CASE("local_maxima selection") {
    {
        std::vector<double> vals(400, 0.0);
        vals[210] = 0.8;
        const std::vector<int> m = local_maxima(BinGrid{20, vals}, 5);
        REQUIRE(m.size() == 1);
        CHECK(m[0] == 210);
    }
    {
        const std::vector<int> m = local_maxima(BinGrid{20, std::vector<double>(400, 0.0)}, 5);
        CHECK(m.empty());
    }
    {
        std::vector<double> vals(400, 0.0);
        vals[5] = 0.5;
        vals[300] = 0.5;
        const std::vector<int> m = local_maxima(BinGrid{20, vals}, 5);
        REQUIRE(m.size() == 2);
        CHECK(m[0] == 5);
        CHECK(m[1] == 300);
    }
    {
        // k truncates, strongest first
        std::vector<double> vals(400, 0.0);
        vals[5] = 0.5;
        vals[300] = 0.9;
        vals[101] = 0.7;
        const std::vector<int> m = local_maxima(BinGrid{20, vals}, 2);
        REQUIRE(m.size() == 2);
        CHECK(m[0] == 300);
        CHECK(m[1] == 101);
    }
}

TEST_CASE("pgm and csv exports are well formed") {
    const SphereImage img = render_sphere_image(
        std::vector<HomLine>{make_line(Vec3(0, 1, 0))}, 32);
    write_pgm(img, "/tmp/svp_test_img.pgm");
    std::ifstream f("/tmp/svp_test_img.pgm", std::ios::binary);
    REQUIRE(f.good());
    std::string magic;
    f >> magic;
    CHECK(magic == "P5");

    BinGrid grid{4, std::vector<double>(16, 0.25)};
    write_csv(grid, "/tmp/svp_test_grid.csv");
    std::ifstream g("/tmp/svp_test_grid.csv");
    REQUIRE(g.good());
    int rows = 0;
    std::string line;
    while (std::getline(g, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);
}
