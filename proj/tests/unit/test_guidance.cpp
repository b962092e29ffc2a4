#include <doctest.h>

#include "../oracles.hpp"
#include "diffedit/error.hpp"
#include "diffedit/guidance.hpp"

using namespace diffedit;

namespace {

constexpr std::size_t N = 16;
constexpr int kT = 500;

MemoryBank bank_with(const Tensor& gud, std::optional<Tensor> ref = std::nullopt) {
    MemoryBank b;
    b.put(kT, BankEntry{gud, std::move(ref), {}, {}});
    return b;
}

std::vector<double> window(const Tensor& z, int r, int c) {
    const int r0 = std::clamp(r - 2, 0, static_cast<int>(z.rows()) - 4);
    const int c0 = std::clamp(c - 2, 0, static_cast<int>(z.cols()) - 4);
    std::vector<double> out;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) out.push_back(z.at(r0 + i, c0 + j));
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

double edit_oracle(const Tensor& z, const Tensor& src, const EditSpec& s) {
    double sum = 0;
    for (const auto& p : s.region_map) sum += cosine(window(z, p.dst_row, p.dst_col), window(src, p.src_row, p.src_col));
    return 1.0 - sum / static_cast<double>(s.region_map.size());
}

double content_oracle(const Tensor& z, const Tensor& gud, const Tensor& mask) {
    double sum = 0;
    int tiles = 0;
    for (std::size_t r0 = 0; r0 < z.rows(); r0 += 4)
        for (std::size_t c0 = 0; c0 < z.cols(); c0 += 4) {
            std::vector<double> a, b;
            for (std::size_t i = r0; i < r0 + 4; ++i)
                for (std::size_t j = c0; j < c0 + 4; ++j) {
                    const double keep = mask.at(i, j) == 0.0 ? 1.0 : 0.0;
                    a.push_back(keep * z.at(i, j));
                    b.push_back(keep * gud.at(i, j));
                }
            if (std::all_of(a.begin(), a.end(), [](double v) { return v == 0.0; }) &&
                std::all_of(b.begin(), b.end(), [](double v) { return v == 0.0; }))
                continue;
            sum += cosine(a, b);
            ++tiles;
        }
    return tiles ? 1.0 - sum / tiles : 0.0;
}

EditSpec one_pair(int sr, int sc, int dr, int dc) {
    EditSpec s;
    s.mask = Tensor({N, N}, 0.0);
    for (int i = dr - 2; i < dr + 2; ++i)
        for (int j = dc - 2; j < dc + 2; ++j) s.mask.at(i, j) = 1.0;
    s.region_map = {{sr, sc, dr, dc}};
    return s;
}

} // namespace

TEST_CASE("edit energy examples") {
    std::mt19937_64 rng(1);
    Tensor gud = oracle::normal({N, N}, 1.0, rng);
    MemoryBank bank = bank_with(gud);
    EditSpec s = one_pair(4, 4, 10, 11);
    auto put = [&](Tensor& z, double sign) {
        auto w = window(gud, 4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) z.at(8 + i, 9 + j) = sign * w[i * 4 + j];
    };
    Tensor z = oracle::normal({N, N}, 1.0, rng);
    put(z, 1.0);
    CHECK(std::abs(energy_edit(z, bank, s, kT)) < 1e-15);
    put(z, -1.0);
    CHECK(energy_edit(z, bank, s, kT) == doctest::Approx(2.0).epsilon(1e-14));

    // Orthogonal patches: the source is a checkerboard sign pattern and the destination is constant.
    Tensor g2({N, N}, 0.0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) g2.at(2 + i, 2 + j) = ((i + j) % 2) ? 1.0 : -1.0;
    Tensor z2({N, N}, 0.0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) z2.at(8 + i, 9 + j) = 3.0;
    CHECK(std::abs(energy_edit(z2, bank_with(g2), s, kT) - 1.0) < 1e-15);
}

TEST_CASE("energies match the loop oracle and stay in range") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor gud = oracle::normal({N, N}, 1.0, rng), z = oracle::normal({N, N}, 1.0, rng);
        std::uniform_int_distribution<int> pos(0, N - 1);
        EditSpec s = make_move_spec(N, 3 + trial % 8, 5, 9, 3 + trial % 9, 2.5);
        if (trial % 3 == 0) s.region_map.push_back({0, 0, pos(rng), pos(rng)});  // clamped windows at the border
        MemoryBank bank = bank_with(gud);
        const double e = energy_edit(z, bank, s, kT), c = energy_content(z, bank, s, kT);
        CHECK(e == doctest::Approx(edit_oracle(z, gud, s)).epsilon(1e-12));
        CHECK(c == doctest::Approx(content_oracle(z, gud, s.mask)).epsilon(1e-12));
        CHECK(e >= 0.0);
        CHECK(e <= 2.0);
        CHECK(c >= 0.0);
        CHECK(c <= 2.0);
    }
}

TEST_CASE("content energy examples") {
    std::mt19937_64 rng(3);
    Tensor gud = oracle::normal({N, N}, 1.0, rng);
    MemoryBank bank = bank_with(gud);
    EditSpec s = make_move_spec(N, 5, 5, 10, 10, 3.0);
    CHECK(std::abs(energy_content(gud, bank, s, kT)) < 1e-15);
    CHECK(energy_content(-1.0 * gud, bank, s, kT) == doctest::Approx(2.0).epsilon(1e-14));
    // Inside the mask the content energy does not look.
    Tensor z = gud;
    for (std::size_t i = 0; i < z.size(); ++i)
        if (s.mask[i] == 1.0) z[i] = 100.0;
    CHECK(std::abs(energy_content(z, bank, s, kT)) < 1e-15);

    s.mask = Tensor({N, N}, 1.0);
    auto cv = energy_content_with_grad(oracle::normal({N, N}, 1.0, rng), bank, s, kT);
    CHECK(cv.energy == 0.0);
    CHECK(max_abs(cv.grad) == 0.0);
}

TEST_CASE("energy gradients match finite differences") {
    std::mt19937_64 rng(4);
    Tensor gud = oracle::normal({N, N}, 1.0, rng), ref = oracle::normal({N, N}, 1.0, rng);
    MemoryBank bank = bank_with(gud, ref);
    for (const EditSpec& s : {make_move_spec(N, 5, 5, 9, 10, 3.0), make_paste_spec(N, 4, 4, 11, 11, 2.0),
                              make_drag_spec(N, 4, 8, 10, 8)}) {
        Tensor z = oracle::normal({N, N}, 1.0, rng);
        auto fe = [&](const Tensor& x) { return energy_edit(x, bank, s, kT); };
        auto fc = [&](const Tensor& x) { return energy_content(x, bank, s, kT); };
        CHECK(oracle::rel_err(energy_edit_with_grad(z, bank, s, kT).grad, oracle::fd_grad(fe, z)) < 1e-4);
        CHECK(oracle::rel_err(energy_content_with_grad(z, bank, s, kT).grad, oracle::fd_grad(fc, z)) < 1e-4);
    }
}

TEST_CASE("zero patches never produce NaN") {
    Tensor gud({N, N}, 0.0);
    EditSpec s = one_pair(4, 4, 10, 10);
    auto r = regional_gradient(Tensor({N, N}, 0.0), bank_with(gud), s, kT);
    CHECK(std::isfinite(r.e_edit));
    CHECK(std::isfinite(r.e_content));
    for (double v : r.grad.values()) CHECK(std::isfinite(v));
}

TEST_CASE("regional blend") {
    std::mt19937_64 rng(5);
    Tensor gud = oracle::normal({N, N}, 1.0, rng), z = oracle::normal({N, N}, 1.0, rng);
    MemoryBank bank = bank_with(gud);
    EditSpec s = make_move_spec(N, 5, 5, 9, 10, 3.0);
    Tensor ge = normalize_max(energy_edit_with_grad(z, bank, s, kT).grad);
    Tensor gc = normalize_max(energy_content_with_grad(z, bank, s, kT).grad);

    SUBCASE("binary mask copies each side") {
        auto r = regional_gradient(z, bank, s, kT);
        for (std::size_t i = 0; i < z.size(); ++i) CHECK(r.grad[i] == (s.mask[i] == 1.0 ? ge[i] : gc[i]));
    }
    SUBCASE("soft mask is a convex blend") {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t i = 0; i < z.size(); ++i)
            if (s.mask[i] == 1.0) s.mask[i] = u(rng);
        Tensor ge2 = normalize_max(energy_edit_with_grad(z, bank, s, kT).grad);
        Tensor gc2 = normalize_max(energy_content_with_grad(z, bank, s, kT).grad);
        auto r = regional_gradient(z, bank, s, kT);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double m = s.mask[i];
            CHECK(r.grad[i] == doctest::Approx(m * ge2[i] + (1 - m) * gc2[i]).epsilon(1e-15));
        }
    }
    SUBCASE("mask of ones") {
        s.mask = Tensor({N, N}, 1.0);
        auto r = regional_gradient(z, bank, s, kT);
        CHECK(r.grad == normalize_max(energy_edit_with_grad(z, bank, s, kT).grad));
    }
    SUBCASE("mask of zeros") {
        s.mask = Tensor({N, N}, 0.0);
        s.region_map.clear();
        auto r = regional_gradient(z, bank, s, kT);
        CHECK(r.grad == normalize_max(energy_content_with_grad(z, bank, s, kT).grad));
        CHECK(r.e_edit == 0.0);
    }
    SUBCASE("normalization") {
        CHECK(max_abs(ge) == doctest::Approx(1.0).epsilon(1e-7));
        CHECK(max_abs(normalize_max(Tensor({3}, 0.0))) == 0.0);
    }
}

TEST_CASE("energies are scale invariant") {
    std::mt19937_64 rng(6);
    Tensor gud = oracle::normal({N, N}, 1.0, rng), z = oracle::normal({N, N}, 1.0, rng);
    EditSpec s = make_move_spec(N, 5, 5, 9, 10, 3.0);
    const double e = energy_edit(z, bank_with(gud), s, kT), c = energy_content(z, bank_with(gud), s, kT);
    for (double k : {0.01, 3.0, 250.0}) {
        CHECK(energy_edit(k * z, bank_with(k * gud), s, kT) == doctest::Approx(e).epsilon(1e-12));
        CHECK(energy_content(k * z, bank_with(k * gud), s, kT) == doctest::Approx(c).epsilon(1e-12));
    }
}

TEST_CASE("guided eps") {
    Tensor eps = Tensor::vector({0.5, -1.0, 2.0});
    EnergyReport r{0.3, 0.1, Tensor::vector({1.0, 2.0, -3.0})};
    CHECK(guided_eps(eps, r, 0.0) == eps);
    CHECK(guided_eps(eps, EnergyReport{0, 0, Tensor({3}, 0.0)}, 7.0) == eps);
    Tensor g = guided_eps(Tensor({3}, 0.0), r, 2.0);
    CHECK(g == Tensor::vector({2.0, 4.0, -6.0}));
    CHECK_THROWS_AS(guided_eps(Tensor({4}, 0.0), r, 1.0), DimensionError);
}

TEST_CASE("memory bank lookup is exact") {
    MemoryBank bank = bank_with(Tensor({N, N}, 1.0));
    CHECK_NOTHROW(bank.at(kT));
    CHECK_THROWS_WITH_AS(bank.at(kT - 20), doctest::Contains("480"), BankError);
    EditSpec s = make_move_spec(N, 5, 5, 9, 9, 2.0);
    CHECK_THROWS_AS(energy_edit(Tensor({N, N}, 1.0), bank, s, kT + 1), BankError);
    // Paste without reference latents.
    CHECK_THROWS_AS(energy_edit(Tensor({N, N}, 1.0), bank, make_paste_spec(N, 4, 4, 9, 9, 2.0), kT), BankError);
    CHECK(!bank.has_reference());
}

TEST_CASE("edit spec validation") {
    EditSpec s = make_move_spec(N, 5, 5, 9, 9, 2.0);
    CHECK_NOTHROW(s.validate({N, N}));
    CHECK_THROWS_AS(s.validate({N, N + 1}), DimensionError);

    EditSpec bad = s;
    bad.mask[0] = 1.5;
    CHECK_THROWS_AS(bad.validate({N, N}), ConfigError);
    bad = s;
    bad.region_map.push_back(bad.region_map.front());
    CHECK_THROWS_AS(bad.validate({N, N}), ConfigError);
    bad = s;
    bad.region_map.push_back({0, 0, 0, 0});
    CHECK_THROWS_AS(bad.validate({N, N}), ConfigError);
    bad = s;
    bad.region_map.push_back({0, 0, 9, static_cast<int>(N)});
    CHECK_THROWS_AS(bad.validate({N, N}), RangeError);

    EditSpec id;
    id.mask = Tensor({N, N}, 0.0);
    CHECK(id.is_identity());
    CHECK(!s.is_identity());
    CHECK(parse_edit_task("drag") == EditTask::drag);
    CHECK_THROWS_AS(parse_edit_task("warp"), ConfigError);
}

TEST_CASE("task builders produce valid specs") {
    const std::size_t n = 32;
    std::vector<EditSpec> specs = {make_move_spec(n, 10, 10, 18, 20, 6), make_resize_spec(n, 16, 16, 5, 1.5),
                                   make_resize_spec(n, 16, 16, 6, 0.5), make_drag_spec(n, 10, 10, 20, 14),
                                   make_paste_spec(n, 8, 8, 22, 22, 5), make_replace_spec(n, 16, 16, 5)};
    for (const auto& s : specs) {
        CHECK_NOTHROW(s.validate({n, n}));
        CHECK(!s.region_map.empty());
        CHECK(!s.is_identity());
    }
    // Move pairs carry the offset.
    for (const auto& p : specs[0].region_map) {
        CHECK(p.dst_row - p.src_row == 8);
        CHECK(p.dst_col - p.src_col == 10);
    }
    // Upscaling maps destinations back to nearer source pixels.
    for (const auto& p : specs[1].region_map) {
        CHECK(std::abs(p.src_row - 16) <= std::abs(p.dst_row - 16));
        CHECK(std::abs(p.src_col - 16) <= std::abs(p.dst_col - 16));
    }
    CHECK(specs[4].uses_reference());
    CHECK(specs[4].reference_id.has_value());
    CHECK(specs[5].task == EditTask::replace);
    CHECK_THROWS_AS(make_resize_spec(n, 16, 16, 5, 0.0), ConfigError);
}
