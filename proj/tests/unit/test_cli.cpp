#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "../oracles.hpp"
#include "diffedit/config.hpp"
#include "diffedit/data.hpp"
#include "diffedit/error.hpp"
#include "diffedit/tensor_io.hpp"
#include "diffedit/verify.hpp"

using namespace diffedit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("diffedit_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int cli(const std::string& args) {
    const std::string cmd = std::string(DIFFEDIT_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

} // namespace

TEST_CASE("config JSON round trip") {
    SamplerConfig c;
    c.n = 12;
    c.eta1 = 0.7;
    c.rng_seed = 99;
    c.visual_xattn = false;
    Json j = to_json(c);
    CHECK(j.at("tau_sde") == 25);
    CHECK(to_json(sampler_from_json(j)) == j);
    CHECK(sampler_from_json(Json{{"U", 1}}).U == 1);
    CHECK(sampler_from_json(Json{{"U", 1}}).n == SamplerConfig{}.n);
    CHECK_THROWS_AS(sampler_from_json(Json{{"etta1", 0.3}}), ConfigError);

    ScheduleParams p;
    p.infer_steps = 25;
    CHECK(schedule_from_json(to_json(p)).infer_steps == 25);
    CHECK_THROWS_AS(schedule_from_json(Json{{"T", 10}}), ConfigError);
}

TEST_CASE("edit spec files") {
    fs::path dir = scratch("spec");
    EditSpec s = make_paste_spec(16, 4, 4, 10, 9, 2.0);
    save_edit_spec(dir / "paste.json", s);
    EditSpec back = load_edit_spec(dir / "paste.json");
    CHECK(back.task == EditTask::paste);
    CHECK(back.mask == s.mask);
    CHECK(back.reference_id == s.reference_id);
    REQUIRE(back.region_map.size() == s.region_map.size());
    CHECK(back.region_map[3].dst_col == s.region_map[3].dst_col);
    CHECK_THROWS_AS(load_edit_spec(dir / "missing.json"), IoError);
}

TEST_CASE("gen-data") {
    fs::path dir = scratch("gen");
    SUBCASE("empty dataset") {
        REQUIRE(cli("gen-data --out " + (dir / "empty").string() + " --count 0") == 0);
        CHECK(read_dataset(dir / "empty").empty());
        Json m = read_json(dir / "empty" / "manifest.json");
        CHECK(m.dump().find("[]") != std::string::npos);
    }
    SUBCASE("deterministic and complete") {
        REQUIRE(cli("gen-data --out " + (dir / "a").string() + " --count 1000 --size 32 --seed 5") == 0);
        REQUIRE(cli("gen-data --out " + (dir / "b").string() + " --count 1000 --size 32 --seed 5") == 0);
        std::size_t files = 0;
        for (const auto& e : fs::directory_iterator(dir / "a")) {
            if (e.path().extension() != ".tnsr") continue;
            ++files;
            CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
        }
        CHECK(files == 1000);
        CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
        auto samples = read_dataset(dir / "a");
        REQUIRE(samples.size() == 1000);
        for (const auto& s : samples) CHECK(s.image.shape() == Shape{32, 32});
    }
}

TEST_CASE("edit command") {
    fs::path dir = scratch("edit");
    BlobMoveCase c = make_blob_move_case(3);
    save_tnsr(dir / "src.tnsr", c.source);
    const std::string base = "edit --image " + (dir / "src.tnsr").string() + " --out " + (dir / "out").string();
    const std::string move = " --task move --src " + std::to_string(c.src_row) + " " + std::to_string(c.src_col) +
                             " --dst " + std::to_string(c.dst_row) + " " + std::to_string(c.dst_col) + " --radius 6";

    SUBCASE("metrics append and logs") {
        REQUIRE(cli(base + move + " --seed 0 --seeds 2 --jobs 2") == 0);
        REQUIRE(cli(base + move + " --seed 7") == 0);
        auto rows = lines(dir / "out" / "metrics.csv");
        REQUIRE(rows.size() == 4);
        CHECK(rows[0] == "task,seed,centroid_error,edit_energy,out_mask_mse,wall_seconds");
        CHECK(rows[3].rfind("move,7,", 0) == 0);
        double err = std::stod(rows[1].substr(rows[1].find(',', 5) + 1));
        CHECK(err < 1.5);

        Json log = read_json(dir / "out" / "edit_seed7.log.json");
        CHECK(log.at("sampler").at("rng_seed") == 7);
        CHECK(log.at("sampler").at("U") == 3);
        CHECK(log.at("steps").size() == 50);
        CHECK(slurp(dir / "out" / "edit_seed7.pgm").rfind("P5", 0) == 0);
    }
    SUBCASE("flags override the experiment config") {
        Json cfg{{"image", "src.tnsr"}, {"sampler", {{"U", 1}, {"n", 10}}}, {"out_dir", "from_config"}};
        write_json(dir / "exp.json", cfg);
        REQUIRE(cli("edit --config " + (dir / "exp.json").string() + move + " --n 4") == 0);
        Json log = read_json(dir / "from_config" / "edit_seed0.log.json");
        CHECK(log.at("sampler").at("U") == 1);
        CHECK(log.at("sampler").at("n") == 4);
    }
    SUBCASE("identity edit reproduces reconstruction") {
        EditSpec id;
        id.mask = Tensor({32, 32}, 0.0);
        save_edit_spec(dir / "id.json", id);
        REQUIRE(cli(base + " --spec " + (dir / "id.json").string()) == 0);
        NoiseSchedule s;
        GmmDenoiser model(blob_move_prior(), s);
        ConditionBundle cond;
        Tensor rec = reconstruct(invert(c.source, nullptr, cond, model, s).z_T, cond, model, s);
        CHECK(load_tnsr(dir / "out" / "edit_seed0.tnsr") == rec);
        Json log = read_json(dir / "out" / "edit_seed0.log.json");
        CHECK(log.at("identity") == true);
    }
    SUBCASE("errors") {
        CHECK(cli("edit --image " + (dir / "nope.tnsr").string() + move) == 3);
        CHECK(cli(base + " --task warp --src 1 1") == 2);
        CHECK(cli(base + move + " --U 0") == 2);
    }
}

TEST_CASE("replace pulls the masked region toward the reference") {
    fs::path dir = scratch("replace");
    GmmPrior prior = blob_move_prior();
    auto blob_at = [&](int r, int c) {
        const std::size_t k = static_cast<std::size_t>((r - 4) * 24 + (c - 4));
        Tensor img({32, 32});
        for (std::size_t i = 0; i < img.size(); ++i) img[i] = prior.means.at(k, i);
        return img;
    };
    Tensor src = blob_at(16, 14), ref = blob_at(16, 18);
    save_tnsr(dir / "src.tnsr", src);
    save_tnsr(dir / "ref.tnsr", ref);
    REQUIRE(cli("edit --image " + (dir / "src.tnsr").string() + " --reference " + (dir / "ref.tnsr").string() +
                " --task replace --src 16 16 --radius 6 --out " + (dir / "out").string()) == 0);
    Tensor out = load_tnsr(dir / "out" / "edit_seed0.tnsr");

    EditSpec spec = make_replace_spec(32, 16, 16, 6);
    auto masked_cos = [&](const Tensor& a, const Tensor& b) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (spec.mask[i] == 0.0) continue;
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        return ab / std::sqrt(aa * bb);
    };
    MESSAGE("cos to reference " << masked_cos(out, ref) << ", to source " << masked_cos(out, src));
    CHECK(masked_cos(out, ref) > masked_cos(out, src));
}

TEST_CASE("verify command") {
    fs::path dir = scratch("verify");
    CHECK(cli("verify limits --json " + (dir / "r.json").string()) == 0);
    Json r = read_json(dir / "r.json");
    const std::string text = r.dump();
    CHECK(text.find("\"pass\":true") != std::string::npos);
    CHECK(text.find("threshold") != std::string::npos);
    CHECK(cli("verify nosuch") != 0);
    CHECK_THROWS_AS(run_suite("nosuch"), ConfigError);
}

TEST_CASE("stats command") {
    fs::path dir = scratch("stats");
    REQUIRE(cli("gen-data --out " + (dir / "d").string() + " --count 5 --size 16") == 0);
    CHECK(cli("stats --dataset " + (dir / "d").string()) == 0);
}
