// diffedit command-line front end.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "diffedit/config.hpp"
#include "diffedit/data.hpp"
#include "diffedit/error.hpp"
#include "diffedit/prompt.hpp"
#include "diffedit/sampler.hpp"
#include "diffedit/tensor_io.hpp"
#include "diffedit/tiny_denoiser.hpp"
#include "diffedit/verify.hpp"

namespace fs = std::filesystem;
using namespace diffedit;

namespace {

fs::path output_root() {
    const char* env = std::getenv("DIFFEDIT_OUT");
    return env && *env ? fs::path(env) : fs::path("out");
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

void write_loss_csv(const fs::path& path, const std::vector<double>& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) out << i << ',' << curve[i] << '\n';
}

// ---- models

struct Models {
    std::unique_ptr<Denoiser> denoiser;
    const TinyAttentionDenoiser* tiny = nullptr;
    std::unique_ptr<QFormerEncoder> encoder;
    ImageTokenizer tokenizer;
};

Models load_models(const std::string& denoiser, const std::string& encoder, const NoiseSchedule& schedule,
                   std::size_t size) {
    Models m;
    if (denoiser == "analytic") {
        m.denoiser = std::make_unique<GmmDenoiser>(blob_move_prior(size), schedule);
    } else {
        require_file(denoiser, "denoiser bundle");
        auto tiny = std::make_unique<TinyAttentionDenoiser>(TinyAttentionDenoiser::from_bundle(load_bundle(denoiser)));
        m.tiny = tiny.get();
        m.denoiser = std::move(tiny);
    }
    if (!encoder.empty()) {
        if (!m.tiny) throw ConfigError("an image-prompt encoder needs a trained denoiser, not the analytic one");
        require_file(encoder, "encoder bundle");
        m.encoder = std::make_unique<QFormerEncoder>(QFormerEncoder::from_bundle(load_bundle(encoder)));
        const auto& tc = m.tiny->config();
        m.tokenizer = ImageTokenizer(ImageTokenizerConfig{tc.image_height, tc.image_width, tc.patch,
                                                          m.encoder->config().in_width, 1234});
    }
    return m;
}

ConditionBundle make_condition(const Models& m, int label, const Tensor& image, const Tensor* reference,
                               double gamma, double cfg_scale) {
    if (!m.tiny) {
        ConditionBundle c;
        c.cfg_scale = cfg_scale;
        c.gamma = gamma;
        return c;
    }
    if (m.encoder) return prompt_condition(*m.tiny, *m.encoder, m.tokenizer, label, image, reference, gamma, cfg_scale);
    ConditionBundle c = m.tiny->condition(label, cfg_scale);
    c.gamma = gamma;
    return c;
}

// ---- edit

struct EditOptions {
    fs::path config;
    fs::path image;
    fs::path reference;
    fs::path spec;
    std::string task;
    std::vector<int> src, dst;
    double radius = 6.0;
    double factor = 1.5;
    std::string denoiser = "analytic";
    std::string encoder;
    int label = 0;
    std::uint64_t seed = 0;
    int seeds = 1;
    int jobs = 1;
    fs::path out;
    fs::path metrics;
    SamplerConfig sampler;
    ScheduleParams schedule;
};

EditSpec spec_from_flags(const EditOptions& o, std::size_t size) {
    if (o.src.size() != 2) throw ConfigError("--src needs ROW COL");
    const bool needs_dst = o.task == "move" || o.task == "drag" || o.task == "paste";
    if (needs_dst && o.dst.size() != 2) throw ConfigError("--dst needs ROW COL for " + o.task);
    switch (parse_edit_task(o.task)) {
        case EditTask::move: return make_move_spec(size, o.src[0], o.src[1], o.dst[0], o.dst[1], o.radius);
        case EditTask::resize: return make_resize_spec(size, o.src[0], o.src[1], o.radius, o.factor);
        case EditTask::drag: return make_drag_spec(size, o.src[0], o.src[1], o.dst[0], o.dst[1]);
        case EditTask::paste: return make_paste_spec(size, o.src[0], o.src[1], o.dst[0], o.dst[1], o.radius);
        case EditTask::replace: return make_replace_spec(size, o.src[0], o.src[1], o.radius);
    }
    throw ConfigError("unreachable task");
}

// Merges an experiment JSON into the options; command-line flags given explicitly still win.
void apply_config(EditOptions& o, const CLI::App& app) {
    if (o.config.empty()) return;
    Json j = read_json(o.config);
    const fs::path base = o.config.parent_path();
    auto path_of = [&](const char* key, fs::path& dst, const char* flag) {
        if (j.contains(key) && app.count(flag) == 0) {
            fs::path p = j[key].get<std::string>();
            dst = p.is_relative() ? base / p : p;
        }
    };
    path_of("image", o.image, "--image");
    path_of("reference", o.reference, "--reference");
    path_of("edit_spec", o.spec, "--spec");
    path_of("out_dir", o.out, "--out");
    if (j.contains("denoiser") && app.count("--denoiser") == 0) {
        std::string d = j["denoiser"].get<std::string>();
        o.denoiser = d == "analytic" || fs::path(d).is_absolute() ? d : (base / d).string();
    }
    if (j.contains("encoder") && app.count("--encoder") == 0) {
        fs::path e = j["encoder"].get<std::string>();
        o.encoder = (e.is_relative() ? base / e : e).string();
    }
    if (j.contains("label") && app.count("--label") == 0) o.label = j["label"].get<int>();
    if (j.contains("seed") && app.count("--seed") == 0) o.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("schedule")) o.schedule = schedule_from_json(j["schedule"]);
    if (j.contains("sampler")) {
        SamplerConfig from_file = sampler_from_json(j["sampler"]);
        // Sampler flags are already parsed into o.sampler; keep the ones set explicitly.
        Json merged = to_json(from_file);
        Json flags = to_json(o.sampler);
        for (const auto& [key, value] : flags.items()) {
            const CLI::Option* opt = app.get_option_no_throw("--" + key);
            if (opt && opt->count() > 0) merged[key] = value;
        }
        o.sampler = sampler_from_json(merged);
    }
}

double masked_mse(const Tensor& a, const Tensor& b, const Tensor& mask, bool inside) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if ((mask[j] > 0.0) != inside) continue;
        acc += (a[j] - b[j]) * (a[j] - b[j]);
        ++n;
    }
    return n ? acc / static_cast<double>(n) : 0.0;
}

struct EditRow {
    std::uint64_t seed;
    double centroid_error;  // NaN when the task has no single moving blob
    double edit_energy;
    double out_mask_mse;
    double seconds;
};

EditRow edit_one(const EditOptions& o, const Models& models, const NoiseSchedule& schedule, const Tensor& image,
                 const Tensor* reference, const EditSpec& spec, std::uint64_t seed, const Json& resolved) {
    auto t0 = std::chrono::steady_clock::now();
    SamplerConfig cfg = o.sampler;
    cfg.rng_seed = seed;
    ConditionBundle cond = make_condition(models, o.label, image, reference, cfg.gamma, cfg.cfg_scale);
    EditResult r = run_edit(image, reference, spec, cond, *models.denoiser, schedule, cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string stem = "edit_seed" + std::to_string(seed);
    save_tnsr(o.out / (stem + ".tnsr"), r.image);
    save_pgm(o.out / (stem + ".pgm"), r.image);
    Json log = resolved;
    log["sampler"]["rng_seed"] = seed;
    log["identity"] = r.identity;
    Json steps = Json::array();
    for (const auto& s : r.steps) steps.push_back(to_json(s));
    log["steps"] = steps;
    write_json(o.out / (stem + ".log.json"), log);

    EditRow row{seed, std::nan(""), 0.0, masked_mse(r.image, image, spec.mask, false), seconds};
    if ((spec.task == EditTask::move || spec.task == EditTask::drag) && !spec.region_map.empty()) {
        double dr = 0.0, dc = 0.0;
        for (const auto& p : spec.region_map) {
            dr += p.dst_row - p.src_row;
            dc += p.dst_col - p.src_col;
        }
        dr /= static_cast<double>(spec.region_map.size());
        dc /= static_cast<double>(spec.region_map.size());
        auto [sr, sc] = blob_centroid(image);
        auto [er, ec] = blob_centroid(r.image);
        row.centroid_error = std::hypot(er - (sr + dr), ec - (sc + dc));
    }
    MemoryBank clean;
    clean.put(0, BankEntry{image, reference ? std::optional<Tensor>(*reference) : std::nullopt, {}, {}});
    row.edit_energy = energy_edit(r.image, clean, spec, 0);
    return row;
}

void append_metrics(const fs::path& path, const std::string& task, const std::vector<EditRow>& rows) {
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append to " + path.string());
    if (fresh) out << "task,seed,centroid_error,edit_energy,out_mask_mse,wall_seconds\n";
    out.precision(10);
    for (const auto& r : rows) {
        out << task << ',' << r.seed << ',';
        if (!std::isnan(r.centroid_error)) out << r.centroid_error;
        out << ',' << r.edit_energy << ',' << r.out_mask_mse << ',' << r.seconds << '\n';
    }
}

int run_edit_cmd(EditOptions& o, const CLI::App& app) {
    apply_config(o, app);
    if (o.out.empty()) o.out = output_root() / "edit";
    require_file(o.image, "image");
    if (!o.reference.empty()) require_file(o.reference, "reference image");
    if (!o.spec.empty()) require_file(o.spec, "edit spec");
    if (o.seeds < 1 || o.jobs < 1) throw ConfigError("--seeds and --jobs must be at least 1");
    NoiseSchedule schedule(o.schedule);
    const Tensor image = load_tnsr(o.image);
    if (image.rank() != 2 || image.rows() != image.cols()) {
        throw DimensionError("edit expects a square 2-D image, got " + shape_str(image.shape()));
    }
    std::optional<Tensor> reference;
    if (!o.reference.empty()) reference = load_tnsr(o.reference);
    Models models = load_models(o.denoiser, o.encoder, schedule, image.rows());
    EditSpec spec;
    if (!o.spec.empty()) {
        spec = load_edit_spec(o.spec);
    } else if (!o.task.empty()) {
        spec = spec_from_flags(o, image.rows());
    } else {
        throw ConfigError("give --spec, --task, or an experiment config with edit_spec");
    }
    spec.validate(image.shape());
    o.sampler.validate(schedule.timesteps().size());
    fs::create_directories(o.out);
    if (o.metrics.empty()) o.metrics = o.out / "metrics.csv";

    Json resolved{{"schedule", to_json(o.schedule)},
                  {"sampler", to_json(o.sampler)},
                  {"image", o.image.string()},
                  {"reference", o.reference.string()},
                  {"denoiser", o.denoiser},
                  {"encoder", o.encoder},
                  {"label", o.label},
                  {"task", to_string(spec.task)},
                  {"region_map", region_map_json(spec.region_map)},
                  {"out_dir", o.out.string()}};

    std::vector<EditRow> rows(static_cast<std::size_t>(o.seeds));
    std::vector<std::exception_ptr> errors(rows.size());
    std::mutex print;
    auto worker = [&](std::size_t first) {
        for (std::size_t k = first; k < rows.size(); k += static_cast<std::size_t>(o.jobs)) {
            try {
                rows[k] = edit_one(o, models, schedule, image, reference ? &*reference : nullptr, spec, o.seed + k,
                                   resolved);
                std::lock_guard<std::mutex> lock(print);
                std::cerr << "seed " << o.seed + k << ": out-of-mask MSE " << rows[k].out_mask_mse << '\n';
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    for (int j = 1; j < o.jobs; ++j) threads.emplace_back(worker, static_cast<std::size_t>(j));
    worker(0);
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    append_metrics(o.metrics, to_string(spec.task), rows);
    std::cout << "wrote " << rows.size() << " edit(s) to " << o.out.string() << '\n';
    return 0;
}

// ---- stats

void dataset_stats(const fs::path& dir) {
    auto samples = read_dataset(dir);
    std::vector<int> counts(kBlobClasses, 0);
    double sr = 0.0, sc = 0.0;
    for (const auto& s : samples) {
        if (s.label >= 0 && s.label < kBlobClasses) ++counts[static_cast<std::size_t>(s.label)];
        sr += s.blob.sigma_row;
        sc += s.blob.sigma_col;
    }
    const double n = std::max<double>(1.0, static_cast<double>(samples.size()));
    Json j{{"count", samples.size()}, {"label_counts", counts}, {"mean_sigma_row", sr / n}, {"mean_sigma_col", sc / n}};
    std::cout << j.dump(2) << '\n';
}

void run_log_csv(const fs::path& log_path, const fs::path& csv) {
    Json log = read_json(log_path);
    std::ofstream out(csv);
    if (!out) throw IoError("cannot write " + csv.string());
    out << "index,t,t_prev,guided,iterations,sde,sigma_in,sigma_out,e_edit,e_content\n";
    out.precision(10);
    for (const auto& s : log.at("steps")) {
        out << s["index"] << ',' << s["t"] << ',' << s["t_prev"] << ',' << (s["guided"].get<bool>() ? 1 : 0) << ','
            << s["iterations"] << ',' << (s["sde"].get<bool>() ? 1 : 0) << ',' << s["sigma_in"].get<double>() << ','
            << s["sigma_out"].get<double>() << ',' << s["e_edit"].get<double>() << ','
            << s["e_content"].get<double>() << '\n';
    }
}

void add_sampler_flags(CLI::App* cmd, SamplerConfig& c) {
    cmd->add_option("--n", c.n, "Guidance step budget");
    cmd->add_option("--guidance_stride", c.guidance_stride, "Steps between guidance applications");
    cmd->add_option("--tau_sde", c.tau_sde, "Regional SDE on the first k steps");
    cmd->add_option("--tau_tt", c.tau_tt, "Time travel on guided steps among the first k");
    cmd->add_option("--U", c.U, "Time-travel iterations");
    cmd->add_option("--eta1", c.eta1, "SDE strength inside the mask");
    cmd->add_option("--eta2", c.eta2, "SDE strength outside the mask");
    cmd->add_option("--guidance_lr", c.guidance_lr, "Guidance learning rate");
    cmd->add_option("--cfg_scale", c.cfg_scale, "Classifier-free guidance scale");
    cmd->add_option("--gamma", c.gamma, "Image-prompt weight");
    cmd->add_option("--visual_xattn", c.visual_xattn, "Inject memory-bank K/V into self-attention");
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) return 3;
    if (dynamic_cast<const Error*>(&e)) return 2;
    return 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Guided diffusion image editing at desk scale"};
    app.require_subcommand(1);

    // gen-data
    fs::path data_out;
    std::size_t count = 1000, size = 32;
    std::uint64_t data_seed = 0;
    auto* gen = app.add_subcommand("gen-data", "Generate a procedural blob dataset");
    gen->add_option("--out", data_out, "Output directory (default $DIFFEDIT_OUT/data)");
    gen->add_option("--count", count, "Number of images");
    gen->add_option("--size", size, "Image side in pixels");
    gen->add_option("--seed", data_seed, "RNG seed");

    // train-denoiser
    fs::path train_data, model_out, loss_csv;
    DenoiserTrainConfig dcfg;
    auto* td = app.add_subcommand("train-denoiser", "Train the tiny attention denoiser");
    td->add_option("--data", train_data, "Dataset directory")->required();
    td->add_option("--out", model_out, "Output bundle (default $DIFFEDIT_OUT/denoiser.bundle)");
    td->add_option("--steps", dcfg.steps, "SGD steps");
    td->add_option("--batch", dcfg.batch, "Batch size");
    td->add_option("--lr", dcfg.lr, "Learning rate");
    td->add_option("--label-drop", dcfg.label_drop, "Probability of training with the null label");
    td->add_option("--clip-norm", dcfg.clip_norm, "Global gradient-norm cap (0 disables)");
    td->add_option("--seed", dcfg.seed, "RNG seed");
    td->add_option("--loss-csv", loss_csv, "Write the loss curve here");

    // train-prompt
    fs::path prompt_data, frozen_path, enc_out, prompt_csv;
    PromptTrainConfig pcfg;
    auto* tp = app.add_subcommand("train-prompt", "Train the image-prompt encoder against a frozen denoiser");
    tp->add_option("--data", prompt_data, "Dataset directory")->required();
    tp->add_option("--denoiser", frozen_path, "Trained denoiser bundle")->required();
    tp->add_option("--out", enc_out, "Output bundle (default $DIFFEDIT_OUT/encoder.bundle)");
    tp->add_option("--steps", pcfg.steps, "SGD steps");
    tp->add_option("--batch", pcfg.batch, "Batch size");
    tp->add_option("--lr", pcfg.lr, "Learning rate");
    tp->add_option("--drop_prob", pcfg.drop_prob, "Probability of a zero prompt image");
    tp->add_option("--gamma", pcfg.gamma, "Prompt weight during training");
    tp->add_option("--clip-norm", pcfg.clip_norm, "Global gradient-norm cap (0 disables)");
    tp->add_option("--seed", pcfg.seed, "RNG seed");
    tp->add_option("--loss-csv", prompt_csv, "Write the loss curve here");

    // invert
    fs::path inv_image, inv_out;
    std::string inv_model = "analytic", inv_encoder;
    int inv_label = 0;
    ScheduleParams inv_sched;
    auto* inv = app.add_subcommand("invert", "DDIM-invert an image and reconstruct it");
    inv->add_option("--image", inv_image, "Input TNSR image")->required();
    inv->add_option("--denoiser", inv_model, "'analytic' or a denoiser bundle");
    inv->add_option("--encoder", inv_encoder, "Image-prompt encoder bundle");
    inv->add_option("--label", inv_label, "Class label for the text condition");
    inv->add_option("--infer_steps", inv_sched.infer_steps, "Inference steps");
    inv->add_option("--out", inv_out, "Output directory (default $DIFFEDIT_OUT/invert)");

    // edit
    EditOptions eo;
    auto* ed = app.add_subcommand("edit", "Run an editing task");
    ed->add_option("--config", eo.config, "Experiment JSON");
    ed->add_option("--image", eo.image, "Source TNSR image");
    ed->add_option("--reference", eo.reference, "Reference TNSR image for paste/replace");
    ed->add_option("--spec", eo.spec, "Edit spec JSON");
    ed->add_option("--task", eo.task, "move|resize|paste|replace|drag (with --src/--dst)");
    ed->add_option("--src", eo.src, "Source (or handle) ROW COL")->expected(2);
    ed->add_option("--dst", eo.dst, "Destination (or target) ROW COL")->expected(2);
    ed->add_option("--radius", eo.radius, "Region radius");
    ed->add_option("--factor", eo.factor, "Resize factor");
    ed->add_option("--denoiser", eo.denoiser, "'analytic' or a denoiser bundle");
    ed->add_option("--encoder", eo.encoder, "Image-prompt encoder bundle");
    ed->add_option("--label", eo.label, "Class label");
    ed->add_option("--seed", eo.seed, "First sampler seed");
    ed->add_option("--seeds", eo.seeds, "Number of seeds to run");
    ed->add_option("--jobs", eo.jobs, "Seeds run in parallel");
    ed->add_option("--out", eo.out, "Output directory (default $DIFFEDIT_OUT/edit)");
    ed->add_option("--metrics", eo.metrics, "Metrics CSV to append to (default <out>/metrics.csv)");
    add_sampler_flags(ed, eo.sampler);

    // verify
    std::vector<std::string> suites;
    fs::path verify_json;
    VerifyOptions vo;
    auto* ver = app.add_subcommand("verify", "Run verification suites");
    ver->add_option("suite", suites, "Suite names or 'all'")->required();
    ver->add_option("--json", verify_json, "Also write the report here");
    ver->add_option("--seed", vo.seed, "Seed offset");
    ver->add_option("--denoiser-steps", vo.denoiser_steps, "Training budget for the training suite");
    ver->add_option("--prompt-steps", vo.prompt_steps, "Prompt-encoder budget for the training suite");
    ver->add_option("--blob-runs", vo.blob_runs, "Seeded runs in the blobmove suite");

    // stats
    fs::path stats_data, stats_log, stats_csv;
    auto* st = app.add_subcommand("stats", "Dataset summary or run-log export for plotting");
    st->add_option("--dataset", stats_data, "Dataset directory to summarize");
    st->add_option("--run-log", stats_log, "Edit run log to export");
    st->add_option("--csv", stats_csv, "CSV path for --run-log");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            if (data_out.empty()) data_out = output_root() / "data";
            write_dataset(data_out, generate_blobs(count, size, data_seed), size);
            std::cout << "wrote " << count << " images to " << data_out.string() << '\n';
        } else if (td->parsed()) {
            if (model_out.empty()) model_out = output_root() / "denoiser.bundle";
            auto data = read_dataset(train_data);
            if (data.empty()) throw TrainingError("dataset " + train_data.string() + " is empty");
            TinyDenoiserConfig mc;
            mc.image_height = data.front().image.rows();
            mc.image_width = data.front().image.cols();
            mc.seed = dcfg.seed;
            TinyAttentionDenoiser model(mc);
            NoiseSchedule schedule;
            auto result = train_denoiser(model, data, schedule, dcfg, [](int step, double loss) {
                if (step % 1000 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
            });
            if (model_out.has_parent_path()) fs::create_directories(model_out.parent_path());
            save_bundle(model_out, model.to_bundle());
            if (!loss_csv.empty()) write_loss_csv(loss_csv, result.loss_curve);
            std::cout << "saved " << model_out.string() << '\n';
        } else if (tp->parsed()) {
            if (enc_out.empty()) enc_out = output_root() / "encoder.bundle";
            require_file(frozen_path, "denoiser bundle");
            auto data = read_dataset(prompt_data);
            TinyAttentionDenoiser model = TinyAttentionDenoiser::from_bundle(load_bundle(frozen_path));
            const auto& mc = model.config();
            ImageTokenizer tok(ImageTokenizerConfig{mc.image_height, mc.image_width, mc.patch, mc.width, 1234});
            QFormerConfig qc;
            qc.in_width = mc.width;
            qc.width = mc.width;
            qc.seed = pcfg.seed + 7;
            QFormerEncoder enc(qc);
            NoiseSchedule schedule;
            auto result = train_prompt_encoder(enc, tok, model, data, schedule, pcfg, [](int step, double loss) {
                if (step % 500 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
            });
            if (enc_out.has_parent_path()) fs::create_directories(enc_out.parent_path());
            save_bundle(enc_out, enc.to_bundle());
            if (!prompt_csv.empty()) write_loss_csv(prompt_csv, result.loss_curve);
            std::cout << "saved " << enc_out.string() << '\n';
        } else if (inv->parsed()) {
            if (inv_out.empty()) inv_out = output_root() / "invert";
            require_file(inv_image, "image");
            NoiseSchedule schedule(inv_sched);
            Tensor image = load_tnsr(inv_image);
            Models models = load_models(inv_model, inv_encoder, schedule, image.rows());
            ConditionBundle cond = make_condition(models, inv_label, image, nullptr, 1.0, 1.0);
            Inversion result = invert(image, nullptr, cond, *models.denoiser, schedule);
            Tensor rec = reconstruct(result.z_T, cond, *models.denoiser, schedule);
            fs::create_directories(inv_out);
            save_tnsr(inv_out / "z_T.tnsr", result.z_T);
            save_tnsr(inv_out / "reconstruction.tnsr", rec);
            save_pgm(inv_out / "reconstruction.pgm", rec);
            std::cout << "reconstruction MSE " << mean_squared_error(rec, image) << '\n';
        } else if (ed->parsed()) {
            return run_edit_cmd(eo, *ed);
        } else if (ver->parsed()) {
            if (suites.size() == 1 && suites[0] == "all") suites = suite_names();
            vo.log = [](const std::string& m) { std::cerr << m << '\n'; };
            Json all = Json::array();
            bool ok = true;
            for (const auto& name : suites) {
                SuiteReport r = run_suite(name, vo);
                ok = ok && r.pass();
                all.push_back(r.to_json());
            }
            std::cout << all.dump(2) << '\n';
            if (!verify_json.empty()) write_json(verify_json, all);
            return ok ? 0 : 1;
        } else if (st->parsed()) {
            if (!stats_data.empty()) dataset_stats(stats_data);
            if (!stats_log.empty()) {
                if (stats_csv.empty()) throw ConfigError("--run-log needs --csv");
                run_log_csv(stats_log, stats_csv);
            }
            if (stats_data.empty() && stats_log.empty()) throw ConfigError("stats needs --dataset or --run-log");
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e);
    }
    return 0;
}
