#include "diffedit/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "diffedit/error.hpp"
#include "diffedit/tensor_io.hpp"

namespace diffedit {

using json = nlohmann::json;

Tensor render_blob(std::size_t height, std::size_t width, const BlobParams& b) {
    Tensor img({height, width});
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            double dr = (static_cast<double>(r) - b.row) / b.sigma_row;
            double dc = (static_cast<double>(c) - b.col) / b.sigma_col;
            img.at(r, c) = -1.0 + 2.0 * std::exp(-0.5 * (dr * dr + dc * dc));
        }
    }
    return img;
}

std::vector<Sample> generate_blobs(std::size_t count, std::size_t size, std::uint64_t seed) {
    if (size < 16) throw ConfigError("blob images need size >= 16, got " + std::to_string(size));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(6.0, static_cast<double>(size) - 7.0);
    std::uniform_real_distribution<double> scale(1.5, 3.0);
    std::uniform_int_distribution<int> cls(0, kBlobClasses - 1);
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        BlobParams b;
        b.label = cls(rng);
        b.row = pos(rng);
        b.col = pos(rng);
        double s = scale(rng);
        switch (b.label) {
            case 1: b.sigma_row = 0.6 * s; b.sigma_col = 1.8 * s; break;
            case 2: b.sigma_row = 1.8 * s; b.sigma_col = 0.6 * s; break;
            default: b.sigma_row = s; b.sigma_col = s; break;
        }
        out.push_back(Sample{render_blob(size, size, b), b.label, b});
    }
    return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, std::size_t size) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["image_size"] = size;
    manifest["samples"] = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.tnsr", i);
        save_tnsr(dir / name, samples[i].image);
        const auto& b = samples[i].blob;
        manifest["samples"].push_back({{"file", name},
                                       {"label", samples[i].label},
                                       {"row", b.row},
                                       {"col", b.col},
                                       {"sigma_row", b.sigma_row},
                                       {"sigma_col", b.sigma_col}});
    }
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("missing dataset manifest: " + (dir / "manifest.json").string());
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw IoError((dir / "manifest.json").string() + ": " + e.what());
    }
    std::vector<Sample> out;
    for (const auto& entry : manifest.at("samples")) {
        Sample s;
        s.image = load_tnsr(dir / entry.at("file").get<std::string>());
        s.label = entry.at("label").get<int>();
        s.blob = BlobParams{entry.value("row", 0.0), entry.value("col", 0.0), entry.value("sigma_row", 0.0),
                            entry.value("sigma_col", 0.0), s.label};
        out.push_back(std::move(s));
    }
    return out;
}

GmmPrior blob_position_prior(std::size_t size, double blob_sigma, std::size_t margin, double std) {
    if (2 * margin >= size) throw ConfigError("prior margin leaves no positions");
    std::vector<Tensor> means;
    for (std::size_t r = margin; r + margin < size; ++r) {
        for (std::size_t c = margin; c + margin < size; ++c) {
            BlobParams b{static_cast<double>(r), static_cast<double>(c), blob_sigma, blob_sigma, 0};
            means.push_back(render_blob(size, size, b));
        }
    }
    const std::size_t K = means.size(), D = size * size;
    GmmPrior prior;
    prior.weights.assign(K, 1.0 / static_cast<double>(K));
    prior.means = Tensor({K, D});
    for (std::size_t k = 0; k < K; ++k) {
        std::copy(means[k].values().begin(), means[k].values().end(),
                  prior.means.values().begin() + static_cast<std::ptrdiff_t>(k * D));
    }
    // Renormalize so the weights sum to 1 within rounding of the validator.
    double total = 0.0;
    for (double w : prior.weights) total += w;
    for (auto& w : prior.weights) w /= total;
    prior.std = std;
    return prior;
}

std::pair<double, double> blob_centroid(const Tensor& image) {
    const std::size_t h = image.rows(), w = image.cols();
    double m = 0.0, mr = 0.0, mc = 0.0;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double v = std::max(0.0, image.at(r, c) + 1.0);
            m += v;
            mr += v * static_cast<double>(r);
            mc += v * static_cast<double>(c);
        }
    }
    if (m == 0.0) return {static_cast<double>(h - 1) / 2.0, static_cast<double>(w - 1) / 2.0};
    return {mr / m, mc / m};
}

} // namespace diffedit
