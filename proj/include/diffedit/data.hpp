#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "diffedit/denoiser.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

inline constexpr int kBlobClasses = 3;  // round, wide, tall

struct BlobParams {
    double row = 0.0;
    double col = 0.0;
    double sigma_row = 2.0;
    double sigma_col = 2.0;
    int label = 0;
};

/// Grayscale image on [-1, 1]: background -1, Gaussian bump peaking at +1.
Tensor render_blob(std::size_t height, std::size_t width, const BlobParams& blob);

struct Sample {
    Tensor image;
    int label = 0;
    BlobParams blob;
};

std::vector<Sample> generate_blobs(std::size_t count, std::size_t size, std::uint64_t seed);

/// Writes one TNSR per sample plus manifest.json; reads it back.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, std::size_t size);
std::vector<Sample> read_dataset(const std::filesystem::path& dir);

/// Equal-weight mixture of round blobs centred on every integer position
/// in [margin, size - 1 - margin]^2.
GmmPrior blob_position_prior(std::size_t size, double blob_sigma, std::size_t margin, double std);

/// Intensity-weighted centroid (row, col) of the part of `image` above the -1 background.
std::pair<double, double> blob_centroid(const Tensor& image);

} // namespace diffedit
