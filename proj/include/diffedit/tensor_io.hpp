#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "diffedit/tensor.hpp"

namespace diffedit {

/// Named parameter tensors, ordered by name so bundles serialize stably.
using Bundle = std::map<std::string, Tensor>;

// TNSR: "TNSR", u32 rank, rank x u32 dims, row-major f64 values; all little-endian.
void write_tnsr(std::ostream& os, const Tensor& t);
Tensor read_tnsr(std::istream& is);
void save_tnsr(const std::filesystem::path& path, const Tensor& t);
Tensor load_tnsr(const std::filesystem::path& path);

// Bundle: repeated (u32 name length, UTF-8 name, TNSR blob) records until EOF.
void write_bundle(std::ostream& os, const Bundle& bundle);
Bundle read_bundle(std::istream& is);
void save_bundle(const std::filesystem::path& path, const Bundle& bundle);
Bundle load_bundle(const std::filesystem::path& path);

const Tensor& bundle_get(const Bundle& bundle, const std::string& name);

/// 8-bit binary PGM (P5); values are mapped from [lo, hi] and clamped.
void save_pgm(const std::filesystem::path& path, const Tensor& image, double lo = -1.0, double hi = 1.0);

} // namespace diffedit
