#include "diffedit/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "diffedit/error.hpp"
#include "diffedit/tape.hpp"

namespace diffedit {

const BankEntry& MemoryBank::at(int t) const {
    auto it = entries_.find(t);
    if (it == entries_.end()) throw BankError("memory bank has no entry for timestep " + std::to_string(t));
    return it->second;
}

BankEntry& MemoryBank::at(int t) {
    auto it = entries_.find(t);
    if (it == entries_.end()) throw BankError("memory bank has no entry for timestep " + std::to_string(t));
    return it->second;
}

bool MemoryBank::has_reference() const {
    return !entries_.empty() && entries_.begin()->second.z_ref.has_value();
}

std::string to_string(EditTask task) {
    switch (task) {
        case EditTask::move: return "move";
        case EditTask::resize: return "resize";
        case EditTask::paste: return "paste";
        case EditTask::replace: return "replace";
        case EditTask::drag: return "drag";
    }
    return "move";
}

EditTask parse_edit_task(const std::string& name) {
    for (EditTask t : {EditTask::move, EditTask::resize, EditTask::paste, EditTask::replace, EditTask::drag}) {
        if (to_string(t) == name) return t;
    }
    throw ConfigError("unknown edit task '" + name + "'");
}

bool EditSpec::is_identity() const {
    return region_map.empty() && std::all_of(mask.values().begin(), mask.values().end(), [](double v) { return v == 0.0; });
}

void EditSpec::validate(const Shape& latent_shape) const {
    if (mask.shape() != latent_shape) {
        throw DimensionError("edit mask " + shape_str(mask.shape()) + " does not match latent " +
                             shape_str(latent_shape));
    }
    for (double v : mask.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("edit mask values must lie in [0, 1]");
    }
    const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
    if (h < kEnergyPatch || w < kEnergyPatch) throw ConfigError("latent smaller than the energy patch");
    std::set<std::pair<int, int>> seen;
    for (const auto& p : region_map) {
        if (p.src_row < 0 || p.src_row >= h || p.src_col < 0 || p.src_col >= w || p.dst_row < 0 || p.dst_row >= h ||
            p.dst_col < 0 || p.dst_col >= w) {
            throw RangeError("region pair (" + std::to_string(p.src_row) + "," + std::to_string(p.src_col) + ")->(" +
                             std::to_string(p.dst_row) + "," + std::to_string(p.dst_col) + ") leaves the latent");
        }
        if (mask.at(static_cast<std::size_t>(p.dst_row), static_cast<std::size_t>(p.dst_col)) <= 0.0) {
            throw ConfigError("region destination (" + std::to_string(p.dst_row) + "," + std::to_string(p.dst_col) +
                              ") lies outside the edit mask");
        }
        if (!seen.emplace(p.dst_row, p.dst_col).second) {
            throw ConfigError("region map repeats destination (" + std::to_string(p.dst_row) + "," +
                              std::to_string(p.dst_col) + ")");
        }
    }
}

namespace {

void paint_disk(Tensor& mask, double row, double col, double radius) {
    for (std::size_t r = 0; r < mask.rows(); ++r)
        for (std::size_t c = 0; c < mask.cols(); ++c) {
            double dr = static_cast<double>(r) - row, dc = static_cast<double>(c) - col;
            if (dr * dr + dc * dc <= radius * radius) mask.at(r, c) = 1.0;
        }
}

bool inside(std::size_t size, int r, int c) {
    return r >= 0 && c >= 0 && r < static_cast<int>(size) && c < static_cast<int>(size);
}

// Pairs every in-bounds pixel of the disk at (row, col) with the same pixel shifted by (dr, dc).
std::vector<RegionPair> shifted_disk(std::size_t size, int row, int col, int dr, int dc, double radius) {
    std::vector<RegionPair> pairs;
    const int rad = static_cast<int>(std::ceil(radius));
    for (int r = row - rad; r <= row + rad; ++r)
        for (int c = col - rad; c <= col + rad; ++c) {
            double d2 = static_cast<double>((r - row) * (r - row) + (c - col) * (c - col));
            if (d2 > radius * radius) continue;
            if (inside(size, r, c) && inside(size, r + dr, c + dc)) pairs.push_back({r, c, r + dr, c + dc});
        }
    return pairs;
}

} // namespace

EditSpec make_move_spec(std::size_t size, int src_row, int src_col, int dst_row, int dst_col, double radius) {
    EditSpec s;
    s.task = EditTask::move;
    s.mask = Tensor({size, size}, 0.0);
    paint_disk(s.mask, src_row, src_col, radius);
    paint_disk(s.mask, dst_row, dst_col, radius);
    s.region_map = shifted_disk(size, src_row, src_col, dst_row - src_row, dst_col - src_col, radius);
    return s;
}

EditSpec make_resize_spec(std::size_t size, int row, int col, double radius, double factor) {
    if (!(factor > 0.0)) throw ConfigError("resize factor must be positive");
    EditSpec s;
    s.task = EditTask::resize;
    s.mask = Tensor({size, size}, 0.0);
    const double out_radius = radius * factor;
    paint_disk(s.mask, row, col, std::max(radius, out_radius) + 1.0);
    const int rad = static_cast<int>(std::ceil(out_radius));
    for (int r = row - rad; r <= row + rad; ++r)
        for (int c = col - rad; c <= col + rad; ++c) {
            double d2 = static_cast<double>((r - row) * (r - row) + (c - col) * (c - col));
            if (d2 > out_radius * out_radius || !inside(size, r, c)) continue;
            // Nearest-neighbour inverse scaling into the source region.
            int sr = row + static_cast<int>(std::lround((r - row) / factor));
            int sc = col + static_cast<int>(std::lround((c - col) / factor));
            if (inside(size, sr, sc)) s.region_map.push_back({sr, sc, r, c});
        }
    return s;
}

EditSpec make_drag_spec(std::size_t size, int handle_row, int handle_col, int target_row, int target_col,
                        double neighborhood) {
    EditSpec s;
    s.task = EditTask::drag;
    s.mask = Tensor({size, size}, 0.0);
    const double len = std::hypot(target_row - handle_row, target_col - handle_col);
    const int samples = std::max(1, static_cast<int>(std::ceil(len)));
    for (int i = 0; i <= samples; ++i) {
        double f = static_cast<double>(i) / samples;
        paint_disk(s.mask, handle_row + f * (target_row - handle_row), handle_col + f * (target_col - handle_col),
                   2.0 * neighborhood);
    }
    s.region_map = shifted_disk(size, handle_row, handle_col, target_row - handle_row, target_col - handle_col,
                                neighborhood);
    return s;
}

EditSpec make_paste_spec(std::size_t size, int src_row, int src_col, int dst_row, int dst_col, double radius) {
    EditSpec s;
    s.task = EditTask::paste;
    s.mask = Tensor({size, size}, 0.0);
    paint_disk(s.mask, dst_row, dst_col, radius);
    s.region_map = shifted_disk(size, src_row, src_col, dst_row - src_row, dst_col - src_col, radius);
    s.reference_id = "ref";
    return s;
}

EditSpec make_replace_spec(std::size_t size, int row, int col, double radius) {
    EditSpec s = make_paste_spec(size, row, col, row, col, radius);
    s.task = EditTask::replace;
    return s;
}

namespace {

// Flat indices of the kEnergyPatch window around (row, col), shifted to stay inside.
void window_indices(std::size_t h, std::size_t w, int row, int col, std::vector<std::size_t>& out) {
    const int half = kEnergyPatch / 2;
    const int r0 = std::clamp(row - half, 0, static_cast<int>(h) - kEnergyPatch);
    const int c0 = std::clamp(col - half, 0, static_cast<int>(w) - kEnergyPatch);
    for (int i = 0; i < kEnergyPatch; ++i)
        for (int j = 0; j < kEnergyPatch; ++j)
            out.push_back(static_cast<std::size_t>(r0 + i) * w + static_cast<std::size_t>(c0 + j));
}

const Tensor& guidance_source(const BankEntry& e, const EditSpec& spec, int t) {
    if (spec.uses_reference()) {
        if (!e.z_ref) throw BankError("edit needs reference latents but the bank has none at timestep " + std::to_string(t));
        return *e.z_ref;
    }
    return e.z_gud;
}

void check_latent(const Tensor& z, const Tensor& ref) {
    if (!z.same_shape(ref)) {
        throw DimensionError("latent " + shape_str(z.shape()) + " does not match bank latent " + shape_str(ref.shape()));
    }
}

// Returns nullopt when the energy has no terms (it is then identically zero).
std::optional<Var> edit_energy_var(Tape& tape, Var z, const MemoryBank& bank, const EditSpec& spec, int t) {
    const BankEntry& e = bank.at(t);
    const Tensor& src = guidance_source(e, spec, t);
    check_latent(z.value(), src);
    if (spec.region_map.empty()) return std::nullopt;
    const std::size_t h = src.rows(), w = src.cols();
    std::vector<std::size_t> dst_idx, src_idx;
    for (const auto& p : spec.region_map) {
        window_indices(h, w, p.dst_row, p.dst_col, dst_idx);
        window_indices(h, w, p.src_row, p.src_col, src_idx);
    }
    const std::size_t m = spec.region_map.size(), k = kEnergyPatch * kEnergyPatch;
    Tensor target({m, k});
    for (std::size_t i = 0; i < src_idx.size(); ++i) target[i] = src[src_idx[i]];
    Var current = gather(z, std::move(dst_idx), {m, k});
    return add_scalar(scale(mean(cosine_rows(current, tape.constant(std::move(target)))), -1.0), 1.0);
}

std::optional<Var> content_energy_var(Tape& tape, Var z, const MemoryBank& bank, const EditSpec& spec, int t) {
    const Tensor& gud = bank.at(t).z_gud;
    check_latent(z.value(), gud);
    if (!spec.mask.same_shape(gud)) {
        throw DimensionError("edit mask " + shape_str(spec.mask.shape()) + " does not match latent " +
                             shape_str(gud.shape()));
    }
    const std::size_t h = gud.rows(), w = gud.cols(), k = kEnergyPatch * kEnergyPatch;
    std::vector<std::size_t> idx;
    std::vector<double> keep;
    std::size_t tiles = 0;
    for (std::size_t r0 = 0; r0 + kEnergyPatch <= h; r0 += kEnergyPatch) {
        for (std::size_t c0 = 0; c0 + kEnergyPatch <= w; c0 += kEnergyPatch) {
            std::vector<std::size_t> tile;
            std::vector<double> tile_keep;
            bool any = false;
            for (int i = 0; i < kEnergyPatch; ++i)
                for (int j = 0; j < kEnergyPatch; ++j) {
                    std::size_t f = (r0 + i) * w + c0 + j;
                    bool outside = spec.mask[f] == 0.0;
                    any = any || outside;
                    tile.push_back(f);
                    tile_keep.push_back(outside ? 1.0 : 0.0);
                }
            if (!any) continue;
            idx.insert(idx.end(), tile.begin(), tile.end());
            keep.insert(keep.end(), tile_keep.begin(), tile_keep.end());
            ++tiles;
        }
    }
    if (tiles == 0) return std::nullopt;
    Tensor target({tiles, k});
    for (std::size_t i = 0; i < idx.size(); ++i) target[i] = gud[idx[i]] * keep[i];
    Var keep_v = tape.constant(Tensor({tiles, k}, std::move(keep)));
    Var current = mul(gather(z, std::move(idx), {tiles, k}), keep_v);
    return add_scalar(scale(mean(cosine_rows(current, tape.constant(std::move(target)))), -1.0), 1.0);
}

template <class Build>
EnergyValue evaluate(const Tensor& z_t, Build build) {
    Tape tape;
    Var z = tape.leaf(z_t);
    std::optional<Var> e = build(tape, z);
    if (!e) return EnergyValue{0.0, Tensor(z_t.shape(), 0.0)};
    return EnergyValue{e->value().item(), grad(tape, *e, z)};
}

} // namespace

EnergyValue energy_edit_with_grad(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t) {
    return evaluate(z_t, [&](Tape& tape, Var z) { return edit_energy_var(tape, z, bank, spec, t); });
}

EnergyValue energy_content_with_grad(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t) {
    return evaluate(z_t, [&](Tape& tape, Var z) { return content_energy_var(tape, z, bank, spec, t); });
}

double energy_edit(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t) {
    Tape tape;
    auto e = edit_energy_var(tape, tape.constant(z_t), bank, spec, t);
    return e ? e->value().item() : 0.0;
}

double energy_content(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t) {
    Tape tape;
    auto e = content_energy_var(tape, tape.constant(z_t), bank, spec, t);
    return e ? e->value().item() : 0.0;
}

Tensor normalize_max(const Tensor& g) {
    const double s = 1.0 / (max_abs(g) + 1e-8);
    return s * g;
}

EnergyReport regional_gradient(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t) {
    EnergyValue ed = energy_edit_with_grad(z_t, bank, spec, t);
    EnergyValue ec = energy_content_with_grad(z_t, bank, spec, t);
    Tensor ge = normalize_max(ed.grad);
    Tensor gc = normalize_max(ec.grad);
    EnergyReport r{ed.energy, ec.energy, Tensor(z_t.shape())};
    for (std::size_t i = 0; i < r.grad.size(); ++i) {
        const double m = spec.mask[i];
        // Pure 0/1 mask entries copy one side verbatim so masking is exact.
        if (m == 0.0) {
            r.grad[i] = gc[i];
        } else if (m == 1.0) {
            r.grad[i] = ge[i];
        } else {
            r.grad[i] = m * ge[i] + (1.0 - m) * gc[i];
        }
    }
    return r;
}

Tensor guided_eps(const Tensor& eps, const EnergyReport& report, double lr) {
    check_same_shape(eps, report.grad, "guided_eps");
    if (lr == 0.0) return eps;
    Tensor out = eps;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += lr * report.grad[i];
    return out;
}

} // namespace diffedit
