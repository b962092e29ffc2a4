#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffedit/denoiser.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

/// Per-timestep record captured during inversion.
struct BankEntry {
    Tensor z_gud;
    std::optional<Tensor> z_ref;
    std::vector<LayerKV> kv_gud;
    std::vector<LayerKV> kv_ref;
};

class MemoryBank {
public:
    void put(int t, BankEntry entry) { entries_[t] = std::move(entry); }
    /// Exact lookup; a missing timestep is a BankError, never a nearest match.
    const BankEntry& at(int t) const;
    BankEntry& at(int t);
    bool contains(int t) const { return entries_.count(t) != 0; }
    std::size_t size() const { return entries_.size(); }
    bool has_reference() const;
    const std::map<int, BankEntry>& entries() const { return entries_; }

private:
    std::map<int, BankEntry> entries_;
};

enum class EditTask { move, resize, paste, replace, drag };

std::string to_string(EditTask task);
EditTask parse_edit_task(const std::string& name);

/// Source coordinate in the bank latent paired with a destination in the current latent.
struct RegionPair {
    int src_row = 0;
    int src_col = 0;
    int dst_row = 0;
    int dst_col = 0;
};

struct EditSpec {
    EditTask task = EditTask::move;
    Tensor mask;  // m_edit over the latent grid, values in [0, 1]
    std::vector<RegionPair> region_map;
    std::optional<std::string> reference_id;

    /// True when nothing is edited: all-zero mask and no region pairs.
    bool is_identity() const;
    /// Guidance source is the reference latent for paste and replace.
    bool uses_reference() const { return task == EditTask::paste || task == EditTask::replace; }
    void validate(const Shape& latent_shape) const;
};

/// Window side of the patches compared by the energies.
inline constexpr int kEnergyPatch = 4;

// Builders for the five tasks on a square latent of side `size`.
EditSpec make_move_spec(std::size_t size, int src_row, int src_col, int dst_row, int dst_col, double radius);
EditSpec make_resize_spec(std::size_t size, int row, int col, double radius, double factor);
EditSpec make_drag_spec(std::size_t size, int handle_row, int handle_col, int target_row, int target_col,
                        double neighborhood = 3.0);
/// Paste: reference content around (src) lands at (dst); replace: same region in both images.
EditSpec make_paste_spec(std::size_t size, int src_row, int src_col, int dst_row, int dst_col, double radius);
EditSpec make_replace_spec(std::size_t size, int row, int col, double radius);

struct EnergyValue {
    double energy = 0.0;
    Tensor grad;  // raw gradient w.r.t. the latent
};

double energy_edit(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t);
double energy_content(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t);
EnergyValue energy_edit_with_grad(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t);
EnergyValue energy_content_with_grad(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t);

struct EnergyReport {
    double e_edit = 0.0;
    double e_content = 0.0;
    Tensor grad;  // m * g_edit + (1 - m) * g_content, each normalized to unit max magnitude
};

/// Divides by (max |g| + 1e-8).
Tensor normalize_max(const Tensor& g);

EnergyReport regional_gradient(const Tensor& z_t, const MemoryBank& bank, const EditSpec& spec, int t);

/// eps + lr * grad: descending the distance energies through the noise prediction.
Tensor guided_eps(const Tensor& eps, const EnergyReport& report, double lr);

} // namespace diffedit
