#pragma once

// Neighbourhood-constrained patch shuffling.
//
// An image is cut into an N x N grid. Every row gets its own permutation of
// column slots and every column its own permutation of row slots; each
// permutation moves a patch by at most 2k slots. Rows are shuffled first on
// the original grid, then columns on the row-shuffled grid.
//
// Permutations are 0-based: perm[j] is the destination slot of the element
// that started in slot j.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace iagn {

using Rng = std::mt19937_64;

namespace shuffle {

struct ShuffleSpec {
  int grid = 1;   // patches per axis
  int range = 1;  // neighbourhood k; ignored when grid == 1

  bool is_identity() const { return grid == 1; }
  /// Throws SpecError unless grid >= 1 and (grid == 1 or 1 <= range < grid).
  void validate() const;
};

using Permutation = std::vector<int>;

struct PermutationPair {
  std::vector<Permutation> row_perms;  // one per row, permutes column slots
  std::vector<Permutation> col_perms;  // one per column, permutes row slots

  int grid() const { return static_cast<int>(row_perms.size()); }
  static PermutationPair identity(int grid);
};

struct PatchIndex {
  int row = 0;
  int col = 0;
  bool operator==(const PatchIndex&) const = default;
};

/// Rank permutation of a position vector: sigma[j] = rank of q[j] under a
/// stable ascending sort (ties broken by original index).
Permutation rank_permutation(std::span<const double> positions);

/// Draws q_j = j + d_j with d_j ~ U[-k, k] and returns its rank permutation.
Permutation make_permutation(int n, int k, Rng& rng);

/// Same as make_permutation but with caller-supplied displacements d_j.
Permutation permutation_from_displacements(std::span<const double> displacements);

PermutationPair make_pair(const ShuffleSpec& spec, Rng& rng);

bool is_bijection(const Permutation& perm);

/// True iff every permutation in the pair is a bijection of the right size
/// and moves no element by more than 2k slots.
bool verify_pair(const PermutationPair& pair, int k);

/// Composite origin of the sequential row-then-column shuffle:
/// result[r * N + c] is the original grid position of the patch that ends up
/// at (r, c).
std::vector<PatchIndex> patch_sources(const PermutationPair& pair);

/// Rearranges the patches of a tensor whose last two dims are (H, W).
/// Throws DimensionError when H or W is not a multiple of the grid size.
torch::Tensor apply_pair(const torch::Tensor& image, const PermutationPair& pair);

struct ShuffleResult {
  torch::Tensor image;
  PermutationPair pair;
};

/// Validates the spec, draws a pair and applies it. grid == 1 returns the
/// input unchanged (no random draws are consumed).
ShuffleResult shuffle_image(const torch::Tensor& image, const ShuffleSpec& spec, Rng& rng);

nlohmann::json to_json(const PermutationPair& pair);
PermutationPair pair_from_json(const nlohmann::json& j);

}  // namespace shuffle
}  // namespace iagn
