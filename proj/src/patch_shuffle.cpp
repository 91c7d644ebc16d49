#include "iagn/patch_shuffle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "iagn/errors.hpp"

namespace iagn::shuffle {

void ShuffleSpec::validate() const {
  if (grid < 1) {
    throw SpecError("shuffle grid must be >= 1, got " + std::to_string(grid));
  }
  if (grid > 1 && (range < 1 || range >= grid)) {
    throw SpecError("shuffle range k must satisfy 1 <= k < N (N=" + std::to_string(grid) +
                    ", k=" + std::to_string(range) + ")");
  }
}

PermutationPair PermutationPair::identity(int grid) {
  Permutation id(static_cast<std::size_t>(grid));
  std::iota(id.begin(), id.end(), 0);
  PermutationPair pair;
  pair.row_perms.assign(static_cast<std::size_t>(grid), id);
  pair.col_perms.assign(static_cast<std::size_t>(grid), id);
  return pair;
}

Permutation rank_permutation(std::span<const double> positions) {
  const auto n = positions.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return positions[a] < positions[b]; });
  Permutation sigma(n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    sigma[static_cast<std::size_t>(order[rank])] = static_cast<int>(rank);
  }
  return sigma;
}

Permutation permutation_from_displacements(std::span<const double> displacements) {
  std::vector<double> q(displacements.size());
  for (std::size_t j = 0; j < q.size(); ++j) {
    q[j] = static_cast<double>(j) + displacements[j];
  }
  return rank_permutation(q);
}

Permutation make_permutation(int n, int k, Rng& rng) {
  ShuffleSpec{n, k}.validate();
  if (n == 1) {
    throw SpecError("make_permutation needs n > 1");
  }
  std::uniform_real_distribution<double> dist(-static_cast<double>(k), static_cast<double>(k));
  std::vector<double> d(static_cast<std::size_t>(n));
  for (auto& v : d) v = dist(rng);
  return permutation_from_displacements(d);
}

PermutationPair make_pair(const ShuffleSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.is_identity()) return PermutationPair::identity(1);
  PermutationPair pair;
  pair.row_perms.reserve(static_cast<std::size_t>(spec.grid));
  pair.col_perms.reserve(static_cast<std::size_t>(spec.grid));
  for (int i = 0; i < spec.grid; ++i) pair.row_perms.push_back(make_permutation(spec.grid, spec.range, rng));
  for (int j = 0; j < spec.grid; ++j) pair.col_perms.push_back(make_permutation(spec.grid, spec.range, rng));
  return pair;
}

bool is_bijection(const Permutation& perm) {
  std::vector<char> seen(perm.size(), 0);
  for (int v : perm) {
    if (v < 0 || static_cast<std::size_t>(v) >= perm.size() || seen[static_cast<std::size_t>(v)]) return false;
    seen[static_cast<std::size_t>(v)] = 1;
  }
  return true;
}

namespace {

bool within_bound(const Permutation& perm, int k) {
  for (std::size_t j = 0; j < perm.size(); ++j) {
    if (std::abs(perm[j] - static_cast<int>(j)) > 2 * k) return false;
  }
  return true;
}

}  // namespace

bool verify_pair(const PermutationPair& pair, int k) {
  const auto n = pair.row_perms.size();
  if (n == 0 || pair.col_perms.size() != n) return false;
  for (const auto* perms : {&pair.row_perms, &pair.col_perms}) {
    for (const auto& p : *perms) {
      if (p.size() != n || !is_bijection(p) || !within_bound(p, k)) return false;
    }
  }
  return true;
}

std::vector<PatchIndex> patch_sources(const PermutationPair& pair) {
  const int n = pair.grid();
  auto at = [n](int r, int c) { return static_cast<std::size_t>(r * n + c); };

  std::vector<PatchIndex> after_rows(static_cast<std::size_t>(n * n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      after_rows[at(i, pair.row_perms[i][j])] = {i, j};
    }
  }
  std::vector<PatchIndex> after_cols(after_rows.size());
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      after_cols[at(pair.col_perms[j][i], j)] = after_rows[at(i, j)];
    }
  }
  return after_cols;
}

torch::Tensor apply_pair(const torch::Tensor& image, const PermutationPair& pair) {
  const int n = pair.grid();
  if (image.dim() < 2) throw DimensionError("apply_pair expects a tensor with (H, W) trailing dims");
  const auto h = image.size(-2);
  const auto w = image.size(-1);
  if (h % n != 0 || w % n != 0) {
    throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by shuffle grid " + std::to_string(n));
  }
  if (n == 1) return image;
  if (!verify_pair(pair, n)) throw SpecError("apply_pair: permutations are not bijections of the grid");

  const auto ph = h / n;
  const auto pw = w / n;
  const auto lead = image.sizes().slice(0, image.dim() - 2);
  const auto flat = image.reshape({-1, n, ph, n, pw}).permute({0, 1, 3, 2, 4}).reshape({-1, n * n, ph, pw});

  std::vector<int64_t> src;
  src.reserve(static_cast<std::size_t>(n * n));
  for (const auto& p : patch_sources(pair)) src.push_back(p.row * n + p.col);
  const auto index = torch::tensor(src, torch::kLong);

  auto out = flat.index_select(1, index).reshape({-1, n, n, ph, pw}).permute({0, 1, 3, 2, 4});
  std::vector<int64_t> shape(lead.begin(), lead.end());
  shape.push_back(h);
  shape.push_back(w);
  return out.reshape(shape);
}

ShuffleResult shuffle_image(const torch::Tensor& image, const ShuffleSpec& spec, Rng& rng) {
  spec.validate();
  if (image.dim() < 2) throw DimensionError("shuffle_image expects a tensor with (H, W) trailing dims");
  if (image.size(-2) % spec.grid != 0 || image.size(-1) % spec.grid != 0) {
    throw DimensionError("image " + std::to_string(image.size(-2)) + "x" + std::to_string(image.size(-1)) +
                         " is not divisible by shuffle grid " + std::to_string(spec.grid));
  }
  if (spec.is_identity()) return {image, PermutationPair::identity(1)};
  auto pair = make_pair(spec, rng);
  return {apply_pair(image, pair), std::move(pair)};
}

nlohmann::json to_json(const PermutationPair& pair) {
  return {{"grid", pair.grid()}, {"index_base", 0}, {"row_perms", pair.row_perms}, {"col_perms", pair.col_perms}};
}

PermutationPair pair_from_json(const nlohmann::json& j) {
  PermutationPair pair;
  j.at("row_perms").get_to(pair.row_perms);
  j.at("col_perms").get_to(pair.col_perms);
  return pair;
}

}  // namespace iagn::shuffle
