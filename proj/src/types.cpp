#include "cbrm/types.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "cbrm/errors.hpp"

namespace cbrm {

PoolSplit split_pool(const std::vector<PreferencePair>& pool,
                     const ExperimentConfig& config, std::uint64_t seed) {
  if (pool.empty()) throw ConfigError("split_pool: pool is empty");
  const std::size_t n = pool.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  const auto n_train = static_cast<std::size_t>(config.train_frac * static_cast<double>(n));
  const auto n_val = static_cast<std::size_t>(config.val_frac * static_cast<double>(n));

  PoolSplit split;
  split.train.reserve(n_train);
  split.val.reserve(n_val);
  split.test.reserve(n - n_train - n_val);
  for (std::size_t i = 0; i < n; ++i) {
    const PreferencePair& p = pool[idx[i]];
    if (i < n_train)
      split.train.push_back(p);
    else if (i < n_train + n_val)
      split.val.push_back(p);
    else
      split.test.push_back(p);
  }
  return split;
}

}  // namespace cbrm
