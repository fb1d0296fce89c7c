#pragma once

#include <string>
#include <vector>

#include "ctseg/error.hpp"
#include "ctseg/rng.hpp"

namespace ctseg {

enum class Branch { labeled, unlabeled };

struct EpochStep {
  int index = 0;
  Branch branch = Branch::labeled;
  std::string case_id;
};

// Strictly alternating labeled/unlabeled schedule covering every labeled
// case exactly once per epoch.
struct EpochPlan {
  std::vector<EpochStep> steps;
};

namespace detail {

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (size_t i = items.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace detail

// Labeled cases in shuffled order, interleaved 1:1 with unlabeled draws
// sampled without replacement (with replacement when the unlabeled pool is
// smaller than the labeled one). include_unlabeled = false drops the
// unlabeled branch entirely (fully supervised training).
inline EpochPlan build_epoch_plan(const std::vector<std::string>& labeled_ids,
                                  const std::vector<std::string>& unlabeled_ids, int epoch,
                                  uint64_t seed, bool include_unlabeled = true) {
  require(!labeled_ids.empty(), "build_epoch_plan: labeled pool is empty");
  if (include_unlabeled)
    require(!unlabeled_ids.empty(), "build_epoch_plan: unlabeled pool is empty");

  Rng rng(mix_seed(seed, hash_tag("epoch-plan"), static_cast<uint64_t>(epoch)));
  std::vector<std::string> labeled = labeled_ids;
  detail::shuffle(labeled, rng);

  std::vector<std::string> unlabeled;
  if (include_unlabeled) {
    if (unlabeled_ids.size() >= labeled.size()) {
      std::vector<std::string> pool = unlabeled_ids;
      detail::shuffle(pool, rng);
      unlabeled.assign(pool.begin(), pool.begin() + static_cast<int64_t>(labeled.size()));
    } else {
      for (size_t i = 0; i < labeled.size(); ++i)
        unlabeled.push_back(unlabeled_ids[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(unlabeled_ids.size()) - 1))]);
    }
  }

  EpochPlan plan;
  int index = 0;
  for (size_t i = 0; i < labeled.size(); ++i) {
    plan.steps.push_back({index++, Branch::labeled, labeled[i]});
    if (include_unlabeled) plan.steps.push_back({index++, Branch::unlabeled, unlabeled[i]});
  }
  return plan;
}

}  // namespace ctseg
