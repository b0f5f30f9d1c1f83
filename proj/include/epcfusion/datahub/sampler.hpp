#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "epcfusion/datahub/bands.hpp"
#include "epcfusion/datahub/records.hpp"
#include "epcfusion/error.hpp"
#include "epcfusion/random.hpp"

namespace epcfusion::datahub {

// Joint (SAP partition, EI partition) label in [0, 25).
inline int joint_partition_label(const PropertyRecord& r, const BandTable& table) {
  return table.partition_of_score(r.sap) * static_cast<int>(kNumPartitions) + table.partition_of_score(r.ei);
}

/// Largest-remainder apportionment of `slots` over `counts`. Ties in the
/// remainder go to the lower label index. Result sums to `slots` when the
/// counts are not all zero.
inline std::vector<std::size_t> allocate_slots(std::span<const std::size_t> counts, std::size_t slots) {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  std::vector<std::size_t> out(counts.size(), 0);
  if (total == 0 || slots == 0) return out;
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (numerator remainder, label)
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    // Exact integer arithmetic: slots * counts[j] / total.
    const unsigned __int128 num = static_cast<unsigned __int128>(slots) * counts[j];
    out[j] = static_cast<std::size_t>(num / total);
    remainders.emplace_back(static_cast<std::size_t>(num % total), j);
    assigned += out[j];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < slots && k < remainders.size(); ++k, ++assigned) {
    ++out[remainders[k].second];
  }
  return out;
}

/// Partition-balanced batching without replacement. Each batch draws from the
/// per-label pools in proportion to what remains, so every batch mirrors the
/// training label proportions and one epoch uses every record exactly once.
class BalancedBatcher {
 public:
  BalancedBatcher(std::vector<int> labels, std::size_t batch_size, std::uint64_t seed)
      : labels_(std::move(labels)), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ == 0) fail(ErrorKind::InvalidConfig, "batch size must be > 0");
    if (labels_.empty()) fail(ErrorKind::EmptyInput, "no training records to batch");
    for (int l : labels_) {
      if (l < 0) fail(ErrorKind::InvalidConfig, "negative batch label");
      num_labels_ = std::max(num_labels_, static_cast<std::size_t>(l) + 1);
    }
  }

  std::size_t size() const { return labels_.size(); }
  std::size_t batch_size() const { return batch_size_; }

  // Batches of positions into the label list for the given epoch.
  std::vector<std::vector<std::size_t>> epoch(std::uint64_t epoch_index) const {
    std::vector<std::vector<std::size_t>> pools(num_labels_);
    for (std::size_t i = 0; i < labels_.size(); ++i) pools[static_cast<std::size_t>(labels_[i])].push_back(i);
    Rng rng(mix64(seed_, epoch_index + 1));
    for (auto& pool : pools) rng.shuffle(std::span<std::size_t>(pool));

    std::vector<std::size_t> remaining(num_labels_);
    std::vector<std::size_t> cursor(num_labels_, 0);
    for (std::size_t j = 0; j < num_labels_; ++j) remaining[j] = pools[j].size();
    std::size_t left = labels_.size();

    std::vector<std::vector<std::size_t>> batches;
    while (left > 0) {
      const std::size_t take = std::min(batch_size_, left);
      const std::vector<std::size_t> quota = allocate_slots(remaining, take);
      std::vector<std::size_t> batch;
      batch.reserve(take);
      for (std::size_t j = 0; j < num_labels_; ++j) {
        for (std::size_t k = 0; k < quota[j]; ++k) batch.push_back(pools[j][cursor[j]++]);
        remaining[j] -= quota[j];
      }
      rng.shuffle(std::span<std::size_t>(batch));
      left -= take;
      batches.push_back(std::move(batch));
    }
    return batches;
  }

 private:
  std::vector<int> labels_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t num_labels_ = 0;
};

}  // namespace epcfusion::datahub
