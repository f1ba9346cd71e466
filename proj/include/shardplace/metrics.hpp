#pragma once

// Partition-quality and load analytics over placement decisions, plus the
// report exporter that writes every artifact with an index.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shardplace/placement.hpp"
#include "shardplace/simulator.hpp"
#include "shardplace/txgraph.hpp"

namespace shardplace::metrics {

using placement::PlacementDecision;

struct PartitionSummary {
  std::vector<std::uint64_t> partition_sizes;
  std::uint64_t cross_shard_count = 0;
  std::uint64_t total_non_coinbase = 0;
};

PartitionSummary summarize(std::span<const PlacementDecision> decisions, std::uint32_t n_shards);

/// Cross-shard count over non-coinbase count. Throws std::domain_error when
/// there is no non-coinbase decision.
double cross_shard_ratio(std::span<const PlacementDecision> decisions);

/// max - min partition size (0 for an empty vector).
std::uint64_t load_imbalance(std::span<const std::uint64_t> partition_sizes);

struct LoadBucket {
  std::uint64_t bucket = 0;
  std::uint64_t count = 0;
  std::vector<double> shares;  // per shard, sums to 1 when count > 0
};

/// Shard shares per bucket of `window` consecutive decisions.
std::vector<LoadBucket> dynamic_loads(std::span<const PlacementDecision> decisions, std::uint32_t n_shards,
                                      std::uint64_t window);
/// Same, bucketed by block height (`blocks_per_bucket` heights per bucket).
std::vector<LoadBucket> dynamic_loads_by_block(std::span<const PlacementDecision> decisions,
                                               const txgraph::TxStream& stream, std::uint32_t n_shards,
                                               std::uint64_t blocks_per_bucket);

struct GridRow {
  std::string algorithm;
  std::uint32_t n_shards = 0;
  double cross_ratio = 0.0;
  std::uint64_t imbalance = 0;
};

/// `algorithm,n_shards,cross_ratio,imbalance`
void write_grid_csv(std::ostream& out, std::span<const GridRow> rows);
/// `bucket,shard,share`
void write_dynamic_loads_csv(std::ostream& out, std::span<const LoadBucket> loads);
/// `bucket,max_fitness`
void write_fitness_series_csv(std::ostream& out, std::span<const placement::SeriesPoint> series);

/// Whatever subset of metrics a run produced.
struct ReportBundle {
  std::optional<std::string> algorithm;
  std::optional<PartitionSummary> partition;
  std::optional<double> cross_ratio;
  std::vector<GridRow> grid;
  std::vector<LoadBucket> dynamic_loads;
  std::vector<placement::SeriesPoint> fitness_series;
  std::optional<std::map<std::size_t, std::size_t>> parent_histogram;
  std::vector<txgraph::RatioPoint> one_parent_ratio;
  std::optional<sim::SimReport> sim;
};

class ExportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes one CSV per present metric and `index.json` listing them. Refuses a
/// non-empty existing directory unless `force`. Returns the artifact paths
/// (index excluded).
std::vector<std::filesystem::path> export_report(const ReportBundle& bundle, const std::filesystem::path& dir,
                                                 bool force = false);

}  // namespace shardplace::metrics
