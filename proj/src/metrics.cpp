#include "shardplace/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <ostream>

#include "json.hpp"

namespace shardplace::metrics {

PartitionSummary summarize(std::span<const PlacementDecision> decisions, std::uint32_t n_shards) {
  if (n_shards == 0) throw std::invalid_argument("summarize: n_shards must be >= 1");
  PartitionSummary s;
  s.partition_sizes.assign(n_shards, 0);
  for (const PlacementDecision& d : decisions) {
    if (d.output_shard >= n_shards) {
      throw std::invalid_argument(fmt::format("decision {} names shard {} of {}", d.arrival_index, d.output_shard, n_shards));
    }
    ++s.partition_sizes[d.output_shard];
    if (d.is_coinbase()) continue;
    ++s.total_non_coinbase;
    if (d.cross_shard) ++s.cross_shard_count;
  }
  return s;
}

double cross_shard_ratio(std::span<const PlacementDecision> decisions) {
  std::uint64_t total = 0;
  std::uint64_t cross = 0;
  for (const PlacementDecision& d : decisions) {
    if (d.is_coinbase()) continue;
    ++total;
    if (d.cross_shard) ++cross;
  }
  if (total == 0) throw std::domain_error("cross-shard ratio undefined: no non-coinbase transactions");
  return static_cast<double>(cross) / static_cast<double>(total);
}

std::uint64_t load_imbalance(std::span<const std::uint64_t> partition_sizes) {
  if (partition_sizes.empty()) return 0;
  const auto [lo, hi] = std::minmax_element(partition_sizes.begin(), partition_sizes.end());
  return *hi - *lo;
}

namespace {

void close_bucket(std::vector<LoadBucket>& out, LoadBucket& current, const std::vector<std::uint64_t>& counts) {
  if (current.count == 0) return;
  current.shares.resize(counts.size());
  for (std::size_t s = 0; s < counts.size(); ++s) {
    current.shares[s] = static_cast<double>(counts[s]) / static_cast<double>(current.count);
  }
  out.push_back(std::move(current));
}

template <typename KeyOf>
std::vector<LoadBucket> bucketed(std::span<const PlacementDecision> decisions, std::uint32_t n_shards, KeyOf key_of) {
  if (n_shards == 0) throw std::invalid_argument("dynamic_loads: n_shards must be >= 1");
  std::vector<LoadBucket> out;
  LoadBucket current;
  std::vector<std::uint64_t> counts(n_shards, 0);
  bool open = false;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const PlacementDecision& d = decisions[i];
    if (d.output_shard >= n_shards) throw std::invalid_argument("dynamic_loads: shard out of range");
    const std::uint64_t bucket = key_of(i, d);
    if (!open || bucket != current.bucket) {
      close_bucket(out, current, counts);
      current = LoadBucket{bucket, 0, {}};
      std::fill(counts.begin(), counts.end(), 0);
      open = true;
    }
    ++current.count;
    ++counts[d.output_shard];
  }
  close_bucket(out, current, counts);
  return out;
}

}  // namespace

std::vector<LoadBucket> dynamic_loads(std::span<const PlacementDecision> decisions, std::uint32_t n_shards,
                                      std::uint64_t window) {
  if (window == 0) throw std::invalid_argument("dynamic_loads: window must be >= 1");
  return bucketed(decisions, n_shards, [window](std::size_t i, const PlacementDecision&) { return i / window; });
}

std::vector<LoadBucket> dynamic_loads_by_block(std::span<const PlacementDecision> decisions,
                                               const txgraph::TxStream& stream, std::uint32_t n_shards,
                                               std::uint64_t blocks_per_bucket) {
  if (blocks_per_bucket == 0) throw std::invalid_argument("dynamic_loads: window must be >= 1");
  if (decisions.size() > stream.size()) throw std::invalid_argument("dynamic_loads: more decisions than transactions");
  // Heights are non-decreasing in a valid stream, so buckets stay contiguous.
  return bucketed(decisions, n_shards, [&](std::size_t i, const PlacementDecision&) {
    return stream[i].block_height / blocks_per_bucket;
  });
}

void write_grid_csv(std::ostream& out, std::span<const GridRow> rows) {
  out << "algorithm,n_shards,cross_ratio,imbalance\n";
  for (const GridRow& r : rows) out << fmt::format("{},{},{},{}\n", r.algorithm, r.n_shards, r.cross_ratio, r.imbalance);
}

void write_dynamic_loads_csv(std::ostream& out, std::span<const LoadBucket> loads) {
  out << "bucket,shard,share\n";
  for (const LoadBucket& b : loads) {
    for (std::size_t s = 0; s < b.shares.size(); ++s) out << fmt::format("{},{},{}\n", b.bucket, s, b.shares[s]);
  }
}

void write_fitness_series_csv(std::ostream& out, std::span<const placement::SeriesPoint> series) {
  out << "bucket,max_fitness\n";
  for (const placement::SeriesPoint& p : series) out << fmt::format("{},{}\n", p.bucket, p.value);
}

std::vector<std::filesystem::path> export_report(const ReportBundle& bundle, const std::filesystem::path& dir,
                                                 bool force) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw ExportError(fmt::format("{} exists and is not a directory", dir.string()));
    if (!fs::is_empty(dir, ec) && !force) {
      throw ExportError(fmt::format("refusing to overwrite non-empty directory {} (use --force)", dir.string()));
    }
  }
  fs::create_directories(dir, ec);
  if (ec) throw ExportError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  nlohmann::ordered_json artifacts = nlohmann::ordered_json::array();
  std::vector<fs::path> written;
  const auto emit = [&](std::string_view name, std::string_view schema, const auto& body) {
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ExportError(fmt::format("cannot write {}", path.string()));
    body(out);
    if (!out) throw ExportError(fmt::format("write failed: {}", path.string()));
    artifacts.push_back({{"file", std::string(name)}, {"schema", std::string(schema)}});
    written.push_back(path);
  };

  if (bundle.partition) {
    emit("partition.csv", "shard,size", [&](std::ostream& out) {
      out << "shard,size\n";
      const auto& sizes = bundle.partition->partition_sizes;
      for (std::size_t s = 0; s < sizes.size(); ++s) out << s << ',' << sizes[s] << '\n';
    });
  }
  if (!bundle.grid.empty()) {
    emit("grid.csv", "algorithm,n_shards,cross_ratio,imbalance",
         [&](std::ostream& out) { write_grid_csv(out, bundle.grid); });
  }
  if (!bundle.dynamic_loads.empty()) {
    emit("dynamic_loads.csv", "bucket,shard,share",
         [&](std::ostream& out) { write_dynamic_loads_csv(out, bundle.dynamic_loads); });
  }
  if (!bundle.fitness_series.empty()) {
    emit("fitness_series.csv", "bucket,max_fitness",
         [&](std::ostream& out) { write_fitness_series_csv(out, bundle.fitness_series); });
  }
  if (bundle.parent_histogram) {
    emit("parent_histogram.csv", "parents,transactions",
         [&](std::ostream& out) { txgraph::write_histogram_csv(out, *bundle.parent_histogram); });
  }
  if (!bundle.one_parent_ratio.empty()) {
    emit("one_parent_ratio.csv", "bucket,fraction",
         [&](std::ostream& out) { txgraph::write_ratio_csv(out, bundle.one_parent_ratio); });
  }
  if (bundle.sim) {
    const std::pair<const char*, const char*> schemas[] = {
        {"throughput.csv", "second,completed"},
        {"latency.csv", "percentile,latency_ms"},
        {"shard_load.csv", "second,shard,busy_fraction,queue_length"},
        {"summary.json", "json"}};
    try {
      for (const fs::path& p : sim::write_report(*bundle.sim, dir)) {
        const std::string name = p.filename().string();
        std::string schema;
        for (const auto& [file, s] : schemas) {
          if (name == file) schema = s;
        }
        artifacts.push_back({{"file", name}, {"schema", schema}});
        written.push_back(p);
      }
    } catch (const std::runtime_error& e) {
      throw ExportError(e.what());
    }
  }

  nlohmann::ordered_json index;
  index["format"] = "shardplace-report";
  index["version"] = 1;
  index["algorithm"] = bundle.algorithm ? nlohmann::ordered_json(*bundle.algorithm) : nlohmann::ordered_json();
  index["cross_ratio"] = bundle.cross_ratio ? nlohmann::ordered_json(*bundle.cross_ratio) : nlohmann::ordered_json();
  if (bundle.partition) {
    index["load_imbalance"] = load_imbalance(bundle.partition->partition_sizes);
    index["cross_shard_count"] = bundle.partition->cross_shard_count;
    index["non_coinbase"] = bundle.partition->total_non_coinbase;
  }
  index["artifacts"] = std::move(artifacts);
  const fs::path index_path = dir / "index.json";
  std::ofstream out(index_path, std::ios::binary);
  if (!out) throw ExportError(fmt::format("cannot write {}", index_path.string()));
  out << index.dump(2) << '\n';
  return written;
}

}  // namespace shardplace::metrics
