#pragma once

// Transaction-stream data model for UTXO ledgers: ingestion, validation,
// canonical serialization and dependency statistics.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "shardplace/tx_id.hpp"

namespace shardplace::txgraph {

struct UtxoRef {
  TxId tx;
  std::uint32_t index = 0;

  auto operator<=>(const UtxoRef&) const = default;
};

struct Transaction {
  TxId id;
  std::vector<UtxoRef> inputs;  // empty iff coinbase
  std::uint32_t output_count = 1;
  std::uint64_t block_height = 0;
  std::uint64_t arrival_index = 0;

  bool is_coinbase() const { return inputs.empty(); }
  bool operator==(const Transaction&) const = default;
};

/// A parent placed before the stream starts, with the shard it was assigned to.
struct ExternalParent {
  TxId id;
  std::uint32_t shard = 0;

  bool operator==(const ExternalParent&) const = default;
};

/// One distinct parent of a transaction. `node` indexes the stream's node
/// space: [0, size()) are in-stream transactions, [size(), node_count()) are
/// external parents in sidecar order.
struct ParentEdge {
  std::uint32_t node = 0;
  std::uint32_t multiplicity = 0;  // inputs referencing this parent
};

/// Raised for malformed or invalid streams. `record()` is the 1-based line
/// (equivalently, stream position + 1) of the offending record, 0 if none.
class StreamError : public std::runtime_error {
 public:
  StreamError(const std::string& what, std::size_t record = 0)
      : std::runtime_error(what), record_(record) {}
  std::size_t record() const { return record_; }

 private:
  std::size_t record_;
};

/// Validated, immutable, topologically ordered transaction stream.
class TxStream {
 public:
  TxStream() = default;

  /// Validates the stream and reassigns arrival_index by position.
  /// Throws StreamError on: duplicate ids, a parent that is neither earlier
  /// in the stream nor external (a later in-stream parent is reported as an
  /// ordering error naming the child), output index out of range, double
  /// spends, and zero output counts.
  explicit TxStream(std::vector<Transaction> transactions,
                    std::vector<ExternalParent> external_parents = {});

  std::span<const Transaction> transactions() const { return txs_; }
  const Transaction& operator[](std::size_t i) const { return txs_[i]; }
  std::size_t size() const { return txs_.size(); }
  bool empty() const { return txs_.empty(); }

  std::span<const ExternalParent> external_parents() const { return externals_; }
  std::size_t node_count() const { return txs_.size() + externals_.size(); }
  bool is_external(std::uint32_t node) const { return node >= txs_.size(); }
  const ExternalParent& external(std::uint32_t node) const { return externals_[node - txs_.size()]; }
  const TxId& node_id(std::uint32_t node) const;
  std::optional<std::uint32_t> node_of(const TxId& id) const;

  /// Distinct parents of transaction `i`, in order of first reference.
  std::span<const ParentEdge> parents(std::size_t i) const;

 private:
  std::vector<Transaction> txs_;
  std::vector<ExternalParent> externals_;
  std::unordered_map<TxId, std::uint32_t> nodes_;
  std::vector<ParentEdge> edges_;
  std::vector<std::size_t> edge_offsets_;
};

enum class StreamFormat { JsonLines };

/// "jsonl" is the only tag. Throws std::invalid_argument otherwise.
StreamFormat parse_stream_format(std::string_view tag);

/// Loads a JSON-lines stream, plus an optional external-parents sidecar.
TxStream load_stream(const std::filesystem::path& path, StreamFormat format = StreamFormat::JsonLines,
                     const std::optional<std::filesystem::path>& external_parents = std::nullopt);
std::vector<ExternalParent> load_external_parents(const std::filesystem::path& path);

/// Parses records from a stream of lines; `source` only labels error messages.
std::vector<Transaction> parse_transactions(std::istream& in, std::string_view source = "<stream>");
std::vector<ExternalParent> parse_external_parents(std::istream& in, std::string_view source = "<sidecar>");

/// Canonical record: fixed field order, ", " and ": " separators, lowercase hex.
std::string to_json_line(const Transaction& tx);
std::string to_json_line(const ExternalParent& parent);
void write_stream(std::ostream& out, const TxStream& stream);
void write_stream(const std::filesystem::path& path, const TxStream& stream);
void write_external_parents(std::ostream& out, std::span<const ExternalParent> parents);

// --- dependency statistics ---

/// Parent ids with multiplicity = number of inputs referencing each parent.
std::map<TxId, std::uint32_t> parent_multiset(const Transaction& tx);

/// Distinct-parent count -> number of transactions. Coinbase excluded.
std::map<std::size_t, std::size_t> parent_count_histogram(const TxStream& stream);

struct RatioPoint {
  std::uint64_t bucket = 0;
  std::optional<double> fraction;  // absent when the bucket has no non-coinbase tx
};

/// Fraction of non-coinbase transactions with exactly one distinct parent,
/// per bucket of `window` consecutive transactions.
std::vector<RatioPoint> one_parent_ratio(const TxStream& stream, std::uint64_t window);

/// Half-open block-height range [begin, end).
struct BlockRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

/// For each range, the fraction of its non-coinbase transactions that spend an
/// output of the transaction immediately before them in arrival order.
/// Ranges must not overlap (std::invalid_argument).
std::vector<std::optional<double>> immediate_predecessor_ratio(const TxStream& stream,
                                                               std::span<const BlockRange> ranges);

void write_histogram_csv(std::ostream& out, const std::map<std::size_t, std::size_t>& histogram);
void write_ratio_csv(std::ostream& out, std::span<const RatioPoint> series);

}  // namespace shardplace::txgraph
