#include "shardplace/txgraph.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include "json.hpp"
#include <ostream>
#include <unordered_set>

namespace shardplace::txgraph {

namespace {

using nlohmann::json;

struct UtxoRefHash {
  std::size_t operator()(const UtxoRef& ref) const noexcept {
    return TxIdHash{}(ref.tx) ^ (std::size_t{ref.index} * 0xff51afd7ed558ccdULL);
  }
};

std::string short_id(const TxId& id) { return id.to_hex(); }

[[noreturn]] void malformed(std::string_view source, std::size_t line, const std::string& why) {
  throw StreamError(fmt::format("{}:{}: malformed record: {}", source, line, why), line);
}

template <typename T>
T unsigned_field(const json& obj, const char* key, std::string_view source, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) malformed(source, line, fmt::format("missing field \"{}\"", key));
  if (!it->is_number_unsigned()) malformed(source, line, fmt::format("field \"{}\" must be a non-negative integer", key));
  const auto v = it->get<std::uint64_t>();
  if (v > std::numeric_limits<T>::max()) malformed(source, line, fmt::format("field \"{}\" out of range", key));
  return static_cast<T>(v);
}

TxId id_field(const json& obj, const char* key, std::string_view source, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) malformed(source, line, fmt::format("missing field \"{}\"", key));
  if (!it->is_string()) malformed(source, line, fmt::format("field \"{}\" must be a string", key));
  try {
    return TxId::from_hex(it->get_ref<const std::string&>());
  } catch (const std::invalid_argument& e) {
    malformed(source, line, fmt::format("field \"{}\": {}", key, e.what()));
  }
}

void expect_keys(const json& obj, std::initializer_list<const char*> keys, std::string_view source,
                 std::size_t line) {
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* allowed) { return k == allowed; })) {
      malformed(source, line, fmt::format("unknown field \"{}\"", k));
    }
  }
}

json parse_line(std::string& line, std::string_view source, std::size_t lineno) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.empty()) malformed(source, lineno, "empty line");
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    malformed(source, lineno, e.what());
  }
  if (!obj.is_object()) malformed(source, lineno, "record is not a JSON object");
  return obj;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StreamError(fmt::format("cannot open {}", path.string()));
  return in;
}

}  // namespace

TxStream::TxStream(std::vector<Transaction> transactions, std::vector<ExternalParent> external_parents)
    : txs_(std::move(transactions)), externals_(std::move(external_parents)) {
  const std::size_t n = txs_.size();
  if (n + externals_.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw StreamError("stream too large");
  }
  nodes_.reserve(n + externals_.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!nodes_.emplace(txs_[i].id, static_cast<std::uint32_t>(i)).second) {
      throw StreamError(fmt::format("record {}: duplicate transaction id {}", i + 1, short_id(txs_[i].id)), i + 1);
    }
  }
  for (std::size_t k = 0; k < externals_.size(); ++k) {
    if (!nodes_.emplace(externals_[k].id, static_cast<std::uint32_t>(n + k)).second) {
      throw StreamError(fmt::format("external parent {} is listed twice or also appears in the stream",
                                    short_id(externals_[k].id)));
    }
  }

  std::unordered_set<UtxoRef, UtxoRefHash> spent;
  edge_offsets_.reserve(n + 1);
  edge_offsets_.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    Transaction& tx = txs_[i];
    tx.arrival_index = i;
    if (tx.output_count == 0) {
      throw StreamError(fmt::format("record {}: transaction {} has no outputs", i + 1, short_id(tx.id)), i + 1);
    }
    const std::size_t first_edge = edges_.size();
    for (const UtxoRef& input : tx.inputs) {
      const auto it = nodes_.find(input.tx);
      if (it == nodes_.end()) {
        throw StreamError(fmt::format("record {}: transaction {} spends unknown parent {} (not in stream, not "
                                      "an external parent)",
                                      i + 1, short_id(tx.id), short_id(input.tx)),
                          i + 1);
      }
      const std::uint32_t node = it->second;
      if (node < n) {
        if (node >= i) {
          throw StreamError(fmt::format("record {}: ordering violation: transaction {} spends {} which appears "
                                        "at record {}",
                                        i + 1, short_id(tx.id), short_id(input.tx), node + 1),
                            i + 1);
        }
        if (input.index >= txs_[node].output_count) {
          throw StreamError(fmt::format("record {}: transaction {} spends output {} of {} which has {} outputs",
                                        i + 1, short_id(tx.id), input.index, short_id(input.tx),
                                        txs_[node].output_count),
                            i + 1);
        }
      }
      if (!spent.insert(input).second) {
        throw StreamError(fmt::format("record {}: double spend of {}:{} by transaction {}", i + 1,
                                      short_id(input.tx), input.index, short_id(tx.id)),
                          i + 1);
      }
      auto edge = std::find_if(edges_.begin() + static_cast<std::ptrdiff_t>(first_edge), edges_.end(),
                               [&](const ParentEdge& e) { return e.node == node; });
      if (edge == edges_.end()) {
        edges_.push_back({node, 1});
      } else {
        ++edge->multiplicity;
      }
    }
    edge_offsets_.push_back(edges_.size());
  }
}

const TxId& TxStream::node_id(std::uint32_t node) const {
  return is_external(node) ? external(node).id : txs_[node].id;
}

std::optional<std::uint32_t> TxStream::node_of(const TxId& id) const {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) return std::nullopt;
  return it->second;
}

std::span<const ParentEdge> TxStream::parents(std::size_t i) const {
  return std::span<const ParentEdge>(edges_).subspan(edge_offsets_[i], edge_offsets_[i + 1] - edge_offsets_[i]);
}

StreamFormat parse_stream_format(std::string_view tag) {
  if (tag == "jsonl") return StreamFormat::JsonLines;
  throw std::invalid_argument(fmt::format("unknown stream format \"{}\" (expected jsonl)", tag));
}

std::vector<Transaction> parse_transactions(std::istream& in, std::string_view source) {
  std::vector<Transaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const json obj = parse_line(line, source, lineno);
    expect_keys(obj, {"id", "inputs", "outs", "block"}, source, lineno);
    Transaction tx;
    tx.id = id_field(obj, "id", source, lineno);
    const auto inputs = obj.find("inputs");
    if (inputs == obj.end() || !inputs->is_array()) malformed(source, lineno, "field \"inputs\" must be an array");
    tx.inputs.reserve(inputs->size());
    for (const json& input : *inputs) {
      if (!input.is_object()) malformed(source, lineno, "input is not an object");
      expect_keys(input, {"tx", "idx"}, source, lineno);
      tx.inputs.push_back({id_field(input, "tx", source, lineno),
                           unsigned_field<std::uint32_t>(input, "idx", source, lineno)});
    }
    tx.output_count = unsigned_field<std::uint32_t>(obj, "outs", source, lineno);
    if (tx.output_count == 0) malformed(source, lineno, "field \"outs\" must be at least 1");
    tx.block_height = unsigned_field<std::uint64_t>(obj, "block", source, lineno);
    tx.arrival_index = out.size();
    out.push_back(std::move(tx));
  }
  return out;
}

std::vector<ExternalParent> parse_external_parents(std::istream& in, std::string_view source) {
  std::vector<ExternalParent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const json obj = parse_line(line, source, lineno);
    expect_keys(obj, {"id", "shard"}, source, lineno);
    out.push_back({id_field(obj, "id", source, lineno), unsigned_field<std::uint32_t>(obj, "shard", source, lineno)});
  }
  return out;
}

std::vector<ExternalParent> load_external_parents(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_external_parents(in, path.string());
}

TxStream load_stream(const std::filesystem::path& path, StreamFormat format,
                     const std::optional<std::filesystem::path>& external_parents) {
  if (format != StreamFormat::JsonLines) throw std::invalid_argument("unsupported stream format");
  auto in = open_input(path);
  auto txs = parse_transactions(in, path.string());
  std::vector<ExternalParent> externals;
  if (external_parents) externals = load_external_parents(*external_parents);
  try {
    return TxStream(std::move(txs), std::move(externals));
  } catch (const StreamError& e) {
    throw StreamError(fmt::format("{}: {}", path.string(), e.what()), e.record());
  }
}

std::string to_json_line(const Transaction& tx) {
  std::string inputs;
  for (std::size_t i = 0; i < tx.inputs.size(); ++i) {
    if (i) inputs += ", ";
    inputs += fmt::format(R"({{"tx": "{}", "idx": {}}})", tx.inputs[i].tx.to_hex(), tx.inputs[i].index);
  }
  return fmt::format(R"({{"id": "{}", "inputs": [{}], "outs": {}, "block": {}}})", tx.id.to_hex(), inputs,
                     tx.output_count, tx.block_height);
}

std::string to_json_line(const ExternalParent& parent) {
  return fmt::format(R"({{"id": "{}", "shard": {}}})", parent.id.to_hex(), parent.shard);
}

void write_stream(std::ostream& out, const TxStream& stream) {
  for (const Transaction& tx : stream.transactions()) out << to_json_line(tx) << '\n';
}

void write_stream(const std::filesystem::path& path, const TxStream& stream) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  write_stream(out, stream);
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

void write_external_parents(std::ostream& out, std::span<const ExternalParent> parents) {
  for (const ExternalParent& p : parents) out << to_json_line(p) << '\n';
}

std::map<TxId, std::uint32_t> parent_multiset(const Transaction& tx) {
  std::map<TxId, std::uint32_t> out;
  for (const UtxoRef& input : tx.inputs) ++out[input.tx];
  return out;
}

std::map<std::size_t, std::size_t> parent_count_histogram(const TxStream& stream) {
  std::map<std::size_t, std::size_t> histogram;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (stream[i].is_coinbase()) continue;
    ++histogram[stream.parents(i).size()];
  }
  return histogram;
}

std::vector<RatioPoint> one_parent_ratio(const TxStream& stream, std::uint64_t window) {
  if (window == 0) throw std::invalid_argument("one_parent_ratio: window must be >= 1");
  std::vector<RatioPoint> series;
  for (std::size_t start = 0; start < stream.size(); start += window) {
    const std::size_t end = std::min<std::size_t>(stream.size(), start + window);
    std::size_t eligible = 0, single = 0;
    for (std::size_t i = start; i < end; ++i) {
      if (stream[i].is_coinbase()) continue;
      ++eligible;
      if (stream.parents(i).size() == 1) ++single;
    }
    RatioPoint point{start / window, std::nullopt};
    if (eligible > 0) point.fraction = static_cast<double>(single) / static_cast<double>(eligible);
    series.push_back(point);
  }
  return series;
}

std::vector<std::optional<double>> immediate_predecessor_ratio(const TxStream& stream,
                                                               std::span<const BlockRange> ranges) {
  std::vector<std::size_t> order(ranges.size());
  for (std::size_t r = 0; r < ranges.size(); ++r) {
    if (ranges[r].begin > ranges[r].end) throw std::invalid_argument("immediate_predecessor_ratio: begin > end");
    order[r] = r;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranges[a].begin < ranges[b].begin; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (ranges[order[k - 1]].end > ranges[order[k]].begin) {
      throw std::invalid_argument("immediate_predecessor_ratio: ranges overlap");
    }
  }

  std::vector<std::size_t> eligible(ranges.size(), 0), hits(ranges.size(), 0);
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Transaction& tx = stream[i];
    if (tx.is_coinbase()) continue;
    // Last range whose begin <= height.
    auto it = std::upper_bound(order.begin(), order.end(), tx.block_height,
                               [&](std::uint64_t h, std::size_t r) { return h < ranges[r].begin; });
    if (it == order.begin()) continue;
    const std::size_t r = *std::prev(it);
    if (tx.block_height >= ranges[r].end) continue;
    ++eligible[r];
    if (i > 0) {
      const TxId& prev = stream[i - 1].id;
      if (std::any_of(tx.inputs.begin(), tx.inputs.end(), [&](const UtxoRef& in) { return in.tx == prev; })) {
        ++hits[r];
      }
    }
  }
  std::vector<std::optional<double>> out(ranges.size());
  for (std::size_t r = 0; r < ranges.size(); ++r) {
    if (eligible[r] > 0) out[r] = static_cast<double>(hits[r]) / static_cast<double>(eligible[r]);
  }
  return out;
}

void write_histogram_csv(std::ostream& out, const std::map<std::size_t, std::size_t>& histogram) {
  out << "parents,transactions\n";
  for (const auto& [parents, count] : histogram) out << parents << ',' << count << '\n';
}

void write_ratio_csv(std::ostream& out, std::span<const RatioPoint> series) {
  out << "bucket,fraction\n";
  for (const RatioPoint& p : series) {
    out << p.bucket << ',';
    if (p.fraction) out << fmt::format("{}", *p.fraction);
    out << '\n';
  }
}

}  // namespace shardplace::txgraph
