#include "shardplace/placement.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace shardplace::placement {

namespace {

using txgraph::ParentEdge;
using txgraph::TxStream;

constexpr double kMaxScore = std::numeric_limits<double>::max();

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

FitnessArray one_hot(std::uint32_t n_shards, ShardId shard) {
  FitnessArray out(n_shards, 0.0);
  out[shard] = 1.0;
  return out;
}

void require_placed(const TxStream& stream, std::size_t tx, const PlacerState& state, std::uint32_t node) {
  if (state.shard_of[node] == PlacerState::kUnplaced) {
    throw std::logic_error(fmt::format("transaction {} depends on unplaced parent {}", stream[tx].id.to_hex(),
                                       stream.node_id(node).to_hex()));
  }
}

// Amplified scores can outgrow double; saturating keeps argmax meaningful.
void saturate(FitnessArray& f) {
  for (double& v : f) {
    if (!(v <= kMaxScore)) v = kMaxScore;
  }
}

}  // namespace

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::Hp: return "hp";
    case Algorithm::Greedy: return "greedy";
    case Algorithm::T2S: return "t2s";
    case Algorithm::V2: return "v2";
    case Algorithm::OptNorm: return "optnorm";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view tag) {
  for (Algorithm a : {Algorithm::Hp, Algorithm::Greedy, Algorithm::T2S, Algorithm::V2, Algorithm::OptNorm}) {
    if (tag == to_string(a)) return a;
  }
  throw std::invalid_argument(fmt::format("unknown algorithm \"{}\" (expected hp, greedy, t2s, v2, optnorm)", tag));
}

bool uses_fitness(Algorithm algorithm) {
  return algorithm == Algorithm::T2S || algorithm == Algorithm::V2 || algorithm == Algorithm::OptNorm;
}

ShardId place_hp(const TxId& id, std::uint32_t n_shards) {
  if (n_shards == 0) throw std::invalid_argument("place_hp: n_shards must be >= 1");
  if (n_shards == 1) return 0;
  const int bits = std::bit_width(n_shards - 1);  // ceil(log2 n_shards)
  const std::uint64_t prefix = id.prefix64() >> (64 - bits);
  return static_cast<ShardId>(prefix % n_shards);
}

PlacerState make_state(const TxStream& stream, Algorithm algorithm, std::uint32_t n_shards) {
  if (n_shards == 0) throw std::invalid_argument("n_shards must be >= 1");
  PlacerState state;
  state.algorithm = algorithm;
  state.n_shards = n_shards;
  state.partition_sizes.assign(n_shards, 0);
  state.shard_of.assign(stream.node_count(), PlacerState::kUnplaced);
  state.children_seen.assign(stream.node_count(), 0);
  if (uses_fitness(algorithm)) state.fitness.assign(stream.node_count() * n_shards, 0.0);
  for (std::size_t k = 0; k < stream.external_parents().size(); ++k) {
    const auto& parent = stream.external_parents()[k];
    if (parent.shard >= n_shards) {
      throw std::invalid_argument(fmt::format("external parent {} assigned to shard {} but only {} shards exist",
                                              parent.id.to_hex(), parent.shard, n_shards));
    }
    const auto node = static_cast<std::uint32_t>(stream.size() + k);
    state.shard_of[node] = parent.shard;
    if (state.tracks_fitness()) state.fitness[std::size_t{node} * n_shards + parent.shard] = 1.0;
  }
  return state;
}

FitnessArray compute_fitness_t2s(const TxStream& stream, std::size_t tx, const PlacerState& state) {
  if (stream[tx].is_coinbase()) return one_hot(state.n_shards, place_hp(stream[tx].id, state.n_shards));
  FitnessArray out(state.n_shards, 0.0);
  for (const ParentEdge& edge : stream.parents(tx)) {
    require_placed(stream, tx, state, edge.node);
    const double weight = 1.0 / static_cast<double>(state.children_seen[edge.node] + 1);
    const auto parent = state.fitness_of(edge.node);
    for (std::uint32_t s = 0; s < state.n_shards; ++s) out[s] += weight * parent[s];
  }
  saturate(out);
  return out;
}

FitnessArray compute_fitness_v2(const TxStream& stream, std::size_t tx, const PlacerState& state) {
  if (stream[tx].is_coinbase()) return one_hot(state.n_shards, place_hp(stream[tx].id, state.n_shards));
  FitnessArray out(state.n_shards, 0.0);
  for (const ParentEdge& edge : stream.parents(tx)) {
    require_placed(stream, tx, state, edge.node);
    const double k = edge.multiplicity;
    const double weight = k / (static_cast<double>(state.children_seen[edge.node]) + k);
    const auto parent = state.fitness_of(edge.node);
    for (std::uint32_t s = 0; s < state.n_shards; ++s) out[s] += weight * parent[s];
  }
  saturate(out);
  return out;
}

ShardId select_shard(std::span<const double> fitness, std::span<const std::uint64_t> partition_sizes,
                     std::span<const ShardFeedback> feedback, double feedback_scale) {
  if (fitness.size() != partition_sizes.size()) {
    throw std::invalid_argument("select_shard: fitness and partition sizes differ in length");
  }
  if (!feedback.empty() && feedback.size() != fitness.size()) {
    throw std::invalid_argument("select_shard: feedback length differs from shard count");
  }
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < fitness.size(); ++i) {
    double score = fitness[i] / static_cast<double>(std::max<std::uint64_t>(partition_sizes[i], 1));
    if (!feedback.empty()) score /= 1.0 + feedback[i].queue_length / feedback_scale;
    if (score > best_score) {
      best = i;
      best_score = score;
    }
  }
  return static_cast<ShardId>(best);
}

FitnessArray normalize(std::span<const double> fitness) {
  double sum = 0.0;
  for (double v : fitness) sum += v;
  if (!(sum > 0.0)) throw std::domain_error("cannot normalize a fitness array whose sum is not positive");
  FitnessArray out(fitness.begin(), fitness.end());
  if (std::isinf(sum)) {
    // Saturated elements share the mass evenly; the rest vanish.
    for (double& v : out) v = (v == kMaxScore) ? 1.0 : 0.0;
    sum = 0.0;
    for (double v : out) sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

Placer::Placer(const TxStream& stream, Algorithm algorithm, std::uint32_t n_shards)
    : stream_(&stream), state_(make_state(stream, algorithm, n_shards)) {}

void Placer::restore(PlacerState state) {
  if (state.n_shards == 0 || state.shard_of.size() != stream_->node_count() ||
      state.children_seen.size() != stream_->node_count() || state.partition_sizes.size() != state.n_shards ||
      state.placed > stream_->size()) {
    throw std::invalid_argument("placer state does not match this stream");
  }
  state_ = std::move(state);
}

PlacementDecision Placer::place_next(std::span<const ShardFeedback> feedback, double feedback_scale) {
  if (done()) throw std::logic_error("place_next: stream exhausted");
  const std::size_t index = state_.placed;
  const auto& tx = (*stream_)[index];
  const std::uint32_t n = state_.n_shards;

  switch (state_.algorithm) {
    case Algorithm::Hp:
      return finish(index, place_hp(tx.id, n), 0.0);

    case Algorithm::Greedy: {
      if (tx.is_coinbase()) return finish(index, place_hp(tx.id, n), 0.0);
      std::vector<std::uint32_t> votes(n, 0);
      for (const ParentEdge& edge : stream_->parents(index)) {
        require_placed(*stream_, index, state_, edge.node);
        ++votes[static_cast<std::size_t>(state_.shard_of[edge.node])];
      }
      const auto best = std::max_element(votes.begin(), votes.end()) - votes.begin();
      return finish(index, static_cast<ShardId>(best), 0.0);
    }

    case Algorithm::T2S:
    case Algorithm::V2:
    case Algorithm::OptNorm: {
      FitnessArray fitness = state_.algorithm == Algorithm::V2 ? compute_fitness_v2(*stream_, index, state_)
                                                               : compute_fitness_t2s(*stream_, index, state_);
      const ShardId shard = tx.is_coinbase()
                                ? static_cast<ShardId>(argmax(fitness))
                                : select_shard(fitness, state_.partition_sizes, feedback, feedback_scale);
      if (state_.algorithm == Algorithm::OptNorm) fitness = normalize(fitness);
      std::copy(fitness.begin(), fitness.end(), state_.fitness.begin() + static_cast<std::ptrdiff_t>(index * n));
      return finish(index, shard, *std::max_element(fitness.begin(), fitness.end()));
    }
  }
  throw std::logic_error("unknown algorithm");
}

PlacementDecision Placer::finish(std::size_t index, ShardId shard, double fitness_max) {
  const auto& tx = (*stream_)[index];
  PlacementDecision d;
  d.arrival_index = index;
  d.tx = tx.id;
  d.output_shard = shard;
  d.fitness_max = fitness_max;
  for (const ParentEdge& edge : stream_->parents(index)) {
    require_placed(*stream_, index, state_, edge.node);
    d.input_shards.push_back(static_cast<ShardId>(state_.shard_of[edge.node]));
    state_.children_seen[edge.node] += state_.algorithm == Algorithm::V2 ? edge.multiplicity : 1;
  }
  std::sort(d.input_shards.begin(), d.input_shards.end());
  d.input_shards.erase(std::unique(d.input_shards.begin(), d.input_shards.end()), d.input_shards.end());
  d.cross_shard = std::any_of(d.input_shards.begin(), d.input_shards.end(), [&](ShardId s) { return s != shard; });
  state_.shard_of[index] = shard;
  ++state_.partition_sizes[shard];
  ++state_.placed;
  return d;
}

std::vector<PlacementDecision> place_stream(const TxStream& stream, Algorithm algorithm, std::uint32_t n_shards) {
  Placer placer(stream, algorithm, n_shards);
  std::vector<PlacementDecision> out;
  out.reserve(stream.size());
  while (!placer.done()) out.push_back(placer.place_next());
  return out;
}

std::set<TxId> detect_aggregating(const TxStream& stream, const PlacerState& state, std::uint32_t parent_threshold) {
  if (parent_threshold < 2) throw std::invalid_argument("detect_aggregating: threshold must be >= 2");
  std::set<TxId> out;
  std::vector<std::uint32_t> votes(state.n_shards);
  for (std::size_t i = 0; i < state.placed; ++i) {
    const auto parents = stream.parents(i);
    if (parents.size() < parent_threshold) continue;
    std::fill(votes.begin(), votes.end(), 0);
    for (const ParentEdge& edge : parents) {
      const std::size_t shard = state.tracks_fitness() ? argmax(state.fitness_of(edge.node))
                                                       : static_cast<std::size_t>(state.shard_of[edge.node]);
      ++votes[shard];
    }
    if (*std::max_element(votes.begin(), votes.end()) >= parent_threshold) out.insert(stream[i].id);
  }
  return out;
}

std::set<TxId> detect_tainted(const TxStream& stream, const PlacerState& state, double score_threshold) {
  if (!(score_threshold > 1.0)) throw std::invalid_argument("detect_tainted: threshold must be > 1");
  std::set<TxId> out;
  if (!state.tracks_fitness()) return out;
  for (std::size_t i = 0; i < state.placed; ++i) {
    const auto f = state.fitness_of(static_cast<std::uint32_t>(i));
    if (*std::max_element(f.begin(), f.end()) > score_threshold) out.insert(stream[i].id);
  }
  return out;
}

std::vector<SeriesPoint> max_fitness_series(std::span<const PlacementDecision> decisions, std::uint64_t window) {
  if (window == 0) throw std::invalid_argument("max_fitness_series: window must be >= 1");
  std::vector<SeriesPoint> out;
  for (std::size_t start = 0; start < decisions.size(); start += window) {
    const std::size_t end = std::min<std::size_t>(decisions.size(), start + window);
    double best = 0.0;
    for (std::size_t i = start; i < end; ++i) best = std::max(best, decisions[i].fitness_max);
    out.push_back({start / window, best});
  }
  return out;
}

void write_decisions_csv(std::ostream& out, std::span<const PlacementDecision> decisions, Algorithm algorithm) {
  out << "arrival_index,tx_id,algorithm,output_shard,cross_shard,fitness_max\n";
  const auto tag = to_string(algorithm);
  for (const PlacementDecision& d : decisions) {
    out << fmt::format("{},{},{},{},{},{}\n", d.arrival_index, d.tx.to_hex(), tag, d.output_shard,
                       d.cross_shard ? 1 : 0, d.fitness_max);
  }
}

DecisionFile read_decisions_csv(std::istream& in, const TxStream& stream, std::uint32_t n_shards) {
  std::string line;
  if (!std::getline(in, line) || line != "arrival_index,tx_id,algorithm,output_shard,cross_shard,fitness_max") {
    throw std::runtime_error("decisions CSV: missing or unexpected header");
  }
  DecisionFile file;
  std::vector<std::int64_t> shard_of(stream.node_count(), PlacerState::kUnplaced);
  for (std::size_t k = 0; k < stream.external_parents().size(); ++k) {
    shard_of[stream.size() + k] = stream.external_parents()[k].shard;
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 6) throw std::runtime_error(fmt::format("decisions CSV row {}: expected 6 columns", row + 1));
    if (row >= stream.size()) throw std::runtime_error("decisions CSV has more rows than the stream");
    try {
      PlacementDecision d;
      d.arrival_index = std::stoull(cells[0]);
      d.tx = TxId::from_hex(cells[1]);
      const Algorithm algorithm = parse_algorithm(cells[2]);
      if (file.algorithm && *file.algorithm != algorithm) throw std::runtime_error("mixed algorithms");
      file.algorithm = algorithm;
      const unsigned long shard = std::stoul(cells[3]);
      d.fitness_max = std::stod(cells[5]);
      if (d.arrival_index != row || d.tx != stream[row].id) throw std::runtime_error("row does not match stream order");
      if (shard >= n_shards) throw std::runtime_error(fmt::format("shard {} out of range", shard));
      d.output_shard = static_cast<ShardId>(shard);
      for (const ParentEdge& edge : stream.parents(row)) {
        d.input_shards.push_back(static_cast<ShardId>(shard_of[edge.node]));
      }
      std::sort(d.input_shards.begin(), d.input_shards.end());
      d.input_shards.erase(std::unique(d.input_shards.begin(), d.input_shards.end()), d.input_shards.end());
      d.cross_shard = std::any_of(d.input_shards.begin(), d.input_shards.end(),
                                  [&](ShardId s) { return s != d.output_shard; });
      if (d.cross_shard != (cells[4] == "1")) throw std::runtime_error("cross_shard flag disagrees with the stream");
      shard_of[row] = d.output_shard;
      file.decisions.push_back(std::move(d));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(fmt::format("decisions CSV row {}: {}", row + 1, e.what()));
    } catch (const std::logic_error& e) {
      throw std::runtime_error(fmt::format("decisions CSV row {}: {}", row + 1, e.what()));
    }
    ++row;
  }
  if (row != stream.size()) {
    throw std::runtime_error(fmt::format("decisions CSV covers {} of {} transactions", row, stream.size()));
  }
  return file;
}

namespace {
constexpr const char* kCheckpointFormat = "shardplace-placer-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(std::ostream& out, const TxStream& stream, const PlacerState& state) {
  using nlohmann::json;
  json nodes = json::array();
  for (std::uint32_t node = 0; node < stream.node_count(); ++node) {
    if (state.shard_of[node] == PlacerState::kUnplaced) continue;
    json entry = {{"id", stream.node_id(node).to_hex()},
                  {"shard", state.shard_of[node]},
                  {"children", state.children_seen[node]}};
    if (state.tracks_fitness()) {
      const auto f = state.fitness_of(node);
      entry["fitness"] = std::vector<double>(f.begin(), f.end());
    }
    nodes.push_back(std::move(entry));
  }
  const json doc = {{"format", kCheckpointFormat},
                    {"version", kCheckpointVersion},
                    {"algorithm", std::string(to_string(state.algorithm))},
                    {"n_shards", state.n_shards},
                    {"placed", state.placed},
                    {"partition_sizes", state.partition_sizes},
                    {"nodes", std::move(nodes)}};
  out << doc.dump(1) << '\n';
}

PlacerState load_checkpoint(std::istream& in, const TxStream& stream) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(in);
    if (doc.at("format") != kCheckpointFormat) throw std::runtime_error("not a placer checkpoint");
    if (doc.at("version") != kCheckpointVersion) {
      throw std::runtime_error(fmt::format("unsupported checkpoint version {}", doc.at("version").dump()));
    }
    PlacerState state = make_state(stream, parse_algorithm(doc.at("algorithm").get<std::string>()),
                                   doc.at("n_shards").get<std::uint32_t>());
    state.placed = doc.at("placed").get<std::uint64_t>();
    state.partition_sizes = doc.at("partition_sizes").get<std::vector<std::uint64_t>>();
    if (state.partition_sizes.size() != state.n_shards || state.placed > stream.size()) {
      throw std::runtime_error("checkpoint does not match the stream");
    }
    for (const json& entry : doc.at("nodes")) {
      const auto node = stream.node_of(TxId::from_hex(entry.at("id").get<std::string>()));
      if (!node) throw std::runtime_error("checkpoint references a transaction outside the stream");
      const auto shard = entry.at("shard").get<std::int64_t>();
      if (shard < 0 || shard >= state.n_shards) throw std::runtime_error("checkpoint shard out of range");
      state.shard_of[*node] = shard;
      state.children_seen[*node] = entry.at("children").get<std::uint32_t>();
      if (state.tracks_fitness()) {
        const auto f = entry.at("fitness").get<std::vector<double>>();
        if (f.size() != state.n_shards) throw std::runtime_error("checkpoint fitness length mismatch");
        std::copy(f.begin(), f.end(), state.fitness.begin() + static_cast<std::ptrdiff_t>(*node) * state.n_shards);
      }
    }
    for (std::size_t i = 0; i < stream.size(); ++i) {
      if ((state.shard_of[i] != PlacerState::kUnplaced) != (i < state.placed)) {
        throw std::runtime_error("checkpoint placements are not a prefix of the stream");
      }
    }
    return state;
  } catch (const json::exception& e) {
    throw std::runtime_error(fmt::format("malformed checkpoint: {}", e.what()));
  }
}

}  // namespace shardplace::placement
