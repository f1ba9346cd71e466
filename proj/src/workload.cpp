#include "shardplace/workload.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <unordered_map>

#include "shardplace/rng.hpp"

namespace shardplace::workload {

namespace {

using txgraph::Transaction;
using txgraph::UtxoRef;

struct Utxo {
  std::uint32_t tx = 0;
  std::uint32_t index = 0;
};

std::uint64_t key_of(Utxo u) { return std::uint64_t{u.tx} << 32 | u.index; }

/// Spendable outputs with O(1) uniform sampling and removal.
class UtxoPool {
 public:
  void add(Utxo u) {
    slots_.emplace(key_of(u), items_.size());
    items_.push_back(u);
  }
  bool contains(Utxo u) const { return slots_.contains(key_of(u)); }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  Utxo take_random(Rng& rng) { return take_slot(rng.below(items_.size())); }

  bool take(Utxo u) {
    const auto it = slots_.find(key_of(u));
    if (it == slots_.end()) return false;
    take_slot(it->second);
    return true;
  }

 private:
  Utxo take_slot(std::size_t slot) {
    const Utxo u = items_[slot];
    slots_.erase(key_of(u));
    if (slot + 1 != items_.size()) {
      items_[slot] = items_.back();
      slots_[key_of(items_[slot])] = slot;
    }
    items_.pop_back();
    return u;
  }

  std::vector<Utxo> items_;
  std::unordered_map<std::uint64_t, std::size_t> slots_;
};

/// Inverse-CDF sampler for P(k) ~ k^-alpha on [lo, hi].
class TruncatedPowerLaw {
 public:
  TruncatedPowerLaw(double alpha, std::uint32_t lo, std::uint32_t hi) : lo_(lo) {
    double total = 0.0;
    for (std::uint32_t k = lo; k <= hi; ++k) {
      total += std::pow(static_cast<double>(k), -alpha);
      cdf_.push_back(total);
    }
    for (double& c : cdf_) c /= total;
  }
  std::uint32_t sample(Rng& rng) const {
    const double u = rng.uniform01();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto offset = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    return lo_ + static_cast<std::uint32_t>(offset);
  }

 private:
  std::uint32_t lo_;
  std::vector<double> cdf_;
};

class Generator {
 public:
  explicit Generator(const WorkloadSpec& spec)
      : spec_(spec),
        structure_(derive_seed(spec.seed, "workload.structure")),
        ids_(derive_seed(spec.seed, "workload.txid")),
        multi_parent_(spec.parent_dist.alpha, spec.one_parent_target ? 2U : 1U,
                      std::max(spec.parent_dist.max_parents, spec.one_parent_target ? 2U : 1U)) {
    next_burst_ = spec.aggregation_burst.period / 2;
  }

  txgraph::TxStream run() {
    txs_.reserve(spec_.n_tx);
    for (std::uint64_t i = 0; i < spec_.n_tx; ++i) {
      if (i < spec_.genesis_coinbases || i % spec_.block_size < spec_.coinbase_rate) {
        emit({}, spec_.outputs_per_tx, true);
      } else if (burst_active_) {
        burst_step();
      } else if (spec_.aggregation_burst.period > 0 && i >= next_burst_) {
        next_burst_ += spec_.aggregation_burst.period;
        start_burst();
      } else if (!chain_step()) {
        regular();
      }
    }
    return txgraph::TxStream(std::move(txs_));
  }

 private:
  std::uint32_t emit(std::vector<UtxoRef> inputs, std::uint32_t outputs, bool pool_outputs,
                     std::uint32_t first_pooled = 0) {
    const auto pos = static_cast<std::uint32_t>(txs_.size());
    Transaction tx;
    tx.id = TxId::from_words(ids_.next_u64(), ids_.next_u64(), ids_.next_u64(), ids_.next_u64());
    tx.inputs = std::move(inputs);
    tx.output_count = outputs;
    tx.block_height = pos / spec_.block_size;
    tx.arrival_index = pos;
    txs_.push_back(std::move(tx));
    if (pool_outputs) {
      for (std::uint32_t k = first_pooled; k < outputs; ++k) pool_.add({pos, k});
    }
    return pos;
  }

  UtxoRef ref(Utxo u) const { return {txs_[u.tx].id, u.index}; }

  // Chain runs: each tx spends an output of the tx right before it.
  bool chain_step() {
    if (chain_remaining_ == 0) {
      if (spec_.chain_burst.probability <= 0.0 || !structure_.bernoulli(spec_.chain_burst.probability)) return false;
      chain_remaining_ = run_length();
    }
    const auto pred = static_cast<std::uint32_t>(txs_.size() - 1);
    for (std::uint32_t k = 0; k < txs_[pred].output_count; ++k) {
      if (pool_.take({pred, k})) {
        --chain_remaining_;
        emit({ref({pred, k})}, spec_.outputs_per_tx, true);
        return true;
      }
    }
    chain_remaining_ = 0;  // predecessor has nothing spendable
    return false;
  }

  std::uint64_t run_length() {
    const double m = spec_.chain_burst.mean_run_length;
    if (m <= 1.0) return 1;
    const double q = 1.0 - 1.0 / m;
    return 1 + static_cast<std::uint64_t>(std::floor(std::log1p(-structure_.uniform01()) / std::log(q)));
  }

  // Appends up to `want` inputs from distinct random parents not in `chosen`.
  void draw_parents(std::uint32_t want, std::vector<std::uint32_t> chosen, std::vector<UtxoRef>& inputs) {
    const std::size_t target = chosen.size() + want;
    std::uint32_t misses = 0;
    while (chosen.size() < target && !pool_.empty() && misses < 4 * want + 8) {
      const Utxo u = pool_.take_random(structure_);
      if (std::find(chosen.begin(), chosen.end(), u.tx) != chosen.end()) {
        pool_.add(u);  // already a parent; put it back
        ++misses;
        continue;
      }
      chosen.push_back(u.tx);
      inputs.push_back(ref(u));
      if (spec_.multi_edge_probability > 0.0 && structure_.bernoulli(spec_.multi_edge_probability)) {
        for (std::uint32_t k = 0; k < txs_[u.tx].output_count; ++k) {
          if (k != u.index && pool_.take({u.tx, k})) {
            inputs.push_back(ref({u.tx, k}));
            break;
          }
        }
      }
    }
  }

  void regular() {
    std::uint32_t want = 1;
    if (spec_.one_parent_target) {
      if (!structure_.bernoulli(*spec_.one_parent_target)) want = multi_parent_.sample(structure_);
    } else {
      want = multi_parent_.sample(structure_);
    }

    std::vector<UtxoRef> inputs;
    draw_parents(want, {}, inputs);
    // An exhausted pool degrades to a coinbase rather than stalling the stream.
    emit(std::move(inputs), spec_.outputs_per_tx, true);
  }

  void start_burst() {
    burst_active_ = true;
    burst_level_ = 0;
    burst_step_ = 0;
    spreaders_.clear();
    if (anchor_) {
      aggregator_ = *anchor_;
      burst_step();
    } else {
      aggregator_ = emit({}, spec_.aggregation_burst.fan_in, false);
    }
  }

  void burst_step() {
    const auto fan_in = spec_.aggregation_burst.fan_in;
    if (burst_step_ < fan_in) {
      // A spreader's only output is reserved for the next aggregator.
      spreaders_.push_back(emit({ref({aggregator_, burst_step_})}, 1, false));
      ++burst_step_;
      return;
    }
    std::vector<UtxoRef> inputs;
    inputs.reserve(spreaders_.size());
    for (std::uint32_t s : spreaders_) inputs.push_back(ref({s, 0}));
    // Outputs [0, fan_in) feed the next level; the last one leaks into the pool.
    aggregator_ = emit(std::move(inputs), fan_in + 1, true, fan_in);
    spreaders_.clear();
    burst_step_ = 0;
    if (++burst_level_ == spec_.aggregation_burst.depth) {
      burst_active_ = false;
      anchor_ = aggregator_;
    }
  }

  const WorkloadSpec& spec_;
  Rng structure_;
  Rng ids_;
  TruncatedPowerLaw multi_parent_;
  std::vector<Transaction> txs_;
  UtxoPool pool_;

  std::uint64_t chain_remaining_ = 0;

  std::uint64_t next_burst_ = 0;
  bool burst_active_ = false;
  std::uint32_t burst_level_ = 0;
  std::uint32_t burst_step_ = 0;
  std::uint32_t aggregator_ = 0;
  std::vector<std::uint32_t> spreaders_;
  std::optional<std::uint32_t> anchor_;
};

bool is_fraction(double v) { return v >= 0.0 && v <= 1.0; }

double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw SpecError(fmt::format("spec key \"{}\": \"{}\" is not a number", key, text));
  }
  return v;
}

template <typename T>
T parse_unsigned(std::string_view key, std::string_view text) {
  T v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw SpecError(fmt::format("spec key \"{}\": \"{}\" is not a non-negative integer", key, text));
  }
  return v;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void validate(const WorkloadSpec& spec) {
  if (spec.n_tx == 0) throw SpecError("n_tx must be >= 1");
  if (spec.block_size == 0) throw SpecError("block_size must be >= 1");
  if (spec.coinbase_rate == 0) throw SpecError("coinbase_rate must be >= 1: without coinbases nothing is spendable");
  if (spec.coinbase_rate > spec.block_size) throw SpecError("coinbase_rate exceeds block_size");
  if (!std::isfinite(spec.parent_dist.alpha) || spec.parent_dist.alpha < 0.0) {
    throw SpecError("alpha must be finite and >= 0");
  }
  if (spec.parent_dist.max_parents == 0) throw SpecError("max_parents must be >= 1");
  if (spec.one_parent_target) {
    if (!is_fraction(*spec.one_parent_target)) throw SpecError("one_parent_target must be in [0, 1]");
    if (*spec.one_parent_target < 1.0 && spec.parent_dist.max_parents < 2) {
      throw SpecError("one_parent_target < 1 needs max_parents >= 2");
    }
  }
  if (!is_fraction(spec.chain_burst.probability)) throw SpecError("chain probability must be in [0, 1]");
  if (!(spec.chain_burst.mean_run_length >= 1.0)) throw SpecError("chain mean run length must be >= 1");
  if (!is_fraction(spec.multi_edge_probability)) throw SpecError("multi_edge_probability must be in [0, 1]");
  if (spec.outputs_per_tx == 0) throw SpecError("outputs_per_tx must be >= 1");
  const AggregationBurst& agg = spec.aggregation_burst;
  if (agg.period > 0) {
    if (agg.fan_in < 2) throw SpecError("aggregation fan_in must be >= 2");
    if (agg.depth == 0) throw SpecError("aggregation depth must be >= 1");
    if (agg.burst_length() + 1 > agg.period) {
      throw SpecError(fmt::format("aggregation bursts of {} transactions do not fit in a period of {}",
                                  agg.burst_length() + 1, agg.period));
    }
  }
}

txgraph::TxStream generate(const WorkloadSpec& spec) {
  validate(spec);
  return Generator(spec).run();
}

std::vector<std::string> preset_names() { return {"bitcoin-like", "chain-burst", "aggregation-storm", "uniform-random"}; }

WorkloadSpec preset(std::string_view name) {
  WorkloadSpec spec;  // defaults are the bitcoin-like profile
  if (name == "bitcoin-like") return spec;
  if (name == "chain-burst") {
    // A regular tx starts a run with probability p; runs average m txs, so the
    // chained share of non-coinbase txs is p*m / (p*m + 1 - p).
    constexpr double kChainShare = 0.20;
    constexpr double kMeanRun = 10.0;
    spec.chain_burst = {kChainShare / (kMeanRun * (1.0 - kChainShare) + kChainShare), kMeanRun};
    return spec;
  }
  if (name == "aggregation-storm") {
    spec.aggregation_burst = {20000, 10, 50};
    return spec;
  }
  if (name == "uniform-random") {
    spec.parent_dist = {0.0, 3};
    spec.one_parent_target = std::nullopt;
    spec.multi_edge_probability = 0.0;
    return spec;
  }
  throw SpecError(fmt::format("unknown preset \"{}\" (known: bitcoin-like, chain-burst, aggregation-storm, "
                              "uniform-random)",
                              name));
}

WorkloadSpec parse_spec(std::istream& in) {
  WorkloadSpec spec;
  std::string line;
  std::size_t lineno = 0;
  bool seen_key = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view text = line;
    if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw SpecError(fmt::format("spec line {}: expected key = value", lineno));
    const std::string_view key = trim(text.substr(0, eq));
    const std::string_view value = trim(text.substr(eq + 1));

    if (key == "preset") {
      if (seen_key) throw SpecError(fmt::format("spec line {}: preset must come before other keys", lineno));
      spec = preset(value);
    } else if (key == "n_tx") {
      spec.n_tx = parse_unsigned<std::uint64_t>(key, value);
    } else if (key == "seed") {
      spec.seed = parse_unsigned<std::uint64_t>(key, value);
    } else if (key == "coinbase_rate") {
      spec.coinbase_rate = parse_unsigned<std::uint32_t>(key, value);
    } else if (key == "genesis_coinbases") {
      spec.genesis_coinbases = parse_unsigned<std::uint64_t>(key, value);
    } else if (key == "block_size") {
      spec.block_size = parse_unsigned<std::uint32_t>(key, value);
    } else if (key == "alpha") {
      spec.parent_dist.alpha = parse_double(key, value);
    } else if (key == "max_parents") {
      spec.parent_dist.max_parents = parse_unsigned<std::uint32_t>(key, value);
    } else if (key == "one_parent_target") {
      if (value == "none") {
        spec.one_parent_target = std::nullopt;
      } else {
        spec.one_parent_target = parse_double(key, value);
      }
    } else if (key == "chain_probability") {
      spec.chain_burst.probability = parse_double(key, value);
    } else if (key == "chain_mean_run") {
      spec.chain_burst.mean_run_length = parse_double(key, value);
    } else if (key == "agg_period") {
      spec.aggregation_burst.period = parse_unsigned<std::uint64_t>(key, value);
    } else if (key == "agg_fan_in") {
      spec.aggregation_burst.fan_in = parse_unsigned<std::uint32_t>(key, value);
    } else if (key == "agg_depth") {
      spec.aggregation_burst.depth = parse_unsigned<std::uint32_t>(key, value);
    } else if (key == "outputs_per_tx") {
      spec.outputs_per_tx = parse_unsigned<std::uint32_t>(key, value);
    } else if (key == "multi_edge_probability") {
      spec.multi_edge_probability = parse_double(key, value);
    } else {
      throw SpecError(fmt::format("spec line {}: unknown key \"{}\"", lineno, key));
    }
    seen_key = true;
  }
  validate(spec);
  return spec;
}

WorkloadSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError(fmt::format("cannot open spec file {}", path.string()));
  return parse_spec(in);
}

std::string to_spec_text(const WorkloadSpec& spec) {
  std::ostringstream out;
  out << "n_tx = " << spec.n_tx << '\n'
      << "seed = " << spec.seed << '\n'
      << "coinbase_rate = " << spec.coinbase_rate << '\n'
      << "block_size = " << spec.block_size << '\n'
      << "genesis_coinbases = " << spec.genesis_coinbases << '\n'
      << "alpha = " << fmt::format("{}", spec.parent_dist.alpha) << '\n'
      << "max_parents = " << spec.parent_dist.max_parents << '\n'
      << "one_parent_target = "
      << (spec.one_parent_target ? fmt::format("{}", *spec.one_parent_target) : std::string("none")) << '\n'
      << "chain_probability = " << fmt::format("{}", spec.chain_burst.probability) << '\n'
      << "chain_mean_run = " << fmt::format("{}", spec.chain_burst.mean_run_length) << '\n'
      << "agg_period = " << spec.aggregation_burst.period << '\n'
      << "agg_fan_in = " << spec.aggregation_burst.fan_in << '\n'
      << "agg_depth = " << spec.aggregation_burst.depth << '\n'
      << "outputs_per_tx = " << spec.outputs_per_tx << '\n'
      << "multi_edge_probability = " << fmt::format("{}", spec.multi_edge_probability) << '\n';
  return out.str();
}

}  // namespace shardplace::workload
