#pragma once

// Stream builders and a from-scratch fitness evaluator shared by the unit and
// acceptance binaries. Nothing here calls into the placer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "shardplace/placement.hpp"
#include "shardplace/tx_id.hpp"
#include "shardplace/txgraph.hpp"

namespace testsupport {

using shardplace::TxId;
using shardplace::txgraph::ExternalParent;
using shardplace::txgraph::Transaction;
using shardplace::txgraph::TxStream;
using shardplace::txgraph::UtxoRef;

/// Distinct ids whose leading byte is `lead`, so HP placement is predictable.
inline TxId id_with_lead(std::uint8_t lead, std::uint64_t serial) {
  return TxId::from_words((std::uint64_t{lead} << 56) | (serial & 0x00ffffffffffffffULL), 0x5eed, serial, 7);
}

inline TxId id_of(std::uint64_t serial) {
  std::mt19937_64 g(serial * 0x9e3779b97f4a7c15ULL + 1);
  return TxId::from_words(g(), g(), g(), g());
}

inline Transaction make_tx(TxId id, std::vector<UtxoRef> inputs, std::uint32_t outs = 2, std::uint64_t block = 0) {
  Transaction tx;
  tx.id = id;
  tx.inputs = std::move(inputs);
  tx.output_count = outs;
  tx.block_height = block;
  return tx;
}

/// Coinbase followed by a chain where every tx spends output 0 of the one before.
inline TxStream chain_stream(std::size_t n, std::uint64_t salt = 0) {
  std::vector<Transaction> txs;
  txs.push_back(make_tx(id_of(salt * 1000003 + 0), {}, 1));
  for (std::size_t i = 1; i < n; ++i) {
    txs.push_back(make_tx(id_of(salt * 1000003 + i), {{txs.back().id, 0}}, 1));
  }
  return TxStream(std::move(txs));
}

/// Random valid stream with multi-edges and external parents.
inline TxStream random_stream(std::uint64_t seed, std::size_t n, std::size_t n_external, std::uint32_t n_shards) {
  std::mt19937_64 g(seed);
  auto pick = [&](std::size_t k) { return static_cast<std::size_t>(g() % k); };
  std::vector<ExternalParent> ext;
  std::vector<UtxoRef> unspent;
  for (std::size_t e = 0; e < n_external; ++e) {
    ExternalParent p{id_of(seed * 7919 + 500000 + e), static_cast<std::uint32_t>(pick(n_shards))};
    for (std::uint32_t o = 0; o < 3; ++o) unspent.push_back({p.id, o});
    ext.push_back(p);
  }
  std::vector<Transaction> txs;
  for (std::size_t i = 0; i < n; ++i) {
    Transaction tx;
    tx.id = id_of(seed * 7919 + i);
    tx.output_count = 1 + static_cast<std::uint32_t>(pick(3));
    tx.block_height = i / 20;
    if (unspent.size() >= 1 && pick(6) != 0) {
      const std::size_t want = 1 + pick(std::min<std::size_t>(5, unspent.size()));
      for (std::size_t k = 0; k < want && !unspent.empty(); ++k) {
        // Bias towards recent outputs so some parents collect many children.
        const std::size_t span = std::min<std::size_t>(unspent.size(), 12);
        const std::size_t j = pick(3) == 0 ? pick(unspent.size()) : unspent.size() - 1 - pick(span);
        tx.inputs.push_back(unspent[j]);
        unspent.erase(unspent.begin() + static_cast<std::ptrdiff_t>(j));
      }
    }
    for (std::uint32_t o = 0; o < tx.output_count; ++o) unspent.push_back({tx.id, o});
    txs.push_back(std::move(tx));
  }
  return TxStream(std::move(txs), std::move(ext));
}

/// Fitness of every node from the definition alone: a coinbase is one-hot at
/// its hash shard, an external parent one-hot at its declared shard, and any
/// other tx the sum over parents of fitness(parent) * edges / children, where
/// the child count of a parent covers its children up to and including the tx
/// (transactions for T2S, input edges for V2). Evaluated recursively over the
/// raw input lists with memoization.
class FitnessOracle {
 public:
  FitnessOracle(const TxStream& stream, std::uint32_t n_shards, bool multiset)
      : stream_(stream), n_(n_shards), multiset_(multiset) {
    for (std::size_t i = 0; i < stream.size(); ++i) index_[stream[i].id] = i;
    for (const ExternalParent& p : stream.external_parents()) external_[p.id] = p.shard;
    // children_[parent] lists (child index, edges) in arrival order.
    for (std::size_t i = 0; i < stream.size(); ++i) {
      std::map<TxId, std::uint32_t> edges;
      for (const UtxoRef& in : stream[i].inputs) ++edges[in.tx];
      for (const auto& [p, k] : edges) children_[p].push_back({i, k});
    }
  }

  const std::vector<double>& of_tx(std::size_t i) {
    if (auto it = memo_.find(i); it != memo_.end()) return it->second;
    const Transaction& tx = stream_[i];
    std::vector<double> f(n_, 0.0);
    if (tx.inputs.empty()) {
      f[shardplace::placement::place_hp(tx.id, n_)] = 1.0;
    } else {
      std::map<TxId, std::uint32_t> edges;
      for (const UtxoRef& in : tx.inputs) ++edges[in.tx];
      for (const auto& [p, k] : edges) {
        double seen = 0.0;
        for (const auto& [child, ck] : children_[p]) {
          if (child > i) break;
          seen += multiset_ ? ck : 1.0;
        }
        const double w = (multiset_ ? k : 1.0) / seen;
        const std::vector<double> pf = of_id(p);
        for (std::uint32_t s = 0; s < n_; ++s) f[s] += w * pf[s];
      }
    }
    return memo_.emplace(i, std::move(f)).first->second;
  }

 private:
  std::vector<double> of_id(const TxId& id) {
    if (auto it = external_.find(id); it != external_.end()) {
      std::vector<double> f(n_, 0.0);
      f[it->second] = 1.0;
      return f;
    }
    return of_tx(index_.at(id));
  }

  const TxStream& stream_;
  std::uint32_t n_;
  bool multiset_;
  std::unordered_map<TxId, std::size_t> index_;
  std::unordered_map<TxId, std::uint32_t> external_;
  std::unordered_map<TxId, std::vector<std::pair<std::size_t, std::uint32_t>>> children_;
  std::unordered_map<std::size_t, std::vector<double>> memo_;
};

/// Largest element-wise difference between the placer's stored fitness and the
/// oracle, relative to max(1, |oracle|).
inline double oracle_max_error(const TxStream& stream, const shardplace::placement::PlacerState& state,
                               bool multiset) {
  FitnessOracle oracle(stream, state.n_shards, multiset);
  double worst = 0.0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const std::vector<double>& want = oracle.of_tx(i);
    const auto got = state.fitness_of(static_cast<std::uint32_t>(i));
    for (std::uint32_t s = 0; s < state.n_shards; ++s) {
      const double scale = std::max(1.0, std::abs(want[s]));
      worst = std::max(worst, std::abs(got[s] - want[s]) / scale);
    }
  }
  return worst;
}

}  // namespace testsupport
