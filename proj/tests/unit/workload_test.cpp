#include <cmath>
#include <sstream>

#include "doctest.h"
#include "shardplace/placement.hpp"
#include "shardplace/txgraph.hpp"
#include "shardplace/workload.hpp"

using namespace shardplace;
using namespace shardplace::workload;

namespace {

std::string serialize(const txgraph::TxStream& s) {
  std::ostringstream out;
  txgraph::write_stream(out, s);
  return out.str();
}

double overall_one_parent(const txgraph::TxStream& s) {
  return *txgraph::one_parent_ratio(s, s.size())[0].fraction;
}

}  // namespace

TEST_CASE("presets") {
  for (const std::string& name : preset_names()) CHECK_NOTHROW(validate(preset(name)));
  try {
    preset("nope");
    FAIL("expected SpecError");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("nope") != std::string::npos);
  }
  const WorkloadSpec storm = preset("aggregation-storm");
  CHECK(storm.aggregation_burst.fan_in == 10);
  CHECK(storm.aggregation_burst.depth == 50);
  CHECK(storm.aggregation_burst.period > 0);
  CHECK(storm.aggregation_burst.period < storm.n_tx / 2);
  const WorkloadSpec uniform = preset("uniform-random");
  CHECK(uniform.aggregation_burst.period == 0);
  CHECK(uniform.chain_burst.probability == 0.0);
  CHECK(uniform.parent_dist.alpha == 0.0);
}

TEST_CASE("validation") {
  WorkloadSpec s;
  SUBCASE("n_tx") { s.n_tx = 0; }
  SUBCASE("fraction") { s.one_parent_target = 1.5; }
  SUBCASE("chain probability") { s.chain_burst.probability = -0.1; }
  SUBCASE("fan_in") {
    s.aggregation_burst = {1000, 1, 5};
  }
  SUBCASE("burst longer than period") {
    s.aggregation_burst = {100, 10, 50};
  }
  SUBCASE("coinbase rate") { s.coinbase_rate = 0; }
  CHECK_THROWS_AS(validate(s), SpecError);
  CHECK_THROWS_AS(generate(s), SpecError);
}

TEST_CASE("generation is a pure function of the spec") {
  WorkloadSpec s = preset("aggregation-storm");
  s.n_tx = 30000;
  s.seed = 7;
  const std::string a = serialize(generate(s));
  CHECK(a == serialize(generate(s)));
  s.seed = 8;
  CHECK(a != serialize(generate(s)));
}

TEST_CASE("generated streams pass ingestion") {
  for (const std::string& name : preset_names()) {
    WorkloadSpec s = preset(name);
    s.n_tx = 25000;
    const txgraph::TxStream g = generate(s);
    CHECK(g.size() == s.n_tx);
    std::istringstream in(serialize(g));
    CHECK_NOTHROW(txgraph::TxStream(txgraph::parse_transactions(in)));
  }
}

TEST_CASE("full chain run") {
  WorkloadSpec s;
  s.n_tx = 3000;
  s.genesis_coinbases = 1;
  s.coinbase_rate = 1;
  s.block_size = 1000000;
  s.chain_burst = {1.0, static_cast<double>(s.n_tx)};
  const txgraph::TxStream g = generate(s);
  const txgraph::BlockRange all{0, 1};
  CHECK(*txgraph::immediate_predecessor_ratio(g, {&all, 1})[0] == 1.0);
}

TEST_CASE("bitcoin-like one-parent share") {
  WorkloadSpec s = preset("bitcoin-like");
  s.n_tx = 100000;
  CHECK(std::abs(overall_one_parent(generate(s)) - 0.75) <= 0.02);
}

TEST_CASE("chain-burst predecessor share") {
  WorkloadSpec s = preset("chain-burst");
  s.n_tx = 100000;
  const txgraph::TxStream g = generate(s);
  const txgraph::BlockRange all{0, g[g.size() - 1].block_height + 1};
  CHECK(std::abs(*txgraph::immediate_predecessor_ratio(g, {&all, 1})[0] - 0.20) <= 0.02);
}

TEST_CASE("power-law slope of the parent histogram") {
  WorkloadSpec s;
  s.n_tx = 100000;
  s.one_parent_target = std::nullopt;
  s.parent_dist = {2.2, 50};
  // The untruncated law averages about 2.25 inputs per tx; three outputs keep
  // the spendable pool from cutting off the tail.
  s.outputs_per_tx = 3;
  const auto hist = txgraph::parent_count_histogram(generate(s));
  // Least squares on log-log points with enough mass to be stable.
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (const auto& [k, count] : hist) {
    if (count < 20) continue;
    const double x = std::log(static_cast<double>(k));
    const double y = std::log(static_cast<double>(count));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    n += 1;
  }
  REQUIRE(n >= 5);
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(std::abs(slope + 2.2) <= 0.3);
}

TEST_CASE("spec files") {
  std::istringstream in(
      "# storm variant\n"
      "preset = aggregation-storm\n"
      "n_tx = 500\n"
      "seed = 3\n"
      "agg_period = 1000\n"
      "one_parent_target = none\n");
  const WorkloadSpec s = parse_spec(in);
  CHECK(s.n_tx == 500);
  CHECK(s.seed == 3);
  CHECK(s.aggregation_burst.period == 1000);
  CHECK(s.aggregation_burst.fan_in == 10);
  CHECK_FALSE(s.one_parent_target.has_value());

  std::istringstream round(to_spec_text(s));
  const WorkloadSpec back = parse_spec(round);
  CHECK(to_spec_text(back) == to_spec_text(s));

  std::istringstream bad("n_tx = 5\nbogus = 1\n");
  CHECK_THROWS_AS(parse_spec(bad), SpecError);
  std::istringstream late("n_tx = 5\npreset = bitcoin-like\n");
  CHECK_THROWS_AS(parse_spec(late), SpecError);
  std::istringstream nan("alpha = lots\n");
  CHECK_THROWS_AS(parse_spec(nan), SpecError);
}

TEST_CASE("aggregation bursts amplify t2s but not optnorm") {
  WorkloadSpec s = preset("aggregation-storm");
  s.n_tx = 50000;
  const txgraph::TxStream g = generate(s);
  placement::Placer t2s(g, placement::Algorithm::T2S, 4);
  placement::Placer norm(g, placement::Algorithm::OptNorm, 4);
  std::vector<placement::PlacementDecision> dt;
  while (!t2s.done()) dt.push_back(t2s.place_next());
  while (!norm.done()) norm.place_next();
  CHECK_FALSE(placement::detect_tainted(g, t2s.state(), 10.0).empty());
  CHECK(placement::detect_tainted(g, norm.state(), 10.0).empty());

  // The peak after each burst exceeds the peak after the previous one.
  const std::uint64_t period = s.aggregation_burst.period;
  const auto series = placement::max_fitness_series(dt, period);
  double last = 0.0;
  for (std::size_t b = 0; b + 1 < series.size(); ++b) {
    CHECK(series[b].value > last);
    last = series[b].value;
  }
}
