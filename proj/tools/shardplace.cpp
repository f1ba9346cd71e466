// shardplace command-line driver: gen, analyze, place, simulate, compare, report.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "shardplace/metrics.hpp"
#include "shardplace/placement.hpp"
#include "shardplace/simulator.hpp"
#include "shardplace/txgraph.hpp"
#include "shardplace/workload.hpp"

namespace fs = std::filesystem;
using namespace shardplace;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kAlgorithms = {"hp", "greedy", "t2s", "v2", "optnorm"};

void init_logging() {
  auto logger = spdlog::stderr_color_mt("shardplace");
  logger->set_pattern("%^[%l]%$ %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("SHARDPLACE_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only honor explicit "off".
    if (level != spdlog::level::off || std::string_view(env) == "off") spdlog::set_level(level);
    else spdlog::warn("ignoring unknown SHARDPLACE_LOG level \"{}\"", env);
  }
}

void refuse_existing_file(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw std::runtime_error(fmt::format("refusing to overwrite {} (use --force)", path.string()));
  }
}

void refuse_nonempty_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir) && !force) {
    throw std::runtime_error(fmt::format("refusing to overwrite non-empty directory {} (use --force)", dir.string()));
  }
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  return out;
}

struct StreamArgs {
  std::string input;
  std::string externals;
  std::string format = "jsonl";

  void add_to(CLI::App* sub) {
    sub->add_option("-i,--input", input, "Transaction stream (JSON lines)")->required();
    sub->add_option("--externals", externals, "Sidecar of external parents with fixed shards");
    sub->add_option("--format", format, "Stream format")->check(CLI::IsMember({"jsonl"}));
  }

  txgraph::TxStream load() const {
    std::optional<fs::path> ext;
    if (!externals.empty()) ext = externals;
    auto stream = txgraph::load_stream(input, txgraph::parse_stream_format(format), ext);
    spdlog::info("loaded {} transactions from {}", stream.size(), input);
    return stream;
  }
};

// --- gen ---

struct GenArgs {
  std::string preset;
  std::string spec_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> n_tx;
  std::string output;
  bool force = false;
};

void cmd_gen(const GenArgs& a) {
  if (a.preset.empty() == a.spec_file.empty()) throw UsageError("gen needs exactly one of --preset or --spec");
  workload::WorkloadSpec spec = a.preset.empty() ? workload::load_spec(a.spec_file) : workload::preset(a.preset);
  if (a.seed) spec.seed = *a.seed;
  if (a.n_tx) spec.n_tx = *a.n_tx;
  workload::validate(spec);
  spdlog::info("workload spec:\n{}", workload::to_spec_text(spec));
  refuse_existing_file(a.output, a.force);
  const auto stream = workload::generate(spec);
  auto out = open_output(a.output);
  txgraph::write_stream(out, stream);
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", a.output));
  spdlog::info("wrote {} transactions to {}", stream.size(), a.output);
}

// --- analyze ---

struct AnalyzeArgs {
  StreamArgs stream;
  std::uint64_t window = 10000;
  std::string output;
  bool force = false;
};

void cmd_analyze(const AnalyzeArgs& a) {
  const auto stream = a.stream.load();
  metrics::ReportBundle bundle;
  bundle.parent_histogram = txgraph::parent_count_histogram(stream);
  bundle.one_parent_ratio = txgraph::one_parent_ratio(stream, a.window);
  std::size_t non_coinbase = 0;
  for (const auto& [parents, count] : *bundle.parent_histogram) non_coinbase += count;
  const auto ones = bundle.parent_histogram->contains(1) ? bundle.parent_histogram->at(1) : 0;
  fmt::print("transactions={} non_coinbase={} one_parent_ratio={}\n", stream.size(), non_coinbase,
             non_coinbase ? fmt::format("{}", static_cast<double>(ones) / static_cast<double>(non_coinbase)) : "n/a");
  if (!a.output.empty()) {
    for (const auto& p : metrics::export_report(bundle, a.output, a.force)) spdlog::info("wrote {}", p.string());
  }
}

// --- place ---

struct PlaceArgs {
  StreamArgs stream;
  std::string algorithm = "optnorm";
  std::uint32_t shards = 16;
  std::string output;
  std::string checkpoint;
  std::string resume;
  std::optional<std::uint64_t> limit;
  double taint_threshold = 10.0;
  bool force = false;
};

void warn_if_tainted(const txgraph::TxStream& stream, const placement::PlacerState& state, double threshold) {
  if (!state.tracks_fitness()) return;
  const auto tainted = placement::detect_tainted(stream, state, threshold);
  if (!tainted.empty()) {
    spdlog::warn("{} tainted transactions (fitness element > {}), first {}", tainted.size(), threshold,
                 tainted.begin()->to_hex());
  }
}

void print_summary(std::string_view algorithm, std::uint32_t shards,
                   std::span<const placement::PlacementDecision> decisions) {
  const auto summary = metrics::summarize(decisions, shards);
  const std::string ratio = summary.total_non_coinbase
                                ? fmt::format("{}", metrics::cross_shard_ratio(decisions))
                                : std::string("n/a");
  fmt::print("algorithm={} n_shards={} transactions={} cross_shard_ratio={} load_imbalance={}\n", algorithm, shards,
             decisions.size(), ratio, metrics::load_imbalance(summary.partition_sizes));
}

void cmd_place(const PlaceArgs& a) {
  const auto alg = placement::parse_algorithm(a.algorithm);
  if (a.shards == 0) throw UsageError("--shards must be >= 1");
  const auto stream = a.stream.load();
  refuse_existing_file(a.output, a.force);
  if (!a.checkpoint.empty()) refuse_existing_file(a.checkpoint, a.force);

  placement::Placer placer(stream, alg, a.shards);
  std::vector<placement::PlacementDecision> decisions;
  if (!a.resume.empty()) {
    std::ifstream in(a.resume, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot read {}", a.resume));
    auto state = placement::load_checkpoint(in, stream);
    if (state.algorithm != alg || state.n_shards != a.shards) {
      throw UsageError("checkpoint algorithm or shard count differs from the command line");
    }
    spdlog::info("resuming after {} placed transactions", state.placed);
    placer.restore(std::move(state));
  }
  decisions.reserve(stream.size() - placer.next_index());
  while (!placer.done() && (!a.limit || decisions.size() < *a.limit)) decisions.push_back(placer.place_next());

  auto out = open_output(a.output);
  placement::write_decisions_csv(out, decisions, alg);
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", a.output));
  if (!a.checkpoint.empty()) {
    auto cp = open_output(a.checkpoint);
    placement::save_checkpoint(cp, stream, placer.state());
  }
  warn_if_tainted(stream, placer.state(), a.taint_threshold);
  print_summary(a.algorithm, a.shards, decisions);
}

// --- simulate ---

struct SimulateArgs {
  StreamArgs stream;
  std::string decisions;
  std::string algorithm;
  std::uint32_t shards = 16;
  bool feedback = false;
  sim::CostModel cost;
  sim::DriveConfig drive;
  std::string arrivals = "poisson";
  double fail_fraction = 0.0;
  std::string output;
  bool force = false;
};

void cmd_simulate(SimulateArgs a) {
  if (a.decisions.empty() && a.algorithm.empty()) throw UsageError("simulate needs --decisions or --algorithm");
  if (!a.decisions.empty() && !a.algorithm.empty()) throw UsageError("--decisions and --algorithm are exclusive");
  if (a.feedback && a.algorithm.empty()) throw UsageError("--feedback needs --algorithm (placement happens online)");
  if (a.feedback && a.fail_fraction > 0.0) throw UsageError("--fail-fraction cannot be combined with --feedback");
  if (a.shards == 0) throw UsageError("--shards must be >= 1");
  a.drive.arrivals = sim::parse_arrival_process(a.arrivals);
  a.cost.validate();
  a.drive.validate();
  refuse_nonempty_dir(a.output, a.force);

  const auto stream = a.stream.load();
  sim::SimReport report;
  std::vector<placement::PlacementDecision> decisions;
  if (a.feedback) {
    const auto alg = placement::parse_algorithm(a.algorithm);
    if (!placement::uses_fitness(alg)) spdlog::warn("--feedback has no effect on {}", a.algorithm);
    placement::Placer placer(stream, alg, a.shards);
    report = sim::simulate_online(placer, a.cost, a.drive, true);
    warn_if_tainted(stream, placer.state(), 10.0);
  } else {
    if (!a.algorithm.empty()) {
      const auto alg = placement::parse_algorithm(a.algorithm);
      placement::Placer placer(stream, alg, a.shards);
      while (!placer.done()) decisions.push_back(placer.place_next());
      warn_if_tainted(stream, placer.state(), 10.0);
    } else {
      std::ifstream in(a.decisions, std::ios::binary);
      if (!in) throw std::runtime_error(fmt::format("cannot read {}", a.decisions));
      decisions = placement::read_decisions_csv(in, stream, a.shards).decisions;
    }
    sim::FailureInjection failures;
    if (a.fail_fraction > 0.0) {
      failures = sim::inject_lock_failure(decisions, sim::sample_cross_shard(decisions, a.fail_fraction, a.drive.seed));
      spdlog::info("injecting LOCK failures into {} transactions", failures.txs.size());
    }
    report = sim::simulate(stream, decisions, a.shards, a.cost, a.drive, failures);
  }
  for (const auto& p : sim::write_report(report, a.output)) spdlog::info("wrote {}", p.string());
  const auto& t = report.totals;
  fmt::print("completed={} aborted={} pending={} overall_tps={} makespan_s={} truncated={}\n", t.completed,
             t.aborted, t.pending, t.overall_tps, t.makespan_s, t.truncated);
}

// --- compare ---

struct CompareArgs {
  StreamArgs stream;
  std::vector<std::string> algorithms = {"hp", "t2s", "optnorm"};
  std::vector<std::uint32_t> shards = {2, 4, 8, 16, 32, 64, 128};
  unsigned jobs = 0;
  std::string output;
  bool force = false;
};

void cmd_compare(const CompareArgs& a) {
  std::vector<placement::Algorithm> algs;
  for (const auto& tag : a.algorithms) algs.push_back(placement::parse_algorithm(tag));
  for (auto n : a.shards) {
    if (n == 0) throw UsageError("shard counts must be >= 1");
  }
  refuse_existing_file(a.output, a.force);
  const auto stream = a.stream.load();

  std::vector<metrics::GridRow> rows(algs.size() * a.shards.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t cell = next++; cell < rows.size(); cell = next++) {
      try {
        const auto alg = algs[cell / a.shards.size()];
        const auto n = a.shards[cell % a.shards.size()];
        const auto decisions = placement::place_stream(stream, alg, n);
        const auto summary = metrics::summarize(decisions, n);
        rows[cell] = {std::string(placement::to_string(alg)), n,
                      summary.total_non_coinbase ? metrics::cross_shard_ratio(decisions) : 0.0,
                      metrics::load_imbalance(summary.partition_sizes)};
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
  const unsigned jobs = static_cast<unsigned>(std::min<std::size_t>(a.jobs ? a.jobs : hw, rows.size()));
  std::vector<std::thread> threads;
  for (unsigned j = 0; j < jobs; ++j) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  auto out = open_output(a.output);
  metrics::write_grid_csv(out, rows);
  for (const auto& r : rows) {
    fmt::print("algorithm={} n_shards={} cross_shard_ratio={} load_imbalance={}\n", r.algorithm, r.n_shards,
               r.cross_ratio, r.imbalance);
  }
}

// --- report ---

struct ReportArgs {
  StreamArgs stream;
  std::string algorithm = "optnorm";
  std::uint32_t shards = 4;
  std::uint64_t window = 10000;
  bool simulate = false;
  bool feedback = false;
  sim::DriveConfig drive;
  std::string output;
  bool force = false;
};

void cmd_report(const ReportArgs& a) {
  const auto alg = placement::parse_algorithm(a.algorithm);
  if (a.shards == 0) throw UsageError("--shards must be >= 1");
  if (a.feedback && !a.simulate) throw UsageError("--feedback needs --simulate");
  a.drive.validate();
  refuse_nonempty_dir(a.output, a.force);
  const auto stream = a.stream.load();

  placement::Placer placer(stream, alg, a.shards);
  std::vector<placement::PlacementDecision> decisions;
  while (!placer.done()) decisions.push_back(placer.place_next());
  warn_if_tainted(stream, placer.state(), 10.0);

  metrics::ReportBundle bundle;
  bundle.algorithm = a.algorithm;
  bundle.partition = metrics::summarize(decisions, a.shards);
  if (bundle.partition->total_non_coinbase) bundle.cross_ratio = metrics::cross_shard_ratio(decisions);
  bundle.dynamic_loads = metrics::dynamic_loads(decisions, a.shards, a.window);
  if (placement::uses_fitness(alg)) bundle.fitness_series = placement::max_fitness_series(decisions, a.window);
  bundle.parent_histogram = txgraph::parent_count_histogram(stream);
  bundle.one_parent_ratio = txgraph::one_parent_ratio(stream, a.window);
  if (a.simulate) {
    if (a.feedback) {
      placement::Placer online(stream, alg, a.shards);
      bundle.sim = sim::simulate_online(online, sim::CostModel{}, a.drive, true);
    } else {
      bundle.sim = sim::simulate(stream, decisions, a.shards, sim::CostModel{}, a.drive);
    }
  }
  for (const auto& p : metrics::export_report(bundle, a.output, a.force)) spdlog::info("wrote {}", p.string());
  print_summary(a.algorithm, a.shards, decisions);
}

void add_cost_options(CLI::App* sub, sim::CostModel& cost) {
  sub->add_option("--tx-us", cost.tx_service_us, "TX service time (us)")->capture_default_str();
  sub->add_option("--lock-us", cost.lock_service_us, "LOCK service time (us)")->capture_default_str();
  sub->add_option("--commit-us", cost.commit_service_us, "COMMIT service time (us)")->capture_default_str();
  sub->add_option("--unlock-us", cost.unlock_service_us, "UNLOCK service time (us)")->capture_default_str();
  sub->add_option("--link-ms", cost.link_latency_ms, "One-way client-shard latency (ms)")->capture_default_str();
  sub->add_option("--bandwidth-mbps", cost.bandwidth_mbps, "Link bandwidth, recorded only")->capture_default_str();
  sub->add_option("--jitter", cost.jitter_sigma, "Lognormal sigma of service times (0 = fixed)")
      ->capture_default_str();
}

void add_drive_options(CLI::App* sub, sim::DriveConfig& drive) {
  sub->add_option("--rate", drive.arrival_rate_tps, "Client arrival rate (tx/s)")->capture_default_str();
  sub->add_option("--duration", drive.duration_cap_s, "Virtual-time cap (s)");
  sub->add_option("--bucket", drive.bucket_s, "Report bucket length (s)")->capture_default_str();
  sub->add_option("--seed", drive.seed, "Seed for arrivals, jitter and failure sampling")->capture_default_str();
  sub->add_option("--probe-ms", drive.probe_period_ms, "Feedback sampling period (ms)")->capture_default_str();
  sub->add_option("--feedback-scale", drive.feedback_scale, "Feedback damping constant Q (0 = rate x service x 10)")
      ->capture_default_str();
  sub->add_flag("--trace", drive.record_trace, "Keep a per-request trace in memory");
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();

  CLI::App app{"shardplace: transaction placement for sharded UTXO ledgers"};
  app.set_config("--config", "", "INI/TOML config file with one [subcommand] section");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic transaction stream");
  gen_cmd->add_option("--preset", gen.preset, "Preset name");
  gen_cmd->add_option("--spec", gen.spec_file, "Workload spec file (key = value)");
  gen_cmd->add_option("--seed", gen.seed, "Override the spec seed");
  gen_cmd->add_option("--n-tx", gen.n_tx, "Override the transaction count");
  gen_cmd->add_option("-o,--output", gen.output, "Output stream path")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite existing output");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Parent-count histogram and one-parent ratio series");
  analyze.stream.add_to(analyze_cmd);
  analyze_cmd->add_option("--window", analyze.window, "Transactions per ratio bucket")->check(CLI::PositiveNumber);
  analyze_cmd->add_option("-o,--output", analyze.output, "Report directory");
  analyze_cmd->add_flag("--force", analyze.force, "Overwrite a non-empty report directory");

  PlaceArgs place;
  auto* place_cmd = app.add_subcommand("place", "Place a stream and write a decisions CSV");
  place.stream.add_to(place_cmd);
  place_cmd->add_option("-a,--algorithm", place.algorithm, "Placement algorithm")->check(CLI::IsMember(kAlgorithms));
  place_cmd->add_option("-s,--shards", place.shards, "Shard count");
  place_cmd->add_option("-o,--output", place.output, "Decisions CSV path")->required();
  place_cmd->add_option("--checkpoint", place.checkpoint, "Write the final placer state here");
  place_cmd->add_option("--resume", place.resume, "Continue from a checkpoint");
  place_cmd->add_option("--limit", place.limit, "Stop after placing this many transactions");
  place_cmd->add_option("--taint-threshold", place.taint_threshold, "Warn about fitness elements above this");
  place_cmd->add_flag("--force", place.force, "Overwrite existing outputs");

  SimulateArgs simulate;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the sharded-ledger simulation");
  simulate.stream.add_to(sim_cmd);
  sim_cmd->add_option("-d,--decisions", simulate.decisions, "Decisions CSV to replay");
  sim_cmd->add_option("-a,--algorithm", simulate.algorithm, "Place with this algorithm instead")
      ->check(CLI::IsMember(kAlgorithms));
  sim_cmd->add_option("-s,--shards", simulate.shards, "Shard count");
  sim_cmd->add_flag("--feedback", simulate.feedback, "Feed sampled shard load back to the placer (online)");
  sim_cmd->add_option("--arrivals", simulate.arrivals, "Arrival process")->check(CLI::IsMember({"poisson", "uniform"}));
  sim_cmd->add_option("--fail-fraction", simulate.fail_fraction, "Share of cross-shard txs whose LOCK fails")
      ->check(CLI::Range(0.0, 1.0));
  add_cost_options(sim_cmd, simulate.cost);
  add_drive_options(sim_cmd, simulate.drive);
  sim_cmd->add_option("-o,--output", simulate.output, "Report directory")->required();
  sim_cmd->add_flag("--force", simulate.force, "Overwrite a non-empty report directory");

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare", "Cross-shard ratio and imbalance over algorithms x shard counts");
  compare.stream.add_to(compare_cmd);
  compare_cmd->add_option("-a,--algorithms", compare.algorithms, "Algorithms")
      ->delimiter(',')
      ->check(CLI::IsMember(kAlgorithms));
  compare_cmd->add_option("-s,--shards", compare.shards, "Shard counts")->delimiter(',');
  compare_cmd->add_option("-j,--jobs", compare.jobs, "Worker threads (0 = hardware)");
  compare_cmd->add_option("-o,--output", compare.output, "Grid CSV path")->required();
  compare_cmd->add_flag("--force", compare.force, "Overwrite existing output");

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Export every metric for one placement run");
  report.stream.add_to(report_cmd);
  report_cmd->add_option("-a,--algorithm", report.algorithm, "Placement algorithm")->check(CLI::IsMember(kAlgorithms));
  report_cmd->add_option("-s,--shards", report.shards, "Shard count");
  report_cmd->add_option("--window", report.window, "Transactions per bucket")->check(CLI::PositiveNumber);
  report_cmd->add_flag("--simulate", report.simulate, "Also run the simulation and export its report");
  report_cmd->add_flag("--feedback", report.feedback, "Simulate with online feedback placement");
  add_drive_options(report_cmd, report.drive);
  report_cmd->add_option("-o,--output", report.output, "Report directory")->required();
  report_cmd->add_flag("--force", report.force, "Overwrite a non-empty report directory");

  for (auto* sub : app.get_subcommands({})) {
    sub->configurable();
    sub->allow_config_extras(CLI::config_extras_mode::error);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  CLI::App* chosen = app.get_subcommands().front();
  // Unset optional values print as "" and are dropped so the banner reloads as a config file.
  std::string banner;
  std::istringstream lines(chosen->config_to_str(true, false));
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty() && !line.ends_with("=\"\"")) banner += line + '\n';
  }
  spdlog::info("effective config:\n[{}]\n{}", chosen->get_name(), banner);

  try {
    if (chosen == gen_cmd) cmd_gen(gen);
    else if (chosen == analyze_cmd) cmd_analyze(analyze);
    else if (chosen == place_cmd) cmd_place(place);
    else if (chosen == sim_cmd) cmd_simulate(simulate);
    else if (chosen == compare_cmd) cmd_compare(compare);
    else if (chosen == report_cmd) cmd_report(report);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kUsageError;
  } catch (const workload::SpecError& e) {
    spdlog::error("{}", e.what());
    return kUsageError;
  } catch (const sim::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeFailure;
  }
  return 0;
}
