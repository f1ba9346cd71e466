#include "shardplace/simulator.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "shardplace/rng.hpp"

namespace shardplace::sim {

namespace {

constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::max();

std::int64_t to_ns(double value, double ns_per_unit) { return std::llround(value * ns_per_unit); }

/// Per-request lognormal factor, a pure function of (seed, tx, request) so the
/// draw does not depend on the order requests reach service.
double jitter_factor(double sigma, std::uint64_t seed, std::uint64_t tx, std::uint32_t request) {
  if (sigma <= 0.0) return 1.0;
  const std::uint64_t a = mix64(seed ^ mix64(tx * 0x100 + request));
  const std::uint64_t b = mix64(a);
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return std::exp(sigma * z);
}

}  // namespace

std::string_view to_string(RequestKind kind) {
  switch (kind) {
    case RequestKind::Tx: return "TX";
    case RequestKind::Lock: return "LOCK";
    case RequestKind::Commit: return "COMMIT";
    case RequestKind::Unlock: return "UNLOCK";
  }
  return "?";
}

std::string_view to_string(ArrivalProcess process) {
  return process == ArrivalProcess::Uniform ? "uniform" : "poisson";
}

ArrivalProcess parse_arrival_process(std::string_view tag) {
  if (tag == "uniform") return ArrivalProcess::Uniform;
  if (tag == "poisson") return ArrivalProcess::Poisson;
  throw ConfigError(fmt::format("unknown arrival process \"{}\" (expected uniform or poisson)", tag));
}

CostBreakdown CostBreakdown::defaults() {
  return {
      .tx = {{"Sig", 150.0}, {"UTXO_exist_value", 40.0}, {"Spend_add", 21.0}},
      .lock = {{"Sig", 150.0}, {"UTXO_exist", 38.0}, {"Spend", 20.0}, {"Sign", 120.0}, {"Send", 110.0}},
      .commit = {{"Shard_sig", 200.0}, {"Value", 30.0}, {"Add", 29.0}},
      .unlock = {{"Sig", 150.0}, {"UTXO_exist", 38.0}, {"Spend", 20.0}, {"Sign", 120.0}, {"Send", 110.0}},
  };
}

double CostBreakdown::total(std::span<const CostStep> steps) {
  double sum = 0.0;
  for (const CostStep& s : steps) sum += s.micros;
  return sum;
}

double CostModel::service_us(RequestKind kind) const {
  switch (kind) {
    case RequestKind::Tx: return tx_service_us;
    case RequestKind::Lock: return lock_service_us;
    case RequestKind::Commit: return commit_service_us;
    case RequestKind::Unlock: return unlock_service_us;
  }
  return 0.0;
}

double CostModel::mean_service_us() const { return (tx_service_us + lock_service_us + commit_service_us) / 3.0; }

void CostModel::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"tx_service", tx_service_us},       {"lock_service", lock_service_us}, {"commit_service", commit_service_us},
      {"unlock_service", unlock_service_us}, {"link_latency", link_latency_ms}, {"bandwidth", bandwidth_mbps},
      {"jitter_sigma", jitter_sigma}};
  for (const auto& [name, value] : fields) {
    if (!(value >= 0.0) || !std::isfinite(value)) throw ConfigError(fmt::format("{} must be finite and >= 0", name));
  }
}

CostModel CostModel::from_breakdown(const CostBreakdown& breakdown) {
  CostModel model;
  model.tx_service_us = CostBreakdown::total(breakdown.tx);
  model.lock_service_us = CostBreakdown::total(breakdown.lock);
  model.commit_service_us = CostBreakdown::total(breakdown.commit);
  model.unlock_service_us = CostBreakdown::total(breakdown.unlock);
  return model;
}

void DriveConfig::validate() const {
  if (!(arrival_rate_tps > 0.0) || !std::isfinite(arrival_rate_tps)) throw ConfigError("arrival rate must be > 0");
  if (!(duration_cap_s > 0.0)) throw ConfigError("duration cap must be > 0");
  if (!(bucket_s > 0.0) || !std::isfinite(bucket_s)) throw ConfigError("bucket length must be > 0");
  if (!(probe_period_ms > 0.0) || !std::isfinite(probe_period_ms)) throw ConfigError("probe period must be > 0");
  if (!(feedback_scale >= 0.0) || !std::isfinite(feedback_scale)) throw ConfigError("feedback scale must be >= 0");
}

RequestPlan plan_requests(const txgraph::Transaction& tx, const PlacementDecision& decision, bool inject_lock_failure) {
  if (decision.tx != tx.id) throw std::invalid_argument("plan_requests: decision belongs to another transaction");
  RequestPlan plan;
  plan.cross_shard = decision.cross_shard;
  if (!decision.cross_shard) {
    if (inject_lock_failure) throw std::invalid_argument("plan_requests: lock failures apply to cross-shard txs only");
    plan.requests.push_back({0, RequestKind::Tx, tx.id, decision.output_shard, {}, false});
    return plan;
  }
  std::vector<std::uint32_t> locks;
  for (ShardId shard : decision.input_shards) {
    const auto id = static_cast<std::uint32_t>(plan.requests.size());
    plan.requests.push_back({id, RequestKind::Lock, tx.id, shard, {}, inject_lock_failure && locks.empty()});
    locks.push_back(id);
  }
  if (!inject_lock_failure) {
    plan.requests.push_back(
        {static_cast<std::uint32_t>(plan.requests.size()), RequestKind::Commit, tx.id, decision.output_shard, locks, false});
    return plan;
  }
  plan.aborts = true;
  for (std::size_t k = 1; k < locks.size(); ++k) {
    plan.requests.push_back({static_cast<std::uint32_t>(plan.requests.size()), RequestKind::Unlock, tx.id,
                             plan.requests[locks[k]].shard, locks, false});
  }
  return plan;
}

FailureInjection inject_lock_failure(std::span<const PlacementDecision> decisions, const std::set<TxId>& txs) {
  std::unordered_map<TxId, const PlacementDecision*> by_id;
  for (const PlacementDecision& d : decisions) by_id.emplace(d.tx, &d);
  FailureInjection out;
  for (const TxId& id : txs) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw std::invalid_argument(fmt::format("cannot inject failure: unknown tx {}", id.to_hex()));
    if (!it->second->cross_shard) {
      throw std::invalid_argument(fmt::format("cannot inject failure: tx {} is single-shard", id.to_hex()));
    }
    out.txs.insert(id);
  }
  return out;
}

std::set<TxId> sample_cross_shard(std::span<const PlacementDecision> decisions, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("failure fraction must be in [0, 1]");
  Rng rng(derive_seed(seed, "sim.failures"));
  std::set<TxId> out;
  for (const PlacementDecision& d : decisions) {
    if (d.cross_shard && rng.bernoulli(fraction)) out.insert(d.tx);
  }
  return out;
}

double SimReport::total_busy_time_us() const {
  double sum = 0.0;
  for (double b : totals.busy_time_us) sum += b;
  return sum;
}

// ---------------------------------------------------------------------------

struct Simulation::Impl {
  enum class EventKind : std::uint8_t { Arrival, AtShard, ServiceDone, AtClient };

  struct Event {
    std::int64_t time;
    std::uint64_t seq;
    EventKind kind;
    std::uint32_t a;  // tx index, or shard for ServiceDone
    std::uint32_t b;  // request id
  };
  struct Later {
    bool operator()(const Event& x, const Event& y) const {
      return x.time != y.time ? x.time > y.time : x.seq > y.seq;
    }
  };

  struct Work {
    std::uint32_t tx = 0;
    std::uint32_t request = 0;
    std::int64_t service_ns = 0;
  };

  struct Shard {
    std::deque<Work> queue;
    bool busy = false;
    Work current;
    std::int64_t start = 0;
    std::int64_t end = 0;
    std::vector<std::int64_t> busy_by_bucket;
    std::int64_t busy_total = 0;
  };

  struct TxRun {
    RequestPlan plan;
    std::vector<std::uint32_t> waiting;  // unmet dependencies per request
    std::uint32_t outstanding = 0;
    std::int64_t submitted_at = 0;
  };

  Impl(const txgraph::TxStream& s, std::uint32_t n, PlacementSource p, CostModel c, DriveConfig d,
       FailureInjection f, bool fb)
      : stream(s),
        n_shards(n),
        placement(std::move(p)),
        cost(c),
        drive(d),
        failures(std::move(f)),
        use_feedback(fb),
        arrivals(derive_seed(d.seed, "sim.arrivals")),
        jitter_seed(derive_seed(d.seed, "sim.jitter")) {
    if (n_shards == 0) throw ConfigError("n_shards must be >= 1");
    cost.validate();
    drive.validate();
    link_ns = to_ns(cost.link_latency_ms, 1e6);
    bucket_ns = std::max<std::int64_t>(1, to_ns(drive.bucket_s, 1e9));
    probe_ns = std::max<std::int64_t>(1, to_ns(drive.probe_period_ms, 1e6));
    cap_ns = std::isfinite(drive.duration_cap_s) ? to_ns(drive.duration_cap_s, 1e9) : kNever;
    feedback_scale = drive.feedback_scale > 0.0 ? drive.feedback_scale
                                                : drive.arrival_rate_tps * cost.mean_service_us() * 1e-6 * 10.0;
    shards.resize(n_shards);
    runs.resize(stream.size());
    busy_totals.assign(n_shards, 0);
    if (!stream.empty()) push(0, EventKind::Arrival, 0, 0);
  }

  void push(std::int64_t time, EventKind kind, std::uint32_t a, std::uint32_t b) {
    events.push({time, seq++, kind, a, b});
  }

  std::uint64_t bucket_of(std::int64_t t) const { return static_cast<std::uint64_t>(t / bucket_ns); }

  void snapshot_until(std::int64_t t) {
    while (static_cast<std::int64_t>(recorded + 1) * bucket_ns <= t) record_bucket();
  }

  void record_bucket() {
    conservation.push_back({recorded, submitted, completed, aborted, in_flight});
    std::vector<std::uint64_t> q(n_shards);
    for (std::uint32_t s = 0; s < n_shards; ++s) q[s] = shards[s].queue.size() + (shards[s].busy ? 1 : 0);
    queue_at_end.push_back(std::move(q));
    ++recorded;
  }

  bool has_next() const { return !events.empty() && events.top().time <= cap_ns; }

  void run_until(std::int64_t limit) {
    const std::int64_t stop = std::min(limit, cap_ns);
    while (!events.empty() && events.top().time <= stop) {
      const Event ev = events.top();
      events.pop();
      snapshot_until(ev.time);
      now = ev.time;
      switch (ev.kind) {
        case EventKind::Arrival: on_arrival(ev.a); break;
        case EventKind::AtShard: on_at_shard(ev.a, ev.b); break;
        case EventKind::ServiceDone: on_service_done(ev.a); break;
        case EventKind::AtClient: on_at_client(ev.a, ev.b); break;
      }
    }
    if (stop > now && stop != kNever) now = stop;
    if (!has_next() && !closed) {
      snapshot_until(now);
      record_bucket();  // final, possibly partial, bucket
      closed = true;
    }
  }

  std::int64_t arrival_time(std::uint32_t i) {
    if (drive.arrivals == ArrivalProcess::Uniform) return to_ns(static_cast<double>(i) / drive.arrival_rate_tps, 1e9);
    return now + std::max<std::int64_t>(0, to_ns(arrivals.exponential(drive.arrival_rate_tps), 1e9));
  }

  void on_arrival(std::uint32_t i) {
    if (use_feedback && (!probed || now - last_probe >= probe_ns)) {
      feedback.resize(n_shards);
      for (std::uint32_t s = 0; s < n_shards; ++s) feedback[s] = probe(s);
      last_probe = now;
      probed = true;
    }
    const PlacementDecision decision =
        placement(i, use_feedback ? std::span<const ShardFeedback>(feedback) : std::span<const ShardFeedback>{});
    if (decision.tx != stream[i].id || decision.output_shard >= n_shards) {
      throw std::logic_error(fmt::format("placement for tx {} is invalid", i));
    }
    const bool fail = failures.txs.contains(decision.tx);
    TxRun& run = runs[i];
    run.plan = plan_requests(stream[i], decision, fail);
    run.submitted_at = now;
    run.outstanding = static_cast<std::uint32_t>(run.plan.requests.size());
    run.waiting.resize(run.plan.requests.size());
    ++submitted;
    ++in_flight;
    if (run.plan.cross_shard) ++cross;
    for (const Request& r : run.plan.requests) {
      run.waiting[r.id] = static_cast<std::uint32_t>(r.depends_on.size());
      if (r.depends_on.empty()) dispatch(i, r.id);
    }
    if (i + 1 < stream.size()) push(std::max(now, arrival_time(i + 1)), EventKind::Arrival, i + 1, 0);
  }

  void dispatch(std::uint32_t tx, std::uint32_t request) { push(now + link_ns, EventKind::AtShard, tx, request); }

  void on_at_shard(std::uint32_t tx, std::uint32_t request) {
    const Request& r = runs[tx].plan.requests[request];
    const double factor = jitter_factor(cost.jitter_sigma, jitter_seed, tx, request);
    Shard& shard = shards[r.shard];
    shard.queue.push_back({tx, request, to_ns(cost.service_us(r.kind) * factor, 1e3)});
    if (!shard.busy) start_next(r.shard);
  }

  void start_next(ShardId s) {
    Shard& shard = shards[s];
    if (shard.queue.empty()) {
      shard.busy = false;
      return;
    }
    shard.current = shard.queue.front();
    shard.queue.pop_front();
    shard.busy = true;
    shard.start = now;
    shard.end = now + shard.current.service_ns;
    push(shard.end, EventKind::ServiceDone, s, 0);
  }

  void account_busy(Shard& shard, std::int64_t from, std::int64_t to) {
    shard.busy_total += to - from;
    while (from < to) {
      const std::uint64_t b = bucket_of(from);
      const std::int64_t edge = std::min<std::int64_t>(to, static_cast<std::int64_t>(b + 1) * bucket_ns);
      if (shard.busy_by_bucket.size() <= b) shard.busy_by_bucket.resize(b + 1, 0);
      shard.busy_by_bucket[b] += edge - from;
      from = edge;
    }
  }

  void on_service_done(std::uint32_t s) {
    Shard& shard = shards[s];
    const Work work = shard.current;
    account_busy(shard, shard.start, now);
    TxRun& run = runs[work.tx];
    const Request& r = run.plan.requests[work.request];
    ++request_counts[static_cast<std::size_t>(r.kind)];
    if (drive.record_trace) trace.push_back({work.tx, r.kind, s, shard.start, now, !r.fails});
    if (r.kind == RequestKind::Tx || r.kind == RequestKind::Commit) {
      --run.outstanding;
      ++completed;
      --in_flight;
      latencies_ms.push_back(static_cast<double>(now - run.submitted_at) / 1e6);
      const std::uint64_t b = bucket_of(now);
      if (completed_by_bucket.size() <= b) completed_by_bucket.resize(b + 1, 0);
      ++completed_by_bucket[b];
      last_finish = std::max(last_finish, now);
      run = TxRun{};
    } else {
      push(now + link_ns, EventKind::AtClient, work.tx, work.request);
    }
    start_next(s);
  }

  void on_at_client(std::uint32_t tx, std::uint32_t request) {
    TxRun& run = runs[tx];
    --run.outstanding;
    for (const Request& r : run.plan.requests) {
      if (std::find(r.depends_on.begin(), r.depends_on.end(), request) != r.depends_on.end() &&
          --run.waiting[r.id] == 0) {
        dispatch(tx, r.id);
      }
    }
    if (run.plan.aborts && run.outstanding == 0) {
      ++aborted;
      --in_flight;
      last_finish = std::max(last_finish, now);
      run = TxRun{};
    }
  }

  ShardFeedback probe(ShardId s) const {
    const Shard& shard = shards.at(s);
    double drain_ns = shard.busy ? static_cast<double>(shard.end - now) : 0.0;
    for (const Work& w : shard.queue) drain_ns += static_cast<double>(w.service_ns);
    return {static_cast<double>(shard.queue.size() + (shard.busy ? 1 : 0)),
            cost.link_latency_ms + drain_ns / 1e6};
  }

  SimReport report() const {
    SimReport rep;
    for (std::size_t b = 0; b < std::max<std::size_t>(completed_by_bucket.size(), recorded); ++b) {
      rep.throughput_series.push_back({b, b < completed_by_bucket.size() ? completed_by_bucket[b] : 0});
    }
    if (!latencies_ms.empty()) {
      std::vector<double> sorted = latencies_ms;
      std::sort(sorted.begin(), sorted.end());
      const auto rank = [&](double p) {
        const auto k = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
        return sorted[std::clamp<std::size_t>(k, 1, sorted.size()) - 1];
      };
      rep.latency = LatencyPercentiles{rank(50), rank(95), rank(99)};
    }
    for (std::uint64_t b = 0; b < recorded; ++b) {
      for (std::uint32_t s = 0; s < n_shards; ++s) {
        const auto& busy = shards[s].busy_by_bucket;
        const double frac = b < busy.size() ? static_cast<double>(busy[b]) / static_cast<double>(bucket_ns) : 0.0;
        rep.shard_load_series.push_back({b, s, frac, queue_at_end[b][s]});
      }
    }
    rep.conservation = conservation;
    SimTotals& t = rep.totals;
    t.submitted = submitted;
    t.completed = completed;
    t.aborted = aborted;
    t.pending = in_flight;
    t.cross_shard = cross;
    t.makespan_s = static_cast<double>(last_finish) / 1e9;
    t.overall_tps = last_finish > 0 ? static_cast<double>(completed) / t.makespan_s : 0.0;
    t.truncated = completed + aborted < stream.size();
    for (const Shard& shard : shards) t.busy_time_us.push_back(static_cast<double>(shard.busy_total) / 1e3);
    t.requests = request_counts;
    rep.trace = trace;
    return rep;
  }

  const txgraph::TxStream& stream;
  std::uint32_t n_shards;
  PlacementSource placement;
  CostModel cost;
  DriveConfig drive;
  FailureInjection failures;
  bool use_feedback;
  Rng arrivals;
  std::uint64_t jitter_seed;

  std::int64_t link_ns = 0, bucket_ns = 1, probe_ns = 1, cap_ns = kNever;
  double feedback_scale = 1.0;

  std::priority_queue<Event, std::vector<Event>, Later> events;
  std::uint64_t seq = 0;
  std::int64_t now = 0;
  bool closed = false;

  std::vector<Shard> shards;
  std::vector<TxRun> runs;
  std::vector<ShardFeedback> feedback;
  bool probed = false;
  std::int64_t last_probe = 0;

  std::uint64_t submitted = 0, completed = 0, aborted = 0, in_flight = 0, cross = 0;
  std::int64_t last_finish = 0;
  std::vector<double> latencies_ms;
  std::vector<std::uint64_t> completed_by_bucket;
  std::vector<std::int64_t> busy_totals;
  std::uint64_t recorded = 0;
  std::vector<ConservationPoint> conservation;
  std::vector<std::vector<std::uint64_t>> queue_at_end;
  std::array<std::uint64_t, kRequestKinds> request_counts{};
  std::vector<RequestRecord> trace;
};

Simulation::Simulation(const txgraph::TxStream& stream, std::uint32_t n_shards, PlacementSource placement,
                       CostModel cost, DriveConfig drive, FailureInjection failures, bool use_feedback)
    : impl_(std::make_unique<Impl>(stream, n_shards, std::move(placement), cost, drive, std::move(failures),
                                   use_feedback)) {}

Simulation::~Simulation() = default;

void Simulation::run_until(double t_seconds) { impl_->run_until(to_ns(t_seconds, 1e9)); }
void Simulation::run() { impl_->run_until(kNever); }
double Simulation::now_s() const { return static_cast<double>(impl_->now) / 1e9; }
bool Simulation::finished() const { return !impl_->has_next(); }
ShardFeedback Simulation::probe(ShardId shard) const { return impl_->probe(shard); }
SimReport Simulation::report() const { return impl_->report(); }

ShardFeedback feedback_probe(const Simulation& sim, ShardId shard) { return sim.probe(shard); }

SimReport simulate(const txgraph::TxStream& stream, std::span<const PlacementDecision> decisions,
                   std::uint32_t n_shards, const CostModel& cost, const DriveConfig& drive,
                   const FailureInjection& failures) {
  if (decisions.size() != stream.size()) {
    throw std::invalid_argument(
        fmt::format("simulate: {} decisions for {} transactions", decisions.size(), stream.size()));
  }
  Simulation sim(
      stream, n_shards, [decisions](std::size_t i, std::span<const ShardFeedback>) { return decisions[i]; }, cost,
      drive, failures, false);
  sim.run();
  return sim.report();
}

SimReport simulate_online(placement::Placer& placer, const CostModel& cost, const DriveConfig& drive, bool feedback) {
  const double scale = drive.feedback_scale > 0.0 ? drive.feedback_scale
                                                  : drive.arrival_rate_tps * cost.mean_service_us() * 1e-6 * 10.0;
  Simulation sim(
      placer.stream(), placer.state().n_shards,
      [&placer, scale](std::size_t i, std::span<const ShardFeedback> fb) {
        if (i != placer.next_index()) throw std::logic_error("online placement out of order");
        return placer.place_next(fb, scale);
      },
      cost, drive, {}, feedback);
  sim.run();
  return sim.report();
}

std::string summary_json(const SimReport& report) {
  using nlohmann::ordered_json;
  const SimTotals& t = report.totals;
  ordered_json doc;
  doc["submitted"] = t.submitted;
  doc["completed"] = t.completed;
  doc["aborted"] = t.aborted;
  doc["pending"] = t.pending;
  doc["cross_shard"] = t.cross_shard;
  doc["overall_tps"] = t.overall_tps;
  doc["makespan_s"] = t.makespan_s;
  doc["truncated"] = t.truncated;
  if (report.latency) {
    doc["latency_ms"] = {{"p50", report.latency->p50_ms}, {"p95", report.latency->p95_ms}, {"p99", report.latency->p99_ms}};
  } else {
    doc["latency_ms"] = nullptr;
  }
  doc["busy_time_us"] = t.busy_time_us;
  ordered_json requests;
  for (std::size_t k = 0; k < kRequestKinds; ++k) requests[std::string(to_string(static_cast<RequestKind>(k)))] = t.requests[k];
  doc["requests"] = requests;
  return doc.dump(2) + "\n";
}

std::vector<std::filesystem::path> write_report(const SimReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", p.string()));
    return out;
  };
  std::vector<std::filesystem::path> written;

  // Bucket index doubles as the second column when buckets are 1 s long.
  {
    const auto p = dir / "throughput.csv";
    auto out = open(p);
    out << "second,completed\n";
    for (const auto& pt : report.throughput_series) out << pt.bucket << ',' << pt.completed << '\n';
    written.push_back(p);
  }
  {
    const auto p = dir / "latency.csv";
    auto out = open(p);
    out << "percentile,latency_ms\n";
    if (report.latency) {
      out << fmt::format("50,{}\n95,{}\n99,{}\n", report.latency->p50_ms, report.latency->p95_ms,
                         report.latency->p99_ms);
    }
    written.push_back(p);
  }
  {
    const auto p = dir / "shard_load.csv";
    auto out = open(p);
    out << "second,shard,busy_fraction,queue_length\n";
    for (const auto& pt : report.shard_load_series) {
      out << fmt::format("{},{},{},{}\n", pt.bucket, pt.shard, pt.busy_fraction, pt.queue_length);
    }
    written.push_back(p);
  }
  {
    const auto p = dir / "summary.json";
    auto out = open(p);
    out << summary_json(report);
    written.push_back(p);
  }
  return written;
}

}  // namespace shardplace::sim
