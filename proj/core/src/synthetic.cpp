#include "telto/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <tuple>

#include "telto/rng.hpp"

namespace telto {
namespace {

void check_config(const RoadTopology& topology, const GeneratorConfig& c) {
  if (c.days < 1) throw std::invalid_argument("generator: days must be >= 1");
  if (c.interval <= 0 || 86400 % c.interval != 0)
    throw std::invalid_argument("generator: interval must divide 86400");
  if (c.gct_mean < 0 || c.mob_mean < 0)
    throw std::invalid_argument("generator: mean levels must be non-negative");
  if (c.commute_amplitude < 0 || c.diurnal_strength < 0 || c.diurnal_strength > 1)
    throw std::invalid_argument("generator: profile strengths out of range");
  if (c.weekend_factor <= 0) throw std::invalid_argument("generator: weekend_factor must be > 0");
  if (c.noise_level < 0) throw std::invalid_argument("generator: noise_level must be >= 0");
  if (c.propagation < 0 || c.propagation >= 1)
    throw std::invalid_argument("generator: propagation must be in [0,1)");
  if (c.propagation_delay < 0) throw std::invalid_argument("generator: propagation_delay must be >= 0");
  if (c.entity_spread < 0) throw std::invalid_argument("generator: entity_spread must be >= 0");
  if (!c.segment_level_overrides.empty() &&
      c.segment_level_overrides.size() != topology.segment_count())
    throw std::invalid_argument("generator: segment_level_overrides size mismatch");
  if (!c.route_level_overrides.empty() && c.route_level_overrides.size() != topology.route_count())
    throw std::invalid_argument("generator: route_level_overrides size mismatch");
  for (double v : c.segment_level_overrides)
    if (v < 0) throw std::invalid_argument("generator: negative segment override");
  for (double v : c.route_level_overrides)
    if (v < 0) throw std::invalid_argument("generator: negative route override");
}

double bump(double hour, double center, double width) {
  const double d = (hour - center) / width;
  return std::exp(-0.5 * d * d);
}

// Per-step expected-rate shape, normalized later to mean 1 over the run.
struct Profile {
  std::vector<double> mob;
  std::vector<double> gct;
};

Profile build_profile(const GeneratorConfig& c, std::size_t T) {
  Profile prof;
  prof.mob.resize(T);
  prof.gct.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::int64_t ts = c.start_timestamp + static_cast<std::int64_t>(t) * c.interval;
    const std::int64_t day = ts / 86400;
    const int dow = static_cast<int>((day + 4) % 7);  // 0 = Sunday
    const bool weekend = dow == 0 || dow == 6;
    const double hour = static_cast<double>(ts % 86400) / 3600.0;

    const double night_mob = 0.30 + 0.70 * bump(hour, 13.5, 4.5);
    const double night_gct = 0.45 + 0.55 * bump(hour, 13.5, 5.0);
    const double base_mob = 1.0 + c.diurnal_strength * (night_mob - 1.0);
    const double base_gct = 1.0 + c.diurnal_strength * (night_gct - 1.0);

    double m, g;
    if (weekend) {
      const double leisure = 1.0 + c.commute_amplitude * 0.5 * bump(hour, 14.0, 3.0);
      m = c.weekend_factor * base_mob * leisure;
      g = 0.5 * (1.0 + c.weekend_factor) * base_gct * leisure;
    } else {
      m = base_mob *
          (1.0 + c.commute_amplitude * (2.0 * bump(hour, 8.0, 1.3) + 0.6 * bump(hour, 18.0, 1.7)));
      g = base_gct *
          (1.0 + c.commute_amplitude * (1.1 * bump(hour, 8.0, 1.5) + 1.1 * bump(hour, 18.0, 2.0)));
    }
    prof.mob[t] = m;
    prof.gct[t] = g;
  }
  for (std::vector<double>* p : {&prof.mob, &prof.gct}) {
    double mean = 0.0;
    for (double v : *p) mean += v;
    mean /= static_cast<double>(T);
    for (double& v : *p) v /= mean;
  }
  return prof;
}

// Multipliers with sample mean exactly 1.
std::vector<double> level_multipliers(std::size_t n, const std::vector<double>& overrides,
                                      double spread, Rng& rng) {
  std::vector<double> mult(n, 1.0);
  if (!overrides.empty()) {
    mult = overrides;
  } else {
    for (double& v : mult) v = std::exp(spread * rng.normal() - 0.5 * spread * spread);
  }
  double mean = 0.0;
  for (double v : mult) mean += v;
  mean /= static_cast<double>(n);
  if (mean <= 0.0) throw std::invalid_argument("generator: degenerate level multipliers");
  for (double& v : mult) v /= mean;
  return mult;
}

// Stationary lognormal AR(1), E[value] = 1.
std::vector<double> jitter_chain(std::size_t T, double sigma, Rng& rng) {
  constexpr double rho = 0.8;
  const double stat_sd = sigma / std::sqrt(1.0 - rho * rho);
  const double half_var = 0.5 * stat_sd * stat_sd;
  std::vector<double> out(T);
  double x = stat_sd * rng.normal();
  out[0] = std::exp(x - half_var);
  for (std::size_t t = 1; t < T; ++t) {
    x = rho * x + sigma * rng.normal();
    out[t] = std::exp(x - half_var);
  }
  return out;
}

std::string hex_id(char prefix, std::uint64_t counter) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%c%llx", prefix, static_cast<unsigned long long>(counter));
  return buf;
}

}  // namespace

SyntheticData generate_synthetic(const RoadTopology& topology, const GeneratorConfig& config,
                                 std::uint64_t seed) {
  check_config(topology, config);
  const std::size_t N = topology.segment_count();
  const std::size_t M = topology.route_count();
  if (N == 0) throw std::invalid_argument("generator: topology has no segments");
  const std::size_t T =
      static_cast<std::size_t>(config.days) * static_cast<std::size_t>(86400 / config.interval);
  const std::int64_t series_start = config.start_timestamp;
  const std::int64_t series_end = series_start + static_cast<std::int64_t>(T) * config.interval;

  Rng rng(seed);
  const Profile prof = build_profile(config, T);
  const std::vector<double> seg_mult =
      level_multipliers(N, config.segment_level_overrides, config.entity_spread, rng);
  const std::vector<double> route_mult =
      M ? level_multipliers(M, config.route_level_overrides, config.entity_spread, rng)
        : std::vector<double>{};

  std::vector<std::vector<double>> seg_jitter(N), route_jitter(M);
  for (std::size_t s = 0; s < N; ++s) seg_jitter[s] = jitter_chain(T, config.noise_level, rng);
  for (std::size_t r = 0; r < M; ++r) route_jitter[r] = jitter_chain(T, config.noise_level, rng);

  // Downstream continuations (reverse excluded so chains do not ping-pong).
  std::vector<std::vector<int>> downstream(M);
  for (std::size_t q = 0; q < M; ++q)
    for (std::size_t r = 0; r < M; ++r) {
      if (q == r) continue;
      const Route& a = topology.routes[q];
      const Route& b = topology.routes[r];
      if (a.end_segment != b.start_segment) continue;
      if (b.end_segment == a.start_segment) continue;
      downstream[q].push_back(static_cast<int>(r));
    }

  // Steady-state traversal rates: lambda = inj + K lambda, where K routes a
  // finished traversal downstream with probability `propagation`, split
  // uniformly. Scaled afterwards so mean(lambda) = mob_mean.
  std::vector<double> inj(M), lambda(M, 0.0);
  for (std::size_t r = 0; r < M; ++r) inj[r] = route_mult[r];
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<double> next = inj;
    for (std::size_t q = 0; q < M; ++q) {
      if (downstream[q].empty()) continue;
      const double share = config.propagation * lambda[q] / downstream[q].size();
      for (int r : downstream[q]) next[r] += share;
    }
    lambda.swap(next);
  }
  if (M > 0 && config.mob_mean > 0) {
    double mean = 0.0;
    for (double v : lambda) mean += v;
    mean /= static_cast<double>(M);
    const double scale = config.mob_mean / mean;
    for (double& v : inj) v *= scale;
    for (double& v : lambda) v *= scale;
  } else {
    std::fill(inj.begin(), inj.end(), 0.0);
    std::fill(lambda.begin(), lambda.end(), 0.0);
  }

  // Expected agent records per segment per step, for background subtraction.
  std::vector<double> agent_level(N, 0.0);
  for (std::size_t r = 0; r < M; ++r) {
    agent_level[topology.routes[r].start_segment] += lambda[r];
    agent_level[topology.routes[r].end_segment] += lambda[r];
  }

  SyntheticData out;
  out.gct.kind = FlowKind::gct;
  out.gct.entity_count = N;
  out.gct.interval = config.interval;
  out.gct.start_timestamp = series_start;
  out.gct.values = Tensor<double>({N, T}, 0.0);
  out.mob.kind = FlowKind::mobility;
  out.mob.entity_count = M;
  out.mob.interval = config.interval;
  out.mob.start_timestamp = series_start;
  out.mob.values = Tensor<double>({M, T}, 0.0);

  const bool poisson = config.noise_level > 0.0;
  auto draw_count = [&](double rate) -> std::int64_t {
    if (rate <= 0.0) return 0;
    return poisson ? static_cast<std::int64_t>(rng.poisson(rate)) : std::llround(rate);
  };
  auto bucket_of = [&](std::int64_t ts) -> std::int64_t {
    return (ts - series_start) / config.interval;
  };
  auto add_gct = [&](int segment, std::int64_t ts) {
    if (ts < series_start || ts >= series_end) return;
    out.gct.values.data[static_cast<std::size_t>(segment) * T +
                        static_cast<std::size_t>(bucket_of(ts))] += 1.0;
  };

  std::uint64_t agent_counter = 0, background_counter = 0;
  // Legs take 60-600 s, inside the default 900 s pairing window.
  const std::int64_t max_dur = 600;
  const std::int64_t horizon = series_end + 2 * config.interval;

  // Traversals, including chained downstream legs (fresh hash per leg so
  // reconstruction by pairing is exact).
  for (std::size_t t = 0; t < T; ++t) {
    const std::int64_t bucket_start = series_start + static_cast<std::int64_t>(t) * config.interval;
    for (std::size_t r = 0; r < M; ++r) {
      const double rate = inj[r] * prof.mob[t] * route_jitter[r][t];
      const std::int64_t n = draw_count(rate);
      for (std::int64_t k = 0; k < n; ++k) {
        int route = static_cast<int>(r);
        std::int64_t ts = bucket_start + rng.uniform_int(0, config.interval - 1);
        for (int leg = 0; leg < 8; ++leg) {
          const std::int64_t dur = rng.uniform_int(60, max_dur);
          const std::int64_t te = ts + dur;
          const Route& rt = topology.routes[route];
          if (config.emit_records) {
            const std::string hash = hex_id('a', agent_counter);
            out.records.push_back({hash, ts, rt.start_segment});
            out.records.push_back({hash, te, rt.end_segment});
          }
          ++agent_counter;
          add_gct(rt.start_segment, ts);
          add_gct(rt.end_segment, te);
          if (ts >= series_start && ts < series_end)
            out.mob.values.data[static_cast<std::size_t>(route) * T +
                                static_cast<std::size_t>(bucket_of(ts))] += 1.0;
          if (downstream[route].empty() || rng.uniform() >= config.propagation) break;
          route = downstream[route][rng.uniform_int(
              0, static_cast<std::int64_t>(downstream[route].size()) - 1)];
          ts = te + (config.propagation_delay > 30
                         ? rng.uniform_int(30, config.propagation_delay)
                         : config.propagation_delay);
          if (ts >= horizon) break;
        }
      }
    }
  }

  // Stationary/pedestrian background pings: GCT volume with no mobility.
  // Counts are drawn before any in-bucket offsets so the flows do not depend
  // on emit_records.
  std::vector<std::int64_t> background(N * T, 0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < N; ++s) {
      const double target = config.gct_mean * seg_mult[s] * prof.gct[t];
      const double rate = std::max(0.0, target - agent_level[s] * prof.mob[t]) * seg_jitter[s][t];
      const std::int64_t n = draw_count(rate);
      background[s * T + t] = n;
      out.gct.values.data[s * T + t] += static_cast<double>(n);
    }
  if (config.emit_records)
    for (std::size_t t = 0; t < T; ++t) {
      const std::int64_t bucket_start =
          series_start + static_cast<std::int64_t>(t) * config.interval;
      for (std::size_t s = 0; s < N; ++s)
        for (std::int64_t k = 0; k < background[s * T + t]; ++k)
          out.records.push_back({hex_id('b', background_counter++),
                                 bucket_start + rng.uniform_int(0, config.interval - 1),
                                 static_cast<int>(s)});
    }

  std::sort(out.records.begin(), out.records.end(), [](const GctRecord& a, const GctRecord& b) {
    return std::tie(a.timestamp, a.user_hash, a.segment_id) <
           std::tie(b.timestamp, b.user_hash, b.segment_id);
  });
  return out;
}

}  // namespace telto
