#ifndef SFATTACK_HARNESS_HPP
#define SFATTACK_HARNESS_HPP

// Attack grids over datasets, AEPE aggregation and JSON/CSV reports.
//
// AEPE of a group is the mean of its per-pair EPEs (every pair weighs the same
// regardless of point count). Relative degradation is
//   rel = (aepe_after - aepe_before) / aepe_before
// and is null when aepe_before == 0.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sfattack/attacks.hpp"
#include "sfattack/estimator.hpp"
#include "sfattack/rng.hpp"

namespace sfattack {

inline constexpr const char* kToolVersion = "0.1.0";

struct ExperimentRecord {
  std::string pair_id;
  std::string estimator;  // tag
  std::string estimator_config;
  std::string attack;  // none | fgsm | pgd | random
  std::string mask;
  double eps = 0.0;
  int iters = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
  double epe_unattacked = 0.0;
  double epe_attacked = 0.0;
  std::optional<double> rel;
  std::int64_t wall_time_ms = 0;
  std::string error;  // non-empty: the attack failed and EPE fields are meaningless

  friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

struct Aggregate {
  std::string estimator;
  std::string attack;
  std::string mask;
  double eps = 0.0;
  int iters = 0;
  double alpha = 0.0;
  std::string config_digest;
  std::size_t count = 0;
  double aepe_before = 0.0;
  double aepe_after = 0.0;
  std::optional<double> rel;

  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

struct Provenance {
  std::string tool_version = kToolVersion;
  std::uint64_t seed = 0;
  std::string estimator_config;
  std::string aepe_definition = "mean over pairs of per-pair mean EPE";
  std::string timestamp;  // empty unless timing was requested

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Report {
  std::vector<ExperimentRecord> records;
  std::vector<Aggregate> aggregates;
  Provenance provenance;
  std::vector<std::string> diagnostics;

  friend bool operator==(const Report&, const Report&) = default;
};

/// (after - before) / before; empty when before is zero.
inline std::optional<double> relative_degradation(double before, double after) {
  if (before == 0.0) return std::nullopt;
  return (after - before) / before;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunOptions {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  bool timing = false;
};

/// Groups valid records by (estimator, attack config) and averages in sorted record order.
inline std::vector<Aggregate> aggregate(const std::vector<ExperimentRecord>& sorted_records,
                                        const std::vector<std::string>& group_order,
                                        std::vector<std::string>* diagnostics = nullptr) {
  std::map<std::string, Aggregate> groups;
  for (const auto& r : sorted_records) {
    if (!r.error.empty()) continue;
    const std::string key = r.estimator_config + "#" + r.config_digest;
    auto [it, fresh] = groups.try_emplace(key);
    Aggregate& a = it->second;
    if (fresh) {
      a.estimator = r.estimator;
      a.attack = r.attack;
      a.mask = r.mask;
      a.eps = r.eps;
      a.iters = r.iters;
      a.alpha = r.alpha;
      a.config_digest = r.config_digest;
    }
    ++a.count;
    a.aepe_before += r.epe_unattacked;
    a.aepe_after += r.epe_attacked;
  }
  std::vector<Aggregate> out;
  for (const auto& key : group_order) {
    auto it = groups.find(key);
    if (it == groups.end()) continue;
    Aggregate a = it->second;
    a.aepe_before /= static_cast<double>(a.count);
    a.aepe_after /= static_cast<double>(a.count);
    a.rel = a.attack == "none" ? std::optional<double>(0.0) : relative_degradation(a.aepe_before, a.aepe_after);
    if (!a.rel && diagnostics)
      diagnostics->push_back("group " + a.attack + "/" + a.mask + ": aepe_before is 0, rel undefined");
    out.push_back(std::move(a));
    groups.erase(it);
  }
  return out;
}

/// Runs every config of `grid` on every pair. Cells may run on `opt.jobs`
/// threads; records are sorted by (pair_id, config digest) before aggregation,
/// so the report does not depend on scheduling or dataset order.
inline Report run_experiment(const std::vector<ScenePair>& dataset, const Estimator& est,
                             const std::vector<AttackConfig>& grid, const RunOptions& opt = {}) {
  if (grid.empty()) throw ValidationError("run_experiment: empty attack grid");
  if (dataset.empty()) throw ValidationError("run_experiment: empty dataset");
  for (const auto& p : dataset) {
    if (!p.gt_flow) throw ValidationError("run_experiment: pair '" + p.id + "' has no ground-truth flow");
  }
  {
    std::vector<std::string> ids;
    for (const auto& p : dataset) ids.push_back(p.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw ValidationError("run_experiment: duplicate pair ids");
  }

  const std::string est_config = est.config();
  std::vector<std::string> digests;
  for (const auto& c : grid) digests.push_back(hex64(fnv1a(c.canonical())));

  std::vector<std::optional<double>> before(dataset.size());
  std::vector<std::string> before_error(dataset.size());
  std::vector<ExperimentRecord> records(dataset.size() * grid.size());
  const std::size_t cells = records.size() + dataset.size();

  auto run_cell = [&](std::size_t cell) {
    if (cell < dataset.size()) {
      try {
        before[cell] = attack_loss(dataset[cell], est);
      } catch (const std::exception& e) {
        before_error[cell] = e.what();
      }
      return;
    }
    cell -= dataset.size();
    const std::size_t pi = cell / grid.size(), ci = cell % grid.size();
    const ScenePair& pair = dataset[pi];
    AttackConfig cfg = grid[ci];
    cfg.seed = derive_seed(opt.seed, fnv1a(pair.id + "#" + cfg.canonical()));

    ExperimentRecord& r = records[cell];
    r.pair_id = pair.id;
    r.estimator = est.tag();
    r.estimator_config = est_config;
    r.attack = to_string(cfg.kind);
    r.mask = cfg.kind == AttackKind::kNone ? "none" : cfg.mask.spec();
    r.eps = cfg.kind == AttackKind::kNone ? 0.0 : cfg.eps;
    r.iters = cfg.kind == AttackKind::kFgsm ? 1 : (cfg.kind == AttackKind::kPgd ? cfg.iters : 0);
    r.alpha = cfg.kind == AttackKind::kFgsm ? cfg.eps : (cfg.kind == AttackKind::kPgd ? cfg.step_size() : 0.0);
    r.seed = cfg.seed;
    r.config_digest = digests[ci];

    const auto start = std::chrono::steady_clock::now();
    try {
      const AttackResult res = run_attack(pair, est, cfg);
      r.epe_unattacked = res.loss_before;
      r.epe_attacked = res.loss_after;
      if (cfg.kind == AttackKind::kNone) {
        r.rel = 0.0;
      } else {
        r.rel = relative_degradation(r.epe_unattacked, r.epe_attacked);
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    if (opt.timing) {
      r.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    }
  };

  const unsigned jobs = std::max(1u, opt.jobs);
  if (jobs == 1) {
    for (std::size_t c = 0; c < cells; ++c) run_cell(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < cells; c = next++) run_cell(c);
      });
    }
    for (auto& th : pool) th.join();
  }

  Report report;
  // The unattacked EPE is computed once per pair; attacks recompute it on the
  // same graph, so overwrite to keep a single source.
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    const std::size_t pi = i / grid.size();
    if (!before_error[pi].empty() && r.error.empty()) r.error = before_error[pi];
    if (!r.error.empty()) {
      report.diagnostics.push_back("pair " + r.pair_id + " attack " + r.attack + "/" + r.mask + ": " + r.error);
      r.rel.reset();
      continue;
    }
    r.epe_unattacked = *before[pi];
    if (r.attack == "none") r.epe_attacked = r.epe_unattacked;
    r.rel = r.attack == "none" ? std::optional<double>(0.0) : relative_degradation(r.epe_unattacked, r.epe_attacked);
  }

  std::sort(records.begin(), records.end(), [](const ExperimentRecord& a, const ExperimentRecord& b) {
    return std::tie(a.pair_id, a.config_digest) < std::tie(b.pair_id, b.config_digest);
  });
  std::vector<std::string> order;
  for (const auto& d : digests) {
    const std::string key = est_config + "#" + d;
    if (std::find(order.begin(), order.end(), key) == order.end()) order.push_back(key);
  }
  report.aggregates = aggregate(records, order, &report.diagnostics);
  report.records = std::move(records);
  report.provenance.seed = opt.seed;
  report.provenance.estimator_config = est_config;
  if (opt.timing) {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    report.provenance.timestamp = buf;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Grid files: JSON list of attack configs, e.g.
//   [{"attack": "pgd", "eps": 0.1, "iters": 10, "alpha": "auto", "target": "all-dims"}]

inline AttackConfig attack_config_from_json(const nlohmann::json& j) {
  try {
    AttackConfig c;
    c.kind = parse_attack_kind(j.at("attack").get<std::string>());
    if (c.kind == AttackKind::kNone) {
      c.eps = j.value("eps", 1.0);
      c.mask = make_target_mask(j.value("target", std::string("all-dims")));
      return c;
    }
    c.eps = j.at("eps").get<double>();
    c.iters = j.value("iters", c.kind == AttackKind::kPgd ? 10 : 1);
    if (j.contains("alpha") && !(j["alpha"].is_string() && j["alpha"] == "auto") && !j["alpha"].is_null())
      c.alpha = j["alpha"].get<double>();
    c.mask = make_target_mask(j.value("target", std::string("all-dims")));
    c.random_start = j.value("random_start", false);
    c.clamp_colors = j.value("clamp_colors", true);
    const std::string mode = j.value("mode", std::string("uniform"));
    if (mode == "uniform") {
      c.random_mode = RandomMode::kUniform;
    } else if (mode == "rademacher") {
      c.random_mode = RandomMode::kRademacher;
    } else {
      throw ParseError("unknown random mode '" + mode + "'");
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("attack config: ") + e.what());
  }
}

inline nlohmann::ordered_json to_json(const AttackConfig& c) {
  nlohmann::ordered_json j;
  j["attack"] = to_string(c.kind);
  j["eps"] = c.eps;
  j["iters"] = c.iters;
  if (c.alpha) {
    j["alpha"] = *c.alpha;
  } else {
    j["alpha"] = "auto";
  }
  j["target"] = c.mask.spec();
  j["random_start"] = c.random_start;
  j["clamp_colors"] = c.clamp_colors;
  j["mode"] = c.random_mode == RandomMode::kUniform ? "uniform" : "rademacher";
  return j;
}

inline std::vector<AttackConfig> parse_grid(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("grid file: ") + e.what());
  }
  if (!j.is_array() || j.empty()) throw ParseError("grid file: expected a nonempty JSON list");
  std::vector<AttackConfig> out;
  for (const auto& item : j) out.push_back(attack_config_from_json(item));
  return out;
}

// ---------------------------------------------------------------------------
// Report serialization

namespace detail {

inline nlohmann::ordered_json opt_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::optional<double> read_opt(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const Report& report) {
  nlohmann::ordered_json j;
  j["provenance"] = {{"tool_version", report.provenance.tool_version},
                     {"seed", report.provenance.seed},
                     {"estimator_config", report.provenance.estimator_config},
                     {"aepe_definition", report.provenance.aepe_definition},
                     {"timestamp", report.provenance.timestamp}};
  j["aggregates"] = nlohmann::ordered_json::array();
  for (const auto& a : report.aggregates) {
    j["aggregates"].push_back({{"estimator", a.estimator},
                               {"attack", a.attack},
                               {"mask", a.mask},
                               {"eps", a.eps},
                               {"iters", a.iters},
                               {"alpha", a.alpha},
                               {"config_digest", a.config_digest},
                               {"count", a.count},
                               {"aepe_before", a.aepe_before},
                               {"aepe_after", a.aepe_after},
                               {"rel", detail::opt_number(a.rel)}});
  }
  j["records"] = nlohmann::ordered_json::array();
  for (const auto& r : report.records) {
    j["records"].push_back({{"pair_id", r.pair_id},
                            {"estimator", r.estimator},
                            {"estimator_config", r.estimator_config},
                            {"attack", r.attack},
                            {"mask", r.mask},
                            {"eps", r.eps},
                            {"iters", r.iters},
                            {"alpha", r.alpha},
                            {"seed", r.seed},
                            {"config_digest", r.config_digest},
                            {"epe_unattacked", r.epe_unattacked},
                            {"epe_attacked", r.epe_attacked},
                            {"rel", detail::opt_number(r.rel)},
                            {"wall_time_ms", r.wall_time_ms},
                            {"error", r.error}});
  }
  j["diagnostics"] = report.diagnostics;
  return j;
}

inline std::string report_json(const Report& report) { return to_json(report).dump(2) + "\n"; }

inline Report report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Report rep;
    const auto& p = j.at("provenance");
    rep.provenance = {p.at("tool_version"), p.at("seed"), p.at("estimator_config"), p.at("aepe_definition"),
                      p.at("timestamp")};
    for (const auto& a : j.at("aggregates")) {
      rep.aggregates.push_back({a.at("estimator"), a.at("attack"), a.at("mask"), a.at("eps"), a.at("iters"),
                                a.at("alpha"), a.at("config_digest"), a.at("count"), a.at("aepe_before"),
                                a.at("aepe_after"), detail::read_opt(a.at("rel"))});
    }
    for (const auto& r : j.at("records")) {
      rep.records.push_back({r.at("pair_id"), r.at("estimator"), r.at("estimator_config"), r.at("attack"), r.at("mask"),
                             r.at("eps"), r.at("iters"), r.at("alpha"), r.at("seed"), r.at("config_digest"),
                             r.at("epe_unattacked"), r.at("epe_attacked"), detail::read_opt(r.at("rel")),
                             r.at("wall_time_ms"), r.at("error")});
    }
    rep.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report JSON: ") + e.what());
  }
}

inline std::string format_g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// One row per record; numbers with 6 significant digits, undefined rel left empty.
inline std::string report_csv(const Report& report) {
  std::string out = "pair_id,estimator,attack,mask,eps,iters,alpha,seed,epe_before,epe_after,rel,ms\n";
  for (const auto& r : report.records) {
    out += csv_field(r.pair_id) + "," + r.estimator + "," + r.attack + "," + csv_field(r.mask) + "," + format_g6(r.eps) +
           "," + std::to_string(r.iters) + "," + format_g6(r.alpha) + "," + std::to_string(r.seed) + "," +
           format_g6(r.epe_unattacked) + "," + format_g6(r.epe_attacked) + "," + (r.rel ? format_g6(*r.rel) : "") +
           "," + std::to_string(r.wall_time_ms) + "\n";
  }
  return out;
}

}  // namespace sfattack

#endif  // SFATTACK_HARNESS_HPP
