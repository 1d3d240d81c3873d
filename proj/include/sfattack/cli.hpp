#ifndef SFATTACK_CLI_HPP
#define SFATTACK_CLI_HPP

// sfattack command line: generate | train | attack | eval | gradcheck | plot | estimate
//
// Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sfattack/attacks.hpp"
#include "sfattack/gradcheck.hpp"
#include "sfattack/harness.hpp"
#include "sfattack/io.hpp"
#include "sfattack/ot.hpp"
#include "sfattack/svg.hpp"
#include "sfattack/synthgen.hpp"
#include "sfattack/tinynet.hpp"

namespace sfattack::cli {

/// "ot" or "tiny:<weights.sftn>".
inline std::unique_ptr<Estimator> make_estimator(const std::string& spec) {
  if (spec == "ot") return std::make_unique<OtEstimator>();
  if (spec.starts_with("tiny:")) {
    return std::make_unique<TinyNetEstimator>(load_weights(read_file(spec.substr(5))));
  }
  if (spec == "tiny") throw ValidationError("--model tiny needs a weight file: tiny:<model.sftn>");
  throw ValidationError("unknown model '" + spec + "' (expected ot or tiny:<model.sftn>)");
}

/// Recipes for the built-in gradient checks on 8-point pairs.
struct GradcheckCase {
  std::string name;
  ad::GradcheckReport report;
};

inline std::vector<GradcheckCase> run_gradchecks(std::uint64_t seed, std::size_t pairs) {
  std::vector<GradcheckCase> out;
  for (std::size_t k = 0; k < pairs; ++k) {
    const std::uint64_t s = derive_seed(seed, k);
    DatasetSpec ranges = DatasetSpec::defaults(MotionKind::kRigid);
    ranges.n_points = 8;
    ranges.with_color = true;
    ranges.noise_sigma = {0.02, 0.05};  // keeps per-point residuals away from the norm's kink at zero
    const ScenePair pair = make_dataset_entry(0, ranges, s).pair;
    const TinyNetWeights w3 = TinyNetWeights::init(3, derive_seed(s, 7));
    const TinyNetWeights w6 = TinyNetWeights::init(6, derive_seed(s, 8));

    struct Variant {
      std::string name;
      std::shared_ptr<Estimator> est;
      bool colors;
    };
    const std::vector<Variant> variants = {
        {"ot/positions", std::make_shared<OtEstimator>(), false},
        {"ot/colors", std::make_shared<OtEstimator>(), true},
        {"tiny/positions", std::make_shared<TinyNetEstimator>(w3), false},
        {"tiny/colors", std::make_shared<TinyNetEstimator>(w6), true},
    };
    for (const auto& v : variants) {
      ScenePair p = pair;
      if (v.est->tag() == "tiny" && !v.colors) {
        p.pc1.colors.reset();
        p.pc2.colors.reset();
      }
      const Tensor& x = v.colors ? *p.pc1.colors : p.pc1.positions;
      auto build = [&p, est = v.est, colors = v.colors](ad::Graph& g, std::span<const ad::Var> leaves) {
        ad::Var pos1 = colors ? g.constant(p.pc1.positions) : leaves[0];
        std::optional<ad::Var> col1;
        if (p.pc1.colors) col1 = colors ? leaves[0] : g.constant(*p.pc1.colors);
        return attack_loss(g, p, *est, pos1, col1);
      };
      out.push_back({"pair " + std::to_string(k) + " " + v.name, ad::gradcheck({x}, build)});
    }
  }
  return out;
}

inline void write_report_files(const Report& report, const std::string& json_path, const std::string& csv_path) {
  if (!json_path.empty()) write_text(json_path, report_json(report));
  if (!csv_path.empty()) write_text(csv_path, report_csv(report));
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Adversarial attacks on point-cloud scene flow", "sfattack"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset of scene pairs");
  std::size_t scenes = 0, points = 256;
  std::string motion = "rigid", out_dir;
  bool color = false;
  double noise = 0.0, drop = 0.0;
  gen->add_option("--scenes", scenes, "Number of pairs")->required();
  gen->add_option("--points", points, "Points per cloud");
  gen->add_option("--motion", motion, "rigid | deform")->check(CLI::IsMember({"rigid", "deform"}));
  gen->add_flag("--color,!--no-color", color, "Attach colors");
  gen->add_option("--noise", noise, "Gaussian noise sigma on pc2");
  gen->add_option("--drop", drop, "Fraction of pc2 points removed");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out_dir)->required();

  // train
  auto* train = app.add_subcommand("train", "Train the tiny flow network");
  std::string data_dir, model_out;
  int epochs = 30;
  double lr = 0.05;
  train->add_option("--data", data_dir)->required();
  train->add_option("--epochs", epochs);
  train->add_option("--lr", lr);
  train->add_option("--seed", seed);
  train->add_option("--out", model_out)->required();

  // attack / eval shared
  std::string model = "ot", attack = "fgsm", target = "all-dims", in_path, adv_out, report_path, csv_path, grid_path;
  double eps = 0.1;
  std::optional<int> iters;
  std::optional<double> alpha;
  bool random_start = false, timing = false;
  unsigned jobs = 1;

  auto* atk = app.add_subcommand("attack", "Attack one scene pair");
  atk->add_option("--model", model, "ot | tiny:<model.sftn>");
  atk->add_option("--attack", attack)->check(CLI::IsMember({"none", "fgsm", "pgd", "random"}));
  atk->add_option("--eps", eps)->required();
  atk->add_option("--iters", iters);
  atk->add_option("--alpha", alpha);
  atk->add_flag("--random-start", random_start);
  atk->add_option("--target", target);
  atk->add_option("--in", in_path)->required();
  atk->add_option("--out", adv_out);
  atk->add_option("--report", report_path);
  atk->add_option("--seed", seed);

  auto* eval = app.add_subcommand("eval", "Run an attack grid over a dataset");
  eval->add_option("--model", model);
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--grid", grid_path, "JSON list of attack configs");
  eval->add_option("--attack", attack)->check(CLI::IsMember({"none", "fgsm", "pgd", "random"}));
  eval->add_option("--eps", eps);
  eval->add_option("--iters", iters);
  eval->add_option("--alpha", alpha);
  eval->add_flag("--random-start", random_start);
  eval->add_option("--target", target);
  eval->add_option("--report", report_path);
  eval->add_option("--csv", csv_path);
  eval->add_option("--seed", seed);
  eval->add_option("--jobs", jobs)->check(CLI::PositiveNumber);
  eval->add_flag("--timing", timing, "Record wall-clock times (output is then not reproducible)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of both estimators");
  std::size_t gc_pairs = 20;
  gc->add_option("--seed", seed);
  gc->add_option("--pairs", gc_pairs);

  auto* plot = app.add_subcommand("plot", "Render flows as SVG");
  std::string flow_a, flow_b, svg_out, drop_axis = "z";
  plot->add_option("--in", in_path)->required();
  plot->add_option("--flow-a", flow_a, "SFP1 file whose flow block is drawn in red")->required();
  plot->add_option("--flow-b", flow_b, "SFP1 file whose flow block is drawn in green");
  plot->add_option("--drop-axis", drop_axis)->check(CLI::IsMember({"x", "y", "z"}));
  plot->add_option("--out", svg_out)->required();

  auto* estimate = app.add_subcommand("estimate", "Write a pair whose flow block is the model's estimate");
  estimate->add_option("--model", model);
  estimate->add_option("--in", in_path)->required();
  estimate->add_option("--out", adv_out)->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  auto single_config = [&] {
    AttackConfig c;
    c.kind = parse_attack_kind(attack);
    c.eps = eps;
    c.iters = c.kind == AttackKind::kPgd ? iters.value_or(10) : 1;
    c.alpha = alpha;
    c.mask = make_target_mask(target);
    c.random_start = random_start;
    if (c.kind != AttackKind::kNone) c.validate();
    return c;
  };

  try {
    if (*gen) {
      DatasetSpec ranges = DatasetSpec::defaults(parse_motion_kind(motion));
      ranges.n_points = points;
      ranges.with_color = color;
      ranges.noise_sigma = {noise, noise};
      ranges.drop_fraction = {drop, drop};
      write_dataset(out_dir, make_dataset_entries(scenes, ranges, seed), seed);
      out << "wrote " << scenes << " pairs to " << out_dir << "\n";
    } else if (*train) {
      const auto data = load_dataset(data_dir);
      const TrainResult res = train_tiny(data, epochs, lr, seed);
      for (std::size_t e = 0; e < res.loss_trace.size(); ++e) out << "epoch " << e + 1 << " loss " << format_g6(res.loss_trace[e]) << "\n";
      write_file(model_out, save_weights(res.weights));
    } else if (*atk) {
      const auto est = make_estimator(model);
      ScenePair pair = load_sfp_file(in_path);
      check_mask(single_config().mask, pair);
      const Report rep = run_experiment({pair}, *est, {single_config()}, {seed, 1, false});
      if (!adv_out.empty()) {
        AttackConfig c = single_config();
        c.seed = rep.records.at(0).seed;
        if (!rep.records.at(0).error.empty()) throw NumericError(rep.records.at(0).error);
        ScenePair adv = pair;
        adv.pc1 = run_attack(pair, *est, c).adv_pc1;
        write_file(adv_out, save_sfp(adv));
      }
      write_report_files(rep, report_path, "");
      const auto& r = rep.records.at(0);
      out << r.attack << " " << r.mask << " eps=" << format_g6(r.eps) << " alpha=" << format_g6(r.alpha)
          << " epe " << format_g6(r.epe_unattacked) << " -> " << format_g6(r.epe_attacked) << "\n";
      if (!r.error.empty()) {
        err << "error: " << r.error << "\n";
        return 2;
      }
    } else if (*eval) {
      const auto est = make_estimator(model);
      const auto data = load_dataset(data_dir);
      const auto grid = grid_path.empty() ? std::vector<AttackConfig>{single_config()} : parse_grid(read_text(grid_path));
      const Report rep = run_experiment(data, *est, grid, {seed, jobs, timing});
      write_report_files(rep, report_path, csv_path);
      for (const auto& a : rep.aggregates) {
        out << a.attack << " " << a.mask << " eps=" << format_g6(a.eps) << " aepe " << format_g6(a.aepe_before) << " -> "
            << format_g6(a.aepe_after) << " rel " << (a.rel ? format_g6(*a.rel) : "null") << "\n";
      }
      for (const auto& d : rep.diagnostics) err << "diagnostic: " << d << "\n";
    } else if (*gc) {
      bool all = true;
      for (const auto& c : run_gradchecks(seed, gc_pairs)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-28s max_rel_err=%.3e coords=%zu %s\n", c.name.c_str(), c.report.max_rel_err,
                      c.report.coordinates, c.report.pass ? "PASS" : "FAIL");
        out << buf;
        all = all && c.report.pass;
      }
      return all ? 0 : 2;
    } else if (*plot) {
      const ScenePair pair = load_sfp_file(in_path);
      auto flow_of = [](const std::string& path) {
        ScenePair f = load_sfp_file(path);
        if (!f.gt_flow) throw ValidationError(path + " carries no flow block");
        return *f.gt_flow;
      };
      std::optional<FlowField> b;
      if (!flow_b.empty()) b = flow_of(flow_b);
      SvgOptions opt;
      opt.drop_axis = drop_axis[0] - 'x';
      write_text(svg_out, render_flow_svg(pair, flow_of(flow_a), b, opt));
    } else if (*estimate) {
      const auto est = make_estimator(model);
      ScenePair pair = load_sfp_file(in_path);
      pair.gt_flow = est->estimate(pair);
      write_file(adv_out, save_sfp(pair));
    }
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return 1;
  } catch (const LengthError& e) {
    err << "length error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

inline int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args);
}

}  // namespace sfattack::cli

#endif  // SFATTACK_CLI_HPP
