// Command-line front end: adversarial pretraining, critical-layer
// fine-tuning, criticality profiling, attack evaluation and run reports,
// all driven by one declarative config file.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "clat/checkpoint.hpp"
#include "clat/config.hpp"
#include "clat/criticality.hpp"
#include "clat/error.hpp"
#include "clat/metrics.hpp"
#include "clat/report.hpp"
#include "clat/trainer.hpp"

namespace {

using namespace clat;

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
};

RunConfig load_run_config(const CommonOpts& opts) {
  RunConfig cfg = parse_config_file(opts.config_path);
  if (opts.seed) cfg.train.seed = *opts.seed;
  if (opts.out_dir) cfg.output.dir = *opts.out_dir;
  return cfg;
}

void write_provenance(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.output.dir);
  std::ofstream out(cfg.output.dir + "/resolved.cfg");
  out << render_config(cfg);
}

std::string metrics_path(const RunConfig& cfg) { return cfg.output.dir + "/" + cfg.output.metrics; }

Checkpoint load_matching_checkpoint(const std::string& path, const RunConfig& cfg) {
  Checkpoint ckpt = load_checkpoint(path);
  const Network reference = build_network(cfg.model, cfg.train.seed);
  if (!same_architecture(ckpt.net, reference)) {
    throw CompatibilityError("checkpoint " + path + " does not match the configured architecture");
  }
  return ckpt;
}

int cmd_pretrain(const CommonOpts& opts) {
  RunConfig cfg = load_run_config(opts);
  write_provenance(cfg);
  Network net = build_network(cfg.model, cfg.train.seed);
  auto [train, test] = load_datasets(cfg.data, cfg.model.classes);

  Trainer trainer(net, train, test, cfg.train);
  std::cout << "pretrain: " << cfg.train.pretrain_epochs << " epochs of PGD adversarial training\n";
  std::vector<EpochMetrics> rows = trainer.run(cfg.train.pretrain_epochs);
  for (const auto& m : rows) {
    std::cout << "epoch " << m.epoch << " ce " << m.ce_loss << " clean " << m.clean_acc << " adv "
              << m.adv_acc << "\n";
  }
  write_metrics_csv(metrics_path(cfg), rows);
  save_checkpoint(net, trainer.state(), cfg.output.dir + "/pretrain.ckpt");
  std::cout << "wrote " << cfg.output.dir << "/pretrain.ckpt\n";
  return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& ckpt_path, std::optional<int> k,
                 bool fixed_layers) {
  RunConfig cfg = load_run_config(opts);
  if (k) cfg.train.k = *k;
  if (fixed_layers) cfg.train.dynamic_selection = false;
  write_provenance(cfg);
  Checkpoint ckpt = load_matching_checkpoint(ckpt_path, cfg);
  auto [train, test] = load_datasets(cfg.data, cfg.model.classes);

  Trainer trainer(ckpt.net, train, test, cfg.train);
  trainer.restore(ckpt.state);
  trainer.on_reselect = [](const Network&, const CriticalityReport&, const std::vector<int>& set) {
    std::cout << "critical set: " << format_critical_set(set) << "\n";
  };
  std::cout << "finetune: epochs " << (ckpt.state.completed_epochs + 1) << ".."
            << cfg.train.total_epochs << ", k=" << cfg.train.effective_k(ckpt.net.layer_count())
            << (cfg.train.dynamic_selection ? ", dynamic" : ", fixed") << " selection\n";
  std::vector<EpochMetrics> rows = trainer.run();
  for (const auto& m : rows) {
    std::cout << "epoch " << m.epoch << " ce " << m.ce_loss << " crit " << m.crit_loss << " clean "
              << m.clean_acc << " adv " << m.adv_acc << "\n";
  }
  write_metrics_csv(metrics_path(cfg), rows);
  save_checkpoint(ckpt.net, trainer.state(), cfg.output.dir + "/clat.ckpt");
  std::cout << "wrote " << cfg.output.dir << "/clat.ckpt\n";
  return 0;
}

int cmd_criticality(const CommonOpts& opts, const std::string& ckpt_path, int batch,
                    std::optional<int> k, bool stability, const std::vector<int>& batch_sizes,
                    int trials, const std::string& out_file) {
  RunConfig cfg = load_run_config(opts);
  Checkpoint ckpt = load_matching_checkpoint(ckpt_path, cfg);
  auto [train, test] = load_datasets(cfg.data, cfg.model.classes);
  const Network& net = ckpt.net;
  const int eff_k = k ? *k : cfg.train.effective_k(net.layer_count());

  Rng pick(derive_seed(cfg.train.seed, "crit-pick", 0));
  std::vector<int> idx(static_cast<size_t>(train.size()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  pick.shuffle(idx);
  idx.resize(static_cast<size_t>(std::min(batch, train.size())));
  auto [x, y] = train.gather(idx);

  Rng attack_rng(derive_seed(cfg.train.seed, "crit-attack", 0));
  CriticalityReport report = criticality_indices(net, x, y, cfg.train.attack, attack_rng);
  report.seed = cfg.train.seed;
  report.selected = select_topk(report, eff_k);

  std::cout << "rank\tlayer\tweakness\tcriticality\tselected\n";
  std::vector<int> order = select_topk(report, net.layer_count());
  for (size_t r = 0; r < order.size(); ++r) {
    const int layer = order[r];
    const bool sel = std::find(report.selected.begin(), report.selected.end(), layer) !=
                     report.selected.end();
    std::cout << (r + 1) << "\t" << layer << "\t" << report.weakness[layer - 1] << "\t"
              << report.criticality[layer - 1] << "\t" << (sel ? "*" : "") << "\n";
  }

  double max_rel = 0.0;
  double prod = 1.0;
  for (int i = 1; i <= net.layer_count(); ++i) {
    prod *= report.criticality[i - 1];
    const double w = report.weakness[i - 1];
    max_rel = std::max(max_rel, std::abs(prod - w) / std::max(1e-30, std::abs(w)));
  }
  std::cout << "reconstruction identity max rel err: " << max_rel << "\n";

  if (stability) {
    StabilityStats stats = stability_probe(net, train, batch_sizes, trials, eff_k, cfg.train.attack,
                                           cfg.train.seed);
    std::cout << "stability probe (" << trials << " trials per batch size, k=" << eff_k << "):\n";
    std::cout << "batch\tmodal_set\tmodal_share\ttop1_pair_agreement\n";
    for (const auto& b : stats.per_batch) {
      std::cout << b.batch_size << "\t" << format_critical_set(b.modal_set) << "\t"
                << b.modal_set_share << "\t" << b.pairwise_top1_agreement << "\n";
    }
    std::cout << "overall modal top-1 layer " << stats.modal_top1 << " share "
              << stats.overall_top1_modal_share << "\n";
  }

  if (!out_file.empty()) {
    std::ofstream out(out_file);
    if (!out) throw FormatError("cannot write " + out_file);
    out << report.to_text();
    std::cout << "wrote " << out_file << "\n";
  }
  return 0;
}

int cmd_attack_eval(const CommonOpts& opts, const std::string& ckpt_path, const std::string& attack,
                    std::vector<float> epsilons, std::optional<int> steps,
                    std::optional<float> alpha, int restarts, int samples) {
  RunConfig cfg = load_run_config(opts);
  Checkpoint ckpt = load_matching_checkpoint(ckpt_path, cfg);
  auto [train, test] = load_datasets(cfg.data, cfg.model.classes);
  (void)train;
  if (epsilons.empty()) epsilons = {cfg.train.attack.epsilon};

  std::cout << "attack\tepsilon\tclean_acc\tadv_acc\n";
  for (const float eps : epsilons) {
    AttackConfig atk = cfg.train.attack;
    atk.epsilon = eps;
    if (steps) atk.steps = *steps;
    if (alpha) atk.alpha = *alpha;
    if (attack == "fgsm") atk.steps = 1;

    double clean = 0.0;
    double worst = 1.0;
    if (eps == 0.0f) {
      const EvalResult r = evaluate(ckpt.net, test, nullptr, cfg.train.seed, samples);
      clean = r.clean_acc;
      worst = r.clean_acc;
    } else {
      for (int r = 0; r < restarts; ++r) {
        const uint64_t seed = derive_seed(cfg.train.seed, "attack-eval", static_cast<uint64_t>(r));
        EvalResult res;
        if (attack == "fgsm") {
          // evaluate() drives PGD; a 1-step PGD with alpha=epsilon from a
          // random start is the FGSM evaluation convention here.
          AttackConfig fg = atk;
          fg.steps = 1;
          fg.alpha = fg.epsilon;
          res = evaluate(ckpt.net, test, &fg, seed, samples);
        } else {
          res = evaluate(ckpt.net, test, &atk, seed, samples);
        }
        clean = res.clean_acc;
        worst = std::min(worst, res.adv_acc);
      }
    }
    std::cout << attack << "\t" << eps << "\t" << clean << "\t" << worst << "\n";
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& csvs, const std::string& out_file) {
  std::vector<RunSeries> runs;
  for (const auto& path : csvs) {
    runs.push_back(RunSeries{path, read_metrics_csv(path)});
  }
  const std::string text = make_report(runs);
  std::cout << text;
  if (!out_file.empty()) {
    std::ofstream out(out_file);
    if (!out) throw FormatError("cannot write " + out_file);
    out << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"criticality-guided adversarial training"};
  app.require_subcommand(1);

  CommonOpts common;
  auto add_common = [&common](CLI::App* sub, bool with_out = true) {
    sub->add_option("--config", common.config_path, "run configuration file")->required();
    sub->add_option("--seed", common.seed, "override the training seed");
    if (with_out) sub->add_option("--out", common.out_dir, "override the output directory");
  };

  auto* pretrain = app.add_subcommand("pretrain", "PGD adversarial pretraining");
  add_common(pretrain);

  auto* finetune = app.add_subcommand("finetune", "critical-layer fine-tuning from a checkpoint");
  add_common(finetune);
  std::string ft_ckpt;
  std::optional<int> ft_k;
  bool ft_fixed = false;
  finetune->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint")->required();
  finetune->add_option("--k", ft_k, "number of critical layers");
  finetune->add_flag("--fixed-layers", ft_fixed, "select the critical set once and keep it");

  auto* crit = app.add_subcommand("criticality", "per-layer weakness/criticality profile");
  add_common(crit, false);
  std::string cr_ckpt, cr_out;
  int cr_batch = 100, cr_trials = 50;
  std::optional<int> cr_k;
  bool cr_stability = false;
  std::vector<int> cr_batch_sizes{10, 30, 50, 100};
  crit->add_option("--checkpoint", cr_ckpt, "checkpoint to profile")->required();
  crit->add_option("--batch", cr_batch, "samples used for the profile");
  crit->add_option("--k", cr_k, "selection size for the report");
  crit->add_flag("--stability", cr_stability, "run the batch-size stability probe");
  crit->add_option("--batch-sizes", cr_batch_sizes, "stability probe batch sizes")->delimiter(',');
  crit->add_option("--trials", cr_trials, "stability probe trials per batch size");
  crit->add_option("--report-file", cr_out, "also write the line-oriented report here");

  auto* atk = app.add_subcommand("attack-eval", "clean and adversarial accuracy table");
  add_common(atk, false);
  std::string ae_ckpt, ae_attack = "pgd";
  std::vector<float> ae_eps;
  std::optional<int> ae_steps;
  std::optional<float> ae_alpha;
  int ae_restarts = 1, ae_samples = 0;
  atk->add_option("--checkpoint", ae_ckpt, "checkpoint to evaluate")->required();
  atk->add_option("--attack", ae_attack, "pgd or fgsm")->check(CLI::IsMember({"pgd", "fgsm"}));
  atk->add_option("--epsilons", ae_eps, "budget sweep")->delimiter(',');
  atk->add_option("--steps", ae_steps, "attack steps override");
  atk->add_option("--alpha", ae_alpha, "attack step size override");
  atk->add_option("--restarts", ae_restarts, "report the minimum accuracy over this many restarts");
  atk->add_option("--samples", ae_samples, "cap evaluated samples (0 = all)");

  auto* rep = app.add_subcommand("report", "summarize and compare metrics CSVs");
  std::vector<std::string> rp_csvs;
  std::string rp_out;
  rep->add_option("csv", rp_csvs, "metrics CSV files")->required()->expected(-1);
  rep->add_option("--out", rp_out, "also write the report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) return cmd_pretrain(common);
    if (finetune->parsed()) return cmd_finetune(common, ft_ckpt, ft_k, ft_fixed);
    if (crit->parsed()) {
      return cmd_criticality(common, cr_ckpt, cr_batch, cr_k, cr_stability, cr_batch_sizes,
                             cr_trials, cr_out);
    }
    if (atk->parsed()) {
      return cmd_attack_eval(common, ae_ckpt, ae_attack, ae_eps, ae_steps, ae_alpha, ae_restarts,
                             ae_samples);
    }
    if (rep->parsed()) return cmd_report(rp_csvs, rp_out);
  } catch (const clat::Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
