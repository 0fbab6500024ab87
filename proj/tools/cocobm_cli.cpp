// Command-line entry point: ground, train, eval, embed.
//
// Exit codes: 0 ok or converged, 2 grounding hit the iteration cap, 1 error.

#include "cocobm/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::optional<double> ta, tm, noise;
  std::optional<std::size_t> beta, q;
  std::optional<int> max_iters, bank_version;
  bool no_editable_matrix = false;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)");
  cmd->add_option("--seed", o.seed, "Root seed");
  cmd->add_option("--backend", o.backend, "Backend")->check(CLI::IsMember({"synthetic", "real"}));
  cmd->add_option("--ta", o.ta, "Activation threshold t_a");
  cmd->add_option("--tm", o.tm, "Redundancy distance t_m");
  cmd->add_option("--beta", o.beta, "Instances per label");
  cmd->add_option("--q", o.q, "Number of condition tokens");
  cmd->add_option("--max-iters", o.max_iters, "Maximum agent iterations");
  cmd->add_option("--noise", o.noise, "Planted-world image noise (synthetic backend)");
  cmd->add_option("--out", o.out, "Run directory");
  cmd->add_flag("--quiet", o.quiet, "Only print the JSON summary");
}

cocobm::RunConfig resolve(const Options& o, const std::string& command) {
  cocobm::RunConfig cfg;
  if (!o.config.empty()) {
    cfg = cocobm::load_run_config(o.config);
  } else if (o.backend == "real") {
    throw cocobm::Error("the real backend needs --config with dataset and service settings");
  } else {
    cfg = cocobm::planted_run_config();
  }
  if (!o.backend.empty() && o.backend != cfg.backend) {
    if (o.backend == "real") throw cocobm::Error("--backend real conflicts with a synthetic config file");
    cfg.backend = o.backend;
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.ta) cfg.ta = *o.ta;
  if (o.tm) cfg.tm = *o.tm;
  if (o.beta) cfg.beta = *o.beta;
  if (o.q) cfg.q = *o.q;
  if (o.max_iters) cfg.max_iterations = *o.max_iters;
  if (o.noise) cfg.world.noise = *o.noise;
  // For eval the flag adds a retrained row without E instead.
  if (o.no_editable_matrix && command != "eval") cfg.use_editable_matrix = false;
  if (!o.out.empty()) cfg.out = o.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional concept bottleneck models with a concept agent"};
  app.require_subcommand(1);
  Options o;
  auto* ground = app.add_subcommand("ground", "Run the concept agent and write the grounded bank");
  auto* train = app.add_subcommand("train", "Train on the full dataset with a grounded bank");
  auto* eval = app.add_subcommand("eval", "Build and judge interpretability MCQs for a trained model");
  auto* embed = app.add_subcommand("embed", "Fill the embedding cache for a dataset");
  for (auto* cmd : {ground, train, eval, embed}) add_common(cmd, o);
  for (auto* cmd : {ground, train, eval})
    cmd->add_flag("--no-editable-matrix", o.no_editable_matrix,
                  "ground/train: disable E; eval: also retrain without E and report both rows");
  train->add_option("--bank-version", o.bank_version, "Bank version to train (default: latest)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::ostream* progress = o.quiet ? nullptr : &std::cerr;
    if (ground->parsed()) {
      auto cfg = resolve(o, "ground");
      auto r = cocobm::cmd_ground(cfg, progress);
      cocobm::json s = cocobm::read_json_file(r.dir / "run.json");
      s["dir"] = r.dir.string();
      std::cout << s.dump(2) << "\n";
      return r.exit_code;
    }
    if (train->parsed()) {
      auto cfg = resolve(o, "train");
      auto r = cocobm::cmd_train(cfg, o.bank_version);
      r.report["dir"] = r.dir.string();
      std::cout << r.report.dump(2) << "\n";
      return 0;
    }
    if (eval->parsed()) {
      auto cfg = resolve(o, "eval");
      auto r = cocobm::cmd_eval(cfg, o.no_editable_matrix);
      if (progress) *progress << cocobm::read_text_file(r.dir / "table.csv");
      r.report["dir"] = r.dir.string();
      std::cout << r.report.dump(2) << "\n";
      return 0;
    }
    if (embed->parsed()) {
      auto cfg = resolve(o, "embed");
      auto r = cocobm::cmd_embed(cfg, o.out.empty() ? std::filesystem::path() : std::filesystem::path(o.out));
      std::cout << cocobm::json{{"cache", r.cache.string()}, {"rows", r.rows}, {"new_encodings", r.new_encodings}}.dump(2)
                << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
