// Command-line front end: one subcommand per pipeline stage.
//
//   commitlink synth --out runs/a
//   commitlink preprocess --out runs/a
//   commitlink links --out runs/a
//   commitlink distill --out runs/a --channels t1:s1,t5:s2
//   commitlink train --out runs/a --lambda-cl 0
//   commitlink eval --out runs/a
//   commitlink vsm --out runs/a

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "commitlink/pipeline.hpp"

using namespace commitlink;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string raw;
  std::string channels;
  std::optional<double> tau;
  std::optional<double> lambda_cl;
  std::optional<double> lambda_aux;
  std::optional<double> threshold;
  std::optional<std::size_t> max_issues;
  std::optional<std::size_t> n_issues;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::string split;
  std::string train_tag;
};

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  if (o.seed) cfg.apply_seed(*o.seed);
  if (!o.out.empty()) {
    cfg.out_dir = o.out;
  } else if (o.config_path.empty()) {
    if (const char* env = std::getenv("COMMITLINK_OUT")) cfg.out_dir = env;
  }
  if (!o.raw.empty()) cfg.raw_dir = o.raw;
  if (!o.channels.empty()) cfg.channels = o.channels;
  if (o.tau) cfg.train.tau = *o.tau;
  if (o.lambda_cl) cfg.train.lambda_cl = *o.lambda_cl;
  if (o.lambda_aux) cfg.train.lambda_aux = *o.lambda_aux;
  if (o.threshold) cfg.threshold = *o.threshold;
  if (o.max_issues) cfg.queries.max_issues = *o.max_issues;
  if (o.n_issues) cfg.synth.n_issues = *o.n_issues;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.lr) cfg.train.lr = *o.lr;
  if (!o.split.empty()) cfg.eval_split = o.split;
  if (!o.train_tag.empty()) cfg.train_tag = o.train_tag;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Issue-commit link recovery pipeline"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Base seed for every random component");
  app.add_option("--out", o.out, "Output root (default $COMMITLINK_OUT or ./commitlink-out)");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic raw corpus");
  synth->add_option("--issues", o.n_issues, "Number of synthetic issues");
  auto* preprocess = app.add_subcommand("preprocess", "Tokenize raw issues and commits");
  preprocess->add_option("--raw", o.raw, "Raw input directory (default <out>/raw)");
  app.add_subcommand("links", "Extract true links, splits and issue-code links");
  auto* distill = app.add_subcommand("distill", "Distil the teacher into the student");
  distill->add_option("--channels", o.channels, "Channel map, e.g. t1:s1,t5:s2");
  auto* train = app.add_subcommand("train", "Fine-tune the student");
  train->add_option("--tau", o.tau, "Contrastive temperature");
  train->add_option("--lambda-cl", o.lambda_cl, "Contrastive loss weight");
  train->add_option("--lambda-aux", o.lambda_aux, "Auxiliary loss weight");
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--lr", o.lr, "Initial learning rate");
  train->add_option("--tag", o.train_tag, "Output subdirectory for this run");
  auto* eval = app.add_subcommand("eval", "Rank held-out links with the trained student");
  eval->add_option("--threshold", o.threshold, "Link prediction threshold");
  eval->add_option("--max-issues", o.max_issues, "Maximum query issues");
  eval->add_option("--split", o.split, "train, valid or test");
  eval->add_option("--tag", o.train_tag, "Train run subdirectory to evaluate");
  auto* vsm = app.add_subcommand("vsm", "Rank held-out links with the TF-IDF baseline");
  vsm->add_option("--max-issues", o.max_issues, "Maximum query issues");
  vsm->add_option("--split", o.split, "train, valid or test");

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const RunConfig cfg = resolve(o);
    std::cout << "# " << command << " config\n" << cfg.to_json().dump(2) << '\n';
    if (command == "synth") {
      run_synth(cfg);
    } else if (command == "preprocess") {
      const Project p = run_preprocess(cfg);
      std::cout << "issues " << p.issues.size() << " (skipped " << p.issue_report.skipped()
                << "), commits " << p.commits.size() << " (skipped " << p.commit_report.skipped()
                << ")\n";
    } else if (command == "links") {
      const LinkSplits s = run_links(cfg);
      std::cout << "train " << s.train.size() << ", valid " << s.valid.size() << ", test "
                << s.test.size() << '\n';
    } else if (command == "distill") {
      const DistillResult r = run_distill(cfg);
      std::cout << "distillation loss " << r.initial_loss << " -> "
                << (r.epoch_loss.empty() ? r.initial_loss : r.epoch_loss.back()) << '\n';
    } else if (command == "train") {
      const TrainResult r = run_train(cfg, {.on_false_links = {}, .on_epoch = [](const EpochRecord& e) {
        std::cout << "epoch " << e.epoch << " total " << e.total << " valid MRR " << e.valid_mrr
                  << '\n';
      }});
      std::cout << "best epoch " << r.best_epoch << ", valid MRR " << r.best_valid_mrr
                << ", false-link collisions " << r.collisions << '\n';
    } else if (command == "eval") {
      std::cout << run_eval(cfg).to_table();
    } else if (command == "vsm") {
      std::cout << run_vsm(cfg).to_table();
    }
  } catch (const MissingArtifact& e) {
    std::cerr << "commitlink " << command << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "commitlink " << command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
