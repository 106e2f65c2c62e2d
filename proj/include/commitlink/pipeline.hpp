#pragma once

// File-based pipeline stages behind the command-line tool. Every stage
// reads its inputs from, and writes its outputs under, RunConfig::out_dir.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "commitlink/corpus.hpp"
#include "commitlink/distill.hpp"
#include "commitlink/encoder.hpp"
#include "commitlink/retrieval.hpp"
#include "commitlink/trainer.hpp"

namespace commitlink {

// An upstream stage has not produced what this stage needs.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& stage, const std::string& path)
      : std::runtime_error("missing " + path + " (run the '" + stage + "' stage first)"),
        stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunConfig {
  std::string out_dir = "commitlink-out";
  // Raw input records; defaults to <out_dir>/raw.
  std::optional<std::string> raw_dir;
  std::uint64_t seed = 0;

  SyntheticOptions synth;
  SplitSpec split;
  std::size_t vocab_min_freq = 2;
  EncoderConfig teacher = EncoderConfig::teacher_defaults();
  EncoderConfig student = EncoderConfig::student_defaults();
  std::optional<std::string> teacher_weights;
  std::string channels = "1:1,5:2";
  DistillSchedule distill;
  TrainConfig train;
  // Subdirectory for train outputs; lets ablations share one workspace.
  std::string train_tag = "train";
  QueryOptions queries;
  std::string eval_split = "test";
  double threshold = 0.5;

  RunConfig();
  // Sets every component seed from one base seed.
  void apply_seed(std::uint64_t base);
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  void validate() const;

  std::string raw_path() const;
  std::string stage_path(const std::string& stage) const;
};

void run_synth(const RunConfig& cfg);
Project run_preprocess(const RunConfig& cfg);
LinkSplits run_links(const RunConfig& cfg);
DistillResult run_distill(const RunConfig& cfg);
TrainResult run_train(const RunConfig& cfg, const TrainHooks& hooks = {});
MetricReport run_eval(const RunConfig& cfg);
MetricReport run_vsm(const RunConfig& cfg);

// Queries for one split, backfilled from the other splits' links.
std::vector<RankingQuery> queries_for_split(const RunConfig& cfg, const std::string& split);

}  // namespace commitlink
