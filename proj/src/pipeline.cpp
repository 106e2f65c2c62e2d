#include "commitlink/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "commitlink/links.hpp"

namespace commitlink {
namespace fs = std::filesystem;
namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void require(const std::string& stage, const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifact(stage, path);
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

nlohmann::json report_json(const LoadReport& r) {
  return {{"lines", r.lines},
          {"loaded", r.loaded},
          {"malformed", r.malformed},
          {"rejected_empty", r.rejected_empty},
          {"duplicates", r.duplicates}};
}

Project load_prepared(const RunConfig& cfg) {
  const std::string dir = cfg.stage_path("prep");
  require("preprocess", join(dir, "issues.jsonl"));
  require("preprocess", join(dir, "commits.jsonl"));
  LoadOptions opts;
  opts.preprocess_missing = false;
  return load_project(dir, opts);
}

std::vector<LinkRecord> load_split(const RunConfig& cfg, const std::string& split) {
  const std::string path = join(cfg.stage_path("links"), split + ".jsonl");
  require("links", path);
  return load_links(path);
}

struct Model {
  Vocab vocab;
  Encoder student;
};

Model load_model(const RunConfig& cfg, const std::string& stage, const std::string& file) {
  const std::string vocab_path = join(cfg.stage_path("distill"), "vocab.txt");
  const std::string ckpt = join(cfg.stage_path(stage), file);
  require("distill", vocab_path);
  require(stage == cfg.train_tag ? "train" : stage, ckpt);
  return {Vocab::load(vocab_path), Encoder::load(ckpt)};
}

}  // namespace

RunConfig::RunConfig() {
  synth.n_issues = 200;
  apply_seed(0);
}

void RunConfig::apply_seed(std::uint64_t base) {
  seed = base;
  synth.seed = base;
  split.seed = base + 1;
  teacher.seed = base + 2;
  student.seed = base + 3;
  distill.seed = base + 4;
  train.seed = base + 5;
  train.false_links.seed = base + 6;
  queries.seed = base + 7;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["out_dir"] = out_dir;
  j["raw_dir"] = raw_path();
  j["seed"] = seed;
  j["synth"] = {{"n_issues", synth.n_issues},
                {"seed", synth.seed},
                {"overlap", synth.overlap},
                {"multi_tag_rate", synth.multi_tag_rate},
                {"background_rate", synth.background_rate},
                {"entity_pool", synth.entity_pool},
                {"alias_rate", synth.alias_rate},
                {"message_topic_rate", synth.message_topic_rate}};
  j["split"] = {{"train", split.train_frac},
                {"valid", split.valid_frac},
                {"test", split.test_frac},
                {"seed", split.seed}};
  j["vocab_min_freq"] = vocab_min_freq;
  j["teacher"] = teacher.to_json();
  j["teacher_weights"] = teacher_weights ? nlohmann::json(*teacher_weights) : nlohmann::json(nullptr);
  j["student"] = student.to_json();
  j["channels"] = channels;
  j["distill"] = {{"epochs", distill.epochs},
                  {"batch_size", distill.batch_size},
                  {"lr", distill.lr},
                  {"seed", distill.seed}};
  j["train"] = train.to_json();
  j["train"]["false_links"]["seed"] = train.false_links.seed;
  j["train_tag"] = train_tag;
  j["eval"] = {{"split", eval_split},
               {"max_issues", queries.max_issues},
               {"candidates", queries.candidates},
               {"multi_relevant", queries.multi_relevant},
               {"seed", queries.seed},
               {"threshold", threshold}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.apply_seed(j.value("seed", std::uint64_t{0}));
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("raw_dir") && j.at("raw_dir").is_string()) c.raw_dir = j.at("raw_dir").get<std::string>();
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    c.synth.n_issues = s.value("n_issues", c.synth.n_issues);
    c.synth.seed = s.value("seed", c.synth.seed);
    c.synth.overlap = s.value("overlap", c.synth.overlap);
    c.synth.multi_tag_rate = s.value("multi_tag_rate", c.synth.multi_tag_rate);
    c.synth.background_rate = s.value("background_rate", c.synth.background_rate);
    c.synth.entity_pool = s.value("entity_pool", c.synth.entity_pool);
    c.synth.alias_rate = s.value("alias_rate", c.synth.alias_rate);
    c.synth.message_topic_rate = s.value("message_topic_rate", c.synth.message_topic_rate);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split.train_frac = s.value("train", c.split.train_frac);
    c.split.valid_frac = s.value("valid", c.split.valid_frac);
    c.split.test_frac = s.value("test", c.split.test_frac);
    c.split.seed = s.value("seed", c.split.seed);
  }
  c.vocab_min_freq = j.value("vocab_min_freq", c.vocab_min_freq);
  auto encoder = [](const nlohmann::json& e, EncoderConfig base) {
    nlohmann::json merged = base.to_json();
    merged.update(e);
    return EncoderConfig::from_json(merged);
  };
  if (j.contains("teacher")) c.teacher = encoder(j.at("teacher"), c.teacher);
  if (j.contains("student")) c.student = encoder(j.at("student"), c.student);
  if (j.contains("teacher_weights") && j.at("teacher_weights").is_string()) {
    c.teacher_weights = j.at("teacher_weights").get<std::string>();
  }
  c.channels = j.value("channels", c.channels);
  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    c.distill.epochs = d.value("epochs", c.distill.epochs);
    c.distill.batch_size = d.value("batch_size", c.distill.batch_size);
    c.distill.lr = d.value("lr", c.distill.lr);
    c.distill.seed = d.value("seed", c.distill.seed);
  }
  if (j.contains("train")) {
    nlohmann::json merged = c.train.to_json();
    merged.merge_patch(j.at("train"));
    const std::uint64_t false_seed = c.train.false_links.seed;
    c.train = TrainConfig::from_json(merged);
    c.train.false_links.seed = merged["false_links"].value("seed", false_seed);
  }
  c.train_tag = j.value("train_tag", c.train_tag);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    c.eval_split = e.value("split", c.eval_split);
    c.queries.max_issues = e.value("max_issues", c.queries.max_issues);
    c.queries.candidates = e.value("candidates", c.queries.candidates);
    c.queries.multi_relevant = e.value("multi_relevant", c.queries.multi_relevant);
    c.queries.seed = e.value("seed", c.queries.seed);
    c.threshold = e.value("threshold", c.threshold);
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config " + path);
  return from_json(nlohmann::json::parse(in));
}

void RunConfig::validate() const {
  split.validate();
  teacher.validate();
  student.validate();
  if (teacher.hidden_dim != student.hidden_dim) {
    throw ConfigError("teacher and student hidden_dim must match");
  }
  ChannelMap::parse(channels).validate(teacher.n_layers, student.n_layers);
  train.validate();
  if (eval_split != "train" && eval_split != "valid" && eval_split != "test") {
    throw ConfigError("eval split must be train, valid or test");
  }
  if (train_tag.empty() || train_tag.find('/') != std::string::npos) {
    throw ConfigError("train_tag must be a plain directory name");
  }
}

std::string RunConfig::raw_path() const { return raw_dir ? *raw_dir : stage_path("raw"); }

std::string RunConfig::stage_path(const std::string& stage) const { return join(out_dir, stage); }

void run_synth(const RunConfig& cfg) {
  const SyntheticCorpus corpus = generate_synthetic_corpus(cfg.synth);
  const std::string dir = cfg.stage_path("raw");
  fs::create_directories(dir);
  // Raw records carry no token fields so the preprocess stage fills them.
  auto write_raw = [](const std::string& path, const auto& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    for (const auto& r : records) {
      nlohmann::json j = to_json(r);
      for (const char* key : {"title_tokens", "description_tokens", "message_tokens",
                              "diff_tokens", "source_tokens"}) {
        j.erase(key);
      }
      out << j.dump() << '\n';
    }
  };
  write_raw(join(dir, "issues.jsonl"), corpus.issues);
  write_raw(join(dir, "commits.jsonl"), corpus.commits);
}

Project run_preprocess(const RunConfig& cfg) {
  const std::string raw = cfg.raw_path();
  require("synth", join(raw, "issues.jsonl"));
  require("synth", join(raw, "commits.jsonl"));
  Project p = load_project(raw);
  const std::string dir = cfg.stage_path("prep");
  save_project(dir, p);
  write_json(join(dir, "load_report.json"),
             {{"issues", report_json(p.issue_report)}, {"commits", report_json(p.commit_report)}});
  return p;
}

LinkSplits run_links(const RunConfig& cfg) {
  const Project p = load_prepared(cfg);
  TrueLinkReport report;
  const auto links = extract_true_links(p.issues, p.commits, &report);
  const LinkSplits splits = split_links(links, cfg.split);
  const auto issues = index_by(p.issues, [](const IssueRecord& r) { return r.issue_id; });
  const auto commits = index_by(p.commits, [](const CommitRecord& r) { return r.commit_id; });
  const auto aux = generate_issue_code_links(links, issues, commits);

  FalseLinkPolicy policy = cfg.train.false_links;
  TimeFalseLinkReport time_report;
  const auto time_false =
      generate_false_links_time(splits.train, issues, p.commits, LinkSet(links), policy, &time_report);

  const std::string dir = cfg.stage_path("links");
  fs::create_directories(dir);
  save_links(join(dir, "true_links.jsonl"), links);
  save_links(join(dir, "train.jsonl"), splits.train);
  save_links(join(dir, "valid.jsonl"), splits.valid);
  save_links(join(dir, "test.jsonl"), splits.test);
  save_issue_code_links(join(dir, "issue_code.jsonl"), aux);
  save_links(join(dir, "false_links_time.jsonl"), time_false);
  std::size_t aux_positive = 0;
  for (const auto& a : aux) aux_positive += a.label == 1 ? 1 : 0;
  write_json(join(dir, "report.json"), {{"true_links", report.links},
                                        {"untagged_commits", report.untagged_commits},
                                        {"unmatched_tags", report.unmatched_tags},
                                        {"train", splits.train.size()},
                                        {"valid", splits.valid.size()},
                                        {"test", splits.test.size()},
                                        {"issue_code_links", aux.size()},
                                        {"issue_code_positive", aux_positive},
                                        {"time_false_links", time_report.generated},
                                        {"time_skipped_issues", time_report.skipped_issues}});
  return splits;
}

DistillResult run_distill(const RunConfig& cfg) {
  cfg.validate();
  const Project p = load_prepared(cfg);
  require("links", join(cfg.stage_path("links"), "train.jsonl"));

  std::vector<Tokens> streams;
  std::vector<std::pair<Tokens, std::size_t>> sequences;
  const TokenBudgets& budgets = cfg.train.budgets;
  for (const auto& i : p.issues) {
    streams.push_back(i.text_tokens());
    sequences.emplace_back(streams.back(), budgets.natural_language);
  }
  for (const auto& c : p.commits) {
    streams.push_back(c.message_tokens);
    sequences.emplace_back(c.message_tokens, budgets.natural_language);
    streams.push_back(c.code_tokens());
    sequences.emplace_back(streams.back(), budgets.code);
  }
  const Vocab vocab = Vocab::build(streams, cfg.vocab_min_freq);

  Encoder teacher = cfg.teacher_weights ? Encoder::load(*cfg.teacher_weights)
                                        : Encoder(cfg.teacher, vocab.size());
  if (teacher.vocab_size() != vocab.size()) {
    throw ConfigError("teacher weights expect a vocabulary of " +
                      std::to_string(teacher.vocab_size()) + " tokens, corpus has " +
                      std::to_string(vocab.size()));
  }
  teacher.freeze();
  Encoder student(cfg.student, vocab.size());
  const ChannelMap channels = ChannelMap::parse(cfg.channels);

  std::vector<TokenizedSequence> tokenized;
  for (const auto& [tokens, budget] : sequences) tokenized.push_back(tokenize(tokens, budget, vocab));

  const std::string dir = cfg.stage_path("distill");
  fs::create_directories(dir);
  DistillSchedule schedule = cfg.distill;
  schedule.out_dir = join(dir, "epochs");
  const DistillResult result = run_distillation(teacher, student, tokenized, channels, schedule);

  vocab.save(join(dir, "vocab.txt"));
  teacher.save(join(dir, "teacher.ckpt"));
  student.save(join(dir, "student.ckpt"));
  write_loss_curve(join(dir, "distill_loss.csv"), result);
  return result;
}

std::vector<RankingQuery> queries_for_split(const RunConfig& cfg, const std::string& split) {
  const auto all = load_split(cfg, "true_links");
  const auto target = load_split(cfg, split);
  std::vector<LinkRecord> backfill;
  for (const char* other : {"train", "valid", "test"}) {
    if (split == other) continue;
    const auto links = load_split(cfg, other);
    backfill.insert(backfill.end(), links.begin(), links.end());
  }
  return build_queries(target, cfg.queries, backfill, LinkSet(all));
}

TrainResult run_train(const RunConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const Project p = load_prepared(cfg);
  Model model = load_model(cfg, "distill", "student.ckpt");
  model.student.unfreeze();

  TrainData data;
  data.issues = &p.issues;
  data.commits = &p.commits;
  data.train_links = load_split(cfg, "train");
  data.known_true = LinkSet(load_split(cfg, "true_links"));
  data.valid_queries = queries_for_split(cfg, "valid");
  const std::string aux_path = join(cfg.stage_path("links"), "issue_code.jsonl");
  require("links", aux_path);
  const LinkSet train_pairs(data.train_links);
  for (const auto& a : load_issue_code_links(aux_path)) {
    if (train_pairs.contains(a.issue_id, a.commit_id)) data.aux_links.push_back(a);
  }

  AuxClassifier clf(model.student.config().hidden_dim, cfg.train.seed + 100);
  return train(model.student, clf, model.vocab, data, cfg.train, cfg.stage_path(cfg.train_tag), hooks);
}

MetricReport run_eval(const RunConfig& cfg) {
  const Project p = load_prepared(cfg);
  const Model model = load_model(cfg, cfg.train_tag, "student_best.ckpt");
  auto queries = queries_for_split(cfg, cfg.eval_split);
  ModelScorer scorer(model.student, model.vocab, p.issues, p.commits, cfg.train.budgets);
  const MetricReport report = evaluate(queries, std::ref(scorer));

  std::size_t true_total = 0, true_hits = 0, false_total = 0, false_hits = 0;
  for (const auto& q : queries) {
    for (const auto& c : q.candidates) {
      const bool link = c.score > cfg.threshold;
      if (c.label == 1) {
        ++true_total;
        true_hits += link ? 1 : 0;
      } else {
        ++false_total;
        false_hits += link ? 1 : 0;
      }
    }
  }
  const std::string dir = cfg.stage_path("eval");
  fs::create_directories(dir);
  write_metric_report(join(dir, "metrics.json"), join(dir, "metrics.txt"), report);
  write_query_scores(join(dir, "scores.csv"), queries);
  write_json(join(dir, "threshold.json"),
             {{"threshold", cfg.threshold},
              {"true_candidates", true_total},
              {"true_predicted_links", true_hits},
              {"distractor_candidates", false_total},
              {"distractor_predicted_links", false_hits}});
  return report;
}

MetricReport run_vsm(const RunConfig& cfg) {
  const Project p = load_prepared(cfg);
  const CorpusStats stats = vsm_stats_for(load_split(cfg, "train"), p.issues, p.commits);
  const auto issues = index_by(p.issues, [](const IssueRecord& r) { return r.issue_id; });
  const auto commits = index_by(p.commits, [](const CommitRecord& r) { return r.commit_id; });
  auto queries = queries_for_split(cfg, cfg.eval_split);
  const MetricReport report = evaluate(queries, [&](const std::string& i, const std::string& c) {
    return vsm_score(vsm_issue_document(*issues.at(i)), vsm_commit_document(*commits.at(c)), stats);
  });
  const std::string dir = cfg.stage_path("vsm");
  fs::create_directories(dir);
  write_metric_report(join(dir, "metrics.json"), join(dir, "metrics.txt"), report);
  write_query_scores(join(dir, "scores.csv"), queries);
  return report;
}

}  // namespace commitlink
