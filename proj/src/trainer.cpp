#include "commitlink/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "commitlink/optim.hpp"

namespace commitlink {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (lambda_cl < 0.0 || lambda_aux < 0.0) throw ConfigError("task weights must be non-negative");
  if (!(lr > 0.0) || !(lr_decay > 0.0) || lr_decay_every < 1) {
    throw ConfigError("bad learning-rate schedule");
  }
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  false_links.validate();
}

double TrainConfig::lr_at(int epoch) const {
  return lr * std::pow(lr_decay, static_cast<double>((epoch - 1) / lr_decay_every));
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"lr_decay_every", lr_decay_every},
          {"tau", tau},
          {"lambda_cl", lambda_cl},
          {"lambda_aux", lambda_aux},
          {"epochs", epochs},
          {"seed", seed},
          {"false_links",
           {{"mode", false_links.mode == FalseLinkMode::time_interval ? "time_interval"
                                                                       : "similarity_in_batch"},
            {"window_days", false_links.window_days},
            {"per_true", false_links.per_true}}},
          {"budgets", {{"natural_language", budgets.natural_language}, {"code", budgets.code}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.tau = j.value("tau", c.tau);
  c.lambda_cl = j.value("lambda_cl", c.lambda_cl);
  c.lambda_aux = j.value("lambda_aux", c.lambda_aux);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("false_links")) {
    const auto& f = j.at("false_links");
    const std::string mode = f.value("mode", "similarity_in_batch");
    if (mode == "time_interval") {
      c.false_links.mode = FalseLinkMode::time_interval;
    } else if (mode != "similarity_in_batch") {
      throw ConfigError("unknown false-link mode " + mode);
    }
    c.false_links.window_days = f.value("window_days", c.false_links.window_days);
    c.false_links.per_true = f.value("per_true", c.false_links.per_true);
  }
  if (j.contains("budgets")) {
    c.budgets.natural_language = j.at("budgets").value("natural_language", c.budgets.natural_language);
    c.budgets.code = j.at("budgets").value("code", c.budgets.code);
  }
  return c;
}

Batch Batch::from_true_links(std::vector<LinkRecord> links) {
  Batch b;
  std::unordered_map<std::string, int> ids;
  for (const auto& l : links) {
    b.group.push_back(ids.emplace(l.issue_id, static_cast<int>(ids.size())).first->second);
  }
  b.true_links = std::move(links);
  return b;
}

std::size_t Batch::distinct_issues() const {
  return group.empty() ? 0 : static_cast<std::size_t>(*std::max_element(group.begin(), group.end()) + 1);
}

ag::Var main_loss(std::span<const ag::Var> issue_reps, std::span<const ag::Var> commit_reps,
                  std::span<const int> labels) {
  if (issue_reps.size() != commit_reps.size() || issue_reps.size() != labels.size()) {
    throw std::invalid_argument("main_loss: length mismatch");
  }
  std::vector<ag::Var> terms;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const ag::Var y = ag::constant_scalar(static_cast<double>(labels[i]));
    terms.push_back(ag::abs(ag::sub(y, ag::cosine(issue_reps[i], commit_reps[i]))));
  }
  return terms.empty() ? ag::constant_scalar(0.0) : ag::sum(terms);
}

ag::Var contrastive_loss(std::span<const ag::Var> commit_reps, std::span<const int> groups,
                         double tau, ContrastiveStats* stats) {
  if (commit_reps.size() != groups.size()) throw std::invalid_argument("contrastive_loss: length mismatch");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  const std::size_t n = commit_reps.size();
  ContrastiveStats st;
  std::vector<ag::Var> terms;
  for (std::size_t i = 0; i < n; ++i) {
    ++st.anchors;
    std::size_t pos = i;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && groups[j] == groups[i]) {
        pos = j;
        break;
      }
    }
    std::vector<ag::Var> logits{ag::scale(ag::cosine(commit_reps[i], commit_reps[pos]), 1.0 / tau)};
    for (std::size_t j = 0; j < n; ++j) {
      if (groups[j] != groups[i]) {
        logits.push_back(ag::scale(ag::cosine(commit_reps[i], commit_reps[j]), 1.0 / tau));
      }
    }
    if (logits.size() == 1) {
      ++st.skipped;
      continue;
    }
    terms.push_back(ag::sub(ag::log_sum_exp(ag::concat_cols(logits)), logits.front()));
  }
  if (stats) *stats = st;
  return terms.empty() ? ag::constant_scalar(0.0) : ag::sum(terms);
}

AuxClassifier::AuxClassifier(int dim, std::uint64_t seed) : dim_(dim) {
  if (dim < 1) throw ConfigError("aux classifier dimension must be positive");
  std::mt19937_64 rng(seed);
  auto gaussian = [&rng](int rows, int cols) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
    ag::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
  };
  params_.add("aux.f1.weight", gaussian(3 * dim, dim));
  params_.add("aux.f1.bias", ag::Matrix::Zero(1, dim));
  params_.add("aux.f2.weight", gaussian(dim, 2));
  params_.add("aux.f2.bias", ag::Matrix::Zero(1, 2));
}

void AuxClassifier::save(const std::string& path) const {
  save_archive(path, {{"kind", "aux_classifier"}, {"dim", dim_}}, params_);
}

AuxClassifier AuxClassifier::load(const std::string& path) {
  const auto meta = read_archive_meta(path);
  if (meta.value("kind", "") != "aux_classifier") throw DataError(path + " is not a classifier archive");
  AuxClassifier clf(meta.at("dim").get<int>(), 0);
  load_archive(path, clf.params_);
  return clf;
}

ag::Var aux_forward(const ag::Var& issue_pooled, const ag::Var& code_pooled,
                    const AuxClassifier& clf) {
  if (issue_pooled->rows() != 1 || code_pooled->rows() != 1 ||
      issue_pooled->cols() != clf.dim() || code_pooled->cols() != clf.dim()) {
    throw ConfigError("aux_forward: pooled vectors must both be 1 x " + std::to_string(clf.dim()));
  }
  const ag::Var parts[] = {issue_pooled, code_pooled, ag::abs(ag::sub(code_pooled, issue_pooled))};
  const ag::Var hidden =
      ag::tanh(ag::add_row(ag::matmul(ag::concat_cols(parts), clf.w1()), clf.b1()));
  return ag::add_row(ag::matmul(hidden, clf.w2()), clf.b2());
}

std::array<double, 2> aux_probabilities(const ag::Var& issue_pooled, const ag::Var& code_pooled,
                                        const AuxClassifier& clf) {
  const ag::Matrix p = ag::softmax_row(aux_forward(issue_pooled, code_pooled, clf)->value);
  return {p(0, 0), p(0, 1)};
}

ag::Var aux_loss(std::span<const ag::Var> issue_pooled, std::span<const ag::Var> code_pooled,
                 std::span<const int> labels, const AuxClassifier& clf) {
  if (issue_pooled.size() != code_pooled.size() || issue_pooled.size() != labels.size()) {
    throw std::invalid_argument("aux_loss: length mismatch");
  }
  std::vector<ag::Var> terms;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("aux label must be 0 or 1");
    terms.push_back(ag::softmax_nll(aux_forward(issue_pooled[i], code_pooled[i], clf), labels[i]));
  }
  return terms.empty() ? ag::constant_scalar(0.0) : ag::sum(terms);
}

ag::Var total_loss(const ag::Var& main, const ag::Var& cl, const ag::Var& aux,
                   const TrainConfig& cfg) {
  return ag::add(main, ag::add(ag::scale(cl, cfg.lambda_cl), ag::scale(aux, cfg.lambda_aux)));
}

namespace {

// Per-step representation cache so shared issues and commits join the
// graph once.
class StepReps {
 public:
  StepReps(const Encoder& enc, const Vocab& vocab, const TokenBudgets& budgets,
           const std::unordered_map<std::string, const IssueRecord*>& issues,
           const std::unordered_map<std::string, const CommitRecord*>& commits)
      : enc_(enc), vocab_(vocab), budgets_(budgets), issues_(issues), commits_(commits) {}

  const ag::Var& issue_pooled(const std::string& id) {
    auto it = issue_pooled_.find(id);
    if (it == issue_pooled_.end()) {
      it = issue_pooled_
               .emplace(id, pooled_sequence(enc_, vocab_, issue(id).text_tokens(),
                                            budgets_.natural_language))
               .first;
    }
    return it->second;
  }

  const ag::Var& issue_rep(const std::string& id) {
    auto it = issue_rep_.find(id);
    if (it == issue_rep_.end()) {
      const ag::Var s = issue_pooled(id);
      const ag::Var parts[] = {s, s};
      it = issue_rep_.emplace(id, ag::concat_cols(parts)).first;
    }
    return it->second;
  }

  const ag::Var& commit_rep(const std::string& id) {
    auto it = commit_rep_.find(id);
    if (it == commit_rep_.end()) {
      const auto c = commits_.find(id);
      if (c == commits_.end()) throw DataError("unknown commit " + id);
      it = commit_rep_.emplace(id, represent_commit(*c->second, enc_, vocab_, budgets_)).first;
    }
    return it->second;
  }

  ag::Var file_pooled(const IssueCodeLink& link) {
    const auto c = commits_.find(link.commit_id);
    if (c == commits_.end() || link.file_index >= c->second->changed_files.size()) {
      throw DataError("issue-code link points at a missing file: " + link.file_path);
    }
    return pooled_sequence(enc_, vocab_, c->second->changed_files[link.file_index].diff_tokens,
                           budgets_.code);
  }

 private:
  const IssueRecord& issue(const std::string& id) const {
    const auto it = issues_.find(id);
    if (it == issues_.end()) throw DataError("unknown issue " + id);
    return *it->second;
  }

  const Encoder& enc_;
  const Vocab& vocab_;
  const TokenBudgets& budgets_;
  const std::unordered_map<std::string, const IssueRecord*>& issues_;
  const std::unordered_map<std::string, const CommitRecord*>& commits_;
  std::unordered_map<std::string, ag::Var> issue_pooled_, issue_rep_, commit_rep_;
};

std::vector<std::vector<LinkRecord>> make_chunks(const std::vector<LinkRecord>& links,
                                                 std::size_t size) {
  std::vector<std::vector<LinkRecord>> chunks;
  for (std::size_t s = 0; s < links.size(); s += size) {
    chunks.emplace_back(links.begin() + static_cast<std::ptrdiff_t>(s),
                        links.begin() + static_cast<std::ptrdiff_t>(std::min(links.size(), s + size)));
  }
  // A trailing chunk too small for negatives joins its predecessor.
  if (chunks.size() > 1 && Batch::from_true_links(chunks.back()).distinct_issues() < 2) {
    auto tail = std::move(chunks.back());
    chunks.pop_back();
    chunks.back().insert(chunks.back().end(), tail.begin(), tail.end());
  }
  return chunks;
}

}  // namespace

TrainResult train(Encoder& student, AuxClassifier& clf, const Vocab& vocab, const TrainData& data,
                  const TrainConfig& cfg, const std::optional<std::string>& out_dir,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (!data.issues || !data.commits) throw std::invalid_argument("train: issues and commits required");
  if (student.frozen()) throw ConfigError("student is frozen");
  if (clf.dim() != student.config().hidden_dim) {
    throw ConfigError("aux classifier dimension differs from the student hidden_dim");
  }
  std::vector<LinkRecord> train_links;
  for (const auto& l : data.train_links) {
    if (l.label == 1) train_links.push_back(l);
  }
  if (train_links.size() < 2) throw DataError("need at least two training links");

  const auto issues = index_by(*data.issues, [](const IssueRecord& r) { return r.issue_id; });
  const auto commits = index_by(*data.commits, [](const CommitRecord& r) { return r.commit_id; });

  std::vector<ag::Var> all_params = student.params().vars();
  for (const auto& p : clf.params().vars()) all_params.push_back(p);
  Adam opt(all_params, {.lr = cfg.lr});
  std::mt19937_64 rng(cfg.seed);
  std::vector<IssueCodeLink> aux_links = data.aux_links;
  std::size_t aux_cursor = 0;

  ParameterStore best_student = student.params();
  ParameterStore best_clf = clf.params();
  TrainResult result;
  bool have_best = false;

  auto restore_best = [&] {
    student.params().copy_values_from(best_student);
    clf.params().copy_values_from(best_clf);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cfg.lr_at(epoch);
    opt.set_lr(rec.lr);
    std::shuffle(train_links.begin(), train_links.end(), rng);
    std::shuffle(aux_links.begin(), aux_links.end(), rng);
    aux_cursor = 0;
    const auto chunks = make_chunks(train_links, static_cast<std::size_t>(cfg.batch_size));
    std::vector<LinkRecord> epoch_false;

    for (std::size_t b = 0; b < chunks.size(); ++b) {
      Batch batch = Batch::from_true_links(chunks[b]);
      StepReps reps(student, vocab, cfg.budgets, issues, commits);

      if (batch.distinct_issues() >= 2) {
        if (cfg.false_links.mode == FalseLinkMode::similarity_in_batch) {
          std::unordered_map<std::string, Eigen::VectorXd> embed;
          for (const auto& l : batch.true_links) {
            if (!embed.count(l.issue_id)) {
              const auto& v = reps.issue_rep(l.issue_id)->value;
              embed.emplace(l.issue_id, Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
            }
          }
          FalseLinkStats st;
          batch.false_links =
              generate_false_links_similarity(batch.true_links, embed, data.known_true, &st);
          rec.fallbacks += st.fallbacks;
        } else {
          FalseLinkPolicy policy = cfg.false_links;
          policy.seed = rng();
          batch.false_links = generate_false_links_time(batch.true_links, issues, *data.commits,
                                                        data.known_true, policy);
        }
      }
      for (const auto& f : batch.false_links) {
        if (data.known_true.contains(f.issue_id, f.commit_id)) ++rec.collisions;
      }
      rec.false_links += batch.false_links.size();
      epoch_false.insert(epoch_false.end(), batch.false_links.begin(), batch.false_links.end());

      std::vector<ag::Var> s, q, true_q;
      std::vector<int> y;
      for (const auto* part : {&batch.true_links, &batch.false_links}) {
        for (const auto& l : *part) {
          s.push_back(reps.issue_rep(l.issue_id));
          q.push_back(reps.commit_rep(l.commit_id));
          y.push_back(l.label);
        }
      }
      for (const auto& l : batch.true_links) true_q.push_back(reps.commit_rep(l.commit_id));

      const ag::Var l_main = main_loss(s, q, y);
      ContrastiveStats cst;
      const ag::Var l_cl = contrastive_loss(true_q, batch.group, cfg.tau, &cst);
      rec.skipped_anchors += cst.skipped;

      ag::Var l_aux = ag::constant_scalar(0.0);
      if (cfg.lambda_aux > 0.0 && !aux_links.empty()) {
        std::vector<ag::Var> ap, cp;
        std::vector<int> labels;
        for (int k = 0; k < cfg.batch_size; ++k) {
          const auto& link = aux_links[aux_cursor];
          aux_cursor = (aux_cursor + 1) % aux_links.size();
          ap.push_back(reps.issue_pooled(link.issue_id));
          cp.push_back(reps.file_pooled(link));
          labels.push_back(link.label);
        }
        l_aux = aux_loss(ap, cp, labels, clf);
      }

      const ag::Var loss = total_loss(l_main, l_cl, l_aux, cfg);
      if (!std::isfinite(loss->scalar())) {
        restore_best();
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + "; parameters restored to the last good state");
      }
      rec.main += l_main->scalar();
      rec.cl += l_cl->scalar();
      rec.aux += l_aux->scalar();
      rec.total += loss->scalar();

      opt.zero_grad();
      ag::backward(loss);
      opt.step();
    }
    const double n_batches = static_cast<double>(chunks.size());
    rec.main /= n_batches;
    rec.cl /= n_batches;
    rec.aux /= n_batches;
    rec.total /= n_batches;

    if (!student.params().all_finite() || !clf.params().all_finite()) {
      restore_best();
      throw NumericError("non-finite parameters after epoch " + std::to_string(epoch));
    }
    if (!data.valid_queries.empty()) {
      std::vector<RankingQuery> queries = data.valid_queries;
      ModelScorer scorer(student, vocab, *data.issues, *data.commits, cfg.budgets);
      rec.valid_mrr = evaluate(queries, std::ref(scorer)).mrr;
    }
    if (!have_best || rec.valid_mrr > result.best_valid_mrr) {
      have_best = true;
      result.best_valid_mrr = rec.valid_mrr;
      result.best_epoch = epoch;
      best_student.copy_values_from(student.params());
      best_clf.copy_values_from(clf.params());
    }
    result.collisions += rec.collisions;
    result.history.push_back(rec);
    if (hooks.on_false_links) hooks.on_false_links(epoch, epoch_false);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (out_dir) {
      std::filesystem::create_directories(*out_dir);
      write_history((std::filesystem::path(*out_dir) / "history.csv").string(), result.history);
    }
  }

  restore_best();
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    student.save((std::filesystem::path(*out_dir) / "student_best.ckpt").string());
    clf.save((std::filesystem::path(*out_dir) / "aux_best.ckpt").string());
    write_history((std::filesystem::path(*out_dir) / "history.csv").string(), result.history);
  }
  return result;
}

void write_history(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,main,cl,aux,total,valid_MRR\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%d,%.8f,%.8f,%.8f,%.8f,%.8f\n", r.epoch, r.main, r.cl, r.aux,
                  r.total, r.valid_mrr);
    out << line;
  }
}

}  // namespace commitlink
