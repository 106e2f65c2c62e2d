#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "commitlink/trainer.hpp"
#include "fixture.hpp"
#include "gradcheck.hpp"

using namespace commitlink;
using commitlink::testing::check_gradients;
using commitlink::testing::make_fixture;
using commitlink::testing::random_matrix;
using commitlink::testing::tiny_student;

namespace {

ag::Var row(std::initializer_list<double> v) {
  ag::Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return ag::constant(m);
}

double cos_of(const ag::Matrix& a, const ag::Matrix& b) {
  const double na = a.norm(), nb = b.norm();
  return na == 0 || nb == 0 ? 0.0 : a.cwiseProduct(b).sum() / (na * nb);
}

// Per-anchor loop written from the definition.
double contrastive_oracle(const std::vector<ag::Matrix>& q, const std::vector<int>& g, double tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::size_t pos = i;
    for (std::size_t j = 0; j < q.size(); ++j) {
      if (j != i && g[j] == g[i]) {
        pos = j;
        break;
      }
    }
    const double sp = std::exp(cos_of(q[i], q[pos]) / tau);
    double denom = sp;
    bool any = false;
    for (std::size_t j = 0; j < q.size(); ++j) {
      if (g[j] != g[i]) {
        denom += std::exp(cos_of(q[i], q[j]) / tau);
        any = true;
      }
    }
    if (any) total += -std::log(sp / denom);
  }
  return total;
}

// Hand-rolled forward pass of the classifier.
std::array<double, 2> aux_oracle(const ag::Matrix& s, const ag::Matrix& c, const AuxClassifier& clf) {
  const int d = clf.dim();
  std::vector<double> x;
  for (int i = 0; i < d; ++i) x.push_back(s(0, i));
  for (int i = 0; i < d; ++i) x.push_back(c(0, i));
  for (int i = 0; i < d; ++i) x.push_back(std::abs(c(0, i) - s(0, i)));
  std::vector<double> h(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    double acc = clf.b1()->value(0, j);
    for (int i = 0; i < 3 * d; ++i) acc += x[static_cast<std::size_t>(i)] * clf.w1()->value(i, j);
    h[static_cast<std::size_t>(j)] = std::tanh(acc);
  }
  double z[2];
  for (int k = 0; k < 2; ++k) {
    z[k] = clf.b2()->value(0, k);
    for (int j = 0; j < d; ++j) z[k] += h[static_cast<std::size_t>(j)] * clf.w2()->value(j, k);
  }
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

void zero(AuxClassifier& clf) {
  for (const auto& p : clf.params().vars()) p->value.setZero();
}

}  // namespace

TEST(MainLoss, PinnedContributions) {
  const std::vector<ag::Var> s{row({1, 0})};
  const std::vector<ag::Var> q{row({1, 0})};
  EXPECT_NEAR(main_loss(s, q, std::vector<int>{1})->scalar(), 0.0, 1e-15);
  const std::vector<ag::Var> q2{row({-0.2, std::sqrt(1 - 0.04)})};
  EXPECT_NEAR(main_loss(s, q2, std::vector<int>{0})->scalar(), 0.2, 1e-12);
}

TEST(MainLoss, ZeroVectorCosineIsZero) {
  const std::vector<ag::Var> s{row({0, 0})};
  const std::vector<ag::Var> q{row({1, 2})};
  EXPECT_DOUBLE_EQ(main_loss(s, q, std::vector<int>{1})->scalar(), 1.0);
}

TEST(MainLoss, MatchesPerLinkOracle) {
  std::mt19937_64 rng(1);
  std::vector<ag::Var> s, q;
  std::vector<int> y;
  double oracle = 0.0;
  for (int i = 0; i < 5; ++i) {
    s.push_back(ag::constant(random_matrix(1, 6, rng)));
    q.push_back(ag::constant(random_matrix(1, 6, rng)));
    y.push_back(i % 2);
    oracle += std::abs(y.back() - cos_of(s.back()->value, q.back()->value));
  }
  EXPECT_NEAR(main_loss(s, q, y)->scalar(), oracle, 1e-6);
}

TEST(Contrastive, EqualSimilaritiesGiveLnTwo) {
  const std::vector<ag::Var> q{row({1, 0}), row({2, 0})};
  ContrastiveStats st;
  const double total = contrastive_loss(q, std::vector<int>{0, 1}, 1.0, &st)->scalar();
  ASSERT_EQ(st.anchors - st.skipped, 2u);
  EXPECT_NEAR(total / 2.0, std::log(2.0), 1e-6);
}

TEST(Contrastive, OppositeNegativeAtUnitTemperature) {
  const std::vector<ag::Var> q{row({1, 0}), row({-1, 0})};
  const double total = contrastive_loss(q, std::vector<int>{0, 1}, 1.0)->scalar();
  EXPECT_NEAR(total / 2.0, std::log1p(std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(total / 2.0, 0.12693, 1e-5);
}

TEST(Contrastive, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> grp(0, 3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ag::Var> q;
    std::vector<ag::Matrix> raw;
    std::vector<int> g;
    for (int i = 0; i < 8; ++i) {
      raw.push_back(random_matrix(1, 5, rng));
      q.push_back(ag::constant(raw.back()));
      g.push_back(grp(rng));
    }
    for (double tau : {0.07, 0.5, 1.0}) {
      EXPECT_NEAR(contrastive_loss(q, g, tau)->scalar(), contrastive_oracle(raw, g, tau), 1e-6);
    }
  }
}

TEST(Contrastive, SingleGroupAnchorsSkipped) {
  const std::vector<ag::Var> q{row({1, 0}), row({0, 1}), row({1, 1})};
  ContrastiveStats st;
  EXPECT_EQ(contrastive_loss(q, std::vector<int>{0, 0, 0}, 0.07, &st)->scalar(), 0.0);
  EXPECT_EQ(st.anchors, 3u);
  EXPECT_EQ(st.skipped, 3u);
}

TEST(Contrastive, CloserPositiveLowersLoss) {
  // The negative sits opposite the anchor, so rotating the positive toward
  // the anchor also pushes it away from the negative: every term shrinks.
  double previous = std::numeric_limits<double>::infinity();
  for (double angle = 1.5; angle >= 0.0; angle -= 0.25) {
    const std::vector<ag::Var> q{row({1, 0}), row({std::cos(angle), std::sin(angle)}), row({-1, 0})};
    const double loss = contrastive_loss(q, std::vector<int>{0, 0, 1}, 0.5)->scalar();
    EXPECT_LT(loss, previous) << angle;
    previous = loss;
  }
}

TEST(Contrastive, ScaleInvariant) {
  std::mt19937_64 rng(3);
  std::vector<ag::Var> q, scaled;
  for (int i = 0; i < 6; ++i) {
    const ag::Matrix m = random_matrix(1, 4, rng);
    q.push_back(ag::constant(m));
    scaled.push_back(ag::constant(3.5 * m));
  }
  const std::vector<int> g{0, 0, 1, 2, 2, 3};
  EXPECT_NEAR(contrastive_loss(q, g, 0.07)->scalar(), contrastive_loss(scaled, g, 0.07)->scalar(), 1e-9);
}

TEST(Contrastive, NonPositiveTauRejected) {
  const std::vector<ag::Var> q{row({1, 0}), row({0, 1})};
  EXPECT_THROW(contrastive_loss(q, std::vector<int>{0, 1}, 0.0), ConfigError);
}

TEST(Aux, ZeroWeightsGiveHalfAndLnTwo) {
  AuxClassifier clf(4, 1);
  zero(clf);
  std::mt19937_64 rng(4);
  std::vector<ag::Var> s, c;
  std::vector<int> y;
  for (int i = 0; i < 5; ++i) {
    s.push_back(ag::constant(random_matrix(1, 4, rng)));
    c.push_back(ag::constant(random_matrix(1, 4, rng)));
    y.push_back(i % 2);
    const auto p = aux_probabilities(s.back(), c.back(), clf);
    EXPECT_EQ(p[0], 0.5);
    EXPECT_EQ(p[1], 0.5);
  }
  EXPECT_NEAR(aux_loss(s, c, y, clf)->scalar(), 5 * std::log(2.0), 1e-9);
}

TEST(Aux, SwapOnlyPermutesFirstBlocks) {
  AuxClassifier clf(3, 2);
  // With W1 rows of the s and c blocks equal, swapping inputs leaves the
  // output unchanged because |c - s| is symmetric.
  clf.w1()->value.middleRows(3, 3) = clf.w1()->value.topRows(3);
  std::mt19937_64 rng(5);
  const auto s = ag::constant(random_matrix(1, 3, rng));
  const auto c = ag::constant(random_matrix(1, 3, rng));
  EXPECT_LT((aux_forward(s, c, clf)->value - aux_forward(c, s, clf)->value).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Aux, MatchesHandRolledForward) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    AuxClassifier clf(5, static_cast<std::uint64_t>(trial));
    clf.b1()->value = random_matrix(1, 5, rng, 0.3);
    clf.b2()->value = random_matrix(1, 2, rng, 0.3);
    const auto s = ag::constant(random_matrix(1, 5, rng));
    const auto c = ag::constant(random_matrix(1, 5, rng));
    const auto got = aux_probabilities(s, c, clf);
    const auto want = aux_oracle(s->value, c->value, clf);
    EXPECT_NEAR(got[0], want[0], 1e-6);
    EXPECT_NEAR(got[1], want[1], 1e-6);
    EXPECT_NEAR(got[0] + got[1], 1.0, 1e-12);
  }
}

TEST(Aux, LossMatchesPerExampleOracle) {
  std::mt19937_64 rng(7);
  AuxClassifier clf(4, 9);
  std::vector<ag::Var> s, c;
  std::vector<int> y;
  double oracle = 0.0;
  for (int i = 0; i < 10; ++i) {
    s.push_back(ag::constant(random_matrix(1, 4, rng)));
    c.push_back(ag::constant(random_matrix(1, 4, rng)));
    y.push_back((i * 7) % 3 == 0 ? 1 : 0);
    oracle -= std::log(aux_oracle(s.back()->value, c.back()->value, clf)[static_cast<std::size_t>(y.back())]);
  }
  const double got = aux_loss(s, c, y, clf)->scalar();
  EXPECT_NEAR(got, oracle, 1e-6);
  EXPECT_GE(got, 0.0);
}

TEST(Aux, ConfidentCorrectIsNearZero) {
  AuxClassifier clf(2, 1);
  zero(clf);
  clf.b2()->value << -40.0, 40.0;
  const std::vector<ag::Var> s{row({1, 2})}, c{row({3, 4})};
  EXPECT_LT(aux_loss(s, c, std::vector<int>{1}, clf)->scalar(), 1e-12);
  // The wrong label is floored at 1e-12, not infinite.
  EXPECT_LE(aux_loss(s, c, std::vector<int>{0}, clf)->scalar(), -std::log(1e-12) + 1e-9);
}

TEST(Aux, DimensionMismatchIsConfigError) {
  AuxClassifier clf(4, 1);
  EXPECT_THROW(aux_forward(row({1, 2, 3}), row({1, 2, 3, 4}), clf), ConfigError);
}

TEST(Aux, SaveLoadRoundTrip) {
  AuxClassifier clf(3, 4);
  const std::string path = ::testing::TempDir() + "aux.ckpt";
  clf.save(path);
  const AuxClassifier back = AuxClassifier::load(path);
  for (std::size_t i = 0; i < clf.params().size(); ++i) {
    EXPECT_EQ(back.params()[i]->value, clf.params()[i]->value);
  }
}

TEST(TotalLoss, WeightsAreLinear) {
  const auto m = ag::constant_scalar(1.25), cl = ag::constant_scalar(0.5), aux = ag::constant_scalar(2.0);
  TrainConfig cfg;
  cfg.lambda_cl = 0.0;
  cfg.lambda_aux = 0.0;
  EXPECT_DOUBLE_EQ(total_loss(m, cl, aux, cfg)->scalar(), 1.25);
  cfg.lambda_cl = 0.3;
  cfg.lambda_aux = 1.7;
  EXPECT_NEAR(total_loss(m, cl, aux, cfg)->scalar(), 1.25 + 0.15 + 3.4, 1e-12);
  cfg.lambda_cl = 0.6;
  EXPECT_NEAR(total_loss(m, cl, aux, cfg)->scalar(), 1.25 + 0.30 + 3.4, 1e-12);
}

TEST(TrainConfig, LearningRateSchedule) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lr_at(1), 4e-5);
  EXPECT_DOUBLE_EQ(cfg.lr_at(6), 4e-5);
  EXPECT_DOUBLE_EQ(cfg.lr_at(7), 4e-5 * 0.8);
  EXPECT_DOUBLE_EQ(cfg.lr_at(13), 4e-5 * 0.8 * 0.8);
}

TEST(TrainConfig, ValidatesAndRoundTrips) {
  TrainConfig cfg;
  cfg.tau = 0.2;
  cfg.false_links.mode = FalseLinkMode::time_interval;
  cfg.budgets.code = 64;
  EXPECT_EQ(TrainConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.batch_size = 4;
  cfg.lambda_cl = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Batch, GroupsFollowFirstAppearance) {
  const Batch b = Batch::from_true_links({{"B", "1", 1, Provenance::tagged_true},
                                          {"A", "2", 1, Provenance::tagged_true},
                                          {"B", "3", 1, Provenance::tagged_true}});
  EXPECT_EQ(b.group, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(b.distinct_issues(), 2u);
}

TEST(Gradients, LossesThroughEncoderAtWidthEight) {
  const auto fx = make_fixture(12, 2, 10);
  Encoder student(tiny_student(8), fx.vocab.size());
  AuxClassifier clf(8, 5);
  const auto issues = index_by(fx.issues, [](const IssueRecord& r) { return r.issue_id; });
  const auto commits = index_by(fx.commits, [](const CommitRecord& r) { return r.commit_id; });
  const std::vector<LinkRecord> links(fx.splits.train.begin(), fx.splits.train.begin() + 4);
  const Batch batch = Batch::from_true_links(links);

  auto main_fn = [&] {
    std::vector<ag::Var> s, q;
    std::vector<int> y;
    for (std::size_t i = 0; i < links.size(); ++i) {
      s.push_back(represent_issue(*issues.at(links[i].issue_id), student, fx.vocab));
      q.push_back(represent_commit(*commits.at(links[(i + i % 2) % links.size()].commit_id), student, fx.vocab));
      y.push_back(i % 2 == 0 ? 1 : 0);
    }
    return main_loss(s, q, y);
  };
  auto cl_fn = [&] {
    std::vector<ag::Var> q;
    for (const auto& l : links) q.push_back(represent_commit(*commits.at(l.commit_id), student, fx.vocab));
    std::vector<int> g = batch.group;
    if (batch.distinct_issues() < 2) g.back() = 99;
    return contrastive_loss(q, g, 0.5);
  };
  auto aux_fn = [&] {
    std::vector<ag::Var> s, c;
    std::vector<int> y;
    for (std::size_t i = 0; i < 4 && i < fx.aux.size(); ++i) {
      const auto& a = fx.aux[i];
      s.push_back(pooled_sequence(student, fx.vocab, issues.at(a.issue_id)->text_tokens(), 35));
      c.push_back(pooled_sequence(student, fx.vocab,
                                  commits.at(a.commit_id)->changed_files[a.file_index].diff_tokens, 80));
      y.push_back(a.label);
    }
    return aux_loss(s, c, y, clf);
  };
  std::vector<ag::Var> params = student.params().vars();
  for (const auto& p : clf.params().vars()) params.push_back(p);
  for (const auto& [name, fn] : std::vector<std::pair<std::string, std::function<ag::Var()>>>{
           {"main", main_fn}, {"cl", cl_fn}, {"aux", aux_fn}}) {
    const auto r = check_gradients(fn, params, 0.05, 11);
    EXPECT_GT(r.checked, 50u) << name;
    EXPECT_GE(r.agreement(), 0.99) << name << " worst " << r.worst;
  }
}

class TrainLoop : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { fx_ = new commitlink::testing::Fixture(make_fixture(40, 4)); }
  static void TearDownTestSuite() { delete fx_; }

  static TrainConfig config() {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.lr = 1e-3;
    cfg.epochs = 3;
    cfg.seed = 6;
    cfg.tau = 0.2;
    return cfg;
  }

  static commitlink::testing::Fixture* fx_;
};

commitlink::testing::Fixture* TrainLoop::fx_ = nullptr;

TEST_F(TrainLoop, DeterministicGivenSeed) {
  auto run = [&] {
    Encoder student(tiny_student(8), fx_->vocab.size());
    AuxClassifier clf(8, 1);
    return train(student, clf, fx_->vocab, fx_->data(), config());
  };
  const TrainResult a = run();
  const TrainResult b = run();
  ASSERT_EQ(a.history.size(), 3u);
  EXPECT_EQ(a.best_valid_mrr, b.best_valid_mrr);
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].total, b.history[e].total);
    EXPECT_EQ(a.history[e].valid_mrr, b.history[e].valid_mrr);
  }
}

TEST_F(TrainLoop, FalseLinksNeverCollideAndLossesNonNegative) {
  Encoder student(tiny_student(8), fx_->vocab.size());
  AuxClassifier clf(8, 1);
  const LinkSet truth(fx_->truth);
  std::size_t seen = 0, hits = 0, batches = 0;
  TrainHooks hooks;
  hooks.on_false_links = [&](int, const std::vector<LinkRecord>& links) {
    ++batches;
    for (const auto& l : links) {
      ++seen;
      hits += truth.contains(l.issue_id, l.commit_id) ? 1 : 0;
      EXPECT_EQ(l.label, 0);
    }
  };
  const auto r = train(student, clf, fx_->vocab, fx_->data(), config(), std::nullopt, hooks);
  EXPECT_GT(seen, 0u);
  EXPECT_EQ(hits, 0u);
  EXPECT_EQ(r.collisions, 0u);
  for (const auto& h : r.history) {
    EXPECT_GE(h.main, 0.0);
    EXPECT_GE(h.cl, 0.0);
    EXPECT_GE(h.aux, 0.0);
    EXPECT_GE(h.total, 0.0);
    EXPECT_LE(h.false_links, fx_->splits.train.size());
  }
}

TEST_F(TrainLoop, KeepsBestEpochAndWritesOutputs) {
  const auto dir = std::filesystem::temp_directory_path() / "commitlink_train_out";
  std::filesystem::remove_all(dir);
  Encoder student(tiny_student(8), fx_->vocab.size());
  AuxClassifier clf(8, 1);
  const auto r = train(student, clf, fx_->vocab, fx_->data(), config(), dir.string());
  EXPECT_TRUE(std::filesystem::exists(dir / "student_best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "aux_best.ckpt"));
  std::ifstream in(dir / "history.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,main,cl,aux,total,valid_MRR");

  // The student left in memory is the best-epoch one.
  auto queries = fx_->valid_queries;
  ModelScorer scorer(student, fx_->vocab, fx_->issues, fx_->commits);
  EXPECT_NEAR(evaluate(queries, std::ref(scorer)).mrr, r.best_valid_mrr, 1e-12);
  const Encoder saved = Encoder::load((dir / "student_best.ckpt").string());
  EXPECT_EQ(saved.params()[0]->value, student.params()[0]->value);
}

TEST_F(TrainLoop, AuxWeightZeroSkipsAux) {
  TrainConfig cfg = config();
  cfg.lambda_aux = 0.0;
  cfg.epochs = 1;
  Encoder student(tiny_student(8), fx_->vocab.size());
  AuxClassifier clf(8, 1);
  const ParameterStore before = clf.params();
  const auto r = train(student, clf, fx_->vocab, fx_->data(), cfg);
  EXPECT_EQ(r.history[0].aux, 0.0);
  EXPECT_NEAR(r.history[0].total, r.history[0].main + r.history[0].cl, 1e-9);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i]->value, clf.params()[i]->value);
}

TEST_F(TrainLoop, TimeWindowFalseLinksAvoidTruth) {
  TrainConfig cfg = config();
  cfg.epochs = 1;
  cfg.false_links.mode = FalseLinkMode::time_interval;
  Encoder student(tiny_student(8), fx_->vocab.size());
  AuxClassifier clf(8, 1);
  const LinkSet truth(fx_->truth);
  TrainHooks hooks;
  std::size_t seen = 0;
  hooks.on_false_links = [&](int, const std::vector<LinkRecord>& links) {
    for (const auto& l : links) {
      ++seen;
      EXPECT_FALSE(truth.contains(l.issue_id, l.commit_id));
      EXPECT_EQ(l.provenance, Provenance::generated_false_time);
    }
  };
  train(student, clf, fx_->vocab, fx_->data(), cfg, std::nullopt, hooks);
  EXPECT_GT(seen, 0u);
}

TEST_F(TrainLoop, DivergenceRestoresLastGoodState) {
  TrainConfig cfg = config();
  cfg.lr = 1e300;
  cfg.epochs = 4;
  Encoder student(tiny_student(8), fx_->vocab.size());
  AuxClassifier clf(8, 1);
  const ParameterStore initial = student.params();
  EXPECT_THROW(train(student, clf, fx_->vocab, fx_->data(), cfg), NumericError);
  EXPECT_TRUE(student.params().all_finite());
  EXPECT_TRUE(clf.params().all_finite());
}

TEST_F(TrainLoop, RejectsMismatchedClassifier) {
  Encoder student(tiny_student(8), fx_->vocab.size());
  AuxClassifier clf(4, 1);
  EXPECT_THROW(train(student, clf, fx_->vocab, fx_->data(), config()), ConfigError);
}
