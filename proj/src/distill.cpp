#include "commitlink/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>
#include <set>

#include "commitlink/optim.hpp"

namespace commitlink {

ChannelMap::ChannelMap(std::vector<std::pair<int, int>> pairs) : pairs_(std::move(pairs)) {}

ChannelMap ChannelMap::parse(const std::string& text) {
  static const std::regex item(R"(\s*t?(\d+)\s*:\s*s?(\d+)\s*)");
  std::vector<std::pair<int, int>> pairs;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string part = text.substr(start, comma - start);
    std::smatch m;
    if (!std::regex_match(part, m, item)) {
      throw ConfigError("bad channel entry '" + part + "' (expected t<layer>:s<layer>)");
    }
    pairs.emplace_back(std::stoi(m[1]), std::stoi(m[2]));
    start = comma + 1;
  }
  return ChannelMap(std::move(pairs));
}

std::string ChannelMap::to_string() const {
  std::string out;
  for (const auto& [t, s] : pairs_) {
    if (!out.empty()) out += ',';
    out += 't' + std::to_string(t) + ":s" + std::to_string(s);
  }
  return out;
}

void ChannelMap::validate(int teacher_layers, int student_layers) const {
  if (pairs_.empty()) throw ConfigError("channel map is empty");
  std::set<int> seen;
  for (const auto& [t, s] : pairs_) {
    if (t < 1 || t > teacher_layers) {
      throw ConfigError("channel teacher layer " + std::to_string(t) + " outside [1, " +
                        std::to_string(teacher_layers) + "]");
    }
    if (s < 1 || s > student_layers) {
      throw ConfigError("channel student layer " + std::to_string(s) + " outside [1, " +
                        std::to_string(student_layers) + "]");
    }
    if (!seen.insert(s).second) {
      throw ConfigError("student layer " + std::to_string(s) + " appears twice");
    }
  }
}

std::vector<int> ChannelMap::teacher_layers() const {
  std::vector<int> out;
  for (const auto& p : pairs_) out.push_back(p.first);
  return out;
}

ag::Var distill_loss(const HiddenStates& teacher, const HiddenStates& student,
                     const ChannelMap& channels, std::span<const unsigned char> mask) {
  channels.validate(teacher.n_layers(), student.n_layers());
  std::vector<ag::Var> terms;
  for (const auto& [t, s] : channels.pairs()) {
    terms.push_back(ag::masked_squared_distance(teacher.layer(t), student.layer(s), mask));
  }
  return ag::sum(terms);
}

namespace {

struct Prepared {
  std::vector<int> ids;
  std::vector<unsigned char> mask;
  HiddenStates teacher;  // constant values only
};

std::vector<Prepared> prepare(const Encoder& teacher, const Encoder& student,
                              const std::vector<TokenizedSequence>& sequences,
                              const ChannelMap& channels) {
  if (teacher.config().hidden_dim != student.config().hidden_dim) {
    throw ConfigError("teacher and student hidden_dim differ");
  }
  if (teacher.vocab_size() != student.vocab_size()) {
    throw ConfigError("teacher and student vocabularies differ");
  }
  channels.validate(teacher.config().n_layers, student.config().n_layers);
  std::vector<Prepared> out;
  for (const auto& seq : sequences) {
    const std::size_t n = seq.active();
    if (n == 0) continue;
    Prepared p;
    p.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(n));
    p.mask.assign(n, 1);
    const HiddenStates h = teacher.encode(p.ids, p.mask);
    // Detach: keep only values so the teacher never joins a graph.
    for (const auto& layer : h.layers) p.teacher.layers.push_back(ag::constant(layer->value));
    out.push_back(std::move(p));
  }
  if (out.empty()) throw DataError("no non-empty sequences to distil on");
  return out;
}

double mean_loss(const Encoder& student, const std::vector<Prepared>& data,
                 const ChannelMap& channels) {
  double total = 0.0;
  for (const auto& p : data) {
    total += distill_loss(p.teacher, student.encode(p.ids, p.mask), channels, p.mask)->scalar();
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

double mean_distill_loss(const Encoder& teacher, const Encoder& student,
                         const std::vector<TokenizedSequence>& sequences,
                         const ChannelMap& channels) {
  return mean_loss(student, prepare(teacher, student, sequences, channels), channels);
}

DistillResult run_distillation(const Encoder& teacher, Encoder& student,
                               const std::vector<TokenizedSequence>& sequences,
                               const ChannelMap& channels, const DistillSchedule& schedule) {
  if (!teacher.frozen()) throw ConfigError("teacher must be frozen before distillation");
  if (student.frozen()) throw ConfigError("student is frozen");
  if (schedule.epochs < 0 || schedule.batch_size < 1) throw ConfigError("bad distillation schedule");
  const auto data = prepare(teacher, student, sequences, channels);

  DistillResult result;
  result.initial_loss = mean_loss(student, data, channels);
  if (!std::isfinite(result.initial_loss)) throw NumericError("initial distillation loss is not finite");

  if (schedule.out_dir) std::filesystem::create_directories(*schedule.out_dir);
  Adam opt(student.params().vars(), {.lr = schedule.lr});
  std::mt19937_64 rng(schedule.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(schedule.batch_size);

  for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<ag::Var> terms;
      for (std::size_t k = start; k < end; ++k) {
        const auto& p = data[order[k]];
        terms.push_back(distill_loss(p.teacher, student.encode(p.ids, p.mask), channels, p.mask));
      }
      const ag::Var loss = ag::scale(ag::sum(terms), 1.0 / static_cast<double>(end - start));
      if (!std::isfinite(loss->scalar())) {
        throw NumericError("distillation diverged in epoch " + std::to_string(epoch));
      }
      epoch_total += loss->scalar() * static_cast<double>(end - start);
      opt.zero_grad();
      ag::backward(loss);
      opt.step();
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(data.size()));
    if (schedule.out_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "student_epoch%03d.ckpt", epoch);
      student.save((std::filesystem::path(*schedule.out_dir) / name).string());
      write_loss_curve((std::filesystem::path(*schedule.out_dir) / "distill_loss.csv").string(),
                       result);
    }
  }
  return result;
}

void write_loss_curve(const std::string& path, const DistillResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  char line[64];
  out << "epoch,mean_loss\n";
  std::snprintf(line, sizeof line, "0,%.10g\n", result.initial_loss);
  out << line;
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    std::snprintf(line, sizeof line, "%zu,%.10g\n", e + 1, result.epoch_loss[e]);
    out << line;
  }
}

}  // namespace commitlink
