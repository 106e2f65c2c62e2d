#pragma once

// Intermediate-layer distillation: selected student blocks learn to
// reproduce the hidden states of selected teacher blocks.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "commitlink/encoder.hpp"

namespace commitlink {

// (teacher layer, student layer) pairs, both 1-based block indices.
class ChannelMap {
 public:
  ChannelMap() = default;
  explicit ChannelMap(std::vector<std::pair<int, int>> pairs);

  static ChannelMap defaults() { return ChannelMap({{1, 1}, {5, 2}}); }
  // "t1:s1,t5:s2" or "1:1,5:2".
  static ChannelMap parse(const std::string& text);
  std::string to_string() const;

  // Throws ConfigError unless every layer exists and student layers are
  // unique.
  void validate(int teacher_layers, int student_layers) const;

  const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }
  std::vector<int> teacher_layers() const;

 private:
  std::vector<std::pair<int, int>> pairs_;
};

// Per-sequence loss: sum over channels, active positions and dimensions of
// squared differences.
ag::Var distill_loss(const HiddenStates& teacher, const HiddenStates& student,
                     const ChannelMap& channels, std::span<const unsigned char> mask);

struct DistillSchedule {
  int epochs = 3;
  int batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  // Per-epoch checkpoints and the loss curve go here when set.
  std::optional<std::string> out_dir;
};

struct DistillResult {
  double initial_loss = 0.0;          // mean per-sequence loss before training
  std::vector<double> epoch_loss;     // mean per-sequence loss during each epoch
};

// Sequences are truncated to their active prefix; empty ones are dropped.
// `teacher` must be frozen and share hidden_dim with `student`.
DistillResult run_distillation(const Encoder& teacher, Encoder& student,
                               const std::vector<TokenizedSequence>& sequences,
                               const ChannelMap& channels, const DistillSchedule& schedule);

// Mean per-sequence loss without updating anything.
double mean_distill_loss(const Encoder& teacher, const Encoder& student,
                         const std::vector<TokenizedSequence>& sequences,
                         const ChannelMap& channels);

void write_loss_curve(const std::string& path, const DistillResult& result);

}  // namespace commitlink
