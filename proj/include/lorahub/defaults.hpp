// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace lorahub::defaults {

// Adaptation search.
inline constexpr int kShots = 5;            // few-shot examples |Q|
inline constexpr int kBudget = 40;          // max loss evaluations K
inline constexpr double kAlpha = 0.05;      // L1 coefficient
inline constexpr double kBound = 1.5;       // |w_i| box bound
inline constexpr int kCandidates = 20;      // prefiltered module pool size
inline constexpr double kInitialMean = 0.0; // search starts at zero weights
inline constexpr double kInitialSigma = 0.5;
inline constexpr int kRuns = 5;             // seeded runs per task

// Upstream adapter training. The reference values are the ones used at
// large-model scale; the desk-scale learning rate is re-tuned for the
// bundled MLP and both are reported side by side.
inline constexpr int kRank = 16;
inline constexpr int kTrainEpochs = 10;
inline constexpr int kTrainBatch = 64;
inline constexpr double kTrainLr = 0.3;
inline constexpr double kTrainLrReference = 1e-4;

// Base model pretraining (one-shot, before freezing).
inline constexpr double kPretrainLr = 0.05;
inline constexpr int kPretrainEpochs = 4;
inline constexpr int kPretrainBatch = 64;

// Task suite.
inline constexpr int kUpstreamTasks = 40;
inline constexpr int kUnseenTasks = 20;
inline constexpr int kTrainExamples = 512;
inline constexpr int kEvalExamples = 256;

inline constexpr const char* kToolVersion = "1.0.0";

/// One key=value line per default, as printed by --show-defaults.
std::string show_defaults_text();

}  // namespace lorahub::defaults
