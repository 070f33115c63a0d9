// SPDX-License-Identifier: Apache-2.0
#include "lorahub/defaults.hpp"

#include <sstream>

namespace lorahub::defaults {

std::string show_defaults_text() {
  std::ostringstream out;
  out << "shots=" << kShots << "\n"
      << "budget=" << kBudget << "\n"
      << "alpha=" << kAlpha << "\n"
      << "bound=" << kBound << "\n"
      << "candidates=" << kCandidates << "\n"
      << "initial_mean=" << kInitialMean << "\n"
      << "initial_sigma=" << kInitialSigma << "\n"
      << "rank=" << kRank << "\n"
      << "runs=" << kRuns << "\n"
      << "train_epochs=" << kTrainEpochs << "\n"
      << "train_batch=" << kTrainBatch << "\n"
      << "train_lr=" << kTrainLr << "\n"
      << "train_lr_reference=" << kTrainLrReference << "\n"
      << "pretrain_lr=" << kPretrainLr << "\n"
      << "pretrain_epochs=" << kPretrainEpochs << "\n"
      << "pretrain_batch=" << kPretrainBatch << "\n"
      << "upstream=" << kUpstreamTasks << "\n"
      << "unseen=" << kUnseenTasks << "\n"
      << "n_train=" << kTrainExamples << "\n"
      << "n_eval=" << kEvalExamples << "\n";
  return out.str();
}

}  // namespace lorahub::defaults
