#pragma once

#include <string>
#include <vector>

#include "m4/adapter.hpp"
#include "m4/dataset.hpp"
#include "m4/model.hpp"

namespace m4 {

struct TrainConfig {
    std::size_t steps = 200;
    std::size_t batch = 8;
    double lr = 0.5;           // plain SGD, fixed rate
    std::string loss = "auto"; // "cross-entropy" | "InfoNCE" | "auto" (by path)
    double tau = 0.07;         // InfoNCE temperature
    std::uint64_t seed = 0;
};

struct TrainLogEntry {
    std::size_t step;
    double loss;
    double metric;  // batch accuracy (labels or next-token)
};

struct TrainResult {
    AdapterPack pack;
    std::vector<TrainLogEntry> log;
    // SHA-256 over every tensor the tunable mask freezes, before and after
    std::string frozen_hash_before;
    std::string frozen_hash_after;
};

// Fine-tunes a fresh adapter pack for the task on the dataset's train split.
// Only parameters allowed by tunable_mask(task.path) move; the frozen-tensor
// hashes in the result must match (also asserted internally).
TrainResult fine_tune(const FoundationModel& model, const TaskSpec& task, const SyntheticDataset& data,
                      const PeftConfig& peft, const TrainConfig& cfg);
TrainResult fine_tune_subset(const FoundationModel& model, const TaskSpec& task,
                             const SyntheticDataset& data, const PeftConfig& peft, const TrainConfig& cfg,
                             const std::vector<std::size_t>& train_indices);

// Scores the eval split under the task's registry metric (accuracy, F1,
// BLEU, WER, recall implemented; anything else is errc::unsupported).
double evaluate(const FoundationModel& model, const TaskSpec& task, const SyntheticDataset& data,
                const AdapterPack* pack);

// Mean loss over the eval split (InfoNCE for Path-3, cross-entropy otherwise).
double eval_loss(const FoundationModel& model, const TaskSpec& task, const SyntheticDataset& data,
                 const AdapterPack* pack, const TrainConfig& cfg);

// Per-fraction mean metric over `repeats` seeded runs. Subsets are nested
// per seed (each fraction's indices are a prefix of the next one's).
std::vector<double> few_shot_curve(const FoundationModel& model, const TaskSpec& task,
                                   const SyntheticDataset& data, const std::vector<double>& fractions,
                                   const PeftConfig& peft, const TrainConfig& cfg, std::size_t repeats = 5);

std::string training_log_csv(const std::vector<TrainLogEntry>& log);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t points = 0;
};

// Central finite differences against the tape gradients, probing projection
// and one LoRA pair at randomized parameter values.
GradCheckResult gradient_check(const FoundationModel& model, const TaskSpec& task,
                               const SyntheticDataset& data, const PeftConfig& peft,
                               const TrainConfig& cfg, std::size_t points, double eps);

// Default LoRA configuration for a task: backbone targets for paths 1-2,
// payload-encoder targets for path 3.
PeftConfig default_peft_for(const TaskSpec& task, std::size_t rank);

}  // namespace m4
