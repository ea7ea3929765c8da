#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rpt/model.hpp"
#include "rpt/optim.hpp"

namespace rpt {

struct TrainConfig {
    double lr = 0.3;
    std::size_t batch = 8;
    std::size_t epochs = 15;
    std::uint64_t seed = 1;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_opt = 1e-8;
    bool bias_correction = true;
    double grad_clip = 0.0;  // off unless explicitly enabled
    std::map<std::string, double> group_lr_scale;
    bool keep_epoch_checkpoints = true;
    // Metrics are byte-reproducible by default, so recorded wall time is 0;
    // enabling this writes real timings and knowingly gives up rerun
    // byte-identity. Real timings always go to run.log either way.
    bool record_wall_time = false;
    std::string config_hash;

    OptimConfig optim() const;
    void validate() const;
};

struct MetricsRecord {
    std::size_t epoch = 0;
    std::string split;
    std::string task;
    std::string metric;
    double value = 0.0;
    std::int64_t wall_ms = 0;
    std::string config_hash;

    std::string to_json_line() const;
    bool operator==(const MetricsRecord&) const = default;
};

void write_metrics_jsonl(const std::filesystem::path& path,
                         const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path);

struct TrainResult {
    std::vector<MetricsRecord> records;
    std::size_t best_epoch = 0;  // 1-based; ties resolve to the earliest epoch
    double best_value = 0.0;
    std::map<std::string, Tensor> best_state;  // trainable tensors at the best epoch
};

// Seeded-shuffle epoch loop over the task's train split: optimizes the
// trainable parameters with AdamW on the mean batch loss, evaluates the
// validation split each epoch, checkpoints each epoch (when a run directory
// is given) and tracks the best validation accuracy. Writes best.ckpt and,
// for prompt methods, baked.prompt with the best-epoch state restored.
TrainResult train_loop(TuningModel& model, const TaskSpec& task, const TrainConfig& cfg,
                       const std::filesystem::path& run_dir = {});

// Deterministic split evaluation: accuracy of argmax classification or of
// greedy decoding matched against the verbalizer.
MetricsRecord evaluate(const TuningModel& model, const Tensor& prompt_rows,
                       const TaskSpec& task, const std::string& split,
                       std::size_t epoch = 0, const std::string& config_hash = "");

// Stratified k examples per class, fixed under (task name, k, seed) so every
// method variant trains on the identical subset. subset_ids index the parent
// train split.
TaskSpec few_shot_subset(const TaskSpec& task, std::size_t k, std::uint64_t seed);

// Full-parameter baseline on an unfrozen backbone copy.
TrainResult fine_tune_mode(TuningModel& model, const TaskSpec& task, const TrainConfig& cfg,
                           const std::filesystem::path& run_dir = {});

// Snapshot/restore for best-epoch bookkeeping and change-tracking tests.
std::map<std::string, Tensor> snapshot_tensors(const std::vector<Parameter*>& params);
void restore_tensors(const std::map<std::string, Tensor>& snapshot,
                     std::vector<Parameter*> params);

}  // namespace rpt
