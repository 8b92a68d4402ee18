#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cpga/checkpoint.hpp"
#include "cpga/data.hpp"
#include "cpga/losses.hpp"
#include "cpga/model.hpp"

namespace cpga::train {

enum class Stage { SelfSup, Supervised, KdFinetune, DgfFinetune };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
    Stage stage = Stage::Supervised;
    int epochs = 50;
    float lr = 1e-4f;
    int batch = 8;
    loss::LossWeights weights;
    uint64_t seed = 1;
    std::string data_root;
    std::string eval_root;          // optional held-out set for best-checkpoint selection
    std::string checkpoint_in;      // init weights / student
    std::string teacher_checkpoint; // distillation stage only
    std::string checkpoint_out;
    model::CpgaConfig model;
    int crop = 256; // 0 trains on full images
    bool quiet = false;
};

// Stage presets: supervised 50 epochs @ 1e-4 batch 8, self-supervised 20
// epochs @ 1e-4, both fine-tuning stages 30 epochs @ 1e-5.
void apply_stage_defaults(TrainConfig& cfg);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double eval_psnr = 0.0; // NaN when no held-out set
    double eval_ssim = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint; // best by held-out PSNR when available, else final
    std::vector<EpochStats> history;
    bool aborted = false; // non-finite loss stopped the run early
};

// Identity pretraining: the inputs serve as their own targets.
TrainResult selfsup_pretrain(const TrainConfig& cfg);

// Enhancement training against ground truth.
TrainResult train_supervised(const TrainConfig& cfg, const Checkpoint* init);

// Component distillation from a frozen teacher; the student runs at full
// resolution. Warns (and proceeds) if the teacher is not wider than the
// student.
TrainResult kd_finetune(const TrainConfig& cfg, const Checkpoint& teacher,
                        const Checkpoint& student);

// End-to-end fine-tuning through the guided-filter path.
TrainResult dgf_finetune(const TrainConfig& cfg, const Checkpoint& init);

struct EvalRow {
    std::string id;
    double psnr = 0.0;
    double ssim = 0.0;
    double seconds = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_seconds = 0.0;
    long params = 0;
    long long flops_600x400 = 0;
    std::vector<std::string> failed; // ids that could not be evaluated

    nlohmann::json to_json() const;
    std::string to_text() const;
};

EvalReport evaluate(const Checkpoint& ckpt, const data::DatasetIndex& dataset);

} // namespace cpga::train
