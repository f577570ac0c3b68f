#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segres/datagen.hpp"
#include "segres/losses.hpp"
#include "segres/metrics.hpp"

namespace segres {

struct TrainingConfig {
  // Stage iteration counts of the three-stage schedule.
  std::int64_t n1 = 2000, n2 = 2000, n3 = 1000;
  int batch_size = 4;
  double lr = 2e-4;
  double beta1 = 0.5, beta2 = 0.999;
  LossWeights weights;
  std::uint64_t seed = 1;
  std::int64_t checkpoint_interval = 500;
  TvVariant tv_variant = TvVariant::Conventional;
  AdversarialForm adv_form = AdversarialForm::LeastSquares;
  int base_width = 16;
  bool d2_spectral_norm = false;
  std::uint64_t extractor_seed = 7;
  std::string extractor_weights;  // optional pyramid weights file
  std::filesystem::path out_dir = "runs/default";

  void validate() const;
};

TrainingConfig training_config_from_json_file(const std::filesystem::path& path);
TrainingConfig training_config_from_json_text(const std::string& text);
std::string training_config_to_json_text(const TrainingConfig& config);

// Which segmentation feeds the restoration network at evaluation time.
enum class SegSource { Refined, Degraded, GroundTruth };

// Instrumentation of the stage contracts: stage 2 must feed G2 ground-truth
// labels, stage 3 must feed it the soft refined map.
struct AuditCounters {
  std::int64_t stage2_gt_inputs = 0;
  std::int64_t stage2_other_inputs = 0;
  std::int64_t stage3_soft_refined_inputs = 0;
  std::int64_t stage3_other_inputs = 0;
};

// In-memory dataset: images as float tensors, labels as int tensors.
struct TrainDataset {
  struct Rec {
    Tensor<float> i_d, i_gt;      // (1,3,H,W)
    Tensor<int> s_d, s_gt;        // (1,1,H,W)
    std::string family;
    int severity = 0;
  };
  int num_classes = 0;
  int height = 0, width = 0;
  std::vector<Rec> train, val;

  static TrainDataset from_manifest(const DatasetManifest& manifest);
};

struct Batch {
  Tensor<float> i_d, i_gt;
  Tensor<float> s_d_onehot, s_gt_onehot;
  Tensor<int> s_gt;
};

struct TrainState {
  TrainingConfig config;
  int num_classes = 0;
  int stage = 1;                // 1, 2, 3; 4 = done
  std::int64_t iteration = 0;   // global, stage boundaries at n1 and n1+n2

  EncoderDecoder<float> g1, g2;
  PatchDiscriminator<float> d1, d2;
  FeatureExtractor<float> extractor;
  Adam<float> opt_g1, opt_g2, opt_d1, opt_d2;
  std::optional<Segmenter> segmenter;  // bundled for `restore --auto`
  AuditCounters audit;
};

TrainState init_train_state(const TrainingConfig& config, int num_classes);

// One iteration of the owning stage: one discriminator step, one generator
// step. Throws NumericError on non-finite losses.
LossReport step_stage1(TrainState& state, const Batch& batch);
LossReport step_stage2(TrainState& state, const Batch& batch);
LossReport step_stage3(TrainState& state, const Batch& batch);

// N iterations then stage advance; appends one LossReport per iteration and
// invokes the callback (checkpoint hook) after each one.
using IterationCallback = std::function<void(TrainState&, const LossReport&)>;
void train_stage1(TrainState& state, const TrainDataset& data, std::vector<LossReport>* log,
                  const IterationCallback& on_iteration = {});
void train_stage2(TrainState& state, const TrainDataset& data, std::vector<LossReport>* log,
                  const IterationCallback& on_iteration = {});
void train_stage3(TrainState& state, const TrainDataset& data, std::vector<LossReport>* log,
                  const IterationCallback& on_iteration = {});

// Deterministic batch composition: a pure function of (seed, iteration).
std::vector<int> batch_indices(std::uint64_t seed, std::int64_t iteration, int batch_size, int n);
Batch make_batch(const TrainDataset& data, const std::vector<int>& indices, int num_classes);

// L2 norm of d L_G2 / d theta_G1 on one stage-3 graph; the cooperative path
// is live iff this is nonzero.
double coop_gradient_norm(TrainState& state, const Batch& batch);

// Full checkpoint: config snapshot, stage, iteration, all network parameters,
// optimizer state, spectral-norm vectors, audit counters, bundled segmenter.
void save_checkpoint(const std::filesystem::path& path, TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log_csv;
  std::vector<LossReport> log;
};

// Executes stages 1 -> 2 -> 3 with checkpoints at the configured interval and
// at stage boundaries; writes the CSV loss log and a resolved-config echo.
RunResult run(const TrainingConfig& config, const DatasetManifest& manifest,
              const std::filesystem::path& resume_checkpoint = {});

void write_loss_log_csv(const std::filesystem::path& path, const std::vector<LossReport>& log,
                        const TrainingConfig& config);

struct EvalRow {
  std::string family;  // e.g. "gb" for degraded, "gb_re" for refined/restored
  int severity = 0;
  SegScores seg;
  double psnr = 0, ssim = 0;
  int count = 0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  // Whole-split aggregates.
  SegScores degraded_seg, refined_seg;
  double degraded_psnr = 0, restored_psnr = 0;
  double degraded_ssim = 0, restored_ssim = 0;
  int count = 0;
};

// Runs the full pipeline over one split: S_r = G1(S_d, I_d) decoded hard for
// scoring, I_r = G2(seg source, I_d). Rows are grouped per family/severity
// in Table-style degraded/refined pairs.
EvalResult evaluate(TrainState& state, const TrainDataset& data, const std::string& split,
                    SegSource source = SegSource::Refined);

void write_eval_csv(const std::filesystem::path& path, const EvalResult& result);
std::string format_eval_table(const EvalResult& result);

}  // namespace segres
