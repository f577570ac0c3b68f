#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "segres/training.hpp"
#include "test_util.hpp"

using namespace segres;

namespace {

// Small in-memory dataset; S_d comes from random labels since the training
// mechanics do not care about its quality.
TrainDataset memory_dataset(int n_train = 8, int n_val = 4, int size = 32, int k = 4) {
  ToyDatasetConfig cfg;
  cfg.n_samples = n_train + n_val;
  cfg.image_size = size;
  cfg.num_classes = k;
  cfg.seed = 99;
  TrainDataset data;
  data.num_classes = k;
  data.height = size;
  data.width = size;
  const auto blur = make_spec(DegradationFamily::GaussianBlur, 1, 5);
  for (int i = 0; i < cfg.n_samples; ++i) {
    ToySample s = generate_toy_sample(cfg, i);
    TrainDataset::Rec rec;
    rec.i_gt = image_to_tensor(s.image);
    rec.i_d = image_to_tensor(apply(blur, s.image));
    rec.s_gt = Tensor<int>(1, 1, size, size);
    rec.s_d = Tensor<int>(1, 1, size, size);
    const LabelMap noisy = testutil::random_labels(size, size, k, 1000 + i);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        rec.s_gt.plane(0, 0)[y * size + x] = s.labels.data(y, x);
        rec.s_d.plane(0, 0)[y * size + x] = noisy.data(y, x);
      }
    rec.family = "gb";
    rec.severity = 1;
    (i < n_train ? data.train : data.val).push_back(std::move(rec));
  }
  return data;
}

TrainingConfig tiny_config(std::int64_t n1 = 3, std::int64_t n2 = 3, std::int64_t n3 = 2) {
  TrainingConfig cfg;
  cfg.n1 = n1;
  cfg.n2 = n2;
  cfg.n3 = n3;
  cfg.batch_size = 2;
  cfg.base_width = 8;
  cfg.seed = 11;
  cfg.checkpoint_interval = 1000;
  return cfg;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "segres_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config json round trip") {
  TrainingConfig cfg = tiny_config();
  cfg.weights.lambda_style = 123.0;
  cfg.tv_variant = TvVariant::Literal;
  cfg.adv_form = AdversarialForm::Logistic;
  cfg.d2_spectral_norm = true;
  const TrainingConfig back = training_config_from_json_text(training_config_to_json_text(cfg));
  CHECK(back.n1 == cfg.n1);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.weights.lambda_style == cfg.weights.lambda_style);
  CHECK(back.tv_variant == TvVariant::Literal);
  CHECK(back.adv_form == AdversarialForm::Logistic);
  CHECK(back.d2_spectral_norm);
  CHECK_THROWS_AS(training_config_from_json_text("{not json"), ConfigError);
  TrainingConfig bad = tiny_config();
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero-iteration stages only advance the stage index") {
  const TrainDataset data = memory_dataset();
  TrainState state = init_train_state(tiny_config(0, 0, 0), data.num_classes);
  std::vector<LossReport> log;
  train_stage1(state, data, &log);
  CHECK(state.stage == 2);
  CHECK(state.iteration == 0);
  train_stage2(state, data, &log);
  CHECK(state.stage == 3);
  train_stage3(state, data, &log);
  CHECK(state.stage == 4);
  CHECK(log.empty());
}

TEST_CASE("stage preconditions are enforced") {
  const TrainDataset data = memory_dataset();
  TrainState state = init_train_state(tiny_config(), data.num_classes);
  CHECK_THROWS_AS(train_stage2(state, data, nullptr), ConfigError);
  CHECK_THROWS_AS(train_stage3(state, data, nullptr), ConfigError);
}

TEST_CASE("fixed seed reproduces the loss sequence bit-for-bit") {
  const TrainDataset data = memory_dataset();
  auto run_once = [&]() {
    TrainState state = init_train_state(tiny_config(5, 0, 0), data.num_classes);
    std::vector<LossReport> log;
    train_stage1(state, data, &log);
    return log;
  };
  const auto a = run_once();
  const auto b = run_once();
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].d1 == b[i].d1);
    CHECK(a[i].g1_total == b[i].g1_total);
    CHECK(a[i].ref_ce == b[i].ref_ce);
  }
}

TEST_CASE("full run produces one log row per iteration with stage boundaries") {
  const TrainDataset data = memory_dataset();
  TrainState state = init_train_state(tiny_config(3, 4, 2), data.num_classes);
  std::vector<LossReport> log;
  train_stage1(state, data, &log);
  train_stage2(state, data, &log);
  train_stage3(state, data, &log);
  REQUIRE(std::int64_t(log.size()) == 3 + 4 + 2);
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].iteration == std::int64_t(i));
    const int want_stage = i < 3 ? 1 : (i < 7 ? 2 : 3);
    CHECK(log[i].stage == want_stage);
  }
  CHECK(state.stage == 4);
  CHECK(state.iteration == 9);
}

TEST_CASE("stage 2 consumes ground-truth labels and stage 3 soft refinements") {
  const TrainDataset data = memory_dataset();
  TrainState state = init_train_state(tiny_config(2, 3, 2), data.num_classes);
  std::vector<LossReport> log;
  train_stage1(state, data, &log);
  CHECK(state.audit.stage2_gt_inputs == 0);
  train_stage2(state, data, &log);
  CHECK(state.audit.stage2_gt_inputs == 3);
  CHECK(state.audit.stage2_other_inputs == 0);
  CHECK(state.audit.stage3_soft_refined_inputs == 0);
  train_stage3(state, data, &log);
  CHECK(state.audit.stage3_soft_refined_inputs == 2);
  CHECK(state.audit.stage3_other_inputs == 0);
}

TEST_CASE("restoration loss reaches G1 parameters in stage 3") {
  const TrainDataset data = memory_dataset();
  TrainState state = init_train_state(tiny_config(1, 1, 1), data.num_classes);
  std::vector<LossReport> log;
  train_stage1(state, data, &log);
  train_stage2(state, data, &log);
  const Batch batch =
      make_batch(data, batch_indices(state.config.seed, state.iteration, 2, int(data.train.size())),
                 data.num_classes);
  CHECK(coop_gradient_norm(state, batch) > 0.0);
}

TEST_CASE("losses decrease over a short stage-2 run") {
  const TrainDataset data = memory_dataset(8, 2);
  TrainingConfig cfg = tiny_config(0, 40, 0);
  TrainState state = init_train_state(cfg, data.num_classes);
  std::vector<LossReport> log;
  train_stage1(state, data, &log);
  train_stage2(state, data, &log);
  REQUIRE(log.size() == 40);
  // compare medians of the first and last 10 L1 values
  auto median_of = [&](int begin, int end) {
    std::vector<double> v;
    for (int i = begin; i < end; ++i) v.push_back(log[i].l1);
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  CHECK(median_of(30, 40) < median_of(0, 10));
}

TEST_CASE("checkpoint save/load/save is byte-identical") {
  const TrainDataset data = memory_dataset();
  TrainState state = init_train_state(tiny_config(2, 1, 1), data.num_classes);
  std::vector<LossReport> log;
  train_stage1(state, data, &log);

  const auto dir = temp_dir("ckpt_bytes");
  save_checkpoint(dir / "a.bin", state);
  TrainState loaded = load_checkpoint(dir / "a.bin");
  save_checkpoint(dir / "b.bin", loaded);

  auto read_all = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  };
  const std::string a = read_all(dir / "a.bin");
  const std::string b = read_all(dir / "b.bin");
  REQUIRE(!a.empty());
  CHECK(a == b);
}

TEST_CASE("resuming from a stage boundary reproduces the loss sequence") {
  const TrainDataset data = memory_dataset();
  const TrainingConfig cfg = tiny_config(4, 4, 3);

  // uninterrupted reference
  TrainState ref = init_train_state(cfg, data.num_classes);
  std::vector<LossReport> ref_log;
  train_stage1(ref, data, &ref_log);
  train_stage2(ref, data, &ref_log);
  train_stage3(ref, data, &ref_log);

  // interrupt after stage 1
  const auto dir = temp_dir("resume");
  TrainState first = init_train_state(cfg, data.num_classes);
  std::vector<LossReport> first_log;
  train_stage1(first, data, &first_log);
  save_checkpoint(dir / "stage1.bin", first);

  TrainState resumed = load_checkpoint(dir / "stage1.bin");
  std::vector<LossReport> resumed_log;
  train_stage2(resumed, data, &resumed_log);
  train_stage3(resumed, data, &resumed_log);

  REQUIRE(resumed_log.size() == 7);
  for (std::size_t i = 0; i < resumed_log.size(); ++i) {
    const LossReport& want = ref_log[4 + i];
    const LossReport& got = resumed_log[i];
    CHECK(got.iteration == want.iteration);
    CHECK(got.d1 == want.d1);
    CHECK(got.d2 == want.d2);
    CHECK(got.g1_total == want.g1_total);
    CHECK(got.g2_total == want.g2_total);
  }
}

TEST_CASE("resuming mid-stage reproduces the loss sequence") {
  const TrainDataset data = memory_dataset();
  const TrainingConfig cfg = tiny_config(6, 0, 0);

  TrainState ref = init_train_state(cfg, data.num_classes);
  std::vector<LossReport> ref_log;
  train_stage1(ref, data, &ref_log);

  const auto dir = temp_dir("resume_mid");
  TrainState part = init_train_state(cfg, data.num_classes);
  std::vector<LossReport> part_log;
  train_stage1(part, data, &part_log, [&](TrainState& st, const LossReport&) {
    if (st.iteration == 3) save_checkpoint(dir / "mid.bin", st);
  });

  TrainState resumed = load_checkpoint(dir / "mid.bin");
  CHECK(resumed.iteration == 3);
  CHECK(resumed.stage == 1);
  std::vector<LossReport> resumed_log;
  train_stage1(resumed, data, &resumed_log);
  REQUIRE(resumed_log.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(resumed_log[i].d1 == ref_log[3 + i].d1);
    CHECK(resumed_log[i].g1_total == ref_log[3 + i].g1_total);
  }
}

TEST_CASE("NaN input aborts with the iteration index in the message") {
  const TrainDataset data = memory_dataset();
  TrainState state = init_train_state(tiny_config(), data.num_classes);
  state.iteration = 17;
  Batch batch = make_batch(data, {0, 1}, data.num_classes);
  batch.i_d.data[5] = std::nanf("");
  CHECK_THROWS_WITH_AS(step_stage1(state, batch), doctest::Contains("17"), NumericError);
}

TEST_CASE("evaluate aggregates degraded and refined rows per family") {
  TrainDataset data = memory_dataset(4, 4);
  // make the degraded side perfect so its rows are exact upper bounds
  for (auto& rec : data.val) {
    rec.i_d = rec.i_gt;
    rec.s_d = rec.s_gt;
  }
  TrainState state = init_train_state(tiny_config(), data.num_classes);
  const EvalResult result = evaluate(state, data, "val");
  REQUIRE(result.rows.size() == 2);
  CHECK(result.rows[0].family == "gb");
  CHECK(result.rows[1].family == "gb_re");
  CHECK(result.rows[0].seg.pa == 1.0);
  CHECK(result.rows[0].seg.miou == 1.0);
  CHECK(std::isinf(result.rows[0].psnr));
  CHECK(result.rows[0].ssim == doctest::Approx(1.0).epsilon(1e-9));
  // the untrained refinement cannot beat the perfect degraded input
  CHECK(result.rows[1].seg.miou <= 1.0);
  CHECK(result.count == 4);

  // determinism of evaluation
  const EvalResult again = evaluate(state, data, "val");
  CHECK(again.rows[1].seg.miou == result.rows[1].seg.miou);
  CHECK(again.restored_psnr == result.restored_psnr);

  CHECK_THROWS_AS(evaluate(state, data, "test"), ConfigError);
}

TEST_CASE("eval csv schema is stable") {
  TrainDataset data = memory_dataset(2, 2);
  TrainState state = init_train_state(tiny_config(), data.num_classes);
  const EvalResult result = evaluate(state, data, "val");
  const auto dir = temp_dir("eval_csv");
  write_eval_csv(dir / "eval.csv", result);
  std::ifstream is(dir / "eval.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "family,severity,PA,mPA,mIoU,FWIoU,PSNR,SSIM");
  std::string row;
  int rows = 0;
  while (std::getline(is, row))
    if (!row.empty()) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("feature extractor and segmenter are untouched by training") {
  const TrainDataset data = memory_dataset();
  TrainState state = init_train_state(tiny_config(2, 2, 1), data.num_classes);
  // bundle a segmenter and checksum both frozen components
  ToyDatasetConfig toy;
  toy.n_samples = 4;
  toy.image_size = 32;
  toy.seed = 1;
  SegmenterTrainOptions opts;
  opts.base_width = 8;
  state.segmenter = train_clean_segmenter(generate_toy_dataset(toy), 1, 2, opts);
  const std::uint64_t extractor_sum = state.extractor.checksum();
  auto seg_bytes = [&] {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto* p : state.segmenter->net.params())
      for (std::int64_t i = 0; i < p->value.size(); ++i) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(&p->value.data[i]);
        for (std::size_t b = 0; b < sizeof(float); ++b) {
          h ^= bytes[b];
          h *= 1099511628211ULL;
        }
      }
    return h;
  };
  const std::uint64_t seg_sum = seg_bytes();

  std::vector<LossReport> log;
  train_stage1(state, data, &log);
  train_stage2(state, data, &log);
  train_stage3(state, data, &log);
  CHECK(state.extractor.checksum() == extractor_sum);
  CHECK(seg_bytes() == seg_sum);
}
