#include "segres/training.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "segres/checkpoint.hpp"

namespace segres {

using nlohmann::json;

void TrainingConfig::validate() const {
  if (n1 < 0 || n2 < 0 || n3 < 0) throw ConfigError("iteration counts must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (lr <= 0) throw ConfigError("learning rate must be positive");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint interval must be >= 1");
  if (base_width < 1) throw ConfigError("base width must be >= 1");
  weights.validate();
}

// ---- config JSON ------------------------------------------------------------

static TvVariant tv_variant_from_string(const std::string& s) {
  if (s == "conventional") return TvVariant::Conventional;
  if (s == "literal") return TvVariant::Literal;
  throw ConfigError("unknown tv variant '" + s + "' (conventional|literal)");
}

static std::string tv_variant_to_string(TvVariant v) {
  return v == TvVariant::Conventional ? "conventional" : "literal";
}

static AdversarialForm adv_form_from_string(const std::string& s) {
  if (s == "least_squares") return AdversarialForm::LeastSquares;
  if (s == "logistic") return AdversarialForm::Logistic;
  throw ConfigError("unknown adversarial form '" + s + "' (least_squares|logistic)");
}

static std::string adv_form_to_string(AdversarialForm f) {
  return f == AdversarialForm::LeastSquares ? "least_squares" : "logistic";
}

TrainingConfig training_config_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  TrainingConfig c;
  if (j.contains("train")) {
    const json& t = j["train"];
    c.n1 = t.value("n1", c.n1);
    c.n2 = t.value("n2", c.n2);
    c.n3 = t.value("n3", c.n3);
    c.batch_size = t.value("batch", c.batch_size);
    c.lr = t.value("lr", c.lr);
    c.beta1 = t.value("beta1", c.beta1);
    c.beta2 = t.value("beta2", c.beta2);
    c.seed = t.value("seed", c.seed);
    c.checkpoint_interval = t.value("checkpoint_interval", c.checkpoint_interval);
    c.out_dir = t.value("out_dir", c.out_dir.string());
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    c.base_width = m.value("base_width", c.base_width);
    c.d2_spectral_norm = m.value("d2_spectral_norm", c.d2_spectral_norm);
    c.extractor_seed = m.value("extractor_seed", c.extractor_seed);
    c.extractor_weights = m.value("extractor_weights", c.extractor_weights);
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    c.weights.lambda_ref = l.value("lambda_ref", c.weights.lambda_ref);
    c.weights.lambda_l1 = l.value("lambda_l1", c.weights.lambda_l1);
    c.weights.lambda_adv = l.value("lambda_adv", c.weights.lambda_adv);
    c.weights.lambda_perc = l.value("lambda_perc", c.weights.lambda_perc);
    c.weights.lambda_style = l.value("lambda_style", c.weights.lambda_style);
    c.weights.tv_weight = l.value("tv_weight", c.weights.tv_weight);
    c.tv_variant = tv_variant_from_string(l.value("tv_variant", tv_variant_to_string(c.tv_variant)));
    c.adv_form = adv_form_from_string(l.value("adversarial", adv_form_to_string(c.adv_form)));
  }
  c.validate();
  return c;
}

TrainingConfig training_config_from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return training_config_from_json_text(ss.str());
}

std::string training_config_to_json_text(const TrainingConfig& c) {
  json j;
  j["train"] = {{"n1", c.n1},
                {"n2", c.n2},
                {"n3", c.n3},
                {"batch", c.batch_size},
                {"lr", c.lr},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"seed", c.seed},
                {"checkpoint_interval", c.checkpoint_interval},
                {"out_dir", c.out_dir.string()}};
  j["model"] = {{"base_width", c.base_width},
                {"d2_spectral_norm", c.d2_spectral_norm},
                {"extractor_seed", c.extractor_seed},
                {"extractor_weights", c.extractor_weights}};
  j["loss"] = {{"lambda_ref", c.weights.lambda_ref},
               {"lambda_l1", c.weights.lambda_l1},
               {"lambda_adv", c.weights.lambda_adv},
               {"lambda_perc", c.weights.lambda_perc},
               {"lambda_style", c.weights.lambda_style},
               {"tv_weight", c.weights.tv_weight},
               {"tv_variant", tv_variant_to_string(c.tv_variant)},
               {"adversarial", adv_form_to_string(c.adv_form)}};
  return j.dump(2);
}

// ---- dataset ----------------------------------------------------------------

static Tensor<int> labels_to_tensor(const LabelMap& labels) {
  Tensor<int> t(1, 1, labels.height(), labels.width());
  for (int i = 0; i < t.h; ++i)
    for (int j = 0; j < t.w; ++j) t.plane(0, 0)[i * t.w + j] = labels.data(i, j);
  return t;
}

TrainDataset TrainDataset::from_manifest(const DatasetManifest& manifest) {
  TrainDataset data;
  data.num_classes = manifest.num_classes;
  for (const auto& rec : manifest.records) {
    QuadrupleSample s = load_record(manifest, rec);
    Rec r;
    r.i_d = image_to_tensor(s.degraded);
    r.i_gt = image_to_tensor(s.gt_image);
    r.s_d = labels_to_tensor(s.degraded_seg);
    r.s_gt = labels_to_tensor(s.gt_seg);
    r.family = family_name(rec.degradation.family);
    r.severity = rec.degradation.severity_index;
    if (data.height == 0) {
      data.height = r.i_d.h;
      data.width = r.i_d.w;
    } else if (r.i_d.h != data.height || r.i_d.w != data.width) {
      throw ShapeError("training dataset requires uniform image sizes");
    }
    (rec.split == "val" ? data.val : data.train).push_back(std::move(r));
  }
  return data;
}

std::vector<int> batch_indices(std::uint64_t seed, std::int64_t iteration, int batch_size, int n) {
  if (n < 1) throw ConfigError("batch_indices: empty dataset");
  std::mt19937_64 rng(mix_seed(seed, 0xBA7C4ULL + std::uint64_t(iteration)));
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<int> out(batch_size);
  for (auto& v : out) v = pick(rng);
  return out;
}

static Tensor<float> onehot_from_labels(const Tensor<int>& labels, int num_classes) {
  Tensor<float> out(labels.n, num_classes, labels.h, labels.w);
  const std::int64_t plane = labels.plane_size();
  for (int in = 0; in < labels.n; ++in) {
    const int* lab = labels.plane(in, 0);
    for (std::int64_t p = 0; p < plane; ++p) out.plane(in, lab[p])[p] = 1.0f;
  }
  return out;
}

template <typename S>
static Tensor<S> gather_batch(const std::vector<TrainDataset::Rec>& recs,
                              const std::vector<int>& indices, Tensor<S> TrainDataset::Rec::*field) {
  const Tensor<S>& first = recs[indices[0]].*field;
  Tensor<S> out(int(indices.size()), first.c, first.h, first.w);
  const std::int64_t per = first.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor<S>& src = recs[indices[i]].*field;
    std::copy(src.data.data(), src.data.data() + per, out.data.data() + per * std::int64_t(i));
  }
  return out;
}

Batch make_batch(const TrainDataset& data, const std::vector<int>& indices, int num_classes) {
  Batch b;
  b.i_d = gather_batch(data.train, indices, &TrainDataset::Rec::i_d);
  b.i_gt = gather_batch(data.train, indices, &TrainDataset::Rec::i_gt);
  Tensor<int> s_d = gather_batch(data.train, indices, &TrainDataset::Rec::s_d);
  b.s_gt = gather_batch(data.train, indices, &TrainDataset::Rec::s_gt);
  b.s_d_onehot = onehot_from_labels(s_d, num_classes);
  b.s_gt_onehot = onehot_from_labels(b.s_gt, num_classes);
  return b;
}

// ---- state ------------------------------------------------------------------

TrainState init_train_state(const TrainingConfig& config, int num_classes) {
  config.validate();
  if (num_classes < 2) throw ConfigError("init_train_state: need at least 2 classes");
  TrainState st;
  st.config = config;
  st.num_classes = num_classes;

  EncoderDecoderConfig g1c;
  g1c.in_channels = 3 + num_classes;
  g1c.out_channels = num_classes;
  g1c.base_width = config.base_width;
  g1c.levels = 4;
  g1c.head = HeadKind::Softmax;
  g1c.seed = mix_seed(config.seed, 0x61);
  st.g1 = EncoderDecoder<float>(g1c);

  EncoderDecoderConfig g2c = g1c;
  g2c.out_channels = 3;
  g2c.head = HeadKind::Sigmoid;
  g2c.seed = mix_seed(config.seed, 0x62);
  st.g2 = EncoderDecoder<float>(g2c);

  DiscriminatorConfig d1c;
  d1c.in_channels = num_classes + 3;
  d1c.base_width = config.base_width;
  d1c.spectral_norm = true;
  d1c.seed = mix_seed(config.seed, 0xD1);
  st.d1 = PatchDiscriminator<float>(d1c);

  DiscriminatorConfig d2c;
  d2c.in_channels = 3;
  d2c.base_width = config.base_width;
  d2c.spectral_norm = config.d2_spectral_norm;
  d2c.seed = mix_seed(config.seed, 0xD2);
  st.d2 = PatchDiscriminator<float>(d2c);

  FeatureExtractorConfig fc;
  fc.seed = config.extractor_seed;
  st.extractor = FeatureExtractor<float>(fc);
  if (!config.extractor_weights.empty()) {
    std::ifstream is(config.extractor_weights, std::ios::binary);
    if (!is) throw ConfigError("cannot open extractor weights: " + config.extractor_weights);
    bin::read_params(is, st.extractor.params());
    for (auto* p : st.extractor.params()) p->trainable = false;
  }

  st.opt_g1 = Adam<float>(st.g1.params(), config.lr, config.beta1, config.beta2);
  st.opt_g2 = Adam<float>(st.g2.params(), config.lr, config.beta1, config.beta2);
  st.opt_d1 = Adam<float>(st.d1.params(), config.lr, config.beta1, config.beta2);
  st.opt_d2 = Adam<float>(st.d2.params(), config.lr, config.beta1, config.beta2);
  return st;
}

namespace {

// Temporarily freezes parameters so generator-step backward passes skip the
// discriminator weight gradients.
class TrainableGuard {
 public:
  explicit TrainableGuard(std::vector<Param<float>*> params) : params_(std::move(params)) {
    saved_.reserve(params_.size());
    for (auto* p : params_) {
      saved_.push_back(p->trainable);
      p->trainable = false;
    }
  }
  ~TrainableGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->trainable = saved_[i];
  }

 private:
  std::vector<Param<float>*> params_;
  std::vector<bool> saved_;
};

// Non-finite values anywhere in a step surface as a NumericError carrying the
// iteration index.
template <typename Fn>
LossReport guarded_step(TrainState& state, Fn body) {
  try {
    return body();
  } catch (const NumericError& e) {
    throw NumericError("NaN abort at iteration " + std::to_string(state.iteration) + " (stage " +
                       std::to_string(state.stage) + "): " + e.what());
  }
}

void abort_on_nan(const TrainState& state, const LossReport& report) {
  if (report.all_finite()) return;
  std::ostringstream os;
  os << "NaN loss at iteration " << state.iteration << " (stage " << state.stage << "):"
     << " d1=" << report.d1 << " g1_adv=" << report.g1_adv << " ref_ce=" << report.ref_ce
     << " d2=" << report.d2 << " g2_adv=" << report.g2_adv << " l1=" << report.l1
     << " perc=" << report.perceptual << " style=" << report.style << " tv=" << report.tv;
  throw NumericError(os.str());
}

}  // namespace

static LossReport step_stage1_impl(TrainState& state, const Batch& batch) {
  const TrainingConfig& cfg = state.config;
  LossReport report;
  report.iteration = state.iteration;
  report.stage = 1;

  Graph<float> g;
  const int i_d = g.leaf(batch.i_d);
  const int s_d = g.leaf(batch.s_d_onehot);
  const int s_r = state.g1.forward(g, concat_channels(g, s_d, i_d));

  // D1 step on the detached refinement.
  {
    Graph<float> gd;
    const int i_d_d = gd.leaf(batch.i_d);
    const int real_in = concat_channels(gd, gd.leaf(batch.s_gt_onehot), i_d_d);
    const int fake_in = concat_channels(gd, gd.leaf(g.value(s_r)), i_d_d);
    const int real_scores = state.d1.forward(gd, real_in, /*update_sn=*/true);
    const int fake_scores = state.d1.forward(gd, fake_in, /*update_sn=*/true);
    const int d_loss = discriminator_loss(gd, real_scores, fake_scores, cfg.adv_form);
    report.d1 = double(gd.value(d_loss).item());
    abort_on_nan(state, report);
    state.opt_d1.zero_grad(state.d1.params());
    gd.backward(d_loss);
    state.opt_d1.step(state.d1.params());
  }

  // G1 step against the updated discriminator.
  {
    TrainableGuard freeze(state.d1.params());
    const int fake_scores = state.d1.forward(g, concat_channels(g, s_r, i_d));
    const int g_adv = generator_adversarial_loss(g, fake_scores, cfg.adv_form);
    const int ce = cross_entropy_mean(g, s_r, batch.s_gt);
    const int total = total_g1_loss(g, cfg.weights, g_adv, ce);
    report.g1_adv = double(g.value(g_adv).item());
    report.ref_ce = double(g.value(ce).item());
    report.g1_total = double(g.value(total).item());
    abort_on_nan(state, report);
    state.opt_g1.zero_grad(state.g1.params());
    g.backward(total);
    state.opt_g1.step(state.g1.params());
  }
  return report;
}

static LossReport step_stage2_impl(TrainState& state, const Batch& batch) {
  const TrainingConfig& cfg = state.config;
  LossReport report;
  report.iteration = state.iteration;
  report.stage = 2;

  Graph<float> g;
  const int i_d = g.leaf(batch.i_d);
  const int s_gt = g.leaf(batch.s_gt_onehot);
  ++state.audit.stage2_gt_inputs;  // G2 sees ground-truth labels in stage 2
  const int i_r = state.g2.forward(g, concat_channels(g, s_gt, i_d));

  {
    Graph<float> gd;
    const int real_scores = state.d2.forward(gd, gd.leaf(batch.i_gt), /*update_sn=*/true);
    const int fake_scores = state.d2.forward(gd, gd.leaf(g.value(i_r)), /*update_sn=*/true);
    const int d_loss = discriminator_loss(gd, real_scores, fake_scores, cfg.adv_form);
    report.d2 = double(gd.value(d_loss).item());
    abort_on_nan(state, report);
    state.opt_d2.zero_grad(state.d2.params());
    gd.backward(d_loss);
    state.opt_d2.step(state.d2.params());
  }

  {
    TrainableGuard freeze(state.d2.params());
    const int i_gt = g.leaf(batch.i_gt);
    const int fake_scores = state.d2.forward(g, i_r);
    const int g_adv = generator_adversarial_loss(g, fake_scores, cfg.adv_form);
    const int l1 = l1_loss(g, i_r, i_gt);
    const int perc = perceptual_loss(g, state.extractor, i_r, i_gt);
    const int style = style_loss(g, state.extractor, i_r, i_gt);
    const int tv = tv_loss(g, i_r, cfg.tv_variant);
    const int total = total_g2_loss(g, cfg.weights, l1, g_adv, perc, style, tv);
    report.g2_adv = double(g.value(g_adv).item());
    report.l1 = double(g.value(l1).item());
    report.perceptual = double(g.value(perc).item());
    report.style = double(g.value(style).item());
    report.tv = double(g.value(tv).item());
    report.g2_total = double(g.value(total).item());
    abort_on_nan(state, report);
    state.opt_g2.zero_grad(state.g2.params());
    g.backward(total);
    state.opt_g2.step(state.g2.params());
  }
  return report;
}

static LossReport step_stage3_impl(TrainState& state, const Batch& batch) {
  const TrainingConfig& cfg = state.config;
  LossReport report;
  report.iteration = state.iteration;
  report.stage = 3;

  Graph<float> g;
  const int i_d = g.leaf(batch.i_d);
  const int s_d = g.leaf(batch.s_d_onehot);
  const int s_r = state.g1.forward(g, concat_channels(g, s_d, i_d));  // soft
  ++state.audit.stage3_soft_refined_inputs;  // G2 consumes the soft S_r
  const int i_r = state.g2.forward(g, concat_channels(g, s_r, i_d));

  {
    Graph<float> gd;
    const int i_d_d = gd.leaf(batch.i_d);
    const int real_in = concat_channels(gd, gd.leaf(batch.s_gt_onehot), i_d_d);
    const int fake_in = concat_channels(gd, gd.leaf(g.value(s_r)), i_d_d);
    const int real_scores = state.d1.forward(gd, real_in, /*update_sn=*/true);
    const int fake_scores = state.d1.forward(gd, fake_in, /*update_sn=*/true);
    const int d_loss = discriminator_loss(gd, real_scores, fake_scores, cfg.adv_form);
    report.d1 = double(gd.value(d_loss).item());
    abort_on_nan(state, report);
    state.opt_d1.zero_grad(state.d1.params());
    gd.backward(d_loss);
    state.opt_d1.step(state.d1.params());
  }
  {
    Graph<float> gd;
    const int real_scores = state.d2.forward(gd, gd.leaf(batch.i_gt), /*update_sn=*/true);
    const int fake_scores = state.d2.forward(gd, gd.leaf(g.value(i_r)), /*update_sn=*/true);
    const int d_loss = discriminator_loss(gd, real_scores, fake_scores, cfg.adv_form);
    report.d2 = double(gd.value(d_loss).item());
    abort_on_nan(state, report);
    state.opt_d2.zero_grad(state.d2.params());
    gd.backward(d_loss);
    state.opt_d2.step(state.d2.params());
  }

  // Joint generator step: L_G1 + L_G2 on one tape, so restoration error
  // reaches G1 through the soft S_r.
  {
    TrainableGuard freeze_d1(state.d1.params());
    TrainableGuard freeze_d2(state.d2.params());
    const int i_gt = g.leaf(batch.i_gt);
    const int d1_scores = state.d1.forward(g, concat_channels(g, s_r, i_d));
    const int g1_adv = generator_adversarial_loss(g, d1_scores, cfg.adv_form);
    const int ce = cross_entropy_mean(g, s_r, batch.s_gt);
    const int g1_total = total_g1_loss(g, cfg.weights, g1_adv, ce);

    const int d2_scores = state.d2.forward(g, i_r);
    const int g2_adv = generator_adversarial_loss(g, d2_scores, cfg.adv_form);
    const int l1 = l1_loss(g, i_r, i_gt);
    const int perc = perceptual_loss(g, state.extractor, i_r, i_gt);
    const int style = style_loss(g, state.extractor, i_r, i_gt);
    const int tv = tv_loss(g, i_r, cfg.tv_variant);
    const int g2_total = total_g2_loss(g, cfg.weights, l1, g2_adv, perc, style, tv);

    const int joint = add_scalars(g, {g1_total, g2_total}, {1.0, 1.0});
    report.g1_adv = double(g.value(g1_adv).item());
    report.ref_ce = double(g.value(ce).item());
    report.g1_total = double(g.value(g1_total).item());
    report.g2_adv = double(g.value(g2_adv).item());
    report.l1 = double(g.value(l1).item());
    report.perceptual = double(g.value(perc).item());
    report.style = double(g.value(style).item());
    report.tv = double(g.value(tv).item());
    report.g2_total = double(g.value(g2_total).item());
    abort_on_nan(state, report);
    state.opt_g1.zero_grad(state.g1.params());
    state.opt_g2.zero_grad(state.g2.params());
    g.backward(joint);
    state.opt_g1.step(state.g1.params());
    state.opt_g2.step(state.g2.params());
  }
  return report;
}

LossReport step_stage1(TrainState& state, const Batch& batch) {
  return guarded_step(state, [&] { return step_stage1_impl(state, batch); });
}

LossReport step_stage2(TrainState& state, const Batch& batch) {
  return guarded_step(state, [&] { return step_stage2_impl(state, batch); });
}

LossReport step_stage3(TrainState& state, const Batch& batch) {
  return guarded_step(state, [&] { return step_stage3_impl(state, batch); });
}

namespace {

template <typename StepFn>
void run_stage(TrainState& state, const TrainDataset& data, int stage_index,
               std::int64_t stage_end, std::vector<LossReport>* log,
               const IterationCallback& on_iteration, StepFn step) {
  if (state.stage != stage_index)
    throw ConfigError("train_stage" + std::to_string(stage_index) + ": state is in stage " +
                      std::to_string(state.stage));
  if (!data.train.empty()) {
    while (state.iteration < stage_end) {
      const auto indices = batch_indices(state.config.seed, state.iteration,
                                         state.config.batch_size, int(data.train.size()));
      const Batch batch = make_batch(data, indices, state.num_classes);
      LossReport report = step(state, batch);
      ++state.iteration;
      if (log) log->push_back(report);
      if (on_iteration) on_iteration(state, report);
    }
  } else if (state.iteration < stage_end) {
    throw ConfigError("training requires a nonempty train split");
  }
  state.stage = stage_index + 1;
}

}  // namespace

void train_stage1(TrainState& state, const TrainDataset& data, std::vector<LossReport>* log,
                  const IterationCallback& on_iteration) {
  run_stage(state, data, 1, state.config.n1, log, on_iteration, step_stage1);
}

void train_stage2(TrainState& state, const TrainDataset& data, std::vector<LossReport>* log,
                  const IterationCallback& on_iteration) {
  run_stage(state, data, 2, state.config.n1 + state.config.n2, log, on_iteration, step_stage2);
}

void train_stage3(TrainState& state, const TrainDataset& data, std::vector<LossReport>* log,
                  const IterationCallback& on_iteration) {
  run_stage(state, data, 3, state.config.n1 + state.config.n2 + state.config.n3, log, on_iteration,
            step_stage3);
}

double coop_gradient_norm(TrainState& state, const Batch& batch) {
  const TrainingConfig& cfg = state.config;
  TrainableGuard freeze_d1(state.d1.params());
  TrainableGuard freeze_d2(state.d2.params());
  TrainableGuard freeze_g2(state.g2.params());

  Graph<float> g;
  const int i_d = g.leaf(batch.i_d);
  const int s_d = g.leaf(batch.s_d_onehot);
  const int s_r = state.g1.forward(g, concat_channels(g, s_d, i_d));
  const int i_r = state.g2.forward(g, concat_channels(g, s_r, i_d));
  const int i_gt = g.leaf(batch.i_gt);
  const int d2_scores = state.d2.forward(g, i_r);
  const int g2_adv = generator_adversarial_loss(g, d2_scores, cfg.adv_form);
  const int l1 = l1_loss(g, i_r, i_gt);
  const int perc = perceptual_loss(g, state.extractor, i_r, i_gt);
  const int style = style_loss(g, state.extractor, i_r, i_gt);
  const int tv = tv_loss(g, i_r, cfg.tv_variant);
  const int g2_total = total_g2_loss(g, cfg.weights, l1, g2_adv, perc, style, tv);

  for (auto* p : state.g1.params()) p->zero_grad();
  g.backward(g2_total);
  double acc = 0.0;
  for (auto* p : state.g1.params())
    if (p->grad.size() != 0) acc += double(p->grad.data.template cast<double>().square().sum());
  for (auto* p : state.g1.params()) p->zero_grad();
  return std::sqrt(acc);
}

// ---- checkpoint -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[9] = "SEGRCK01";

void write_sn_buffers(std::ostream& os, PatchDiscriminator<float>& d) {
  auto layers = d.sn_layers();
  bin::write_u64(os, layers.size());
  for (auto* l : layers) {
    bin::write_tensor(os, l->sn_u);
    bin::write_tensor(os, l->sn_v);
  }
}

void read_sn_buffers(std::istream& is, PatchDiscriminator<float>& d) {
  auto layers = d.sn_layers();
  const std::uint64_t n = bin::read_u64(is);
  if (n != layers.size()) throw IoError("checkpoint spectral-norm layer count mismatch");
  for (auto* l : layers) {
    l->sn_u = bin::read_tensor(is);
    l->sn_v = bin::read_tensor(is);
  }
}

void write_adam(std::ostream& os, Adam<float>& opt) {
  bin::write_i64(os, opt.step_count());
  bin::write_u64(os, opt.moment1().size());
  for (auto& t : opt.moment1()) bin::write_tensor(os, t);
  for (auto& t : opt.moment2()) bin::write_tensor(os, t);
}

void read_adam(std::istream& is, Adam<float>& opt) {
  opt.set_step_count(bin::read_i64(is));
  const std::uint64_t n = bin::read_u64(is);
  if (n != opt.moment1().size()) throw IoError("checkpoint optimizer state count mismatch");
  for (auto& t : opt.moment1()) t = bin::read_tensor(is);
  for (auto& t : opt.moment2()) t = bin::read_tensor(is);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, TrainState& state) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os.write(kCheckpointMagic, 8);
  bin::write_string(os, training_config_to_json_text(state.config));
  bin::write_u32(os, std::uint32_t(state.num_classes));
  bin::write_u32(os, std::uint32_t(state.stage));
  bin::write_i64(os, state.iteration);
  bin::write_i64(os, state.audit.stage2_gt_inputs);
  bin::write_i64(os, state.audit.stage2_other_inputs);
  bin::write_i64(os, state.audit.stage3_soft_refined_inputs);
  bin::write_i64(os, state.audit.stage3_other_inputs);
  bin::write_params(os, state.g1.params());
  bin::write_params(os, state.g2.params());
  bin::write_params(os, state.d1.params());
  bin::write_params(os, state.d2.params());
  bin::write_params(os, state.extractor.params());
  write_sn_buffers(os, state.d1);
  write_sn_buffers(os, state.d2);
  write_adam(os, state.opt_g1);
  write_adam(os, state.opt_g2);
  write_adam(os, state.opt_d1);
  write_adam(os, state.opt_d2);
  bin::write_u32(os, state.segmenter ? 1u : 0u);
  if (state.segmenter) {
    bin::write_u32(os, std::uint32_t(state.segmenter->num_classes));
    bin::write_u32(os, std::uint32_t(state.segmenter->net_config.base_width));
    bin::write_u32(os, std::uint32_t(state.segmenter->net_config.levels));
    bin::write_u64(os, state.segmenter->net_config.seed);
    bin::write_params(os, state.segmenter->net.params());
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw IoError("not a checkpoint file: " + path.string());
  TrainingConfig config = training_config_from_json_text(bin::read_string(is));
  const int num_classes = int(bin::read_u32(is));
  TrainState state = init_train_state(config, num_classes);
  state.stage = int(bin::read_u32(is));
  state.iteration = bin::read_i64(is);
  state.audit.stage2_gt_inputs = bin::read_i64(is);
  state.audit.stage2_other_inputs = bin::read_i64(is);
  state.audit.stage3_soft_refined_inputs = bin::read_i64(is);
  state.audit.stage3_other_inputs = bin::read_i64(is);
  bin::read_params(is, state.g1.params());
  bin::read_params(is, state.g2.params());
  bin::read_params(is, state.d1.params());
  bin::read_params(is, state.d2.params());
  bin::read_params(is, state.extractor.params());
  read_sn_buffers(is, state.d1);
  read_sn_buffers(is, state.d2);
  read_adam(is, state.opt_g1);
  read_adam(is, state.opt_g2);
  read_adam(is, state.opt_d1);
  read_adam(is, state.opt_d2);
  if (bin::read_u32(is) == 1u) {
    Segmenter seg;
    seg.num_classes = int(bin::read_u32(is));
    seg.net_config.in_channels = 3;
    seg.net_config.out_channels = seg.num_classes;
    seg.net_config.base_width = int(bin::read_u32(is));
    seg.net_config.levels = int(bin::read_u32(is));
    seg.net_config.head = HeadKind::Softmax;
    seg.net_config.seed = bin::read_u64(is);
    seg.net = EncoderDecoder<float>(seg.net_config);
    bin::read_params(is, seg.net.params());
    state.segmenter = std::move(seg);
  }
  return state;
}

// ---- run --------------------------------------------------------------------

namespace {

std::string csv_cell(double v, bool active) {
  if (!active) return "";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

std::string loss_row_csv(const LossReport& r) {
  const bool s1 = r.stage == 1 || r.stage == 3;
  const bool s2 = r.stage == 2 || r.stage == 3;
  std::ostringstream os;
  os << r.iteration << "," << r.stage << "," << csv_cell(r.d1, s1) << "," << csv_cell(r.g1_adv, s1)
     << "," << csv_cell(r.ref_ce, s1) << "," << csv_cell(r.g1_total, s1) << ","
     << csv_cell(r.d2, s2) << "," << csv_cell(r.g2_adv, s2) << "," << csv_cell(r.l1, s2) << ","
     << csv_cell(r.perceptual, s2) << "," << csv_cell(r.style, s2) << "," << csv_cell(r.tv, s2)
     << "," << csv_cell(r.g2_total, s2);
  return os.str();
}

constexpr const char* kLossCsvHeader =
    "iteration,stage,d1,g1_adv,ref_ce,g1_total,d2,g2_adv,l1,perceptual,style,tv,g2_total";

}  // namespace

void write_loss_log_csv(const std::filesystem::path& path, const std::vector<LossReport>& log,
                        const TrainingConfig&) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write loss log: " + path.string());
  os << kLossCsvHeader << "\n";
  for (const auto& r : log) os << loss_row_csv(r) << "\n";
}

RunResult run(const TrainingConfig& config, const DatasetManifest& manifest,
              const std::filesystem::path& resume_checkpoint) {
  config.validate();
  TrainDataset data = TrainDataset::from_manifest(manifest);

  TrainState state;
  if (resume_checkpoint.empty()) {
    state = init_train_state(config, data.num_classes);
  } else {
    state = load_checkpoint(resume_checkpoint);
    state.config.out_dir = config.out_dir;  // logs/checkpoints follow the caller
    if (state.num_classes != data.num_classes)
      throw ConfigError("resume: checkpoint class count differs from dataset");
  }
  if (!state.segmenter && !manifest.segmenter_file.empty())
    state.segmenter = load_segmenter(manifest.root / manifest.segmenter_file);

  const auto out_dir = state.config.out_dir;
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg_echo(out_dir / "config.json");
    cfg_echo << training_config_to_json_text(state.config) << "\n";
  }

  const auto log_path = out_dir / "training_log.csv";
  const bool fresh_log = resume_checkpoint.empty() || !std::filesystem::exists(log_path);
  std::ofstream log_os(log_path, fresh_log ? std::ios::trunc : std::ios::app);
  if (!log_os) throw IoError("cannot write loss log: " + log_path.string());
  if (fresh_log) log_os << kLossCsvHeader << "\n";

  RunResult result;
  result.log_csv = log_path;

  IterationCallback cb = [&](TrainState& st, const LossReport& rep) {
    log_os << loss_row_csv(rep) << "\n";
    if (st.iteration % st.config.checkpoint_interval == 0) {
      log_os.flush();
      save_checkpoint(out_dir / ("ckpt_iter_" + std::to_string(st.iteration) + ".bin"), st);
    }
  };

  save_checkpoint(out_dir / "ckpt_initial.bin", state);
  if (state.stage == 1) {
    train_stage1(state, data, &result.log, cb);
    save_checkpoint(out_dir / "ckpt_stage1.bin", state);
  }
  if (state.stage == 2) {
    train_stage2(state, data, &result.log, cb);
    save_checkpoint(out_dir / "ckpt_stage2.bin", state);
  }
  if (state.stage == 3) {
    train_stage3(state, data, &result.log, cb);
    save_checkpoint(out_dir / "ckpt_stage3.bin", state);
  }
  log_os.flush();

  result.final_checkpoint = out_dir / "ckpt_final.bin";
  save_checkpoint(result.final_checkpoint, state);

  if (!data.val.empty()) {
    EvalResult eval = evaluate(state, data, "val");
    write_eval_csv(out_dir / "eval_val.csv", eval);
    std::ofstream table(out_dir / "eval_val.txt");
    table << format_eval_table(eval);
  }
  return result;
}

// ---- evaluation -------------------------------------------------------------

namespace {

struct GroupAccumulator {
  ConfusionMatrix cm_degraded, cm_refined;
  double psnr_degraded = 0, psnr_restored = 0;
  double ssim_degraded = 0, ssim_restored = 0;
  int count = 0;
};

}  // namespace

EvalResult evaluate(TrainState& state, const TrainDataset& data, const std::string& split,
                    SegSource source) {
  const auto& recs = split == "val" ? data.val : data.train;
  if (split != "val" && split != "train") throw ConfigError("evaluate: unknown split '" + split + "'");
  if (recs.empty()) throw ConfigError("evaluate: split '" + split + "' is empty");
  const int K = state.num_classes;

  std::vector<std::string> group_order;
  std::map<std::string, GroupAccumulator> groups;
  GroupAccumulator overall;
  overall.cm_degraded = ConfusionMatrix(K);
  overall.cm_refined = ConfusionMatrix(K);

  for (const auto& rec : recs) {
    Graph<float> g;
    const int i_d = g.leaf(rec.i_d);
    const int s_d_oh = g.leaf(onehot_from_labels(rec.s_d, K));
    const int s_r = state.g1.forward(g, concat_channels(g, s_d_oh, i_d));

    int g2_seg = s_r;
    if (source == SegSource::Degraded) g2_seg = s_d_oh;
    if (source == SegSource::GroundTruth) g2_seg = g.leaf(onehot_from_labels(rec.s_gt, K));
    const int i_r = state.g2.forward(g, concat_channels(g, g2_seg, i_d));

    const SoftLabelMap soft = tensor_to_soft(g.value(s_r));
    const LabelMap s_r_hard = decode_labels(soft);

    LabelMap s_d_map(rec.s_d.h, rec.s_d.w, K), s_gt_map(rec.s_gt.h, rec.s_gt.w, K);
    for (int i = 0; i < rec.s_d.h; ++i)
      for (int j = 0; j < rec.s_d.w; ++j) {
        s_d_map.data(i, j) = rec.s_d.plane(0, 0)[i * rec.s_d.w + j];
        s_gt_map.data(i, j) = rec.s_gt.plane(0, 0)[i * rec.s_gt.w + j];
      }

    const Image i_d_img = tensor_to_image(rec.i_d);
    const Image i_gt_img = tensor_to_image(rec.i_gt);
    const Image i_r_img = tensor_to_image(g.value(i_r));

    const std::string key = rec.family + "#" + std::to_string(rec.severity);
    auto it = groups.find(key);
    if (it == groups.end()) {
      group_order.push_back(key);
      it = groups.emplace(key, GroupAccumulator()).first;
      it->second.cm_degraded = ConfusionMatrix(K);
      it->second.cm_refined = ConfusionMatrix(K);
    }
    for (GroupAccumulator* acc : {&it->second, &overall}) {
      accumulate_confusion(acc->cm_degraded, s_d_map, s_gt_map);
      accumulate_confusion(acc->cm_refined, s_r_hard, s_gt_map);
      acc->psnr_degraded += psnr(i_d_img, i_gt_img);
      acc->psnr_restored += psnr(i_r_img, i_gt_img);
      acc->ssim_degraded += ssim(i_d_img, i_gt_img);
      acc->ssim_restored += ssim(i_r_img, i_gt_img);
      ++acc->count;
    }
  }

  EvalResult result;
  for (const auto& key : group_order) {
    const GroupAccumulator& acc = groups.at(key);
    const auto hash_pos = key.find('#');
    const std::string family = key.substr(0, hash_pos);
    const int severity = std::stoi(key.substr(hash_pos + 1));
    EvalRow degraded;
    degraded.family = family;
    degraded.severity = severity;
    degraded.seg = seg_scores(acc.cm_degraded);
    degraded.psnr = acc.psnr_degraded / acc.count;
    degraded.ssim = acc.ssim_degraded / acc.count;
    degraded.count = acc.count;
    EvalRow refined = degraded;
    refined.family = family + "_re";
    refined.seg = seg_scores(acc.cm_refined);
    refined.psnr = acc.psnr_restored / acc.count;
    refined.ssim = acc.ssim_restored / acc.count;
    result.rows.push_back(degraded);
    result.rows.push_back(refined);
  }
  result.degraded_seg = seg_scores(overall.cm_degraded);
  result.refined_seg = seg_scores(overall.cm_refined);
  result.degraded_psnr = overall.psnr_degraded / overall.count;
  result.restored_psnr = overall.psnr_restored / overall.count;
  result.degraded_ssim = overall.ssim_degraded / overall.count;
  result.restored_ssim = overall.ssim_restored / overall.count;
  result.count = overall.count;
  return result;
}

namespace {

std::string fmt_metric(double v) {
  std::ostringstream os;
  if (std::isinf(v)) {
    os << (v > 0 ? "inf" : "-inf");
  } else {
    os << std::fixed << std::setprecision(4) << v;
  }
  return os.str();
}

}  // namespace

void write_eval_csv(const std::filesystem::path& path, const EvalResult& result) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write eval csv: " + path.string());
  os << "family,severity,PA,mPA,mIoU,FWIoU,PSNR,SSIM\n";
  for (const auto& r : result.rows)
    os << r.family << "," << r.severity << "," << fmt_metric(r.seg.pa) << ","
       << fmt_metric(r.seg.mpa) << "," << fmt_metric(r.seg.miou) << "," << fmt_metric(r.seg.fwiou)
       << "," << fmt_metric(r.psnr) << "," << fmt_metric(r.ssim) << "\n";
}

std::string format_eval_table(const EvalResult& result) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "family" << std::setw(9) << "severity" << std::right
     << std::setw(8) << "PA" << std::setw(8) << "mPA" << std::setw(8) << "mIoU" << std::setw(8)
     << "FWIoU" << std::setw(9) << "PSNR" << std::setw(8) << "SSIM" << "\n";
  for (const auto& r : result.rows) {
    os << std::left << std::setw(10) << r.family << std::setw(9) << r.severity << std::right
       << std::setw(8) << fmt_metric(r.seg.pa) << std::setw(8) << fmt_metric(r.seg.mpa)
       << std::setw(8) << fmt_metric(r.seg.miou) << std::setw(8) << fmt_metric(r.seg.fwiou)
       << std::setw(9) << fmt_metric(r.psnr) << std::setw(8) << fmt_metric(r.ssim) << "\n";
  }
  os << std::left << std::setw(19) << "overall degraded" << std::right << std::setw(8)
     << fmt_metric(result.degraded_seg.pa) << std::setw(8) << fmt_metric(result.degraded_seg.mpa)
     << std::setw(8) << fmt_metric(result.degraded_seg.miou) << std::setw(8)
     << fmt_metric(result.degraded_seg.fwiou) << std::setw(9) << fmt_metric(result.degraded_psnr)
     << std::setw(8) << fmt_metric(result.degraded_ssim) << "\n";
  os << std::left << std::setw(19) << "overall refined" << std::right << std::setw(8)
     << fmt_metric(result.refined_seg.pa) << std::setw(8) << fmt_metric(result.refined_seg.mpa)
     << std::setw(8) << fmt_metric(result.refined_seg.miou) << std::setw(8)
     << fmt_metric(result.refined_seg.fwiou) << std::setw(9) << fmt_metric(result.restored_psnr)
     << std::setw(8) << fmt_metric(result.restored_ssim) << "\n";
  return os.str();
}

}  // namespace segres
