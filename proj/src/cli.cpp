#include "segres/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "segres/datagen.hpp"
#include "segres/image_io.hpp"
#include "segres/training.hpp"

namespace segres {

namespace {

// Relative output paths land under $SEGRES_OUT_ROOT when it is set.
std::filesystem::path resolve_out(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("SEGRES_OUT_ROOT")) return std::filesystem::path(root) / p;
  return p;
}

DegradationSpec parse_degradation_arg(const std::string& arg, std::uint64_t seed) {
  const auto colon = arg.find(':');
  const std::string fam = colon == std::string::npos ? arg : arg.substr(0, colon);
  int severity = 0;
  if (colon != std::string::npos) severity = std::stoi(arg.substr(colon + 1));
  return make_spec(family_from_name(fam), severity, seed);
}

void print_spec(const DegradationSpec& spec) {
  std::cout << "degradation: family=" << family_name(spec.family)
            << " severity=" << spec.severity_index << " seed=" << spec.seed;
  switch (spec.family) {
    case DegradationFamily::GaussianBlur:
      std::cout << " sigma=" << spec.sigma;
      break;
    case DegradationFamily::GaussianNoise:
      std::cout << " variance=" << spec.variance;
      break;
    case DegradationFamily::JpegCompression:
      std::cout << " quality=" << spec.quality;
      break;
    case DegradationFamily::ChromaticAberration:
      std::cout << " shift_r=" << spec.shift_r << " shift_b=" << spec.shift_b;
      break;
    case DegradationFamily::Reflection:
      std::cout << " alpha=" << spec.alpha << " blur_sigma=" << spec.reflection_blur_sigma;
      break;
  }
  std::cout << "\n";
}

int cmd_gen_data(const std::filesystem::path& out_dir, ToyDatasetConfig cfg, int epochs,
                 const std::vector<std::string>& degradations) {
  cfg.validate();
  std::vector<DegradationSpec> specs;
  for (std::size_t i = 0; i < degradations.size(); ++i)
    specs.push_back(parse_degradation_arg(degradations[i], mix_seed(cfg.seed, 0xDE6 + i)));

  std::cout << "generating " << cfg.n_samples << " clean samples at " << cfg.image_size << "x"
            << cfg.image_size << ", K=" << cfg.num_classes << "\n";
  auto pairs = generate_toy_dataset(cfg);
  const int n_val = int(std::lround(cfg.val_fraction * cfg.n_samples));
  const int n_train = cfg.n_samples - n_val;
  std::vector<std::pair<Image, LabelMap>> train_pairs(pairs.begin(), pairs.begin() + n_train);

  std::cout << "training clean segmenter (" << epochs << " epochs on " << n_train
            << " samples)\n";
  Segmenter seg = train_clean_segmenter(train_pairs, epochs, mix_seed(cfg.seed, 0x5E6));

  std::cout << "building dataset with " << specs.size() << " degradation spec(s)\n";
  DatasetManifest manifest = build_dataset(cfg, specs, seg, out_dir);
  std::cout << "wrote " << manifest.records.size() << " records to "
            << (out_dir / "manifest.jsonl") << "\n";
  return 0;
}

int cmd_degrade(const std::filesystem::path& input, const std::filesystem::path& output,
                const std::string& family, int severity, std::uint64_t seed,
                const std::filesystem::path& reflection_path) {
  const DegradationFamily fam = family_from_name(family);
  DegradationSpec spec = make_spec(fam, severity, seed);
  const Image img = load_image_png(input);
  std::optional<Image> aux;
  if (fam == DegradationFamily::Reflection) {
    if (reflection_path.empty())
      throw ConfigError("reflection degradation needs --reflection <image>");
    aux = load_image_png(reflection_path);
    if (!aux->same_shape(img)) throw ShapeError("reflection layer must match input dimensions");
  }
  const Image out = apply(spec, img, aux ? &*aux : nullptr);
  save_image_png(output, out);
  print_spec(spec);
  std::cout << "wrote " << output << "\n";
  return 0;
}

int cmd_train(const std::filesystem::path& manifest_path, TrainingConfig config,
              const std::filesystem::path& resume) {
  config.out_dir = resolve_out(config.out_dir);
  DatasetManifest manifest = load_manifest(manifest_path);
  RunResult result = run(config, manifest, resume);
  std::cout << "training complete; final checkpoint: " << result.final_checkpoint << "\n"
            << "loss log: " << result.log_csv << "\n";
  return 0;
}

int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest_path,
             const std::string& split, const std::string& seg_source,
             std::filesystem::path out_dir, int grids) {
  out_dir = resolve_out(out_dir);
  TrainState state = load_checkpoint(checkpoint);
  DatasetManifest manifest = load_manifest(manifest_path);
  TrainDataset data = TrainDataset::from_manifest(manifest);

  SegSource source = SegSource::Refined;
  if (seg_source == "degraded") source = SegSource::Degraded;
  else if (seg_source == "gt") source = SegSource::GroundTruth;
  else if (seg_source != "refined") throw ConfigError("--seg-source must be refined|degraded|gt");

  EvalResult result = evaluate(state, data, split, source);
  std::cout << format_eval_table(result);
  std::filesystem::create_directories(out_dir);
  write_eval_csv(out_dir / ("eval_" + split + ".csv"), result);

  // Side-by-side grids: I_d | S_d | S_r | I_r | I_gt.
  const auto& recs = split == "val" ? data.val : data.train;
  const int K = state.num_classes;
  const int limit = grids < 0 ? int(recs.size()) : std::min<int>(grids, int(recs.size()));
  for (int i = 0; i < limit; ++i) {
    const auto& rec = recs[i];
    Graph<float> g;
    const int i_d = g.leaf(rec.i_d);
    const int s_d_oh = g.leaf([&] {
      Tensor<float> t(1, K, rec.s_d.h, rec.s_d.w);
      for (std::int64_t p = 0; p < rec.s_d.plane_size(); ++p)
        t.plane(0, rec.s_d.plane(0, 0)[p])[p] = 1.0f;
      return t;
    }());
    const int s_r = state.g1.forward(g, concat_channels(g, s_d_oh, i_d));
    const int g2_seg = source == SegSource::Degraded ? s_d_oh : s_r;
    const int i_r = state.g2.forward(g, concat_channels(g, g2_seg, i_d));

    LabelMap s_d_map(rec.s_d.h, rec.s_d.w, K);
    for (int y = 0; y < rec.s_d.h; ++y)
      for (int x = 0; x < rec.s_d.w; ++x) s_d_map.data(y, x) = rec.s_d.plane(0, 0)[y * rec.s_d.w + x];
    const LabelMap s_r_map = decode_labels(tensor_to_soft(g.value(s_r)));
    const Image grid = hstack_grid({tensor_to_image(rec.i_d), colorize_labels(s_d_map),
                                    colorize_labels(s_r_map), tensor_to_image(g.value(i_r)),
                                    tensor_to_image(rec.i_gt)});
    save_image_png(out_dir / "grids" / (std::to_string(i) + ".png"), grid);
  }
  std::cout << "wrote " << (out_dir / ("eval_" + split + ".csv")) << " and " << limit
            << " grid image(s)\n";
  return 0;
}

int cmd_restore(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                const std::filesystem::path& seg_path, bool auto_seg, bool refine,
                const std::filesystem::path& output, std::filesystem::path seg_out) {
  TrainState state = load_checkpoint(checkpoint);
  const Image img = load_image_png(input);
  const int K = state.num_classes;

  LabelMap seg_map;
  if (!seg_path.empty()) {
    seg_map = load_label_png(seg_path, K);
    if (seg_map.height() != img.height || seg_map.width() != img.width)
      throw ShapeError("segmentation size differs from input image");
  } else if (auto_seg) {
    if (!state.segmenter)
      throw ConfigError("--auto needs a checkpoint with a bundled segmenter; supply --seg instead");
    seg_map = produce_degraded_segmentation(*state.segmenter, img);
  } else {
    throw ConfigError("restore needs --seg <label map> or --auto");
  }

  Graph<float> g;
  const int i_d = g.leaf(image_to_tensor(img));
  const int seg_oh = g.leaf(onehot_tensor(seg_map, K));
  int g2_seg = seg_oh;
  if (refine) {
    const int s_r = state.g1.forward(g, concat_channels(g, seg_oh, i_d));
    g2_seg = s_r;
    if (seg_out.empty())
      seg_out = output.parent_path() / (output.stem().string() + "_seg.png");
    save_label_png(seg_out, decode_labels(tensor_to_soft(g.value(s_r))));
    std::cout << "wrote refined segmentation " << seg_out << "\n";
  }
  const int i_r = state.g2.forward(g, concat_channels(g, g2_seg, i_d));
  save_image_png(output, tensor_to_image(g.value(i_r)));
  std::cout << "wrote restored image " << output << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"cooperative segmentation refinement and image restoration"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the toy shapes dataset");
  std::string gen_out;
  ToyDatasetConfig toy_cfg;
  int gen_epochs = 10;
  std::vector<std::string> gen_degradations{"gb:1", "gn:1"};
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n-samples", toy_cfg.n_samples, "clean samples (train+val)");
  gen->add_option("--image-size", toy_cfg.image_size, "square image size");
  gen->add_option("--classes", toy_cfg.num_classes, "class count incl. background");
  gen->add_option("--min-shapes", toy_cfg.min_shapes, "min shapes per image");
  gen->add_option("--max-shapes", toy_cfg.max_shapes, "max shapes per image");
  gen->add_option("--seed", toy_cfg.seed, "corpus seed");
  gen->add_option("--val-fraction", toy_cfg.val_fraction, "fraction of samples held out");
  gen->add_option("--epochs", gen_epochs, "segmenter training epochs");
  gen->add_option("--degradation", gen_degradations, "family:severity (repeatable)");

  // degrade
  auto* deg = app.add_subcommand("degrade", "apply one degradation to an image");
  std::string deg_in, deg_out, deg_family = "gb", deg_reflection;
  int deg_severity = 0;
  std::uint64_t deg_seed = 0;
  deg->add_option("--input", deg_in, "input image (png)")->required();
  deg->add_option("--output", deg_out, "output image (png)")->required();
  deg->add_option("--family", deg_family, "gb|gn|jpeg|ca|refl");
  deg->add_option("--severity", deg_severity, "severity index 0..3");
  deg->add_option("--seed", deg_seed, "seed for stochastic families");
  deg->add_option("--reflection", deg_reflection, "reflection layer image (refl only)");

  // train
  auto* tr = app.add_subcommand("train", "run the three-stage training");
  std::string tr_manifest, tr_config, tr_resume, tr_out, tr_tv, tr_adv;
  TrainingConfig tr_defaults;
  std::int64_t tr_n1 = -1, tr_n2 = -1, tr_n3 = -1, tr_interval = -1;
  int tr_batch = -1, tr_width = -1;
  double tr_lr = -1;
  std::int64_t tr_seed = -1;
  tr->add_option("--manifest", tr_manifest, "dataset manifest.jsonl")->required();
  tr->add_option("--config", tr_config, "JSON config file");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--n1", tr_n1, "stage-1 iterations");
  tr->add_option("--n2", tr_n2, "stage-2 iterations");
  tr->add_option("--n3", tr_n3, "stage-3 iterations");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--base-width", tr_width, "network base width");
  tr->add_option("--checkpoint-interval", tr_interval, "iterations between checkpoints");
  tr->add_option("--tv-variant", tr_tv, "conventional|literal");
  tr->add_option("--adversarial", tr_adv, "least_squares|logistic");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string ev_ckpt, ev_manifest, ev_split = "val", ev_out = "eval_out", ev_source = "refined";
  int ev_grids = -1;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--manifest", ev_manifest, "dataset manifest.jsonl")->required();
  ev->add_option("--split", ev_split, "train|val");
  ev->add_option("--out", ev_out, "output directory");
  ev->add_option("--seg-source", ev_source, "refined|degraded|gt (G2 conditioning)");
  ev->add_option("--grids", ev_grids, "grid images to write (-1 = all)");

  // restore
  auto* re = app.add_subcommand("restore", "restore one image");
  std::string re_ckpt, re_in, re_out, re_seg, re_seg_out;
  bool re_auto = false, re_no_refine = false;
  re->add_option("--checkpoint", re_ckpt, "checkpoint file")->required();
  re->add_option("--input", re_in, "degraded input image")->required();
  re->add_option("--output", re_out, "restored output image")->required();
  re->add_option("--seg", re_seg, "segmentation label map for the input");
  re->add_flag("--auto", re_auto, "derive segmentation via the bundled segmenter");
  re->add_flag("--no-refine", re_no_refine, "feed the supplied segmentation directly to G2");
  re->add_option("--seg-out", re_seg_out, "path for the refined segmentation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(resolve_out(gen_out), toy_cfg, gen_epochs, gen_degradations);
    if (deg->parsed()) {
      if (deg_severity < 0 || deg_severity > 3)
        throw ConfigError("severity must be in 0..3, got " + std::to_string(deg_severity));
      return cmd_degrade(deg_in, resolve_out(deg_out), deg_family, deg_severity, deg_seed,
                         deg_reflection);
    }
    if (tr->parsed()) {
      TrainingConfig cfg =
          tr_config.empty() ? tr_defaults : training_config_from_json_file(tr_config);
      if (tr_n1 >= 0) cfg.n1 = tr_n1;
      if (tr_n2 >= 0) cfg.n2 = tr_n2;
      if (tr_n3 >= 0) cfg.n3 = tr_n3;
      if (tr_batch > 0) cfg.batch_size = tr_batch;
      if (tr_lr > 0) cfg.lr = tr_lr;
      if (tr_seed >= 0) cfg.seed = std::uint64_t(tr_seed);
      if (tr_width > 0) cfg.base_width = tr_width;
      if (tr_interval > 0) cfg.checkpoint_interval = tr_interval;
      if (!tr_out.empty()) cfg.out_dir = tr_out;
      if (!tr_tv.empty())
        cfg.tv_variant = tr_tv == "literal" ? TvVariant::Literal : TvVariant::Conventional;
      if (!tr_adv.empty())
        cfg.adv_form = tr_adv == "logistic" ? AdversarialForm::Logistic
                                            : AdversarialForm::LeastSquares;
      cfg.validate();
      return cmd_train(tr_manifest, cfg, tr_resume);
    }
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_manifest, ev_split, ev_source, ev_out, ev_grids);
    if (re->parsed())
      return cmd_restore(re_ckpt, re_in, re_seg, re_auto, !re_no_refine, resolve_out(re_out),
                         re_seg_out);
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace segres
