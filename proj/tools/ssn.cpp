#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssn/augment.hpp"
#include "ssn/checkpoint.hpp"
#include "ssn/dataset.hpp"
#include "ssn/loss.hpp"
#include "ssn/metrics.hpp"
#include "ssn/model.hpp"
#include "ssn/nifti.hpp"
#include "ssn/optim.hpp"
#include "ssn/preprocess.hpp"
#include "ssn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Config-file fallback: a JSON object whose keys mirror the long flag names.
// A flag given on the command line always wins over the file.
class CfgBinder {
 public:
  explicit CfgBinder(const nlohmann::json* cfg) : cfg_(cfg) {}

  template <typename V>
  void bind(CLI::Option* opt, const std::string& key, V* target) {
    appliers_.push_back([this, opt, key, target]() {
      if (opt->count() == 0 && cfg_->contains(key)) {
        try {
          *target = cfg_->at(key).get<V>();
        } catch (const nlohmann::json::exception&) {
          throw ssn::ConfigError("config key \"" + key + "\" has the wrong type");
        }
      }
    });
  }

  void apply() {
    for (auto& f : appliers_) f();
  }

 private:
  const nlohmann::json* cfg_;
  std::vector<std::function<void()>> appliers_;
};

ordered_json surgery_to_json(const ssn::SurgeryReport& r) {
  return {{"loaded", r.loaded}, {"skipped", r.skipped}, {"missing", r.missing}};
}

std::vector<std::string> parse_prefix_list(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const std::string item =
        csv.substr(start, comma == std::string::npos ? comma : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<ssn::TrainSample<float>> load_samples(
    const std::vector<ssn::ManifestEntry>& entries,
    std::unordered_map<std::string, ssn::Volume>* keep_volumes) {
  std::vector<ssn::TrainSample<float>> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    ssn::Volume v = ssn::read_nifti(e.path);
    if (keep_volumes) (*keep_volumes)[e.subject] = v;
    out.push_back({ssn::volume_to_tensor<float>(v), e.label, e.subject});
  }
  return out;
}

// Train on one train/test split, streaming per-epoch JSON lines to `log`,
// and return the test-set confusion matrix.
ssn::ConfusionMatrix run_training(ssn::Model<float>& model,
                                  const std::vector<ssn::ManifestEntry>& train,
                                  const std::vector<ssn::ManifestEntry>& test,
                                  const ssn::TrainConfig& tcfg,
                                  const ssn::AugmentConfig& acfg,
                                  std::size_t num_classes, std::ostream& log) {
  auto volumes = std::make_shared<std::unordered_map<std::string, ssn::Volume>>();
  auto train_samples = load_samples(train, tcfg.augment ? volumes.get() : nullptr);
  auto test_samples = load_samples(test, nullptr);

  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& s : train_samples) ++counts.at(s.y);
  const ssn::ClassWeights weights = ssn::class_weights(counts);

  std::vector<ssn::Tensor<float>> params;
  for (auto& nt : model.named_parameters()) params.push_back(nt.tensor);
  ssn::AdamConfig ocfg;
  ocfg.lr = tcfg.learning_rate;
  ocfg.weight_decay = tcfg.weight_decay;
  ssn::Adam<float> opt(params, ocfg);

  ssn::SampleTransform<float> transform;
  if (tcfg.augment) {
    transform = [volumes, acfg](const ssn::TrainSample<float>& s, ssn::Rng& rng) {
      ssn::Volume a = ssn::random_affine(volumes->at(s.id), acfg, rng);
      a = ssn::random_flip_lr(a, acfg.flip_prob, rng);
      return ssn::volume_to_tensor<float>(a);
    };
  }

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const ssn::EpochStats stats =
        ssn::train_epoch(model, train_samples, weights, opt, tcfg, epoch, transform);
    log << ssn::epoch_stats_to_json(stats).dump() << "\n";
  }
  return ssn::evaluate(model, test_samples, num_classes, &weights).cm;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ssn::FormatError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw ssn::FormatError("write failed: " + path.string());
}

void write_metrics_files(const fs::path& out_dir, const ssn::ConfusionMatrix& cm,
                         const ssn::MetricsReport& rep) {
  write_text(out_dir / "metrics.json", ssn::metrics_to_json(rep).dump(2) + "\n");
  write_text(out_dir / "confusion.csv", cm.to_csv(false));
  write_text(out_dir / "confusion_normalized.csv", cm.to_csv(true));
}

int map_error(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volumetric residual-network training harness"};
  app.require_subcommand(1);
  app.fallthrough(true);

  std::uint64_t seed = 0;
  std::string config_path;
  std::string out_dir = ".";
  app.add_option("--seed", seed, "master seed; every random stream derives from it");
  app.add_option("--config", config_path, "JSON config file (flags override it)");
  app.add_option("--out", out_dir, "output directory");

  nlohmann::json cfg = nlohmann::json::object();
  CfgBinder bind(&cfg);

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  std::size_t sy_classes = 3, sy_per = 10, sy_extent = 32;
  bind.bind(synth->add_option("--classes", sy_classes, "number of classes"),
            "classes", &sy_classes);
  bind.bind(synth->add_option("--per-class", sy_per, "samples per class"),
            "per_class", &sy_per);
  bind.bind(synth->add_option("--extent", sy_extent, "cubic volume extent"),
            "extent", &sy_extent);

  // preprocess
  auto* prep = app.add_subcommand("preprocess",
                                  "percentile-normalize and resample a manifest");
  std::string pp_manifest;
  double pp_lo = 0.5, pp_hi = 99.5, pp_spacing = 2.0;
  bool pp_no_normalize = false, pp_no_resample = false;
  bind.bind(prep->add_option("--manifest", pp_manifest, "input manifest CSV"),
            "manifest", &pp_manifest);
  bind.bind(prep->add_option("--lo", pp_lo, "lower percentile"), "lo", &pp_lo);
  bind.bind(prep->add_option("--hi", pp_hi, "upper percentile"), "hi", &pp_hi);
  bind.bind(prep->add_option("--spacing", pp_spacing, "target isotropic mm"),
            "spacing", &pp_spacing);
  prep->add_flag("--no-normalize", pp_no_normalize, "skip intensity normalization");
  prep->add_flag("--no-resample", pp_no_resample, "skip resampling");

  // split
  auto* split = app.add_subcommand("split", "write stratified splits");
  std::string sp_manifest;
  std::size_t sp_k = 3;
  double sp_ratio = 0.7;
  bind.bind(split->add_option("--manifest", sp_manifest, "input manifest CSV"),
            "manifest", &sp_manifest);
  bind.bind(split->add_option("--k", sp_k, "number of folds"), "k", &sp_k);
  bind.bind(split->add_option("--ratio", sp_ratio, "train fraction"), "ratio",
            &sp_ratio);

  // shared model/training options
  struct TrainArgs {
    std::string manifest, arch = "resnet3d", split_path, checkpoint, skip = "stem,fc";
    std::size_t classes = 0, in_channels = 1, fold = 0, k = 3;
    double ratio = 0.7, lr = 1e-5, weight_decay = 1e-3, dropout = 0.3;
    std::size_t batch_size = 1, epochs = 100;
    bool no_augment = false;
  };

  auto add_train_opts = [&](CLI::App* cmd, TrainArgs& a, bool with_folds) {
    bind.bind(cmd->add_option("--manifest", a.manifest, "input manifest CSV"),
              "manifest", &a.manifest);
    bind.bind(cmd->add_option("--arch", a.arch,
                              "resnet3d | r2plus1d | mixedconv"),
              "arch", &a.arch);
    bind.bind(cmd->add_option("--classes", a.classes,
                              "number of classes (default: from manifest)"),
              "classes", &a.classes);
    bind.bind(cmd->add_option("--in-channels", a.in_channels, "input channels"),
              "in_channels", &a.in_channels);
    bind.bind(cmd->add_option("--lr", a.lr, "learning rate"), "lr", &a.lr);
    bind.bind(cmd->add_option("--weight-decay", a.weight_decay,
                              "weight decay coefficient"),
              "weight_decay", &a.weight_decay);
    bind.bind(cmd->add_option("--dropout", a.dropout, "dropout probability"),
              "dropout", &a.dropout);
    bind.bind(cmd->add_option("--batch-size", a.batch_size, "batch size"),
              "batch_size", &a.batch_size);
    bind.bind(cmd->add_option("--epochs", a.epochs, "training epochs"), "epochs",
              &a.epochs);
    bind.bind(cmd->add_option("--ratio", a.ratio, "train fraction"), "ratio",
              &a.ratio);
    cmd->add_flag("--no-augment", a.no_augment, "disable augmentation");
    bind.bind(cmd->add_option("--from-checkpoint", a.checkpoint,
                              "transfer-load weights from this checkpoint"),
              "from_checkpoint", &a.checkpoint);
    bind.bind(cmd->add_option("--skip", a.skip,
                              "comma-separated name prefixes left at random "
                              "init during transfer"),
              "skip", &a.skip);
    if (with_folds) {
      bind.bind(cmd->add_option("--k", a.k, "number of folds"), "k", &a.k);
    } else {
      bind.bind(cmd->add_option("--split", a.split_path, "split JSON file"),
                "split", &a.split_path);
      bind.bind(cmd->add_option("--fold", a.fold, "fold index within --split"),
                "fold", &a.fold);
    }
  };

  auto* train = app.add_subcommand("train", "train one model on one split");
  TrainArgs tr;
  add_train_opts(train, tr, false);

  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation");
  TrainArgs cv;
  add_train_opts(crossval, cv, true);

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a manifest");
  std::string ev_checkpoint, ev_manifest, ev_split;
  std::size_t ev_fold = 0;
  bind.bind(eval->add_option("--checkpoint", ev_checkpoint, "checkpoint file"),
            "checkpoint", &ev_checkpoint);
  bind.bind(eval->add_option("--manifest", ev_manifest, "manifest CSV"),
            "manifest", &ev_manifest);
  bind.bind(eval->add_option("--split", ev_split,
                             "optional split JSON; scores that fold's test set"),
            "split", &ev_split);
  bind.bind(eval->add_option("--fold", ev_fold, "fold index within --split"),
            "fold", &ev_fold);

  // predict
  auto* predict = app.add_subcommand("predict", "classify a single volume");
  std::string pr_checkpoint, pr_volume, pr_arch;
  bool pr_normalize = false;
  double pr_resample = 0.0;
  bind.bind(predict->add_option("--checkpoint", pr_checkpoint, "checkpoint file"),
            "checkpoint", &pr_checkpoint);
  bind.bind(predict->add_option("--volume", pr_volume, "NIfTI volume to classify"),
            "volume", &pr_volume);
  predict->add_option("--arch", pr_arch,
                      "expected architecture; must match the checkpoint");
  predict->add_flag("--normalize", pr_normalize,
                    "percentile-normalize before inference");
  predict->add_option("--resample", pr_resample,
                      "resample to this isotropic spacing (mm) before inference");

  // params
  auto* params = app.add_subcommand("params", "print the parameter budget");
  std::string pa_arch, pa_stem;
  std::size_t pa_classes = 3, pa_in_channels = 1;
  bind.bind(params->add_option("--arch", pa_arch, "resnet3d | r2plus1d | mixedconv"),
            "arch", &pa_arch);
  bind.bind(params->add_option("--classes", pa_classes, "number of classes"),
            "classes", &pa_classes);
  bind.bind(params->add_option("--in-channels", pa_in_channels, "input channels"),
            "in_channels", &pa_in_channels);
  params->add_option("--stem", pa_stem,
                     "override the stem variant: stem3d | stem2plus1d");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ssn::ConfigError("cannot open config file: " + config_path);
      try {
        in >> cfg;
      } catch (const nlohmann::json::exception& e) {
        throw ssn::ConfigError("config file is not valid JSON: " +
                               std::string(e.what()));
      }
      if (!cfg.is_object())
        throw ssn::ConfigError("config file must hold a JSON object");
      if (cfg.contains("seed") && !app.get_option("--seed")->count())
        seed = cfg.at("seed").get<std::uint64_t>();
      if (cfg.contains("out") && !app.get_option("--out")->count())
        out_dir = cfg.at("out").get<std::string>();
    }
    bind.apply();

    const fs::path out(out_dir);

    if (app.got_subcommand(synth)) {
      fs::create_directories(out);
      const auto manifest = ssn::generate_synthetic(sy_classes, sy_per, sy_extent,
                                                    seed, out.string());
      std::cout << "wrote " << manifest.entries.size() << " volumes and "
                << (out / "manifest.csv").string() << "\n";
      return 0;
    }

    if (app.got_subcommand(prep)) {
      if (pp_manifest.empty()) throw ssn::ConfigError("--manifest is required");
      fs::create_directories(out);
      ssn::DatasetManifest manifest = ssn::read_manifest(pp_manifest);
      for (auto& e : manifest.entries) {
        ssn::Volume v = ssn::read_nifti(e.path);
        if (!pp_no_normalize) v = ssn::percentile_normalize(v, pp_lo, pp_hi);
        if (!pp_no_resample) v = ssn::resample_isotropic(v, pp_spacing);
        const fs::path dst = out / fs::path(e.path).filename();
        ssn::write_nifti(v, dst.string());
        e.path = dst.string();
      }
      ssn::write_manifest(manifest, (out / "manifest.csv").string());
      std::cout << "preprocessed " << manifest.entries.size() << " volumes into "
                << out.string() << "\n";
      return 0;
    }

    if (app.got_subcommand(split)) {
      if (sp_manifest.empty()) throw ssn::ConfigError("--manifest is required");
      fs::create_directories(out);
      const auto manifest = ssn::read_manifest(sp_manifest);
      const auto splits = ssn::make_splits(manifest, sp_k, sp_ratio, seed);
      ssn::write_splits(splits, (out / "splits.json").string());
      for (const auto& s : splits)
        std::cout << "fold " << s.fold << ": train " << s.train_ids.size()
                  << ", test " << s.test_ids.size() << "\n";
      return 0;
    }

    if (app.got_subcommand(train)) {
      if (tr.manifest.empty()) throw ssn::ConfigError("--manifest is required");
      fs::create_directories(out);
      const auto manifest = ssn::read_manifest(tr.manifest);
      const std::size_t classes =
          tr.classes ? tr.classes : manifest.num_classes;
      if (classes < manifest.num_classes)
        throw ssn::ConfigError("--classes is smaller than the manifest's label range");

      ssn::SplitSpec spec;
      if (!tr.split_path.empty()) {
        const auto splits = ssn::read_splits(tr.split_path);
        if (tr.fold >= splits.size())
          throw ssn::ConfigError("--fold out of range for " + tr.split_path);
        spec = splits[tr.fold];
      } else {
        spec = ssn::make_splits(manifest, 1, tr.ratio, seed)[0];
      }
      auto [train_entries, test_entries] = ssn::split_entries(manifest, spec);

      ssn::ModelConfig mcfg{classes, tr.in_channels, tr.dropout};
      ssn::Rng mrng = ssn::make_rng(ssn::derive_seed(seed, 0, 0, 10));
      ssn::Model<float> model(ssn::parse_arch(tr.arch), mcfg, mrng);

      std::ofstream log(out / "train_log.jsonl");
      if (!log)
        throw ssn::FormatError("cannot open run log in " + out.string());
      if (!tr.checkpoint.empty()) {
        const auto ckpt = ssn::load_checkpoint(tr.checkpoint);
        const auto report =
            ssn::transfer_load(model, ckpt, parse_prefix_list(tr.skip));
        log << ordered_json{{"surgery", surgery_to_json(report)}}.dump() << "\n";
      }

      ssn::TrainConfig tcfg{tr.lr,         tr.weight_decay, tr.batch_size,
                            tr.epochs,     seed,            !tr.no_augment};
      ssn::validate_train(tcfg);
      const ssn::AugmentConfig acfg;
      const ssn::ConfusionMatrix cm = run_training(
          model, train_entries, test_entries, tcfg, acfg, classes, log);
      const ssn::MetricsReport rep = ssn::per_class_metrics(cm);
      write_metrics_files(out, cm, rep);
      ssn::save_checkpoint(model, (out / "model.ckpt").string());
      std::cout << ssn::metrics_to_table(rep);
      return 0;
    }

    if (app.got_subcommand(crossval)) {
      if (cv.manifest.empty()) throw ssn::ConfigError("--manifest is required");
      fs::create_directories(out);
      const auto manifest = ssn::read_manifest(cv.manifest);
      const std::size_t classes =
          cv.classes ? cv.classes : manifest.num_classes;
      if (classes < manifest.num_classes)
        throw ssn::ConfigError("--classes is smaller than the manifest's label range");
      ssn::ModelConfig mcfg{classes, cv.in_channels, cv.dropout};
      ssn::TrainConfig tcfg{cv.lr,     cv.weight_decay, cv.batch_size,
                            cv.epochs, seed,            !cv.no_augment};
      ssn::validate_train(tcfg);
      const ssn::AugmentConfig acfg;

      const auto trainer = [&](std::size_t fold,
                               const std::vector<ssn::ManifestEntry>& train_e,
                               const std::vector<ssn::ManifestEntry>& test_e,
                               std::uint64_t fold_seed) {
        ssn::Rng mrng = ssn::make_rng(ssn::derive_seed(fold_seed, 0, 0, 10));
        ssn::Model<float> model(ssn::parse_arch(cv.arch), mcfg, mrng);
        std::ofstream log(out / ("fold" + std::to_string(fold) + "_log.jsonl"));
        if (!log)
          throw ssn::FormatError("cannot open fold log in " + out.string());
        if (!cv.checkpoint.empty()) {
          const auto ckpt = ssn::load_checkpoint(cv.checkpoint);
          const auto report =
              ssn::transfer_load(model, ckpt, parse_prefix_list(cv.skip));
          log << ordered_json{{"surgery", surgery_to_json(report)}}.dump() << "\n";
        }
        ssn::TrainConfig fold_cfg = tcfg;
        fold_cfg.seed = fold_seed;
        ssn::ConfusionMatrix cm = run_training(model, train_e, test_e, fold_cfg,
                                               acfg, classes, log);
        ssn::save_checkpoint(
            model, (out / ("fold" + std::to_string(fold) + "_model.ckpt")).string());
        return cm;
      };

      const ssn::CrossValSummary summary =
          ssn::cross_validate(manifest, cv.k, cv.ratio, seed, trainer);
      write_text(out / "summary.json", ssn::summary_to_json(summary).dump(2) + "\n");
      for (std::size_t c = 0; c < summary.mean_f1.size(); ++c)
        std::cout << "class " << c << ": mean F1 " << summary.mean_f1[c]
                  << " +- " << summary.std_f1[c] << "\n";
      std::cout << "accuracy: mean " << summary.mean_accuracy << " +- "
                << summary.std_accuracy << "\n";
      return 0;
    }

    if (app.got_subcommand(eval)) {
      if (ev_checkpoint.empty() || ev_manifest.empty())
        throw ssn::ConfigError("--checkpoint and --manifest are required");
      fs::create_directories(out);
      const auto ckpt = ssn::load_checkpoint(ev_checkpoint);
      if (!ckpt.meta.present)
        throw ssn::FormatError("checkpoint lacks the __meta__ record");
      ssn::ModelConfig mcfg{ckpt.meta.num_classes, ckpt.meta.in_channels,
                            ckpt.meta.dropout_p};
      ssn::Rng mrng = ssn::make_rng(0);
      ssn::Model<float> model(ssn::parse_arch(ckpt.meta.arch), mcfg, mrng,
                              ssn::parse_stem_kind(ckpt.meta.stem));
      ssn::load_into(model, ckpt);

      const auto manifest = ssn::read_manifest(ev_manifest);
      std::vector<ssn::ManifestEntry> entries;
      if (!ev_split.empty()) {
        const auto splits = ssn::read_splits(ev_split);
        if (ev_fold >= splits.size())
          throw ssn::ConfigError("--fold out of range for " + ev_split);
        entries = ssn::split_entries(manifest, splits[ev_fold]).second;
      } else {
        entries = manifest.entries;
      }
      const auto samples = load_samples(entries, nullptr);
      const auto result =
          ssn::evaluate(model, samples, ckpt.meta.num_classes, nullptr);
      const auto rep = ssn::per_class_metrics(result.cm);
      write_metrics_files(out, result.cm, rep);
      std::cout << ssn::metrics_to_table(rep);
      return 0;
    }

    if (app.got_subcommand(predict)) {
      if (pr_checkpoint.empty() || pr_volume.empty())
        throw ssn::ConfigError("--checkpoint and --volume are required");
      const auto ckpt = ssn::load_checkpoint(pr_checkpoint);
      if (!ckpt.meta.present)
        throw ssn::FormatError("checkpoint lacks the __meta__ record");
      if (!pr_arch.empty() &&
          ssn::parse_arch(pr_arch) != ssn::parse_arch(ckpt.meta.arch))
        throw ssn::ConfigError("checkpoint holds a " + ckpt.meta.arch +
                               " model, not " + pr_arch);
      ssn::ModelConfig mcfg{ckpt.meta.num_classes, ckpt.meta.in_channels,
                            ckpt.meta.dropout_p};
      ssn::Rng mrng = ssn::make_rng(0);
      ssn::Model<float> model(ssn::parse_arch(ckpt.meta.arch), mcfg, mrng,
                              ssn::parse_stem_kind(ckpt.meta.stem));
      ssn::load_into(model, ckpt);

      ssn::Volume v = ssn::read_nifti(pr_volume);
      if (pr_normalize) v = ssn::percentile_normalize(v);
      if (pr_resample > 0) v = ssn::resample_isotropic(v, pr_resample);
      ssn::Tensor<float> x = ssn::volume_to_tensor<float>(v);
      x = x.reshaped({1, 1, v.d, v.h, v.w});
      const ssn::Tensor<float> logits = model.forward(nullptr, x, false);
      const auto probs = ssn::softmax_probs(logits)[0];
      const std::size_t label = ssn::argmax_row(logits, 0);
      std::cout << ordered_json{{"label", label}, {"probs", probs}}.dump() << "\n";
      return 0;
    }

    if (app.got_subcommand(params)) {
      if (pa_arch.empty()) throw ssn::ConfigError("--arch is required");
      ssn::ModelConfig mcfg{pa_classes, pa_in_channels, 0.3};
      ssn::Rng mrng = ssn::make_rng(seed);
      std::optional<ssn::StemKind> stem_ov;
      if (!pa_stem.empty()) stem_ov = ssn::parse_stem_kind(pa_stem);
      ssn::Model<float> model(ssn::parse_arch(pa_arch), mcfg, mrng, stem_ov);
      for (const auto& [name, count] : model.parameter_breakdown())
        std::cout << name << " " << count << "\n";
      std::cout << "total " << model.parameter_count() << "\n";
      return 0;
    }

    throw ssn::ConfigError("no subcommand given");
  } catch (const ssn::ConfigError& e) {
    return map_error(e, 1);
  } catch (const ssn::FormatError& e) {
    return map_error(e, 2);
  } catch (const ssn::DataError& e) {
    return map_error(e, 2);
  } catch (const ssn::SurgeryError& e) {
    return map_error(e, 2);
  } catch (const std::exception& e) {
    return map_error(e, 3);
  }
}
