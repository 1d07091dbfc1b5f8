// woodid: command-line front end for the registry, training, evaluation and
// field-service pipeline.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "woodid/bundle.hpp"
#include "woodid/digest.hpp"
#include "woodid/evaluation.hpp"
#include "woodid/registry.hpp"
#include "woodid/service.hpp"
#include "woodid/synth.hpp"
#include "woodid/training.hpp"
#include "woodid/training_config.hpp"

namespace fs = std::filesystem;
using namespace woodid;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

json read_json(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidRecord, path.string() + ": " + e.what());
  }
}

// The registry is looked up next to the manifest unless given explicitly.
fs::path registry_dir_for(const std::string& explicit_dir, const fs::path& manifest) {
  if (!explicit_dir.empty()) return explicit_dir;
  const fs::path guess = manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path();
  if (fs::exists(guess / "specimens.jsonl")) return guess;
  throw Error(ErrorKind::BadConfig, "no registry next to " + manifest.string() + "; pass --registry");
}

SplitRatios parse_ratios(const std::string& text) {
  SplitRatios r{};
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf", &r[0], &r[1], &r[2]) != 3)
    throw Error(ErrorKind::BadRatios, "ratios must look like 0.7,0.15,0.15");
  return r;
}

// synth ------------------------------------------------------------------------

int cmd_synth(const fs::path& out, const SynthCorpusOptions& opts) {
  const SynthCorpus corpus = write_synth_corpus(out, opts);
  std::cout << "wrote " << opts.n_classes * opts.images_per_class << " images in " << opts.n_classes
            << " classes\n  catalog: " << corpus.catalog.string() << "\n  records: " << corpus.records.string()
            << "\n";
  return 0;
}

// ingest / curate / split / validate ------------------------------------------------

int cmd_ingest(const fs::path& catalog_path, const fs::path& records_path, const fs::path& out,
               const std::string& accept) {
  const ClassCatalog catalog = ClassCatalog::load(catalog_path);
  auto records = load_specimen_records(records_path);
  fs::create_directories(out);
  // Image references are stored relative to the registry directory.
  const fs::path base = fs::absolute(records_path).parent_path();
  const fs::path reg = fs::absolute(out);
  for (auto& s : records)
    for (auto& img : s.images) {
      fs::path p = img.file_ref;
      if (p.is_relative()) p = base / p;
      img.file_ref = fs::relative(p.lexically_normal(), reg).generic_string();
    }
  Registry registry = ingest(catalog, records, decoding_probe(reg));
  if (!accept.empty()) {
    const CurationStatus status = parse_curation_status(accept);
    for (const auto& [id, s] : registry.specimens()) registry.set_status(id, status);
  }
  registry.save(out);
  std::cout << "ingested " << registry.specimens().size() << " specimens, " << registry.images().size()
            << " images into " << out.string() << "\n";
  return 0;
}

int cmd_curate(const fs::path& dir, const std::vector<std::string>& ids, const std::string& status_text,
               bool all_pending) {
  Registry registry = Registry::load(dir);
  const CurationStatus status = parse_curation_status(status_text);
  std::vector<std::string> targets = ids;
  if (all_pending)
    for (const auto& [id, s] : registry.specimens())
      if (s.curation_status == CurationStatus::Pending) targets.push_back(id);
  for (const auto& id : targets) registry.set_status(id, status);
  registry.save(dir);
  std::cout << "set " << targets.size() << " specimen(s) to " << to_string(status) << "\n";
  return 0;
}

int cmd_split(const fs::path& dir, const fs::path& out, std::uint64_t seed, const std::string& ratios) {
  const Registry registry = Registry::load(dir);
  const SplitManifest manifest = stratified_split(registry, parse_ratios(ratios), seed);
  manifest.save(out);
  std::printf("%-24s %6s %6s %6s\n", "class", "train", "valid", "test");
  for (const auto& [label, c] : manifest.per_class_counts) std::printf("%-24s %6d %6d %6d\n", label.c_str(), c[0], c[1], c[2]);
  std::cout << "manifest " << out.string() << " (digest " << manifest.digest().substr(0, 12) << ")\n";
  return 0;
}

int cmd_validate(const std::string& registry_opt, const fs::path& manifest_path) {
  const Registry registry = Registry::load(registry_dir_for(registry_opt, manifest_path));
  const ValidationReport report = validate_manifest(SplitManifest::load(manifest_path), registry);
  std::cout << report.to_json().dump(2) << "\n";
  return report.valid() ? 0 : 1;
}

// patches preview ----------------------------------------------------------------

int cmd_preview(const fs::path& image_path, std::uint64_t seed, const fs::path& out, const std::string& config) {
  PatchSpec spec;
  AugmentationPolicy policy;
  if (!config.empty()) {
    const TrainingConfig cfg = TrainingConfig::load(config);
    spec = cfg.patch_spec;
    policy = cfg.augmentation;
  }
  spec.validate();
  const Image image = read_image(image_path);
  fs::create_directories(out);
  Rng rng(seed);
  const Image band = extract_patch(image, spec, rng);
  const Image resized = resize_patch(band, spec.target_width, spec.target_height);
  write_png(out / "random_band.png", band);
  write_png(out / "random_resized.png", resized);
  for (int i = 0; i < 4; ++i) {
    Rng aug_rng(derive_seed(seed, "preview", static_cast<std::uint64_t>(i)));
    write_png(out / ("augmented_" + std::to_string(i) + ".png"), augment(resized, policy, aug_rng));
  }
  write_png(out / "center.png", evaluation_patches(image, spec, SamplingMode::Center).front());
  const auto tiles = evaluation_patches(image, spec, SamplingMode::Tiled);
  for (std::size_t i = 0; i < tiles.size(); ++i) write_png(out / ("tile_" + std::to_string(i) + ".png"), tiles[i]);
  std::cout << "wrote previews to " << out.string() << " (" << tiles.size() << " tiles)\n";
  return 0;
}

// train / export-bundle -----------------------------------------------------------

int cmd_train(const fs::path& config_path, const fs::path& manifest_path, const std::string& registry_opt,
              const fs::path& out) {
  const TrainingConfig cfg = TrainingConfig::load(config_path);
  const fs::path reg_dir = registry_dir_for(registry_opt, manifest_path);
  const Registry registry = Registry::load(reg_dir);
  const SplitManifest manifest = SplitManifest::load(manifest_path);
  if (static_cast<int>(registry.catalog().size()) != cfg.model.n_classes)
    throw Error(ErrorKind::BadConfig, "model.n_classes is " + std::to_string(cfg.model.n_classes) +
                                          " but the catalog has " + std::to_string(registry.catalog().size()) +
                                          " classes");
  const fs::path image_root = cfg.image_root.empty() ? reg_dir : fs::path(cfg.image_root);

  TrainingData data;
  data.train = split_images(registry, manifest, Split::Train, image_root);
  data.valid = split_images(registry, manifest, Split::Valid, image_root);
  data.patch_spec = cfg.patch_spec;
  data.augmentation = cfg.augmentation;
  data.eval_mode = cfg.eval_mode;
  data.seed = cfg.seed;

  auto model = build_model<float>(cfg.model);
  fs::create_directories(out);
  cfg.save(out / "config.json");

  TrainOptions options;
  options.checkpoint_dir = out / "checkpoints";
  options.manifest_digest = manifest.digest();
  options.on_epoch = [](const EpochRecord& r) {
    std::printf("%s epoch %2d  train_loss %.4f  valid_loss %.4f  valid_top1 %.4f\n", r.stage.c_str(), r.epoch,
                r.train_loss, r.valid_loss, r.valid_top1);
    std::fflush(stdout);
  };
  std::printf("training on %zu images, validating on %zu\n", data.train.size(), data.valid.size());

  std::vector<StageResult> results;
  json history = json::array();
  try {
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
      const StageConfig& stage = cfg.stages[i] == "stage1" ? cfg.schedule.stage1 : cfg.schedule.stage2;
      results.push_back(train_stage(*model, data, stage, static_cast<int>(i), cfg.schedule, options));
      for (const auto& r : results.back().history) history.push_back(r.to_json());
      write_text(out / "history.json", json{{"history", history}}.dump(2) + "\n");
    }
  } catch (const DivergedLossError& e) {
    const Checkpoint& last = e.last_good();
    if (last.weights.head)
      save_checkpoint(out / "last_good.ckpt", cfg.model, last.weights, last.record, options.manifest_digest,
                      cfg.patch_spec, cfg.eval_mode);
    std::cerr << "error: DivergedLoss: " << e.what() << "\n  last good checkpoint: "
              << (last.weights.head ? (out / "last_good.ckpt").string() : last.file.string()) << "\n";
    return 3;
  }

  const Checkpoint best = select_checkpoint(results);
  fs::copy_file(best.file, out / "best.ckpt", fs::copy_options::overwrite_existing);
  json summary = {{"history", history}, {"selected", best.record.to_json()},
                  {"selected_file", best.file.filename().string()}};
  write_text(out / "history.json", summary.dump(2) + "\n");
  std::printf("selected %s epoch %d (valid_top1 %.4f) -> %s\n", best.record.stage.c_str(), best.record.epoch,
              best.record.valid_top1, (out / "best.ckpt").c_str());
  return 0;
}

int cmd_export_bundle(const fs::path& checkpoint_path, const fs::path& catalog_path, const fs::path& out,
                      const std::string& archetype_root) {
  const CheckpointFile ckpt = load_checkpoint(checkpoint_path);
  auto model = model_from_checkpoint(ckpt);
  const ClassCatalog catalog = ClassCatalog::load(catalog_path);
  BundleOptions options;
  options.patch_spec = ckpt.patch_spec;
  options.eval_mode = ckpt.eval_mode;
  options.archetype_root = archetype_root.empty() ? fs::absolute(catalog_path).parent_path() : fs::path(archetype_root);
  save_bundle(*model, catalog, ckpt.manifest_digest, out, options);
  const DeploymentBundle check = load_bundle(out);
  self_check(check);
  std::cout << "bundle " << out.string() << " version " << check.version() << ", " << check.catalog.size()
            << " classes, " << check.archetypes.size() << " archetypes\n";
  return 0;
}

// eval ------------------------------------------------------------------------------

int cmd_eval_lab(const fs::path& bundle_path, const fs::path& manifest_path, const std::string& registry_opt,
                 const std::string& split, const std::string& out) {
  const DeploymentBundle bundle = load_bundle(bundle_path);
  const fs::path reg_dir = registry_dir_for(registry_opt, manifest_path);
  const Registry registry = Registry::load(reg_dir);
  const SplitManifest manifest = SplitManifest::load(manifest_path);
  if (registry.catalog().labels() != bundle.catalog.labels())
    throw Error(ErrorKind::ClassListMismatch, "bundle and registry catalogs differ");
  if (!bundle.manifest_digest.empty() && bundle.manifest_digest != manifest.digest())
    std::cerr << "warning: bundle was trained on a different manifest\n";
  const auto images = split_images(registry, manifest, parse_split(split), reg_dir);
  const EvalSummary ev = evaluate_images(*bundle.model, images, file_loader(), bundle.patch_spec, bundle.eval_mode);
  std::vector<int> labels;
  for (const auto& img : images) labels.push_back(img.label);
  LabReport report = lab_report(ev.probabilities, labels, bundle.catalog.labels());
  report.manifest_digest = manifest.digest();
  report.bundle_version = bundle.version();
  std::cout << report.table();
  if (!out.empty()) write_text(out, report.to_json().dump(2) + "\n");
  return 0;
}

int cmd_eval_field(const fs::path& records, const std::string& similarity, const std::string& bundle_path,
                   const std::string& out) {
  const auto recs = read_field_records(records);
  const SimilarityTable table = similarity.empty() ? SimilarityTable::defaults()
                                                   : SimilarityTable::from_json(read_json(similarity));
  std::vector<std::string> labels;
  if (!bundle_path.empty()) labels = load_bundle(bundle_path).catalog.labels();
  const FieldReport report = field_summary(recs, table, labels);
  std::cout << report.table();
  if (!out.empty()) write_text(out, report.to_json().dump(2) + "\n");
  return 0;
}

int cmd_eval_gap(const fs::path& lab, const fs::path& field, const std::string& out) {
  const GapReport gap = lab_field_gap(LabReport::from_json(read_json(lab)), FieldReport::from_json(read_json(field)));
  std::cout << gap.table();
  if (!out.empty()) write_text(out, gap.to_json().dump(2) + "\n");
  return 0;
}

// serve / export-records ----------------------------------------------------------------

int cmd_serve(ServiceOptions options) {
  options = options.with_env_overrides();
  const ListenAddress address = parse_listen_address(options.listen);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto service = open_service(options);
  HttpServer server(*service, options.static_dir);
  server.bind(address);
  std::cout << "serving bundle " << service->bundle().version() << " (" << service->bundle().catalog.size()
            << " classes) on http://" << address.host << ":" << server.port() << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service->store().snapshot();
  return 0;
}

int cmd_export_records(const fs::path& store_dir, const std::string& session, bool history, const std::string& out) {
  Store store(store_dir);
  const std::string text = format_field_records(store.records(session, history));
  if (out.empty())
    std::cout << text;
  else
    write_text(out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wood identification toolkit: registry, training, evaluation and field service"};
  app.require_subcommand(1);
  std::function<int()> action;

  // synth
  auto* synth = app.add_subcommand("synth", "Write a procedural texture corpus");
  std::string synth_out;
  SynthCorpusOptions synth_opts;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", synth_opts.n_classes, "Number of texture classes")->capture_default_str();
  synth->add_option("--per-class", synth_opts.images_per_class, "Images per class")->capture_default_str();
  synth->add_option("--width", synth_opts.width)->capture_default_str();
  synth->add_option("--height", synth_opts.height)->capture_default_str();
  synth->add_option("--seed", synth_opts.seed)->capture_default_str();
  synth->callback([&] { action = [&] { return cmd_synth(synth_out, synth_opts); }; });

  // init-backbone
  auto* init = app.add_subcommand("init-backbone", "Write a randomly initialised ResNet34 backbone archive");
  std::string init_out;
  std::uint64_t init_seed = 0;
  init->add_option("--out", init_out)->required();
  init->add_option("--seed", init_seed)->capture_default_str();
  init->callback([&] {
    action = [&] {
      write_random_backbone(init_out, init_seed);
      std::cout << "wrote " << init_out << " (not pretrained)\n";
      return 0;
    };
  });

  // ingest
  auto* ing = app.add_subcommand("ingest", "Build a registry from a catalog and specimen records");
  std::string ing_catalog, ing_records, ing_out, ing_accept;
  ing->add_option("--catalog", ing_catalog)->required();
  ing->add_option("--records", ing_records, "Newline-delimited specimen records")->required();
  ing->add_option("--out", ing_out, "Registry directory")->required();
  ing->add_option("--set-status", ing_accept, "Curation status applied to every ingested specimen");
  ing->callback([&] { action = [&] { return cmd_ingest(ing_catalog, ing_records, ing_out, ing_accept); }; });

  // curate
  auto* cur = app.add_subcommand("curate", "Set the curation status of specimens");
  std::string cur_registry, cur_status;
  std::vector<std::string> cur_ids;
  bool cur_all = false;
  cur->add_option("--registry", cur_registry)->required();
  cur->add_option("--specimen", cur_ids, "Specimen id (repeatable)");
  cur->add_flag("--all-pending", cur_all, "Apply to every pending specimen");
  cur->add_option("--status", cur_status, "pending|accepted|excluded_atypical|excluded_misidentified")->required();
  cur->callback([&] { action = [&] { return cmd_curate(cur_registry, cur_ids, cur_status, cur_all); }; });

  // split
  auto* spl = app.add_subcommand("split", "Specimen-exclusive stratified split");
  std::string spl_registry, spl_out, spl_ratios = "0.7,0.15,0.15";
  std::uint64_t spl_seed = 0;
  spl->add_option("--registry", spl_registry)->required();
  spl->add_option("--out", spl_out, "Manifest file")->required();
  spl->add_option("--seed", spl_seed)->capture_default_str();
  spl->add_option("--ratios", spl_ratios, "train,valid,test")->capture_default_str();
  spl->callback([&] { action = [&] { return cmd_split(spl_registry, spl_out, spl_seed, spl_ratios); }; });

  // validate
  auto* val = app.add_subcommand("validate", "Check a manifest against its registry");
  std::string val_registry, val_manifest;
  val->add_option("--registry", val_registry, "Defaults to the manifest's directory");
  val->add_option("--manifest", val_manifest)->required();
  val->callback([&] { action = [&] { return cmd_validate(val_registry, val_manifest); }; });

  // patches preview
  auto* patches = app.add_subcommand("patches", "Patch extraction tools");
  patches->require_subcommand(1);
  auto* preview = patches->add_subcommand("preview", "Write sample patches for visual audit");
  std::string pv_image, pv_out, pv_config;
  std::uint64_t pv_seed = 0;
  preview->add_option("--image", pv_image)->required();
  preview->add_option("--seed", pv_seed)->capture_default_str();
  preview->add_option("--out", pv_out)->required();
  preview->add_option("--config", pv_config, "Training config supplying patch and augmentation settings");
  preview->callback([&] { action = [&] { return cmd_preview(pv_image, pv_seed, pv_out, pv_config); }; });

  // train
  auto* tr = app.add_subcommand("train", "Two-stage training with per-epoch checkpoints");
  std::string tr_config, tr_manifest, tr_registry, tr_out;
  tr->add_option("--config", tr_config)->required();
  tr->add_option("--manifest", tr_manifest)->required();
  tr->add_option("--registry", tr_registry, "Defaults to the manifest's directory");
  tr->add_option("--out", tr_out)->required();
  tr->callback([&] { action = [&] { return cmd_train(tr_config, tr_manifest, tr_registry, tr_out); }; });

  // export-bundle
  auto* eb = app.add_subcommand("export-bundle", "Package a checkpoint for field inference");
  std::string eb_ckpt, eb_catalog, eb_out, eb_arch;
  eb->add_option("--checkpoint", eb_ckpt)->required();
  eb->add_option("--catalog", eb_catalog)->required();
  eb->add_option("--out", eb_out)->required();
  eb->add_option("--archetype-root", eb_arch, "Defaults to the catalog's directory");
  eb->callback([&] { action = [&] { return cmd_export_bundle(eb_ckpt, eb_catalog, eb_out, eb_arch); }; });

  // eval
  auto* ev = app.add_subcommand("eval", "Laboratory and field evaluation");
  ev->require_subcommand(1);
  auto* lab = ev->add_subcommand("lab", "Image-level metrics on a held-out split");
  std::string lab_bundle, lab_manifest, lab_registry, lab_split = "test", lab_out;
  lab->add_option("--bundle", lab_bundle)->required();
  lab->add_option("--manifest", lab_manifest)->required();
  lab->add_option("--registry", lab_registry, "Defaults to the manifest's directory");
  lab->add_option("--split", lab_split)->capture_default_str();
  lab->add_option("--out", lab_out, "Structured report file");
  lab->callback([&] { action = [&] { return cmd_eval_lab(lab_bundle, lab_manifest, lab_registry, lab_split, lab_out); }; });
  auto* field = ev->add_subcommand("field", "Specimen-level summary of field records");
  std::string fd_records, fd_similarity, fd_bundle, fd_out;
  field->add_option("--records", fd_records)->required();
  field->add_option("--similarity", fd_similarity, "Similarity groups as {\"group\": [classes]}");
  field->add_option("--bundle", fd_bundle, "Take the class list from a bundle");
  field->add_option("--out", fd_out, "Structured report file");
  field->callback([&] { action = [&] { return cmd_eval_field(fd_records, fd_similarity, fd_bundle, fd_out); }; });
  auto* gap = ev->add_subcommand("gap", "Lab versus field accuracy");
  std::string gap_lab, gap_field, gap_out;
  gap->add_option("--lab", gap_lab)->required();
  gap->add_option("--field", gap_field)->required();
  gap->add_option("--out", gap_out);
  gap->callback([&] { action = [&] { return cmd_eval_gap(gap_lab, gap_field, gap_out); }; });

  // serve
  auto* srv = app.add_subcommand("serve", "Run the local field inference service");
  ServiceOptions srv_opts;
  std::string srv_bundle, srv_store, srv_static;
  srv->add_option("--bundle", srv_bundle, "Overridden by WOODID_BUNDLE");
  srv->add_option("--store", srv_store, "Overridden by WOODID_STORE");
  srv->add_option("--listen", srv_opts.listen, "Loopback host:port; overridden by WOODID_LISTEN")->capture_default_str();
  srv->add_option("--static", srv_static, "Console asset directory; overridden by WOODID_STATIC");
  srv->add_option("--snapshot-every", srv_opts.snapshot_every)->capture_default_str();
  srv->callback([&] {
    action = [&] {
      srv_opts.bundle_path = srv_bundle;
      srv_opts.store_dir = srv_store;
      srv_opts.static_dir = srv_static;
      return cmd_serve(srv_opts);
    };
  });

  // export-records
  auto* er = app.add_subcommand("export-records", "Export field records from a service store");
  std::string er_store, er_session, er_out;
  bool er_history = false;
  er->add_option("--store", er_store)->required();
  er->add_option("--session", er_session, "Only this session");
  er->add_flag("--history", er_history, "Include superseded verdict revisions");
  er->add_option("--out", er_out, "Defaults to stdout");
  er->callback([&] { action = [&] { return cmd_export_records(er_store, er_session, er_history, er_out); }; });

  CLI11_PARSE(app, argc, argv);
  try {
    return action();
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
