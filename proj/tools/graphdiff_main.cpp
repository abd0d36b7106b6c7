#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "graphdiff/config.hpp"
#include "graphdiff/diffusion.hpp"
#include "graphdiff/eval.hpp"
#include "graphdiff/runio.hpp"

namespace fs = std::filesystem;
using namespace graphdiff;

namespace {

struct LoadedRun {
  RunConfig cfg;
  Corpus full;
  Corpus train;
  Corpus heldout;
};

LoadedRun load_run(const std::string& config_path) {
  LoadedRun run;
  run.cfg = load_run_config(config_path);
  run.full = corpus_from_config(run.cfg);
  if (run.full.scenes.empty()) throw ConfigError("corpus is empty");
  finalize_config(run.cfg, run.full.image_size);
  if (run.cfg.corpus.holdout > 0) {
    auto [train, heldout] = split_holdout(run.full, run.cfg.corpus.holdout);
    run.train = std::move(train);
    run.heldout = std::move(heldout);
  } else {
    run.train = run.full;
  }
  return run;
}

std::string stage_dir(const RunConfig& cfg, const std::string& stage) {
  return (fs::path(cfg.output_dir) / stage).string();
}

runio::StageManifest require_stage(const RunConfig& cfg, const std::string& stage) {
  auto manifest = runio::read_stage_manifest(stage_dir(cfg, stage));
  if (!manifest)
    throw DependencyError("missing " + stage + " checkpoint in " + stage_dir(cfg, stage) +
                          "; run `graphdiff " +
                          (stage == "autoencoder" ? std::string("train-ae") : stage) +
                          "` first");
  return *manifest;
}

void write_effective(const RunConfig& cfg, const Vocab& vocab) {
  runio::ensure_dir(cfg.output_dir);
  write_effective_config(cfg, (fs::path(cfg.output_dir) / "effective_config.json").string());
  save_vocab((fs::path(cfg.output_dir) / "vocab.json").string(), vocab);
}

// training latents paired with their scene graphs, encoded once and cached
std::vector<nn::Matrix> train_latents(const RunConfig& cfg, const Corpus& train,
                                      const AEModel& ae, const std::string& ae_id) {
  const std::string cache = (fs::path(stage_dir(cfg, "autoencoder")) / "latents_train.bin").string();
  if (fs::exists(cache)) {
    LatentCache lc = read_latent_cache(cache);
    if (lc.source_id == ae_id && lc.codes.size() == train.size()) return lc.codes;
  }
  std::vector<nn::Matrix> codes = encode_corpus_latents(train, ae.params, cfg.seed);
  write_latent_cache(cache, codes, ae.params.cfg.latent_size(), ae.params.cfg.latent_size(),
                     ae.params.cfg.latent_ch, ae_id);
  return codes;
}

void load_model_from_stage(const RunConfig& cfg, const std::string& stage,
                           nn::ParamStore& store) {
  const runio::StageManifest manifest = require_stage(cfg, stage);
  nn::Checkpoint ck = runio::load_stage_checkpoint(stage_dir(cfg, stage), manifest);
  nn::load_into_store(ck, store, "param.");
}

int cmd_synth_data(const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec = load_synth_spec(spec_path);
  Corpus corpus = generate_synthetic(spec);
  write_corpus(corpus, out_dir);
  std::cout << "wrote " << corpus.size() << " scenes to " << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config_path) {
  LoadedRun run = load_run(config_path);
  write_effective(run.cfg, run.train.vocab);
  PretrainModel model(run.train.vocab, run.cfg.pretrain);
  PretrainRunResult res = pretrain_run(run.train, model, stage_dir(run.cfg, "pretrain"));
  std::cout << "pretrain complete at step " << run.cfg.pretrain.steps << ", checkpoint "
            << res.checkpoint_id << "\n";
  return 0;
}

int cmd_train_ae(const std::string& config_path) {
  LoadedRun run = load_run(config_path);
  write_effective(run.cfg, run.train.vocab);
  AEModel model(run.cfg.autoencoder);
  AERunResult res = ae_train_run(run.train, model, stage_dir(run.cfg, "autoencoder"));
  std::cout << "autoencoder complete at step " << run.cfg.autoencoder.steps << ", checkpoint "
            << res.checkpoint_id << "\n";
  return 0;
}

int cmd_train_diffusion(const std::string& config_path) {
  LoadedRun run = load_run(config_path);
  write_effective(run.cfg, run.train.vocab);
  const runio::StageManifest pre_m = require_stage(run.cfg, "pretrain");
  const runio::StageManifest ae_m = require_stage(run.cfg, "autoencoder");

  PretrainModel enc(run.train.vocab, run.cfg.pretrain);
  load_model_from_stage(run.cfg, "pretrain", enc.store);
  AEModel ae(run.cfg.autoencoder);
  load_model_from_stage(run.cfg, "autoencoder", ae.store);

  std::vector<nn::Matrix> latents = train_latents(run.cfg, run.train, ae, ae_m.id);
  std::vector<const SceneGraph*> graphs;
  graphs.reserve(run.train.size());
  for (const auto& scene : run.train.scenes) graphs.push_back(&scene.graph);

  DiffusionModel model(run.cfg.diffusion);
  DiffusionRunResult res = diffusion_train_run(
      latents, graphs, model, enc, stage_dir(run.cfg, "diffusion"),
      {{"pretrain", pre_m.id}, {"autoencoder", ae_m.id}});
  std::cout << "diffusion complete at step " << run.cfg.diffusion.steps << ", checkpoint "
            << res.checkpoint_id << "\n";
  return 0;
}

int cmd_sample(const std::string& config_path, const std::string& graph_path, int count,
               std::uint64_t seed, std::string out_dir) {
  RunConfig cfg = load_run_config(config_path);
  const runio::StageManifest pre_m = require_stage(cfg, "pretrain");
  const runio::StageManifest ae_m = require_stage(cfg, "autoencoder");
  const runio::StageManifest diff_m = require_stage(cfg, "diffusion");
  if (diff_m.upstream.at("pretrain") != pre_m.id ||
      diff_m.upstream.at("autoencoder") != ae_m.id)
    throw DependencyError(
        "diffusion checkpoint was trained against different upstream checkpoints; retrain");
  Vocab vocab = vocab_from_config(cfg);

  SceneDoc doc = load_scene_doc(graph_path);
  if (doc.vocab_path) {
    const fs::path base = fs::path(graph_path).parent_path();
    vocab = load_vocab((base / *doc.vocab_path).string());
  }
  SceneGraph graph = graph_from_doc(doc, vocab);
  if (graph.num_triplets() == 0)
    throw std::invalid_argument("sample: graph has no triplets to condition on");

  // image size is pinned by the synthetic spec or the trained checkpoints
  int image_size = cfg.corpus.synthetic ? cfg.corpus.synthetic->image_size : 0;
  if (image_size == 0) {
    // fall back to the autoencoder section written into the effective config
    image_size = cfg.autoencoder.image_size;
    if (image_size == 0) throw ConfigError("cannot determine the image resolution");
  }
  finalize_config(cfg, image_size);

  PretrainModel enc(vocab, cfg.pretrain);
  load_model_from_stage(cfg, "pretrain", enc.store);
  AEModel ae(cfg.autoencoder);
  load_model_from_stage(cfg, "autoencoder", ae.store);
  DiffusionModel model(cfg.diffusion);
  load_model_from_stage(cfg, "diffusion", model.store);

  if (out_dir.empty()) {
    out_dir = (fs::path(cfg.output_dir) / "samples" /
               (fs::path(graph_path).stem().string() + "_s" + std::to_string(seed)))
                  .string();
  }
  runio::ensure_dir(out_dir);
  std::vector<Image> images = generate(graph, enc, ae, model, count, seed);
  char name[32];
  for (int i = 0; i < static_cast<int>(images.size()); ++i) {
    std::snprintf(name, sizeof(name), "sample_%03d.ppm", i);
    write_ppm((fs::path(out_dir) / name).string(), images[i]);
  }
  std::ostringstream manifest;
  manifest << "{\"checkpoints\":{\"autoencoder\":\"" << ae_m.id << "\",\"diffusion\":\""
           << diff_m.id << "\",\"pretrain\":\"" << pre_m.id << "\"},"
           << "\"conditioning_mode\":\"" << cfg.conditioning_mode << "\","
           << "\"count\":" << count << ","
           << "\"graph\":\"" << graph_path << "\","
           << "\"seed\":" << seed << ","
           << "\"steps\":" << cfg.diffusion.T << "}";
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << manifest.str() << "\n";
  std::cout << "wrote " << images.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_edit(const std::string& graph_path, const std::string& op, int position, int subject,
             int object, const std::string& category, const std::string& relation,
             const std::string& vocab_path, const std::string& out_path) {
  SceneDoc doc = load_scene_doc(graph_path);
  Vocab vocab;
  if (!vocab_path.empty()) {
    vocab = load_vocab(vocab_path);
  } else if (doc.vocab_path) {
    const fs::path base = fs::path(graph_path).parent_path();
    vocab = load_vocab((base / *doc.vocab_path).string());
  } else {
    throw ConfigError("edit needs --vocab or a vocab reference in the document");
  }
  SceneGraph graph = graph_from_doc(doc, vocab);

  SceneGraph edited;
  if (op == "replace-object") {
    const int cat = vocab.object_index(category);
    if (cat < 0) throw std::invalid_argument("unknown object category '" + category + "'");
    edited = replace_object(graph, position, cat, vocab);
  } else if (op == "replace-relation") {
    const int rel = vocab.relation_index(relation);
    if (rel < 0) throw std::invalid_argument("unknown relation category '" + relation + "'");
    edited = replace_relation(graph, position, rel, vocab);
  } else if (op == "add") {
    const int rel = vocab.relation_index(relation);
    if (rel < 0) throw std::invalid_argument("unknown relation category '" + relation + "'");
    edited = add_triplet(graph, subject, rel, object, vocab);
  } else if (op == "remove") {
    edited = remove_triplet(graph, position);
  } else {
    throw ConfigError("unknown edit op '" + op +
                      "' (expected replace-object|replace-relation|add|remove)");
  }

  SceneDoc out = doc_from_graph(edited, vocab);
  out.boxes = doc.boxes;
  out.image_path = doc.image_path;
  out.vocab_path = doc.vocab_path;
  save_scene_doc(out_path, out);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_retrieve(const std::string& config_path, const std::string& corpus_manifest) {
  RunConfig cfg = load_run_config(config_path);
  Corpus corpus;
  if (!corpus_manifest.empty()) {
    corpus = load_annotations(corpus_manifest);
    finalize_config(cfg, corpus.image_size);
  } else {
    LoadedRun run = load_run(config_path);
    cfg = run.cfg;
    corpus = run.cfg.corpus.holdout > 0 ? run.heldout : run.full;
  }
  if (corpus.size() < 2) throw std::invalid_argument("retrieve: need at least two scenes");
  if (corpus.vocab.num_objects() == 0) throw std::invalid_argument("retrieve: empty vocab");

  PretrainModel model(corpus.vocab, cfg.pretrain);
  load_model_from_stage(cfg, "pretrain", model.store);

  std::vector<std::size_t> idx(corpus.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  nn::Matrix g = corpus_graph_embeddings(model, corpus, idx);
  nn::Matrix im = corpus_image_embeddings(model, corpus, idx);
  std::printf("graph_to_image_top1 %.6f\n",
              retrieval_accuracy(g, im, RetrievalDirection::GraphToImage));
  std::printf("image_to_graph_top1 %.6f\n",
              retrieval_accuracy(g, im, RetrievalDirection::ImageToGraph));
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& generated_dir,
                 const std::string& reference_manifest, const std::string& extractor_path,
                 std::string out_path) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(generated_dir)) {
    if (entry.path().extension() == ".ppm") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2)
    throw std::invalid_argument("evaluate: need at least two generated .ppm images in " +
                                generated_dir);
  std::vector<Image> generated;
  generated.reserve(files.size());
  for (const auto& f : files) generated.push_back(read_ppm(f));

  Corpus reference = load_annotations(reference_manifest);
  if (reference.size() < 2)
    throw std::invalid_argument("evaluate: reference corpus needs at least two scenes");

  ExtractorConfig ecfg;
  ecfg.image_size = reference.image_size;
  ecfg.classes = reference.vocab.num_objects();
  if (!config_path.empty()) {
    RunConfig cfg = load_run_config(config_path);
    ecfg.seed = cfg.seed;
  }
  Extractor ext(ecfg);
  double gate_accuracy = -1.0;
  if (!extractor_path.empty()) {
    load_extractor(ext, nn::load_checkpoint(extractor_path));
  } else {
    CropSet crops = object_canvases(reference);
    gate_accuracy = train_extractor(ext, crops);
    if (gate_accuracy < 0.95)
      throw std::invalid_argument(
          "evaluate: extractor held-out accuracy " + std::to_string(gate_accuracy) +
          " is below the 0.95 acceptance gate; it cannot back IS/FID");
  }

  std::vector<const Image*> gen_ptrs, ref_ptrs;
  for (const Image& img : generated) gen_ptrs.push_back(&img);
  for (const auto& scene : reference.scenes) ref_ptrs.push_back(&scene.image);
  for (const Image* img : gen_ptrs) {
    if (img->h != reference.image_size || img->w != reference.image_size)
      throw std::invalid_argument("evaluate: generated image resolution mismatch");
  }

  const int splits = std::min<std::size_t>(10, generated.size());
  InceptionScore is = inception_score(classify(gen_ptrs, ext), splits);
  const double fid_value = fid(extract_features(gen_ptrs, ext), extract_features(ref_ptrs, ext));

  std::string sampling_ids;
  {
    std::ifstream mf(fs::path(generated_dir) / "manifest.json");
    if (mf) {
      std::stringstream ss;
      ss << mf.rdbuf();
      const std::string text = ss.str();
      const auto pos = text.find("\"checkpoints\":");
      if (pos != std::string::npos) {
        const auto end = text.find('}', pos);
        sampling_ids = text.substr(pos + 14, end - pos - 13);
      }
    }
  }

  std::ostringstream report;
  report << "{";
  if (!sampling_ids.empty()) report << "\"checkpoints\":" << sampling_ids << ",";
  report << "\"extractor_id\":\"" << ext.id << "\","
         << "\"extractor_heldout_accuracy\":" << gate_accuracy << ","
         << "\"generated_count\":" << generated.size() << ","
         << "\"generated_dir\":\"" << generated_dir << "\","
         << "\"metrics\":{\"fid\":" << fid_value << ",\"inception_score_mean\":" << is.mean
         << ",\"inception_score_std\":" << is.std << ",\"is_splits\":" << splits << "},"
         << "\"reference_count\":" << reference.size() << ","
         << "\"reference_manifest\":\"" << reference_manifest << "\"}";
  if (out_path.empty()) out_path = (fs::path(generated_dir) / "metrics_report.json").string();
  std::ofstream rf(out_path);
  rf << report.str() << "\n";
  std::printf("inception_score %.4f +/- %.4f\n", is.mean, is.std);
  std::printf("fid %.4f\n", fid_value);
  std::cout << "report written to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene-graph conditioned latent diffusion: training, sampling, evaluation"};
  app.require_subcommand(1);

  std::string config_path, spec_path, out_dir, graph_path, corpus_manifest;
  std::string generated_dir, reference_manifest, extractor_path, out_path;
  std::string op, category, relation, vocab_path;
  int count = 4, position = 0, subject = 0, object = 0;
  std::uint64_t seed = 0;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic corpus");
  synth->add_option("--spec", spec_path, "synthetic corpus spec (JSON)")->required();
  synth->add_option("--out", out_dir, "output corpus directory")->required();

  auto* pre = app.add_subcommand("pretrain", "masked contrastive pretraining");
  pre->add_option("--config", config_path, "run config")->required();

  auto* tae = app.add_subcommand("train-ae", "train the image autoencoder");
  tae->add_option("--config", config_path, "run config")->required();

  auto* tdiff = app.add_subcommand("train-diffusion", "train the conditional diffusion model");
  tdiff->add_option("--config", config_path, "run config")->required();

  auto* sample = app.add_subcommand("sample", "generate images for a scene graph");
  sample->add_option("--config", config_path, "run config")->required();
  sample->add_option("--graph", graph_path, "scene graph document")->required();
  sample->add_option("--count", count, "number of images");
  sample->add_option("--seed", seed, "sampling seed");
  sample->add_option("--out", out_dir, "output directory (default under the run dir)");

  auto* edit = app.add_subcommand("edit", "graph surgery on a scene document");
  edit->add_option("--graph", graph_path, "scene graph document")->required();
  edit->add_option("--op", op, "replace-object|replace-relation|add|remove")->required();
  edit->add_option("--out", out_path, "output document path")->required();
  edit->add_option("--position", position, "object/triplet position");
  edit->add_option("--subject", subject, "subject index (add)");
  edit->add_option("--object", object, "object index (add)");
  edit->add_option("--category", category, "object category name");
  edit->add_option("--relation", relation, "relation name");
  edit->add_option("--vocab", vocab_path, "vocab file (overrides the document)");

  auto* retr = app.add_subcommand("retrieve", "graph/image retrieval accuracies");
  retr->add_option("--config", config_path, "run config")->required();
  retr->add_option("--corpus", corpus_manifest, "corpus manifest (default: config holdout)");

  auto* eval = app.add_subcommand("evaluate", "IS/FID metrics report");
  eval->add_option("--config", config_path, "run config (seeds the extractor)");
  eval->add_option("--generated", generated_dir, "directory of generated .ppm images")
      ->required();
  eval->add_option("--reference", reference_manifest, "reference corpus manifest")->required();
  eval->add_option("--extractor", extractor_path, "pretrained extractor checkpoint");
  eval->add_option("--out", out_path, "metrics report path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth_data(spec_path, out_dir);
    if (pre->parsed()) return cmd_pretrain(config_path);
    if (tae->parsed()) return cmd_train_ae(config_path);
    if (tdiff->parsed()) return cmd_train_diffusion(config_path);
    if (sample->parsed()) return cmd_sample(config_path, graph_path, count, seed, out_dir);
    if (edit->parsed())
      return cmd_edit(graph_path, op, position, subject, object, category, relation,
                      vocab_path, out_path);
    if (retr->parsed()) return cmd_retrieve(config_path, corpus_manifest);
    if (eval->parsed())
      return cmd_evaluate(config_path, generated_dir, reference_manifest, extractor_path,
                          out_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 3;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
