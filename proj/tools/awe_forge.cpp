// tools/awe_forge.cpp

// Copyright 2026  The awe-forge authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// awe-forge: synthetic corpora, frame-level representation learners, acoustic
// word embeddings and their same-different evaluation, end to end.

#include "awe/eval.hpp"
#include "awe/pipeline.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

awe::pipe::ExperimentConfig config_or_default(const std::string& config_path) {
  if (config_path.empty()) return awe::pipe::desk_config();
  return awe::pipe::load_config(config_path);
}

int run_synth(const std::string& spec_path, const std::string& out, const std::string& truth_out) {
  awe::synth::CorpusSpec spec;
  if (!spec_path.empty())
    awe::pipe::corpus_from_json(json::parse(awe::io::read_file(spec_path)), spec);
  auto [archive, truth] = awe::synth::generate_corpus(spec);
  awe::feat::save_farc(archive, out);
  awe::synth::save_truth(truth, truth_out);
  std::cout << "wrote " << archive.entries.size() << " utterances to " << out << "\n";
  return 0;
}

int run_features(const std::string& wav_dir, const std::string& out, bool deltas,
                 const std::string& normalize) {
  std::vector<fs::path> wavs;
  for (const auto& entry : fs::directory_iterator(wav_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".wav") wavs.push_back(entry.path());
  std::sort(wavs.begin(), wavs.end());
  if (wavs.empty()) awe::throw_data("no .wav files in " + wav_dir);

  awe::feat::FeatureArchive archive;
  for (const auto& path : wavs) {
    std::string stem = path.stem().string();
    std::string speaker = stem.substr(0, stem.find('_'));
    auto wav = awe::feat::read_wav(path.string());
    auto seq = awe::feat::compute_mfcc(wav, awe::feat::MfccConfig{}, stem, speaker);
    if (deltas) seq = awe::feat::add_deltas(seq);
    archive.entries.push_back(std::move(seq));
  }
  archive = awe::feat::normalize(std::move(archive), awe::feat::parse_normalize_mode(normalize));
  awe::feat::save_farc(archive, out);
  std::cout << "wrote " << archive.entries.size() << " utterances to " << out << "\n";
  return 0;
}

int run_pairs_align(const std::string& pairs_path, const std::string& features_path,
                    const std::string& out, const std::string& metric) {
  auto pairs = awe::align::load_pairs(pairs_path);
  auto archive = awe::feat::load_farc(features_path);
  auto frame_pairs = awe::align::extract_frame_pairs(pairs, archive, awe::align::parse_metric(metric));
  awe::align::save_frame_pairs(frame_pairs, out);
  std::cout << "aligned " << pairs.size() << " segment pairs into " << frame_pairs.size()
            << " frame pairs\n";
  return 0;
}

int run_pairs_simulate(const std::string& truth_path, int budget, double error_rate, int jitter,
                       uint64_t seed, const std::string& out) {
  auto truth = awe::synth::load_truth(truth_path);
  auto pairs = awe::synth::simulate_utd_pairs(truth, budget, error_rate, jitter, seed);
  awe::align::save_pairs(pairs, out);
  std::cout << "wrote " << pairs.size() << " pairs to " << out << "\n";
  return 0;
}

int run_train_frame(const std::string& kind, const std::string& features_path,
                    const std::string& pairs_path, const std::string& out,
                    const std::string& config_path, uint64_t seed) {
  auto cfg = config_or_default(config_path);
  auto archive = awe::feat::load_farc(features_path);

  if (kind == "cpc") {
    auto model_cfg = cfg.cpc.model;
    model_cfg.input_dim = archive.dim();
    awe::Rng init = awe::Rng::derived(seed, "cpc_init");
    auto model = awe::frame::CpcModel::build(model_cfg, init);
    awe::frame::CpcSchedule schedule;
    schedule.batch_utterances = cfg.cpc.batch_utterances;
    schedule.lr = cfg.cpc.lr;
    schedule.max_epochs = cfg.cpc.epochs;
    auto trace = awe::frame::train_cpc(model, archive, schedule, seed);
    awe::frame::save_model(model, out);
    std::cout << "cpc: epoch 1 loss " << trace.loss.front() << ", final " << trace.loss.back()
              << " (" << trace.loss.size() << " epochs)\n";
  } else if (kind == "apc") {
    auto model_cfg = cfg.apc.model;
    model_cfg.input_dim = archive.dim();
    awe::Rng init = awe::Rng::derived(seed, "apc_init");
    auto model = awe::frame::ApcModel::build(model_cfg, init);
    awe::frame::ApcSchedule schedule;
    schedule.lr = cfg.apc.lr;
    schedule.epochs = cfg.apc.epochs;
    auto trace = awe::frame::train_apc(model, archive, schedule, seed);
    awe::frame::save_model(model, out);
    std::cout << "apc: epoch 1 loss " << trace.loss.front() << ", final " << trace.loss.back()
              << "\n";
  } else if (kind == "fcae") {
    if (pairs_path.empty()) awe::throw_usage("train-frame --kind fcae needs --pairs");
    auto pairs = awe::align::load_pairs(pairs_path);
    auto frame_pairs =
        awe::align::extract_frame_pairs(pairs, archive, awe::align::Metric::euclidean);
    auto model_cfg = cfg.fcae.model;
    model_cfg.input_dim = archive.dim();
    awe::Rng init = awe::Rng::derived(seed, "fcae_init");
    auto model = awe::frame::FrameCaeModel::build(model_cfg, init);
    awe::frame::FcaeSchedule schedule;
    schedule.ae_epochs = cfg.fcae.ae_epochs;
    schedule.cae_epochs = cfg.fcae.cae_epochs;
    schedule.lr = cfg.fcae.lr;
    schedule.batch_frames = cfg.fcae.batch_frames;
    auto trace = awe::frame::train_frame_cae(model, archive, frame_pairs, schedule, seed);
    awe::frame::save_model(model, out);
    std::cout << "fcae: CAE start loss " << trace.cae_start_loss << ", final " << trace.loss.back()
              << "\n";
  } else {
    awe::throw_config("unknown frame model kind: " + kind + " (want cpc|apc|fcae)");
  }
  return 0;
}

int run_encode(const std::string& model_path, const std::string& features_path,
               const std::string& out) {
  auto model = awe::frame::load_frame_model(model_path);
  auto archive = awe::feat::load_farc(features_path);
  awe::feat::save_farc(awe::frame::encode_archive(model, archive), out);
  std::cout << "encoded " << archive.entries.size() << " utterances with "
            << awe::frame::frame_model_kind(model) << " model\n";
  return 0;
}

int run_train_awe(const std::string& features_path, const std::string& pairs_path,
                  const std::string& out, const std::string& config_path, uint64_t seed,
                  const std::string& epochs_from) {
  auto cfg = config_or_default(config_path);
  auto archive = awe::feat::load_farc(features_path);
  auto pairs = awe::align::load_pairs(pairs_path);

  auto model_cfg = cfg.awe.model;
  model_cfg.input_dim = archive.dim();
  awe::Rng init = awe::Rng::derived(seed, "awe_init");
  auto model = awe::seg::AweModel::build(model_cfg, init);
  awe::seg::AweSchedule schedule;
  schedule.ae_epochs = cfg.awe.ae_epochs;
  schedule.ae_lr = cfg.awe.ae_lr;
  schedule.cae_epochs = cfg.awe.cae_epochs;
  schedule.cae_lr = cfg.awe.cae_lr;
  schedule.batch_segments = cfg.awe.batch_segments;
  if (!epochs_from.empty()) {
    auto trace = json::parse(awe::io::read_file(epochs_from));
    schedule.cae_epochs = std::max(1, trace.value("best_cae_epoch", schedule.cae_epochs));
    std::cout << "using " << schedule.cae_epochs << " CAE-RNN epochs from " << epochs_from << "\n";
  }
  auto result = awe::seg::train_awe(model, archive, pairs, schedule, seed);
  awe::seg::save_model(model, out);
  std::cout << "awe: AE epochs " << result.ae_loss.size() << ", CAE epochs "
            << result.cae_loss.size() << ", final CAE loss "
            << (result.cae_loss.empty() ? 0.0 : result.cae_loss.back()) << "\n";
  return 0;
}

int run_embed(const std::string& model_path, const std::string& features_path,
              const std::string& segments_path, const std::string& out, bool downsample) {
  auto archive = awe::feat::load_farc(features_path);
  auto segments = awe::seg::load_segments(segments_path);
  std::vector<awe::seg::Embedding> embeddings;
  if (downsample) {
    embeddings = awe::seg::downsample_segments(archive, segments);
  } else {
    if (model_path.empty()) awe::throw_usage("embed needs --model or --downsample");
    auto model = awe::seg::load_awe_model(model_path);
    embeddings = awe::seg::embed_segments(model, archive, segments);
  }
  awe::seg::save_awem(embeddings, out);
  std::cout << "wrote " << embeddings.size() << " embeddings to " << out << "\n";
  return 0;
}

int run_eval_ap(const std::string& emb_path, const std::string& out, const std::string& csv,
                const std::string& distance) {
  auto embeddings = awe::seg::load_awem(emb_path);
  auto report = awe::eval::same_different_ap(embeddings, awe::eval::parse_distance(distance));
  std::cout << "AP " << report.ap << " over " << report.n_pairs << " pairs ("
            << report.n_positive << " positive)\n";
  if (!out.empty()) awe::eval::export_report(report, out, awe::eval::ReportFormat::json_format);
  if (!csv.empty()) awe::eval::export_report(report, csv, awe::eval::ReportFormat::csv);
  return 0;
}

int run_eval_dtw(const std::string& features_path, const std::string& segments_path,
                 const std::string& out, const std::string& metric) {
  auto archive = awe::feat::load_farc(features_path);
  auto segments = awe::seg::load_segments(segments_path);
  std::vector<awe::eval::DtwItem> items;
  for (const auto& s : segments)
    items.push_back({awe::align::slice_segment(archive, s.ref), s.label, s.speaker_id});
  auto report = awe::eval::dtw_same_different_ap(items, awe::align::parse_metric(metric));
  std::cout << "DTW AP " << report.ap << " over " << report.n_pairs << " pairs\n";
  if (!out.empty()) awe::eval::export_report(report, out, awe::eval::ReportFormat::json_format);
  return 0;
}

int run_eval_probe(const std::string& emb_path, double split, uint64_t seed) {
  auto embeddings = awe::seg::load_awem(emb_path);
  auto result = awe::eval::speaker_probe(embeddings, split, seed);
  std::cout << "speaker probe accuracy " << result.accuracy << "\n";
  return 0;
}

int run_grid(const std::string& config_path, const std::string& out_dir,
             const std::string& summary_out) {
  auto base = config_or_default(config_path);
  if (!out_dir.empty()) base.out_dir = out_dir;
  const std::vector<std::string> features = {"mfcc", "cpc", "apc", "cae"};
  const std::vector<std::string> methods = {"downsample", "cae-rnn", "dtw-direct"};
  for (const auto& f : features) {
    for (const auto& m : methods) {
      auto cfg = base;
      cfg.features = f;
      cfg.method = m;
      auto result = awe::pipe::run_experiment(cfg);
      std::cout << f << " / " << m << ": AP " << result.ap_mean << " +- " << result.ap_std << "\n";
    }
  }
  std::string csv = awe::pipe::summarize_csv(base.out_dir);
  std::string path = summary_out.empty() ? base.out_dir + "/summary.csv" : summary_out;
  awe::io::write_file(path, csv);
  std::cout << "summary written to " << path << "\n";
  return 0;
}

int run_crosslingual_cmd(const std::string& config_a, const std::string& config_b) {
  auto a = awe::pipe::load_config(config_a);
  auto b = awe::pipe::load_config(config_b);
  auto result = awe::pipe::run_crosslingual(a, b);
  std::cout << "crosslingual " << a.features << " " << a.language << " -> " << b.language
            << ": AP " << result.ap_mean << " +- " << result.ap_std << "\n";
  return 0;
}

int run_summarize(const std::string& dir, const std::string& out) {
  std::string csv = awe::pipe::summarize_csv(dir);
  if (out.empty())
    std::cout << csv;
  else
    awe::io::write_file(out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"awe-forge: self-supervised frame features and acoustic word embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(awe::kVersion));

  // synth
  std::string spec_path, out, truth_path;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--spec", spec_path, "corpus spec JSON (defaults used when omitted)");
  synth->add_option("--out", out, "output feature archive (.farc)")->required();
  synth->add_option("--truth", truth_path, "output ground-truth token file")->required();

  // features
  std::string wav_dir, normalize = "per-speaker";
  bool deltas = false;
  auto* features = app.add_subcommand("features", "MFCCs from a directory of wav files");
  features->add_option("--wav-dir", wav_dir, "directory of 16-bit mono PCM wavs (speaker_utt.wav)")
      ->required();
  features->add_option("--out", out, "output feature archive (.farc)")->required();
  features->add_flag("--deltas", deltas, "append velocity and acceleration coefficients");
  features->add_option("--normalize", normalize, "none | global | per-speaker");

  // pairs align / simulate
  std::string pairs_path, features_path, metric = "euclidean";
  auto* pairs = app.add_subcommand("pairs", "segment pair utilities");
  pairs->require_subcommand(1);
  auto* pairs_align = pairs->add_subcommand("align", "DTW-align pairs into frame pairs");
  pairs_align->add_option("--pairs", pairs_path, "pair list file")->required();
  pairs_align->add_option("--features", features_path, "feature archive")->required();
  pairs_align->add_option("--out", out, "output frame pairs (.bin)")->required();
  pairs_align->add_option("--metric", metric, "euclidean | cosine");
  int budget = 1000, jitter = 0;
  double error_rate = 0.0;
  uint64_t seed = 1;
  auto* pairs_sim = pairs->add_subcommand("simulate", "simulate term discovery from ground truth");
  pairs_sim->add_option("--truth", truth_path, "ground-truth token file")->required();
  pairs_sim->add_option("--budget", budget, "number of pairs");
  pairs_sim->add_option("--error-rate", error_rate, "fraction of wrong-type pairs");
  pairs_sim->add_option("--jitter", jitter, "boundary jitter in frames");
  pairs_sim->add_option("--seed", seed, "sampling seed");
  pairs_sim->add_option("--out", out, "output pair list")->required();

  // train-frame
  std::string kind, config_path, model_path;
  auto* train_frame = app.add_subcommand("train-frame", "train a frame-level representation model");
  train_frame->add_option("--kind", kind, "cpc | apc | fcae")->required();
  train_frame->add_option("--features", features_path, "training feature archive")->required();
  train_frame->add_option("--pairs", pairs_path, "pair list (fcae only)");
  train_frame->add_option("--out", out, "output checkpoint (.awef)")->required();
  train_frame->add_option("--config", config_path, "experiment config JSON (schedules, dims)");
  train_frame->add_option("--seed", seed, "training seed");

  // encode
  auto* encode = app.add_subcommand("encode", "encode an archive with a trained frame model");
  encode->add_option("--model", model_path, "frame model checkpoint")->required();
  encode->add_option("--features", features_path, "input feature archive")->required();
  encode->add_option("--out", out, "output feature archive")->required();

  // train-awe
  std::string epochs_from;
  auto* train_awe = app.add_subcommand("train-awe", "train the AE-RNN / CAE-RNN embedding model");
  train_awe->add_option("--features", features_path, "feature archive")->required();
  train_awe->add_option("--pairs", pairs_path, "pair list file")->required();
  train_awe->add_option("--out", out, "output checkpoint (.awef)")->required();
  train_awe->add_option("--config", config_path, "experiment config JSON");
  train_awe->add_option("--seed", seed, "training seed");
  train_awe->add_option("--epochs-from", epochs_from,
                        "awe.trace.json of a source-language run; copies its best epoch count");

  // embed
  std::string segments_path;
  bool downsample = false;
  auto* embed = app.add_subcommand("embed", "embed segments with a trained model or downsampling");
  embed->add_option("--model", model_path, "awe model checkpoint");
  embed->add_flag("--downsample", downsample, "use the downsampling baseline");
  embed->add_option("--features", features_path, "feature archive")->required();
  embed->add_option("--segments", segments_path, "segment list (utt label start end speaker)")
      ->required();
  embed->add_option("--out", out, "output embeddings (.awem)")->required();

  // eval ap | dtw | probe
  std::string emb_path, csv_path, distance = "cosine";
  double probe_split = 0.7;
  auto* eval_cmd = app.add_subcommand("eval", "same-different and probe evaluations");
  eval_cmd->require_subcommand(1);
  auto* eval_ap = eval_cmd->add_subcommand("ap", "same-different AP over embeddings");
  eval_ap->add_option("--embeddings", emb_path, "embedding file (.awem)")->required();
  eval_ap->add_option("--out", out, "report JSON path");
  eval_ap->add_option("--csv", csv_path, "PR-curve CSV path");
  eval_ap->add_option("--distance", distance, "cosine | euclidean");
  auto* eval_dtw = eval_cmd->add_subcommand("dtw", "same-different AP with DTW over sequences");
  eval_dtw->add_option("--features", features_path, "feature archive")->required();
  eval_dtw->add_option("--segments", segments_path, "segment list")->required();
  eval_dtw->add_option("--out", out, "report JSON path");
  eval_dtw->add_option("--metric", metric, "euclidean | cosine");
  auto* eval_probe = eval_cmd->add_subcommand("probe", "linear speaker classification accuracy");
  eval_probe->add_option("--embeddings", emb_path, "embedding file (.awem)")->required();
  eval_probe->add_option("--split", probe_split, "train fraction");
  eval_probe->add_option("--seed", seed, "split/probe seed");

  // grid / crosslingual / summarize
  std::string out_dir, config_a, config_b;
  auto* grid = app.add_subcommand("grid", "run the full features x methods grid");
  grid->add_option("--config", config_path, "experiment config JSON (desk defaults when omitted)");
  grid->add_option("--out", out_dir, "output directory override");
  grid->add_option("--summary", out, "summary CSV path");
  auto* crosslingual = app.add_subcommand("crosslingual",
                                          "train frame features on A, apply to B, evaluate on B");
  crosslingual->add_option("--config-a", config_a, "source-language config JSON")->required();
  crosslingual->add_option("--config-b", config_b, "target-language config JSON")->required();
  auto* summarize = app.add_subcommand("summarize", "aggregate per-seed reports into a CSV");
  summarize->add_option("--dir", out_dir, "output directory of previous runs")->required();
  summarize->add_option("--out", out, "CSV path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return run_synth(spec_path, out, truth_path);
    if (*features) return run_features(wav_dir, out, deltas, normalize);
    if (*pairs_align) return run_pairs_align(pairs_path, features_path, out, metric);
    if (*pairs_sim) return run_pairs_simulate(truth_path, budget, error_rate, jitter, seed, out);
    if (*train_frame) return run_train_frame(kind, features_path, pairs_path, out, config_path, seed);
    if (*encode) return run_encode(model_path, features_path, out);
    if (*train_awe) return run_train_awe(features_path, pairs_path, out, config_path, seed, epochs_from);
    if (*embed) return run_embed(model_path, features_path, segments_path, out, downsample);
    if (*eval_ap) return run_eval_ap(emb_path, out, csv_path, distance);
    if (*eval_dtw) return run_eval_dtw(features_path, segments_path, out, metric);
    if (*eval_probe) return run_eval_probe(emb_path, probe_split, seed);
    if (*grid) return run_grid(config_path, out_dir, out);
    if (*crosslingual) return run_crosslingual_cmd(config_a, config_b);
    if (*summarize) return run_summarize(out_dir, out);
  } catch (const awe::Error& e) {
    std::cerr << "awe-forge: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "awe-forge: error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
