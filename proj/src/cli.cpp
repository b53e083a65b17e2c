// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include "msdiar/cli.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "msdiar/clusterer.hpp"
#include "msdiar/core.hpp"
#include "msdiar/msdd.hpp"
#include "msdiar/neuralkit.hpp"
#include "msdiar/scorer.hpp"
#include "msdiar/segmenter.hpp"
#include "msdiar/synthembed.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace msdiar::cli {

namespace {

// ---------------------------------------------------------------------------
// Configuration: defaults <- config file <- MSDIAR_* env vars <- flags.

json default_config() {
  return json{
      {"scales", {{"preset", "telephonic"},
                  {"windows", json::array()},
                  {"hops", json::array()}}},
      {"r", 1.0},
      {"threshold", 0.7},
      {"max_speakers", 8},
      {"seed", 7},
      {"jobs", 1},
      {"synth",
       {{"num_sessions", 10},
        {"num_speakers", 2},
        {"dim", 192},
        {"session_duration", 60.0},
        {"overlap_fraction", 0.15},
        {"base_noise_sigma", 0.1},
        {"scale_noise_exponent", 1.0},
        {"min_centroid_angle", 60.0}}},
      {"model",
       {{"conv_channels", 16}, {"fc_hidden", 256}, {"lstm_hidden", 256}}},
      {"train",
       {{"batch_size", 16},
        {"max_epochs", 6},
        {"patience", 2},
        {"chunk_steps", 50},
        {"chunks_per_epoch", 2},
        {"learning_rate", 1e-3},
        {"seed", 17},
        {"oracle_profiles", true}}},
      {"clustering",
       {{"sweep_max", 50},
        {"seed", 13},
        {"kmeans_restarts", 5},
        {"kmeans_iters", 300}}}};
}

void deep_merge(json& base, const json& over) {
  if (!over.is_object() || !base.is_object()) {
    base = over;
    return;
  }
  for (const auto& [key, value] : over.items()) {
    if (base.contains(key)) {
      deep_merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

void apply_env_overrides(json& node, const std::string& prefix) {
  for (auto& [key, value] : node.items()) {
    std::string name = prefix + "_";
    for (const char c : key) {
      name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    if (value.is_object()) {
      apply_env_overrides(value, name);
      continue;
    }
    const char* env = std::getenv(name.c_str());
    if (env == nullptr) continue;
    if (value.is_string()) {
      value = std::string(env);
      continue;
    }
    try {
      value = json::parse(env);
    } catch (const json::exception&) {
      value = std::string(env);
    }
  }
}

json resolve_config(const std::string& config_path) {
  json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot read config file " + config_path);
    json file_cfg;
    try {
      in >> file_cfg;
    } catch (const json::exception& e) {
      throw std::runtime_error("config file " + config_path + ": " + e.what());
    }
    deep_merge(cfg, file_cfg);
  }
  apply_env_overrides(cfg, "MSDIAR");
  return cfg;
}

ScaleConfig scales_from_config(const json& cfg) {
  const json& s = cfg.at("scales");
  if (s.contains("windows") && s["windows"].is_array() && !s["windows"].empty()) {
    const auto windows = s["windows"].get<std::vector<double>>();
    if (s.contains("hops") && s["hops"].is_array() && !s["hops"].empty()) {
      return make_scale_config(windows, s["hops"].get<std::vector<double>>());
    }
    return make_scale_config(windows);
  }
  return preset_scale_config(s.value("preset", "telephonic"));
}

cluster::NmeScOptions nme_from_config(const json& cfg) {
  cluster::NmeScOptions opts;
  opts.max_speakers = cfg.at("max_speakers").get<int>();
  opts.sweep_max = cfg.at("clustering").at("sweep_max").get<int>();
  opts.seed = cfg.at("clustering").at("seed").get<std::uint64_t>();
  opts.kmeans_restarts = cfg.at("clustering").at("kmeans_restarts").get<int>();
  opts.kmeans_iters = cfg.at("clustering").at("kmeans_iters").get<int>();
  return opts;
}

// ---------------------------------------------------------------------------
// Small file/dir helpers.

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir);
  }
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<fs::path> list_with_extension(const std::string& dir,
                                          const std::string& ext) {
  if (!fs::is_directory(dir)) {
    throw std::runtime_error("not a directory: " + dir);
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const json& cfg, const std::string& out_dir, int jobs) {
  const ScaleConfig scales = scales_from_config(cfg);
  const json& sj = cfg.at("synth");
  synth::SynthConfig base;
  base.num_speakers = sj.at("num_speakers").get<int>();
  base.dim = sj.at("dim").get<int>();
  base.session_duration = sj.at("session_duration").get<double>();
  base.overlap_fraction = sj.at("overlap_fraction").get<double>();
  base.base_noise_sigma = sj.at("base_noise_sigma").get<double>();
  base.scale_noise_exponent = sj.at("scale_noise_exponent").get<double>();
  base.min_centroid_angle = sj.at("min_centroid_angle").get<double>();
  base.seed = cfg.at("seed").get<std::uint64_t>();
  synth::validate_synth_config(base);
  const int n = sj.at("num_sessions").get<int>();
  if (n < 1) throw std::runtime_error("synth.num_sessions must be >= 1");

  ensure_out_dir(out_dir);
  struct Slot {
    std::string id;
    synth::SynthSession session;
  };
  std::vector<Slot> slots(n);
  parallel_for(n, jobs, [&](int i) {
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "%04d", i);
    synth::SynthConfig scfg = base;
    scfg.seed = base.seed + 1000003ULL * static_cast<std::uint64_t>(i);
    slots[i].id = "synth-" + std::string(suffix);
    slots[i].session = synth::gen_session(scfg, scales, slots[i].id);
  });

  json corpus;
  corpus["format"] = "msdiar-corpus";
  corpus["version"] = 1;
  corpus["config"] = cfg;
  corpus["sessions"] = json::array();
  for (const auto& slot : slots) {
    const fs::path stem = fs::path(out_dir) / slot.id;
    synth::save_archive(stem.string(),
                        {slot.id, slot.session.segments, slot.session.embeddings});
    write_file(stem.string() + ".rttm", score::emit_rttm(slot.session.timeline));
    corpus["sessions"].push_back(
        {{"session", slot.id},
         {"num_speakers", base.num_speakers},
         {"achieved_overlap", slot.session.achieved_overlap}});
  }
  write_file(fs::path(out_dir) / "corpus.json", corpus.dump(2) + "\n");
  std::cerr << "synth: wrote " << n << " sessions to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// diarize

json weight_stats(const nn::Tensor2& rows, int num_scales) {
  json mean = json::array();
  json stdev = json::array();
  for (int k = 0; k < num_scales; ++k) {
    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < rows.rows; ++i) {
      m += rows.at(i, k);
      m2 += rows.at(i, k) * rows.at(i, k);
    }
    if (rows.rows > 0) {
      m /= rows.rows;
      m2 /= rows.rows;
    }
    mean.push_back(m);
    stdev.push_back(std::sqrt(std::max(0.0, m2 - m * m)));
  }
  return json{{"mean", mean}, {"std", stdev}};
}

int cmd_diarize(const json& cfg, const std::string& in_dir,
                const std::string& out_dir, const std::string& mode,
                const std::string& checkpoint_path, int jobs) {
  if (mode != "clustering" && mode != "msdd") {
    throw std::runtime_error("mode must be 'clustering' or 'msdd'");
  }
  nn::MsddParameters params;
  if (mode == "msdd") {
    if (checkpoint_path.empty()) {
      throw std::runtime_error("msdd mode requires --checkpoint");
    }
    params = nn::load_checkpoint(checkpoint_path);
  }
  const double r = cfg.at("r").get<double>();
  const cluster::NmeScOptions nme = nme_from_config(cfg);
  msdd::InferOptions infer_opts;
  infer_opts.threshold = cfg.at("threshold").get<double>();
  infer_opts.max_speakers = cfg.at("max_speakers").get<int>();

  const auto manifests = list_with_extension(in_dir, ".manifest");
  if (manifests.empty()) {
    throw std::runtime_error("no .manifest archives found in " + in_dir);
  }
  ensure_out_dir(out_dir);

  struct Slot {
    std::string id;
    std::string rttm;
    json report;
  };
  std::vector<Slot> slots(manifests.size());
  parallel_for(static_cast<int>(manifests.size()), jobs, [&](int i) {
    const synth::ArchiveData archive = synth::load_archive(manifests[i].string());
    const auto clustering =
        cluster::cluster_session(archive.segments, archive.embeddings, r, nme);
    Slot& slot = slots[i];
    slot.id = archive.session_id;
    json report{{"session", archive.session_id},
                {"mode", mode},
                {"estimated_speakers", clustering.num_speakers},
                {"chosen_p", clustering.chosen_p}};
    if (mode == "clustering") {
      const auto& base = archive.segments.per_scale.back();
      std::vector<TimelineEntry> entries;
      entries.reserve(base.size());
      for (std::size_t t = 0; t < base.size(); ++t) {
        entries.push_back(
            {"spk" + std::to_string(clustering.labels[t]), base[t]});
      }
      slot.rttm = score::emit_rttm(
          merge_speaker_intervals(archive.session_id, std::move(entries)));
      const auto w = cluster::init_scale_weights(
          r, archive.segments.scales.num_scales());
      json mean = json::array();
      json stdev = json::array();
      for (const double x : w) {
        mean.push_back(x);
        stdev.push_back(0.0);
      }
      report["scale_weights"] = {{"mean", mean}, {"std", stdev}};
    } else {
      const auto result = msdd::infer(archive.segments, archive.embeddings,
                                      clustering, params, infer_opts,
                                      archive.session_id);
      slot.rttm = score::emit_rttm(result.hypothesis);
      report["scale_weights"] = weight_stats(
          result.scale_weight_rows, archive.segments.scales.num_scales());
    }
    slot.report = std::move(report);
  });

  std::sort(slots.begin(), slots.end(),
            [](const Slot& a, const Slot& b) { return a.id < b.id; });
  std::string report_lines;
  for (const auto& slot : slots) {
    write_file(fs::path(out_dir) / (slot.id + ".rttm"), slot.rttm);
    report_lines += slot.report.dump() + "\n";
  }
  write_file(fs::path(out_dir) / "report.jsonl", report_lines);
  std::cerr << "diarize: " << slots.size() << " sessions (" << mode << ") -> "
            << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

std::vector<msdd::TrainSession> load_train_dir(const std::string& dir) {
  const auto manifests = list_with_extension(dir, ".manifest");
  if (manifests.empty()) {
    throw std::runtime_error("no .manifest archives found in " + dir);
  }
  std::vector<msdd::TrainSession> sessions;
  sessions.reserve(manifests.size());
  for (const auto& manifest : manifests) {
    synth::ArchiveData archive = synth::load_archive(manifest.string());
    fs::path rttm_path = manifest;
    rttm_path.replace_extension(".rttm");
    if (!fs::exists(rttm_path)) {
      throw std::runtime_error("missing reference RTTM for session " +
                               archive.session_id + " (expected " +
                               rttm_path.string() + ")");
    }
    auto timelines = score::parse_rttm(read_file(rttm_path));
    SpeakerTimeline reference;
    if (auto it = timelines.find(archive.session_id); it != timelines.end()) {
      reference = std::move(it->second);
    } else if (timelines.size() == 1) {
      reference = std::move(timelines.begin()->second);
      reference.session_id = archive.session_id;
    } else {
      throw std::runtime_error(rttm_path.string() + ": no records for session " +
                               archive.session_id);
    }
    sessions.push_back({archive.session_id, std::move(archive.segments),
                        std::move(archive.embeddings), std::move(reference)});
  }
  return sessions;
}

int cmd_train(const json& cfg, const std::string& train_dir,
              const std::string& val_dir, const std::string& out_dir) {
  const auto train_set = load_train_dir(train_dir);
  const auto val_set = load_train_dir(val_dir);

  nn::MsddConfig mcfg;
  mcfg.num_scales = train_set.front().segments.scales.num_scales();
  mcfg.emb_dim = train_set.front().embeddings.front().dim;
  mcfg.conv_channels = cfg.at("model").at("conv_channels").get<int>();
  mcfg.fc_hidden = cfg.at("model").at("fc_hidden").get<int>();
  mcfg.lstm_hidden = cfg.at("model").at("lstm_hidden").get<int>();

  const json& tj = cfg.at("train");
  msdd::TrainOptions opts;
  opts.adam.lr = tj.at("learning_rate").get<double>();
  opts.batch_size = tj.at("batch_size").get<int>();
  opts.max_epochs = tj.at("max_epochs").get<int>();
  opts.patience = tj.at("patience").get<int>();
  opts.chunk_steps = tj.at("chunk_steps").get<int>();
  opts.chunks_per_epoch = tj.at("chunks_per_epoch").get<int>();
  opts.seed = tj.at("seed").get<std::uint64_t>();
  opts.oracle_profiles = tj.at("oracle_profiles").get<bool>();
  opts.cluster_r = cfg.at("r").get<double>();
  opts.nme = nme_from_config(cfg);

  nn::MsddParameters params = nn::init_msdd_parameters(mcfg, opts.seed);
  const msdd::TrainReport report = msdd::train(params, train_set, val_set, opts);

  ensure_out_dir(out_dir);
  nn::save_checkpoint((fs::path(out_dir) / "msdd.ckpt").string(), params,
                      opts.seed);
  std::string lines;
  for (const auto& e : report.epochs) {
    lines += json{{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"val_f1", e.val_f1},
                  {"best_f1", e.best_f1}}
                 .dump() +
             "\n";
  }
  write_file(fs::path(out_dir) / "metrics.jsonl", lines);
  std::cerr << "train: best F1 " << report.best_f1 << " at epoch "
            << report.best_epoch << "; checkpoint -> " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// score

std::map<std::string, SpeakerTimeline> load_rttm_dir(const std::string& dir) {
  const auto files = list_with_extension(dir, ".rttm");
  std::map<std::string, std::vector<TimelineEntry>> entries;
  for (const auto& file : files) {
    for (auto& [session, timeline] : score::parse_rttm(read_file(file))) {
      auto& list = entries[session];
      list.insert(list.end(), timeline.entries.begin(), timeline.entries.end());
    }
  }
  std::map<std::string, SpeakerTimeline> out;
  for (auto& [session, list] : entries) {
    out.emplace(session, merge_speaker_intervals(session, std::move(list)));
  }
  return out;
}

int cmd_score(const std::string& ref_dir, const std::string& hyp_dir,
              const std::string& setup_name, const std::string& out_file) {
  score::EvalSetup setup;
  if (setup_name == "forgiving") {
    setup = score::forgiving_setup();
  } else if (setup_name == "full") {
    setup = score::full_setup();
  } else {
    throw std::runtime_error("setup must be 'forgiving' or 'full'");
  }
  const auto ref = load_rttm_dir(ref_dir);
  const auto hyp = load_rttm_dir(hyp_dir);
  if (ref.empty()) throw std::runtime_error("no reference RTTM records in " + ref_dir);

  std::vector<std::string> unmatched;
  for (const auto& [id, _] : ref) {
    if (!hyp.count(id)) unmatched.push_back(id + " (missing hypothesis)");
  }
  for (const auto& [id, _] : hyp) {
    if (!ref.count(id)) unmatched.push_back(id + " (missing reference)");
  }
  if (!unmatched.empty()) {
    std::cerr << "score: unmatched session ids:\n";
    for (const auto& id : unmatched) std::cerr << "  " << id << "\n";
    return 1;
  }

  auto breakdown_json = [](const std::string& id, const score::DerBreakdown& b) {
    return json{{"session", id},
                {"missed_speech", b.missed_speech},
                {"false_alarm", b.false_alarm},
                {"speaker_confusion", b.speaker_confusion},
                {"total_reference", b.total_reference},
                {"der", b.der}};
  };

  std::string lines;
  score::DerBreakdown total;
  for (const auto& [id, ref_timeline] : ref) {
    const auto b = score::der(ref_timeline, hyp.at(id), setup);
    total.missed_speech += b.missed_speech;
    total.false_alarm += b.false_alarm;
    total.speaker_confusion += b.speaker_confusion;
    total.total_reference += b.total_reference;
    lines += breakdown_json(id, b).dump() + "\n";
  }
  total.der = (total.missed_speech + total.false_alarm + total.speaker_confusion) /
              total.total_reference;
  lines += breakdown_json("ALL", total).dump() + "\n";
  write_file(out_file, lines);
  std::cerr << "score (" << setup_name << "): aggregate DER " << total.der
            << " over " << ref.size() << " sessions -> " << out_file << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"msdiar: multi-scale speaker diarization pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file");
  int jobs_flag = 0;
  app.add_option("--jobs", jobs_flag, "session-level parallelism bound");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  int opt_sessions = 0, opt_speakers = 0, opt_dim = 0;
  double opt_duration = 0, opt_overlap = -1, opt_sigma = -1, opt_angle = -1;
  std::uint64_t opt_seed = 0;
  std::string opt_preset;
  synth_cmd->add_option("--sessions", opt_sessions, "number of sessions");
  synth_cmd->add_option("--speakers", opt_speakers, "speakers per session");
  synth_cmd->add_option("--dim", opt_dim, "embedding dimension");
  synth_cmd->add_option("--duration", opt_duration, "session duration (s)");
  synth_cmd->add_option("--overlap", opt_overlap, "target overlap fraction");
  synth_cmd->add_option("--sigma", opt_sigma, "base-scale noise sigma");
  synth_cmd->add_option("--angle", opt_angle, "min pairwise centroid angle (deg)");
  synth_cmd->add_option("--seed", opt_seed, "corpus seed");
  synth_cmd->add_option("--preset", opt_preset, "scale preset (telephonic|meeting)");

  // diarize
  auto* diarize_cmd = app.add_subcommand("diarize", "diarize archived sessions");
  std::string dia_in, dia_out, dia_mode = "msdd", dia_ckpt;
  double opt_r = -1, opt_threshold = -1;
  int opt_max_speakers = 0;
  diarize_cmd->add_option("--in", dia_in, "input archive directory")->required();
  diarize_cmd->add_option("--out", dia_out, "output directory")->required();
  diarize_cmd->add_option("--mode", dia_mode, "clustering | msdd");
  diarize_cmd->add_option("--checkpoint", dia_ckpt, "model checkpoint (msdd mode)");
  diarize_cmd->add_option("--r", opt_r, "scale-weight slope for clustering");
  diarize_cmd->add_option("--threshold", opt_threshold, "sigmoid decision threshold");
  diarize_cmd->add_option("--max-speakers", opt_max_speakers, "speaker-count cap");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the pair decoder");
  std::string train_in, train_val, train_out;
  int opt_epochs = 0, opt_batch = 0, opt_patience = -1, opt_chunks = 0;
  double opt_lr = -1;
  std::uint64_t opt_train_seed = 0;
  int opt_oracle = -1;
  train_cmd->add_option("--train", train_in, "training archive directory")->required();
  train_cmd->add_option("--val", train_val, "validation archive directory")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--epochs", opt_epochs, "max epochs");
  train_cmd->add_option("--batch-size", opt_batch, "sequences per step");
  train_cmd->add_option("--patience", opt_patience, "early-stop patience");
  train_cmd->add_option("--chunks-per-epoch", opt_chunks, "chunks sampled per session");
  train_cmd->add_option("--lr", opt_lr, "Adam learning rate");
  train_cmd->add_option("--seed", opt_train_seed, "training seed");
  train_cmd->add_option("--oracle-profiles", opt_oracle,
                        "1: profiles from reference labels, 0: from clustering");

  // score
  auto* score_cmd = app.add_subcommand("score", "score hypothesis RTTMs");
  std::string score_ref, score_hyp, score_setup = "forgiving", score_out;
  score_cmd->add_option("--ref", score_ref, "reference RTTM directory")->required();
  score_cmd->add_option("--hyp", score_hyp, "hypothesis RTTM directory")->required();
  score_cmd->add_option("--setup", score_setup, "forgiving | full");
  score_cmd->add_option("--out", score_out, "report output file (jsonl)")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("msdiar");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    json cfg = resolve_config(config_path);
    const int jobs = jobs_flag > 0 ? jobs_flag : cfg.at("jobs").get<int>();

    if (synth_cmd->parsed()) {
      auto& sj = cfg["synth"];
      if (synth_cmd->count("--sessions")) sj["num_sessions"] = opt_sessions;
      if (synth_cmd->count("--speakers")) sj["num_speakers"] = opt_speakers;
      if (synth_cmd->count("--dim")) sj["dim"] = opt_dim;
      if (synth_cmd->count("--duration")) sj["session_duration"] = opt_duration;
      if (synth_cmd->count("--overlap")) sj["overlap_fraction"] = opt_overlap;
      if (synth_cmd->count("--sigma")) sj["base_noise_sigma"] = opt_sigma;
      if (synth_cmd->count("--angle")) sj["min_centroid_angle"] = opt_angle;
      if (synth_cmd->count("--seed")) cfg["seed"] = opt_seed;
      if (synth_cmd->count("--preset")) cfg["scales"]["preset"] = opt_preset;
      return cmd_synth(cfg, synth_out, jobs);
    }
    if (diarize_cmd->parsed()) {
      if (diarize_cmd->count("--r")) cfg["r"] = opt_r;
      if (diarize_cmd->count("--threshold")) cfg["threshold"] = opt_threshold;
      if (diarize_cmd->count("--max-speakers")) cfg["max_speakers"] = opt_max_speakers;
      return cmd_diarize(cfg, dia_in, dia_out, dia_mode, dia_ckpt, jobs);
    }
    if (train_cmd->parsed()) {
      auto& tj = cfg["train"];
      if (train_cmd->count("--epochs")) tj["max_epochs"] = opt_epochs;
      if (train_cmd->count("--batch-size")) tj["batch_size"] = opt_batch;
      if (train_cmd->count("--patience")) tj["patience"] = opt_patience;
      if (train_cmd->count("--chunks-per-epoch")) tj["chunks_per_epoch"] = opt_chunks;
      if (train_cmd->count("--lr")) tj["learning_rate"] = opt_lr;
      if (train_cmd->count("--seed")) tj["seed"] = opt_train_seed;
      if (train_cmd->count("--oracle-profiles")) tj["oracle_profiles"] = opt_oracle != 0;
      return cmd_train(cfg, train_in, train_val, train_out);
    }
    if (score_cmd->parsed()) {
      return cmd_score(score_ref, score_hyp, score_setup, score_out);
    }
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace msdiar::cli
