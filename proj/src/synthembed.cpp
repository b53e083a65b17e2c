// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include "msdiar/synthembed.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "msdiar/random.hpp"

namespace msdiar::synth {

namespace {

constexpr double kTurnMin = 1.5;
constexpr double kTurnMax = 4.0;
// Probability that a non-overlap speaker change pauses before the next turn.
constexpr double kGapProb = 0.85;
constexpr double kGapMin = 0.2;
constexpr double kGapMax = 0.6;
// Carving a gap never shrinks a turn below this length.
constexpr double kMinTurnRemainder = 0.8;
// Overlap is laid down as short interjection bursts scattered inside the
// following turn rather than one long two-speaker stretch. Segments then
// straddle burst edges and carry continuously varying mixture ratios, the
// way embeddings of real overlapped speech drift between the speakers.
constexpr double kBurstMin = 0.25;
constexpr double kBurstMax = 0.7;
constexpr double kBurstGap = 0.1;
// Bursts never fill more than this fraction of the hosting turn.
constexpr double kBurstCapacity = 0.4;
// Bursts stop this far short of the hosting turn's end.
constexpr double kOverlapMargin = 0.05;

struct Turn {
  int speaker;
  double onset;
  double offset;
};

std::string speaker_name(int s) { return "spk" + std::to_string(s); }

}  // namespace

void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.num_speakers < 1 || cfg.num_speakers > 8) {
    throw std::invalid_argument("num_speakers must be in 1..8");
  }
  if (cfg.dim <= 0) throw std::invalid_argument("embedding dim must be positive");
  if (!(cfg.session_duration > 0.0)) {
    throw std::invalid_argument("session_duration must be positive");
  }
  if (cfg.overlap_fraction < 0.0 || cfg.overlap_fraction >= 0.5) {
    throw std::invalid_argument("overlap_fraction must be in [0, 0.5)");
  }
  if (cfg.num_speakers == 1 && cfg.overlap_fraction > 0.0) {
    throw std::invalid_argument("single-speaker sessions cannot carry overlap");
  }
  if (cfg.base_noise_sigma < 0.0) {
    throw std::invalid_argument("base_noise_sigma must be >= 0");
  }
  if (cfg.min_centroid_angle < 0.0 || cfg.min_centroid_angle > 180.0) {
    throw std::invalid_argument("min_centroid_angle must be in [0, 180] degrees");
  }
}

SynthSession gen_session(const SynthConfig& cfg, const ScaleConfig& scales,
                         const std::string& session_id) {
  validate_synth_config(cfg);
  validate_scale_config(scales);
  Rng rng(cfg.seed);

  // Speaker centroids: unit normals with rejection on the pairwise angle.
  EmbeddingMatrix centroids = make_embedding_matrix(cfg.num_speakers, cfg.dim);
  const double min_cos = std::cos(cfg.min_centroid_angle * M_PI / 180.0);
  for (int s = 0; s < cfg.num_speakers; ++s) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      double* row = centroids.row(s);
      double sq = 0.0;
      for (int d = 0; d < cfg.dim; ++d) {
        row[d] = rng.normal();
        sq += row[d] * row[d];
      }
      if (!(sq > 0.0)) continue;
      const double inv = 1.0 / std::sqrt(sq);
      for (int d = 0; d < cfg.dim; ++d) row[d] *= inv;
      placed = true;
      for (int q = 0; q < s; ++q) {
        if (dot(row, centroids.row(q), cfg.dim) > min_cos + 1e-12) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) {
      throw std::runtime_error(
          "could not place " + std::to_string(cfg.num_speakers) +
          " centroids with pairwise angle >= " +
          std::to_string(cfg.min_centroid_angle) + " deg in dim " +
          std::to_string(cfg.dim));
    }
  }

  // Alternating turns, laid out contiguously first.
  std::vector<Turn> turns;
  double t = 0.0;
  int prev = -1;
  while (t < cfg.session_duration - kTimeEps) {
    int spk = 0;
    if (cfg.num_speakers > 1) {
      if (prev < 0) {
        spk = static_cast<int>(rng.uniform_int(cfg.num_speakers));
      } else {
        const int draw = static_cast<int>(rng.uniform_int(cfg.num_speakers - 1));
        spk = draw >= prev ? draw + 1 : draw;
      }
    }
    double len = rng.uniform(kTurnMin, kTurnMax);
    len = std::min(len, cfg.session_duration - t);
    if (len <= 0.05) break;
    turns.push_back({spk, t, t + len});
    t += len;
    prev = spk;
  }
  if (turns.empty()) throw std::runtime_error("session too short to hold a turn");

  // Boundary i sits between turns[i] and turns[i+1]. A boundary either
  // carries overlap (the previous speaker extends into the next turn) or is
  // usually broken up by a short silence gap carved from the earlier turn,
  // the way real speaker changes pause. Reserve enough overlap carriers to
  // cover the requested fraction before carving the rest.
  const std::size_t num_boundaries = turns.empty() ? 0 : turns.size() - 1;
  std::vector<std::size_t> boundary(num_boundaries);
  std::iota(boundary.begin(), boundary.end(), std::size_t{0});
  for (std::size_t i = boundary.size(); i > 1; --i) {
    std::swap(boundary[i - 1], boundary[rng.uniform_int(i)]);
  }
  double contiguous_speech = 0.0;
  for (const auto& turn : turns) contiguous_speech += turn.offset - turn.onset;

  std::vector<std::size_t> carriers;
  std::size_t reserved_upto = 0;
  if (cfg.overlap_fraction > 0.0) {
    double capacity = 0.0;
    const double want = 1.3 * cfg.overlap_fraction * contiguous_speech;
    while (reserved_upto < boundary.size() && capacity < want) {
      const std::size_t i = boundary[reserved_upto++];
      carriers.push_back(i);
      capacity += kBurstCapacity * (turns[i + 1].offset - turns[i + 1].onset);
    }
  }
  for (std::size_t b = reserved_upto; b < boundary.size(); ++b) {
    const std::size_t i = boundary[b];
    const bool carve = rng.uniform() < kGapProb;
    double g = rng.uniform(kGapMin, kGapMax);  // keep the stream shape fixed
    if (!carve) continue;
    g = std::min(g, (turns[i].offset - turns[i].onset) - kMinTurnRemainder);
    if (g < kGapMin) continue;
    turns[i].offset -= g;
  }

  double union_speech = 0.0;
  for (const auto& turn : turns) union_speech += turn.offset - turn.onset;

  std::vector<std::vector<TimeInterval>> bursts(turns.size());
  std::vector<double> burst_total(turns.size(), 0.0);
  double overlap_total = 0.0;
  if (cfg.overlap_fraction > 0.0 && !carriers.empty()) {
    const double target = cfg.overlap_fraction * union_speech;
    for (int pass = 0; pass < 200 && target - overlap_total > 1e-9; ++pass) {
      for (std::size_t i : carriers) {
        const double remaining = target - overlap_total;
        if (remaining <= 1e-9) break;
        const Turn& host = turns[i + 1];
        const double cap = kBurstCapacity * (host.offset - host.onset);
        if (cap - burst_total[i + 1] <= 1e-9) continue;
        double len = rng.uniform(kBurstMin, kBurstMax);
        len = std::min({len, cap - burst_total[i + 1], remaining});
        const double hi = host.offset - kOverlapMargin - len;
        if (len <= 1e-9 || hi <= host.onset) continue;
        const double onset = rng.uniform(host.onset, hi);
        bool collides = false;
        for (const auto& b : bursts[i + 1]) {
          if (onset < b.offset + kBurstGap && b.onset < onset + len + kBurstGap) {
            collides = true;
            break;
          }
        }
        if (collides) continue;  // draw a fresh position next pass
        bursts[i + 1].push_back({onset, onset + len});
        burst_total[i + 1] += len;
        overlap_total += len;
      }
    }
  }

  std::vector<TimelineEntry> entries;
  entries.reserve(turns.size());
  for (std::size_t i = 0; i < turns.size(); ++i) {
    entries.push_back(
        {speaker_name(turns[i].speaker), {turns[i].onset, turns[i].offset}});
    // Interjections by the boundary's earlier speaker inside this turn.
    for (const auto& b : bursts[i]) {
      entries.push_back({speaker_name(turns[i - 1].speaker), b});
    }
  }

  SynthSession session;
  session.session_id = session_id;
  session.timeline = merge_speaker_intervals(session_id, std::move(entries));
  session.achieved_overlap = union_speech > 0.0 ? overlap_total / union_speech : 0.0;
  session.centroids = std::move(centroids);

  const auto regions = speech_regions(session.timeline);
  session.segments = seg::segment_all_scales(regions, scales);

  // Per-speaker interval lists once, for the mixture weights.
  std::vector<std::vector<TimeInterval>> speaker_intervals(cfg.num_speakers);
  for (int s = 0; s < cfg.num_speakers; ++s) {
    speaker_intervals[s] = session.timeline.intervals_of(speaker_name(s));
  }

  const int num_scales = scales.num_scales();
  session.embeddings.resize(num_scales);
  std::vector<double> mix(cfg.dim);
  for (int k = 0; k < num_scales; ++k) {
    const double sigma =
        cfg.base_noise_sigma *
        std::pow(scales.base_window() / scales.windows[k], cfg.scale_noise_exponent);
    const auto& segs = session.segments.per_scale[k];
    auto& emb = session.embeddings[k];
    emb = make_embedding_matrix(static_cast<int>(segs.size()), cfg.dim);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      double total = 0.0;
      std::fill(mix.begin(), mix.end(), 0.0);
      for (int s = 0; s < cfg.num_speakers; ++s) {
        double weight = 0.0;
        for (const auto& iv : speaker_intervals[s]) {
          weight += interval_overlap(segs[i], iv);
        }
        if (weight <= 0.0) continue;
        const double* c = session.centroids.row(s);
        for (int d = 0; d < cfg.dim; ++d) mix[d] += weight * c[d];
        total += weight;
      }
      if (!(total > 0.0)) {
        throw std::logic_error("segment without speech inside a speech region");
      }
      double* row = emb.row(i);
      double sq = 0.0;
      for (int d = 0; d < cfg.dim; ++d) {
        double x = mix[d] / total;
        if (sigma > 0.0) x += rng.normal() * sigma;
        row[d] = x;
        sq += x * x;
      }
      if (!(sq > 0.0)) throw std::logic_error("zero-norm synthetic embedding");
      const double inv = 1.0 / std::sqrt(sq);
      for (int d = 0; d < cfg.dim; ++d) row[d] *= inv;
    }
  }
  return session;
}

// ---------------------------------------------------------------------------
// Archive

namespace {

void append_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float read_f32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::filesystem::path strip_manifest_suffix(const std::filesystem::path& p) {
  if (p.extension() == ".manifest") {
    auto base = p;
    base.replace_extension();
    return base;
  }
  return p;
}

}  // namespace

void save_archive(const std::filesystem::path& base, const ArchiveData& data) {
  const int num_scales = data.segments.scales.num_scales();
  if (static_cast<int>(data.embeddings.size()) != num_scales) {
    throw std::invalid_argument("archive embeddings/scales count mismatch");
  }
  int dim = data.embeddings.empty() ? 0 : data.embeddings.front().dim;
  nlohmann::json manifest;
  manifest["format"] = "msdiar-embedding-archive";
  manifest["version"] = kArchiveVersion;
  manifest["session_id"] = data.session_id;
  manifest["embedding_dim"] = dim;
  manifest["scales"] = {{"windows", data.segments.scales.windows},
                        {"hops", data.segments.scales.hops}};
  nlohmann::json scale_list = nlohmann::json::array();
  std::string payload;
  for (int k = 0; k < num_scales; ++k) {
    const auto& segs = data.segments.per_scale[k];
    const auto& emb = data.embeddings[k];
    if (emb.rows != static_cast<int>(segs.size()) || emb.dim != dim) {
      throw std::invalid_argument("archive segment/embedding shape mismatch");
    }
    nlohmann::json intervals = nlohmann::json::array();
    for (const auto& s : segs) intervals.push_back({s.onset, s.offset});
    scale_list.push_back({{"rows", emb.rows},
                          {"payload_bytes", static_cast<std::int64_t>(emb.rows) * dim * 4},
                          {"segments", intervals}});
    for (double x : emb.values) append_f32(payload, static_cast<float>(x));
  }
  manifest["payloads"] = scale_list;

  auto manifest_path = base;
  manifest_path += ".manifest";
  auto payload_path = base;
  payload_path += ".emb";
  {
    std::ofstream os(manifest_path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + manifest_path.string());
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("write failed: " + manifest_path.string());
  }
  {
    std::ofstream os(payload_path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + payload_path.string());
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + payload_path.string());
  }
}

ArchiveData load_archive(const std::filesystem::path& path) {
  const auto base = strip_manifest_suffix(path);
  auto manifest_path = base;
  manifest_path += ".manifest";
  auto payload_path = base;
  payload_path += ".emb";

  std::ifstream ms(manifest_path);
  if (!ms) throw std::runtime_error("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "msdiar-embedding-archive") {
    throw std::runtime_error("not an embedding archive: " + manifest_path.string());
  }
  if (manifest.value("version", -1) != kArchiveVersion) {
    throw std::runtime_error("unsupported archive version in " + manifest_path.string());
  }

  ArchiveData data;
  data.session_id = manifest.at("session_id").get<std::string>();
  const int dim = manifest.at("embedding_dim").get<int>();
  ScaleConfig scales;
  scales.windows = manifest.at("scales").at("windows").get<std::vector<double>>();
  scales.hops = manifest.at("scales").at("hops").get<std::vector<double>>();
  validate_scale_config(scales);

  const auto& payloads = manifest.at("payloads");
  if (static_cast<int>(payloads.size()) != scales.num_scales()) {
    throw std::runtime_error("manifest payload count does not match scales");
  }

  std::ifstream ps(payload_path, std::ios::binary);
  if (!ps) throw std::runtime_error("cannot open " + payload_path.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(ps)),
                                 std::istreambuf_iterator<char>());

  std::vector<std::vector<TimeInterval>> per_scale(scales.num_scales());
  std::size_t expected_bytes = 0;
  for (int k = 0; k < scales.num_scales(); ++k) {
    const auto& entry = payloads[k];
    const int rows = entry.at("rows").get<int>();
    const auto& intervals = entry.at("segments");
    if (static_cast<int>(intervals.size()) != rows) {
      throw std::runtime_error("manifest rows/segments mismatch at scale " +
                               std::to_string(k));
    }
    for (const auto& iv : intervals) {
      per_scale[k].push_back(make_interval(iv.at(0).get<double>(), iv.at(1).get<double>()));
    }
    expected_bytes += static_cast<std::size_t>(rows) * dim * 4;
  }
  if (raw.size() != expected_bytes) {
    throw std::runtime_error("payload length mismatch in " + payload_path.string());
  }

  // Rebuild the segment set (and its grouping) from the manifest intervals.
  data.segments.scales = scales;
  data.segments.per_scale = std::move(per_scale);
  const auto& bases = data.segments.per_scale.back();
  data.segments.group_map.assign(bases.size(),
                                 std::vector<int>(scales.num_scales(), 0));
  for (int k = 0; !bases.empty() && k + 1 < scales.num_scales(); ++k) {
    const auto grouped = seg::group_scales(bases, data.segments.per_scale[k]);
    for (std::size_t i = 0; i < bases.size(); ++i) {
      data.segments.group_map[i][k] = grouped[i];
    }
  }
  for (std::size_t i = 0; i < bases.size(); ++i) {
    data.segments.group_map[i][scales.num_scales() - 1] = static_cast<int>(i);
  }

  std::size_t pos = 0;
  data.embeddings.resize(scales.num_scales());
  for (int k = 0; k < scales.num_scales(); ++k) {
    const int rows = payloads[k].at("rows").get<int>();
    auto& emb = data.embeddings[k];
    emb = make_embedding_matrix(rows, dim);
    for (auto& x : emb.values) {
      x = static_cast<double>(read_f32(raw.data() + pos));
      pos += 4;
    }
    validate_embeddings(emb);
  }
  return data;
}

}  // namespace msdiar::synth
