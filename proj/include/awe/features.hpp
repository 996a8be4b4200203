// awe/features.hpp

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

// Mono PCM audio -> MFCC feature sequences, regression deltas, normalization,
// and the FARC feature-archive file format.

#ifndef AWE_FEATURES_HPP_
#define AWE_FEATURES_HPP_

#include "awe/common.hpp"

#include <unsupported/Eigen/FFT>

#include <map>
#include <set>
#include <string>
#include <vector>

namespace awe::feat {

struct FeatureSequence {
  std::string utterance_id;
  std::string speaker_id;
  Mat frames;                  // T x d, one row per frame
  double frame_period = 0.01;  // seconds per row
  std::string dim_label;       // "mfcc13", "mfcc39", "learned(d)"

  int length() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }

  void validate() const {
    if (frames.rows() < 1 || frames.cols() < 1)
      throw_data("feature sequence " + utterance_id + " is empty");
    if (!frames.allFinite())
      throw_data("feature sequence " + utterance_id + " contains non-finite values");
  }
};

inline std::string learned_label(int dim) { return "learned(" + std::to_string(dim) + ")"; }

struct FeatureArchive {
  std::vector<FeatureSequence> entries;

  int dim() const { return entries.empty() ? 0 : entries.front().dim(); }

  bool has(const std::string& utterance_id) const {
    for (const auto& e : entries)
      if (e.utterance_id == utterance_id) return true;
    return false;
  }

  const FeatureSequence& by_id(const std::string& utterance_id) const {
    for (const auto& e : entries)
      if (e.utterance_id == utterance_id) return e;
    throw_data("unknown utterance id: " + utterance_id);
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& e : entries) {
      e.validate();
      if (!ids.insert(e.utterance_id).second)
        throw_data("duplicate utterance id: " + e.utterance_id);
      if (e.dim() != dim())
        throw_data("utterance " + e.utterance_id + " has dim " + std::to_string(e.dim()) +
                   ", archive dim is " + std::to_string(dim()));
    }
  }

  int64_t total_frames() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.length();
    return n;
  }

  // per-dimension global stats over all frames
  void stats(Vec& mean, Vec& variance) const {
    const int d = dim();
    mean = Vec::Zero(d);
    variance = Vec::Zero(d);
    int64_t n = 0;
    for (const auto& e : entries) {
      mean += e.frames.colwise().sum().transpose();
      n += e.length();
    }
    mean /= static_cast<double>(n);
    for (const auto& e : entries)
      variance +=
          (e.frames.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
    variance /= static_cast<double>(n);
  }
};

// ---------------------------------------------------------------------------
// WAV reading
// ---------------------------------------------------------------------------

struct Wav {
  int sample_rate = 0;
  std::vector<double> samples;  // mono, in [-1, 1]
};

// 16-bit mono PCM only; anything else is a format error naming the field.
inline Wav read_wav(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "RIFF", "wav header");
  io::read_le<uint32_t>(is, "riff size");
  io::expect_magic(is, "WAVE", "wav header");

  Wav wav;
  bool have_fmt = false, have_data = false;
  while (!have_data) {
    char id[4];
    is.read(id, 4);
    if (is.gcount() != 4) throw_format("wav: missing data chunk");
    auto size = io::read_le<uint32_t>(is, "chunk size");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw_format("wav: fmt chunk too small");
      auto format = io::read_le<uint16_t>(is, "fmt");
      auto channels = io::read_le<uint16_t>(is, "fmt");
      auto rate = io::read_le<uint32_t>(is, "fmt");
      io::read_le<uint32_t>(is, "fmt");  // byte rate
      io::read_le<uint16_t>(is, "fmt");  // block align
      auto bits = io::read_le<uint16_t>(is, "fmt");
      if (format != 1) throw_format("wav: audio_format " + std::to_string(format) + " is not PCM");
      if (channels != 1) throw_format("wav: channels = " + std::to_string(channels) + ", want mono");
      if (bits != 16) throw_format("wav: bits_per_sample = " + std::to_string(bits) + ", want 16");
      wav.sample_rate = static_cast<int>(rate);
      is.ignore(size - 16);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw_format("wav: data chunk before fmt chunk");
      size_t n = size / 2;
      wav.samples.resize(n);
      std::vector<int16_t> raw(n);
      is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
      if (static_cast<uint32_t>(is.gcount()) != size)
        throw_format("wav: truncated data chunk in " + path);
      for (size_t i = 0; i < n; ++i) wav.samples[i] = raw[i] / 32768.0;
      have_data = true;
    } else {
      is.ignore(size + (size & 1));  // skip unknown chunk (+pad byte)
      if (!is) throw_format("wav: truncated chunk in " + path);
    }
  }
  return wav;
}

// ---------------------------------------------------------------------------
// MFCC
// ---------------------------------------------------------------------------

struct MfccConfig {
  double window_s = 0.025;
  double hop_s = 0.010;
  int n_mels = 24;
  int n_ceps = 13;  // c0 included, no liftering
  double preemphasis = 0.97;
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

inline FeatureSequence compute_mfcc(const Wav& wav, const MfccConfig& cfg,
                                    const std::string& utterance_id,
                                    const std::string& speaker_id) {
  const int window = static_cast<int>(std::lround(cfg.window_s * wav.sample_rate));
  const int hop = static_cast<int>(std::lround(cfg.hop_s * wav.sample_rate));
  const int len = static_cast<int>(wav.samples.size());
  if (len < window)
    throw_input("signal of " + std::to_string(len) + " samples is shorter than one window (" +
                std::to_string(window) + ")");
  const int frames = 1 + (len - window) / hop;

  std::vector<double> emph(wav.samples.size());
  emph[0] = wav.samples[0];
  for (size_t t = 1; t < wav.samples.size(); ++t)
    emph[t] = wav.samples[t] - cfg.preemphasis * wav.samples[t - 1];

  int nfft = 1;
  while (nfft < window) nfft *= 2;
  const int n_bins = nfft / 2 + 1;

  Vec hamming(window);
  for (int i = 0; i < window; ++i)
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (window - 1));

  // triangular filters evaluated at bin frequencies, mel-spaced edges
  const double mel_max = hz_to_mel(wav.sample_rate / 2.0);
  std::vector<double> centers(static_cast<size_t>(cfg.n_mels) + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m) centers[m] = mel_to_hz(mel_max * m / (cfg.n_mels + 1));
  Mat filters = Mat::Zero(n_bins, cfg.n_mels);
  for (int m = 0; m < cfg.n_mels; ++m) {
    double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      double f = static_cast<double>(k) * wav.sample_rate / nfft;
      if (f > lo && f < hi)
        filters(k, m) = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }

  // orthonormal DCT-II
  Mat dct(cfg.n_mels, cfg.n_ceps);
  for (int m = 0; m < cfg.n_mels; ++m)
    for (int j = 0; j < cfg.n_ceps; ++j) {
      double scale = (j == 0) ? std::sqrt(1.0 / cfg.n_mels) : std::sqrt(2.0 / cfg.n_mels);
      dct(m, j) = scale * std::cos(M_PI * j * (m + 0.5) / cfg.n_mels);
    }

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);

  FeatureSequence seq;
  seq.utterance_id = utterance_id;
  seq.speaker_id = speaker_id;
  seq.frame_period = cfg.hop_s;
  seq.dim_label = "mfcc" + std::to_string(cfg.n_ceps);
  seq.frames.resize(frames, cfg.n_ceps);

  std::vector<double> buf(static_cast<size_t>(nfft), 0.0);
  std::vector<std::complex<double>> spectrum;
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < window; ++i) buf[static_cast<size_t>(i)] = emph[static_cast<size_t>(t) * hop + i] * hamming[i];
    std::fill(buf.begin() + window, buf.end(), 0.0);
    fft.fwd(spectrum, buf);
    Vec power(n_bins);
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(spectrum[static_cast<size_t>(k)]);
    Vec logmel = (filters.transpose() * power).cwiseMax(1e-10).array().log();
    seq.frames.row(t) = (dct.transpose() * logmel).transpose();
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Regression deltas
// ---------------------------------------------------------------------------

// Standard regression deltas with edge replication; output is
// [static | velocity | acceleration], i.e. 3d columns.
inline FeatureSequence add_deltas(const FeatureSequence& seq, int window = 2) {
  if (seq.length() < 2) throw_input("add_deltas needs at least 2 frames");
  if (seq.dim_label == "mfcc39")
    throw_input("add_deltas expects base coefficients, got " + seq.dim_label);
  const int T = seq.length();
  const int d = seq.dim();
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;

  auto regress = [&](const Mat& x) {
    Mat out(T, d);
    for (int t = 0; t < T; ++t) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
      for (int n = 1; n <= window; ++n) {
        int up = std::min(t + n, T - 1);
        int down = std::max(t - n, 0);
        acc += n * (x.row(up) - x.row(down));
      }
      out.row(t) = acc / denom;
    }
    return out;
  };

  Mat velocity = regress(seq.frames);
  Mat acceleration = regress(velocity);

  FeatureSequence out = seq;
  out.frames.resize(T, 3 * d);
  out.frames.leftCols(d) = seq.frames;
  out.frames.middleCols(d, d) = velocity;
  out.frames.rightCols(d) = acceleration;
  out.dim_label = (seq.dim_label == "mfcc13" && d == 13) ? "mfcc39" : learned_label(3 * d);
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

enum class NormalizeMode { none, global, per_speaker };

inline NormalizeMode parse_normalize_mode(const std::string& s) {
  if (s == "none") return NormalizeMode::none;
  if (s == "global") return NormalizeMode::global;
  if (s == "per-speaker") return NormalizeMode::per_speaker;
  throw_config("unknown normalization mode: " + s);
}

// Standardizes each dimension to zero mean / unit variance within the chosen
// grouping. Statistics come from `stats_utterances` when given (training
// portion), otherwise from the whole archive. Zero-variance dimensions keep a
// unit divisor and are only centered.
inline FeatureArchive normalize(FeatureArchive archive, NormalizeMode mode,
                                const std::set<std::string>* stats_utterances = nullptr) {
  if (mode == NormalizeMode::none) return archive;
  archive.validate();
  const int d = archive.dim();

  auto accumulate = [&](auto include) {
    Vec mean = Vec::Zero(d), var = Vec::Zero(d);
    int64_t n = 0;
    for (const auto& e : archive.entries)
      if (include(e)) {
        mean += e.frames.colwise().sum().transpose();
        n += e.length();
      }
    if (n < 2) throw_data("normalization group has fewer than 2 frames");
    mean /= static_cast<double>(n);
    for (const auto& e : archive.entries)
      if (include(e))
        var += (e.frames.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
    var /= static_cast<double>(n);
    for (int j = 0; j < d; ++j)
      if (var[j] < 1e-12) {
        log_warn("zero-variance dimension " + std::to_string(j) + "; using unit variance");
        var[j] = 1.0;
      }
    return std::make_pair(mean, var);
  };

  auto in_stats = [&](const FeatureSequence& e) {
    return stats_utterances == nullptr || stats_utterances->count(e.utterance_id) > 0;
  };

  if (mode == NormalizeMode::global) {
    auto [mean, var] = accumulate(in_stats);
    Vec inv_std = var.cwiseSqrt().cwiseInverse();
    for (auto& e : archive.entries)
      e.frames = (e.frames.rowwise() - mean.transpose()).array().rowwise() *
                 inv_std.transpose().array();
    return archive;
  }

  std::set<std::string> speakers;
  for (const auto& e : archive.entries) speakers.insert(e.speaker_id);
  for (const auto& spk : speakers) {
    bool spk_has_stats = false;
    for (const auto& e : archive.entries)
      if (e.speaker_id == spk && in_stats(e)) spk_has_stats = true;
    if (!spk_has_stats)
      log_warn("speaker " + spk + " has no utterances in the stats portion; using all of them");
    auto include = [&](const FeatureSequence& e) {
      return e.speaker_id == spk && (spk_has_stats ? in_stats(e) : true);
    };
    auto [mean, var] = accumulate(include);
    Vec inv_std = var.cwiseSqrt().cwiseInverse();
    for (auto& e : archive.entries)
      if (e.speaker_id == spk)
        e.frames = (e.frames.rowwise() - mean.transpose()).array().rowwise() *
                   inv_std.transpose().array();
  }
  return archive;
}

// ---------------------------------------------------------------------------
// FARC archive file
// ---------------------------------------------------------------------------

inline constexpr uint16_t kFarcVersion = 1;

// FARC: magic "FARC", version u16, entry count u32; per entry: utterance_id
// and speaker_id (length-prefixed UTF-8), T u32, d u16, frame period f32
// seconds, then T*d little-endian f32 row-major.
inline void save_farc(const FeatureArchive& archive, const std::string& path) {
  auto os = io::open_out(path);
  io::write_magic(os, "FARC");
  io::write_le<uint16_t>(os, kFarcVersion);
  io::write_le<uint32_t>(os, static_cast<uint32_t>(archive.entries.size()));
  for (const auto& e : archive.entries) {
    io::write_string(os, e.utterance_id);
    io::write_string(os, e.speaker_id);
    io::write_le<uint32_t>(os, static_cast<uint32_t>(e.frames.rows()));
    io::write_le<uint16_t>(os, static_cast<uint16_t>(e.frames.cols()));
    io::write_le<float>(os, static_cast<float>(e.frame_period));
    for (Eigen::Index t = 0; t < e.frames.rows(); ++t)
      for (Eigen::Index j = 0; j < e.frames.cols(); ++j)
        io::write_le<float>(os, static_cast<float>(e.frames(t, j)));
  }
}

inline FeatureArchive load_farc(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "FARC", "feature archive");
  auto version = io::read_le<uint16_t>(is, "archive version");
  if (version != kFarcVersion) throw_format("unsupported FARC version " + std::to_string(version));
  auto count = io::read_le<uint32_t>(is, "entry count");
  FeatureArchive archive;
  archive.entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    FeatureSequence e;
    e.utterance_id = io::read_string(is, "utterance id");
    e.speaker_id = io::read_string(is, "speaker id");
    auto t = io::read_le<uint32_t>(is, "frame count");
    auto d = io::read_le<uint16_t>(is, "frame dim");
    e.frame_period = static_cast<double>(io::read_le<float>(is, "frame period"));
    e.frames.resize(t, d);
    for (uint32_t a = 0; a < t; ++a)
      for (uint16_t b = 0; b < d; ++b)
        e.frames(a, b) = static_cast<double>(io::read_le<float>(is, "frame values"));
    archive.entries.push_back(std::move(e));
  }
  archive.validate();
  return archive;
}

}  // namespace awe::feat

#endif  // AWE_FEATURES_HPP_
