// rmdx/audio.cpp

// Copyright 2026  The rhotic-mdx Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rmdx/audio.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "rmdx/errors.hpp"

namespace rmdx {

namespace {

std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0) {
    throw DataError("'" + path + "' is not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;

  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const char* id = reinterpret_cast<const char*>(data.data() + pos);
    const std::uint32_t size = read_u32le(data.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > data.size()) {
      throw DataError("'" + path + "': truncated chunk");
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw DataError("'" + path + "': short fmt chunk");
      format = read_u16le(data.data() + body);
      channels = read_u16le(data.data() + body + 2);
      rate = read_u32le(data.data() + body + 4);
      bits = read_u16le(data.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      pcm = data.data() + body;
      pcm_bytes = size;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }

  if (!have_fmt || pcm == nullptr) {
    throw DataError("'" + path + "': missing fmt or data chunk");
  }
  if (format != 1) {
    throw DataError("'" + path + "': unsupported encoding (PCM required)");
  }
  if (channels != 1) {
    throw DataError("'" + path + "': unsupported channel count (" +
                    std::to_string(channels) + "); mono required");
  }
  if (bits != 16) {
    throw DataError("'" + path + "': unsupported sample width (" +
                    std::to_string(bits) + " bits); 16-bit required");
  }
  if (rate == 0) throw DataError("'" + path + "': zero sample rate");

  AudioBuffer buf;
  buf.sample_rate = static_cast<int>(rate);
  const std::size_t n = pcm_bytes / 2;
  buf.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int16_t s =
        static_cast<std::int16_t>(read_u16le(pcm + 2 * i));
    buf.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return buf;
}

AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be > 0");
  if (buf.sample_rate <= 0) throw DataError("resample: bad source rate");
  if (target_rate == buf.sample_rate) return buf;

  const double src = buf.sample_rate;
  const double dst = target_rate;
  const std::size_t n_in = buf.samples.size();
  const std::size_t n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_in) * dst / src));

  // Cutoff (cycles per source sample) just below the narrower Nyquist.
  const double fc = 0.5 * 0.95 * std::min(1.0, dst / src);
  constexpr int kZeroCrossings = 16;
  const double half_width = kZeroCrossings / (2.0 * fc);
  const int hw = static_cast<int>(std::ceil(half_width));

  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);

  for (std::size_t i = 0; i < n_out; ++i) {
    const double center = static_cast<double>(i) * src / dst;
    const int j0 = static_cast<int>(std::ceil(center)) - hw;
    const int j1 = static_cast<int>(std::floor(center)) + hw;
    double acc = 0.0, norm = 0.0;
    for (int j = j0; j <= j1; ++j) {
      const double u = static_cast<double>(j) - center;
      const double x = 2.0 * fc * u;
      const double sinc =
          (std::abs(x) < 1e-12) ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
      const double warg = u / half_width;
      const double win = 0.5 * (1.0 + std::cos(M_PI * warg));  // Hann
      const double h = sinc * win;
      norm += h;
      if (j >= 0 && j < static_cast<int>(n_in)) {
        acc += buf.samples[static_cast<std::size_t>(j)] * h;
      }
    }
    out.samples[i] = (norm != 0.0) ? acc / norm : 0.0;
  }
  return out;
}

double preemphasis_coefficient(int sample_rate, double cutoff_hz) {
  return std::exp(-2.0 * M_PI * cutoff_hz / sample_rate);
}

AudioBuffer preemphasize(const AudioBuffer& buf, double cutoff_hz) {
  if (buf.sample_rate <= 0) throw DataError("preemphasize: bad sample rate");
  if (cutoff_hz <= 0.0 || cutoff_hz >= buf.sample_rate / 2.0) {
    throw ConfigError("preemphasize: cutoff must lie in (0, fs/2)");
  }
  const double a = preemphasis_coefficient(buf.sample_rate, cutoff_hz);
  AudioBuffer out;
  out.sample_rate = buf.sample_rate;
  out.samples.resize(buf.samples.size());
  if (buf.samples.empty()) return out;
  out.samples[0] = buf.samples[0] * (1.0 - a);
  for (std::size_t i = 1; i < buf.samples.size(); ++i) {
    out.samples[i] = buf.samples[i] - a * buf.samples[i - 1];
  }
  return out;
}

FrameSet frame_signal(const AudioBuffer& buf, double window_s, double hop_s) {
  if (buf.sample_rate <= 0) throw DataError("frame_signal: bad sample rate");
  if (hop_s <= 0.0 || window_s <= hop_s) {
    throw ConfigError("frame_signal: need window_s > hop_s > 0");
  }
  const long w = std::lround(window_s * buf.sample_rate);
  const long h = std::lround(hop_s * buf.sample_rate);
  if (w < 2) throw ConfigError("frame_signal: window shorter than 2 samples");
  if (h < 1) throw ConfigError("frame_signal: hop shorter than 1 sample");
  const long n = static_cast<long>(buf.samples.size());
  if (n < w) {
    throw DataError("frame_signal: signal shorter than one window (" +
                    std::to_string(n) + " < " + std::to_string(w) + ")");
  }

  const long count = (n - w) / h + 1;
  FrameSet set;
  set.window_s = window_s;
  set.hop_s = hop_s;
  set.frames.reserve(static_cast<std::size_t>(count));
  set.start_times.reserve(static_cast<std::size_t>(count));

  std::vector<double> hamming(static_cast<std::size_t>(w));
  for (long i = 0; i < w; ++i) {
    hamming[static_cast<std::size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * M_PI * i / (w - 1));
  }

  for (long k = 0; k < count; ++k) {
    const long s = k * h;
    std::vector<double> frame(static_cast<std::size_t>(w));
    for (long i = 0; i < w; ++i) {
      frame[static_cast<std::size_t>(i)] =
          buf.samples[static_cast<std::size_t>(s + i)] *
          hamming[static_cast<std::size_t>(i)];
    }
    set.frames.push_back(std::move(frame));
    set.start_times.push_back(static_cast<double>(s) / buf.sample_rate);
  }
  return set;
}

}  // namespace rmdx
