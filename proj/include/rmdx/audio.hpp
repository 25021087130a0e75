// rmdx/audio.hpp

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

#ifndef RMDX_AUDIO_HPP_
#define RMDX_AUDIO_HPP_

#include <string>
#include <vector>

namespace rmdx {

// Mono audio, samples nominally in [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0
               ? static_cast<double>(samples.size()) / sample_rate
               : 0.0;
  }
};

// Windowed analysis frames at a fixed hop.
struct FrameSet {
  std::vector<std::vector<double>> frames;  // all the same length
  double window_s = 0.0;
  double hop_s = 0.0;
  std::vector<double> start_times;  // seconds, one per frame
};

// Reads a RIFF/WAVE file. Only 16-bit PCM mono is accepted; anything else
// (float, ADPCM, multi-channel) is rejected rather than converted. Samples
// are scaled by 1/32768.
AudioBuffer read_wav(const std::string& path);

// Band-limited windowed-sinc resampling. Output length is
// round(n * target / source). Returns the input unchanged when the rates
// already match.
AudioBuffer resample(const AudioBuffer& buf, int target_rate);

// First-difference pre-emphasis y[n] = x[n] - a*x[n-1] with
// a = exp(-2*pi*cutoff/fs) and y[0] = x[0]*(1-a).
AudioBuffer preemphasize(const AudioBuffer& buf, double cutoff_hz);
double preemphasis_coefficient(int sample_rate, double cutoff_hz);

// Hamming-windowed framing. Frame count is floor((N - W) / H) + 1.
FrameSet frame_signal(const AudioBuffer& buf, double window_s, double hop_s);

}  // namespace rmdx

#endif  // RMDX_AUDIO_HPP_
