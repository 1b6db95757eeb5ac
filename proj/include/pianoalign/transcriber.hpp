// Copyright 2026 The pianoalign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pianoalign/common.hpp"
#include "pianoalign/frontend.hpp"
#include "pianoalign/midi.hpp"

namespace pianoalign {

enum class Direction { kForward, kBackward };

/// One direction of an LSTM layer. Gate blocks are stacked row-wise in the
/// order input, forget, cell, output; gates use the logistic sigmoid, the
/// cell candidate and cell output use tanh.
struct LstmWeights {
  Matrix input;      // 4U x I
  Matrix recurrent;  // 4U x U
  Vector bias;       // 4U

  int units() const { return static_cast<int>(recurrent.cols()); }
  int input_dim() const { return static_cast<int>(input.cols()); }
};

struct BiLstmLayer {
  LstmWeights forward;
  LstmWeights backward;

  int units() const { return forward.units(); }
  int input_dim() const { return forward.input_dim(); }
};

/// Fully connected sigmoid layer on top of the last LSTM layer.
struct OutputLayer {
  Matrix weights;  // out x 2U
  Vector bias;     // out
};

/// Mutable view of one parameter tensor (contiguous storage).
struct TensorView {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool regularized = false;  // LSTM input/recurrent matrices

  Eigen::Index size() const { return rows * cols; }
};

/// Bidirectional LSTM stack plus output layer. Layer l > 0 consumes the
/// concatenated [forward | backward] hidden states of layer l - 1.
struct Network {
  std::vector<BiLstmLayer> layers;
  OutputLayer output;

  int input_dim() const { return layers.empty() ? 0 : layers.front().input_dim(); }
  int output_dim() const { return static_cast<int>(output.bias.size()); }
  std::vector<int> layer_units() const;

  /// Zero tensors of the given shape.
  static Network zeros(int input_dim, const std::vector<int>& units, int output_dim);
  /// Uniform(-scale, scale) initialization from `seed`.
  static Network random(int input_dim, const std::vector<int>& units, int output_dim, std::uint64_t seed,
                        double scale = 0.1);

  /// Tensors in a fixed order (layer, direction, input/recurrent/bias, then output).
  std::vector<TensorView> tensors();
  std::size_t parameter_count() const;

  /// Sigmoid outputs for one segment processed with zero initial states.
  Matrix forward(const Matrix& x) const;

  /// Throws InputError on inconsistent shapes or non-finite values.
  void validate() const;

  friend bool operator==(const Network& a, const Network& b);
};

/// Runs one direction over `x` (T x I) from zero state; the backward
/// direction reads the sequence reversed and returns its output re-reversed.
Matrix lstm_forward(const Matrix& x, const LstmWeights& weights, Direction direction);

// ---------------------------------------------------------------------------
// Segmented inference

inline constexpr int kSegmentLength = 50;
inline constexpr int kSegmentHop = 25;

/// One inference segment [begin, end) contributing frames [keep_begin, keep_end).
struct SegmentSpan {
  int begin = 0;
  int end = 0;
  int keep_begin = 0;
  int keep_end = 0;
};

/// Half-overlapping segments; each keeps its middle half except the first
/// (kept from its start) and the last (kept to the end). The kept ranges
/// partition [0, n_frames).
std::vector<SegmentSpan> segment_plan(int n_frames, int segment_len = kSegmentLength);

/// Applies `net` segment by segment and assembles the kept frames.
Matrix predict_segmented(const Matrix& x, const Network& net, int threads = 1, int segment_len = kSegmentLength);

// ---------------------------------------------------------------------------
// Model container

/// Frame activations in [0, 1].
struct ActivationMatrix {
  Matrix values;
  Mode mode = Mode::kNote88;
  int fps = kFramesPerSecond;
};

struct ModelWeights {
  Mode mode = Mode::kNote88;
  Network network;
  Standardization standardization;
  std::string frontend_hash;

  /// Layer sizes used when none are given: 200/200 for note88, 100/50 otherwise.
  static std::vector<int> default_layers(Mode mode);

  /// Copies `net` with every value rounded to float32, the storage precision.
  static ModelWeights from_network(Mode mode, const Network& net, Standardization stats, std::string frontend_hash);

  /// Output width must match the mode; tensors finite and consistent.
  void validate() const;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

inline constexpr int kModelFormatVersion = 1;

/// u64 LE manifest length, UTF-8 JSON manifest, zero padding to an 8-byte
/// boundary, then float32 LE tensors in manifest order.
std::vector<std::uint8_t> serialize_model(const ModelWeights& model);
ModelWeights deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const ModelWeights& model);
ModelWeights load_model(const std::filesystem::path& path);

/// Refuses inputs produced by a different front-end configuration.
ActivationMatrix predict(const InputMatrix& input, const ModelWeights& model, int threads = 1);

// ---------------------------------------------------------------------------
// Training

struct TrainingConfig {
  int segment_len = 50;
  double dropout = 0.5;
  double l2 = 1e-4;
  double lr0 = 0.1;
  double lr_decay_factor = 3.0;
  int patience = 10;
  int max_decays = 6;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int max_epochs = 1000;
  long max_steps = 0;  // 0 = unlimited
  /// Validation loss must drop below best * (1 - rel) to count as improvement.
  double min_relative_improvement = 1e-4;
  std::vector<int> layers;  // empty = ModelWeights::default_layers(mode)
  double init_scale = 0.1;

  void validate() const;
};

/// One training piece: standardized inputs and the targets for one mode.
struct TrainingPiece {
  Matrix input;
  Matrix target;
};

TrainingPiece make_training_piece(const InputMatrix& input, const LabelSet& labels, Mode mode);

struct EpochLog {
  int epoch = 0;
  long steps = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;       // mean BCE, dropout off
  double validation_loss = 0.0;  // mean BCE, dropout off
  double best_validation = 0.0;
  int decays = 0;
  bool improved = false;
  bool decayed = false;  // learning rate divided after this epoch
};

struct TrainingResult {
  Network best;
  std::vector<EpochLog> log;
  long steps = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean binary cross entropy (from logits) over all cells.
double mean_bce(const Matrix& logits, const Matrix& targets);

/// Dropout masks for each LSTM layer output (entries 0 or 1 / (1 - p)).
using DropoutMasks = std::vector<Matrix>;

/// Loss = mean BCE + l2 * (sum of squared LSTM input/recurrent weights).
/// Fills `gradient` (same shapes as `net`) when non-null.
double loss_and_gradient(const Network& net, const Matrix& x, const Matrix& y, double l2,
                         const DropoutMasks* masks, Network* gradient);

/// SGD with full BPTT inside each segment and a plateau learning-rate
/// schedule; returns the weights with the best validation loss. An empty
/// validation set validates on the training set. `on_epoch` observes
/// progress.
TrainingResult train(std::span<const TrainingPiece> training, std::span<const TrainingPiece> validation,
                     const TrainingConfig& config, Network initial,
                     const std::function<void(const EpochLog&)>& on_epoch = {});

/// Initial network for `mode` following `config`.
Network initial_network(const TrainingConfig& config, Mode mode, int input_dim);

// ---------------------------------------------------------------------------
// Evaluation

struct FrameScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  long true_positives = 0;
  long false_positives = 0;
  long false_negatives = 0;
};

/// Cell-wise scores after binarizing pred >= threshold. Both empty of
/// positives gives P = R = F = 1; otherwise F = 0 when TP = 0.
FrameScore frame_f_score(const Matrix& pred, const Matrix& truth, double threshold = 0.5);

}  // namespace pianoalign
