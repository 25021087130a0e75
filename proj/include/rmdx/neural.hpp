// rmdx/neural.hpp

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

#ifndef RMDX_NEURAL_HPP_
#define RMDX_NEURAL_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "rmdx/dataset.hpp"
#include "rmdx/rng.hpp"

namespace rmdx {

enum class CellType { BILSTM, BIGRU };
enum class OptimizerKind { ADAM, RMSPROP, SGD };

const char* cell_type_name(CellType cell);
CellType cell_type_from_name(const std::string& name);
const char* optimizer_name(OptimizerKind kind);
OptimizerKind optimizer_from_name(const std::string& name);

// Bidirectional recurrent classifier shape. `dense_layers` counts every
// dense layer including the 1-unit output: 1 -> [2h -> 1],
// 2 -> [2h -> w -> 1], 3 -> [2h -> w -> w -> 1].
struct Architecture {
  CellType cell = CellType::BILSTM;
  int input_channels = 9;
  int recurrent_layers = 2;
  int hidden_size = 56;  // per direction
  int dense_layers = 2;
  int dense_width = 32;
  double dropout = 0.5;

  void validate() const;
};

// One bidirectional recurrent layer. Weight rows are gate-stacked:
// LSTM [input, forget, cell, output] (4h rows), GRU
// [update, reset, candidate] (3h rows). w maps the layer input, u the
// previous hidden state of the same direction.
struct RecurrentLayerParams {
  Eigen::MatrixXd w_fwd, u_fwd;
  Eigen::VectorXd b_fwd;
  Eigen::MatrixXd w_bwd, u_bwd;
  Eigen::VectorXd b_bwd;
};

struct DenseLayerParams {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

// Flat serialization order (used by flatten_params / checkpoints and by
// init_params for its random-draw order): for each recurrent layer,
// w_fwd row-major, u_fwd row-major, b_fwd, then the same for the backward
// direction; then for each dense layer, w row-major then b.
struct ModelParams {
  std::vector<RecurrentLayerParams> recurrent;
  std::vector<DenseLayerParams> dense;
};
using ModelGrads = ModelParams;

struct TrainConfig {
  double learning_rate = 3e-4;
  int batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::ADAM;
  int max_epochs = 50;
  int patience = 5;
  std::uint64_t seed = 7;
  double weight0 = 1.0;  // class-0 loss weight
  double weight1 = 1.0;
};

struct EpochLoss {
  double train = 0.0;
  double validation = 0.0;
};

// Early-stopping bookkeeping: an epoch improves only when its validation
// loss is at least `min_delta` below the best seen so far; after
// `patience` consecutive non-improving epochs observe() returns true.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta = 1e-6);

  // Records the loss of the next epoch (1-based); true means stop now.
  bool observe(double val_loss);
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  double min_delta_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
  int stale_ = 0;
};

struct TrainedModel {
  Architecture architecture;
  ModelParams params;  // weights of the best validation epoch
  std::vector<EpochLoss> curve;
  int stopped_epoch = 0;  // last executed epoch, 1-based
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

// Sequences of a minibatch; each matrix is T x input_channels with a
// shared T.
using SequenceBatch = std::vector<const Eigen::MatrixXd*>;

// Activations recorded by forward() for backward(). Time-major column
// blocks: column block [t*B, (t+1)*B) of each matrix belongs to step t.
struct RecurrentLayerCache {
  Eigen::MatrixXd x_all;                  // d x T*B layer input
  Eigen::MatrixXd gates_fwd, gates_bwd;   // G*h x T*B, post-activation
  Eigen::MatrixXd c_fwd, c_bwd;           // h x T*B (LSTM only)
  Eigen::MatrixXd h_fwd, h_bwd;           // h x T*B
};

struct ForwardCache {
  bool train_mode = false;
  int batch = 0;
  int steps = 0;
  std::vector<RecurrentLayerCache> layers;
  std::vector<Eigen::MatrixXd> dense_in;    // input to each dense layer
  std::vector<Eigen::MatrixXd> dense_relu;  // ReLU output, pre-dropout
  std::vector<Eigen::MatrixXd> dense_mask;  // scaled dropout masks
  Eigen::VectorXd probs;
};

// Deterministic initialization: uniform(+/- sqrt(6/(fan_in+fan_out))) for
// input and dense weights, uniform(+/- sqrt(3/h)) for recurrent weights,
// biases zero except the LSTM forget gate (1). Values are drawn in flat
// serialization order; biases consume no randomness.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

std::int64_t count_params(const Architecture& arch);

// Runs the network. In train mode, dropout is applied to dense hidden
// activations using `dropout_rng` (inverted scaling) and activations are
// recorded into `cache` when non-null. Returns one probability per
// sequence.
Eigen::VectorXd forward(const Architecture& arch, const ModelParams& params,
                        const SequenceBatch& batch, bool train_mode,
                        Rng* dropout_rng, ForwardCache* cache);

// Mean of -w_y * (y ln p + (1-y) ln(1-p)); probabilities are clamped to
// [1e-7, 1 - 1e-7] before the logs.
double weighted_ce_loss(const Eigen::VectorXd& probs,
                        const std::vector<int>& labels, double w0, double w1);

// Exact gradients of weighted_ce_loss w.r.t. every parameter by
// backpropagation through time, consuming a train-mode forward cache.
ModelGrads backward(const Architecture& arch, const ModelParams& params,
                    const ForwardCache& cache, const std::vector<int>& labels,
                    double w0, double w1);

// Moment accumulators shaped like the parameters (ADAM uses both, RMSprop
// only `v`, SGD neither).
struct OptimizerState {
  ModelParams m, v;
  long step = 0;
};

OptimizerState make_optimizer_state(const ModelParams& params);

// SGD: p -= lr*g. RMSprop: v = 0.9v + 0.1g^2, p -= lr*g/(sqrt(v)+1e-7).
// ADAM: beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected moments.
// Non-finite gradients raise "diverged".
void optimizer_step(OptimizerState& state, ModelParams& params,
                    const ModelGrads& grads, const TrainConfig& config);

// Full training loop: per-epoch seeded shuffle, minibatch BPTT updates,
// per-epoch validation loss, early stopping after `patience` consecutive
// epochs without a strict decrease of at least 1e-6, weights restored from
// the best validation epoch. Derived PRNG streams: seed for init, seed+1
// for shuffling, seed+2 for dropout.
TrainedModel train(const Architecture& arch, const TrainConfig& config,
                   const std::vector<const LabeledExample*>& train_set,
                   const std::vector<const LabeledExample*>& val_set);

// Hyperparameter candidate sets; defaults are the full search space.
struct GridSpec {
  std::vector<double> learning_rates{1e-4, 3e-4, 1e-3, 1e-2};
  std::vector<int> batch_sizes{16, 32, 64, 128};
  std::vector<OptimizerKind> optimizers{OptimizerKind::ADAM,
                                        OptimizerKind::RMSPROP,
                                        OptimizerKind::SGD};
  std::vector<int> recurrent_layers{1, 2, 3, 4};
  std::vector<int> dense_layers{1, 2, 3};
  std::vector<double> dropouts{0.3, 0.5, 0.7};
};

struct GridPoint {
  Architecture arch;
  TrainConfig config;
};

struct GridResult {
  GridPoint point;
  double mean_val_loss = 0.0;
  std::int64_t param_count = 0;
};

struct GridSearchOutcome {
  GridResult best;
  std::vector<GridResult> table;  // enumeration order
};

struct FoldSets {
  std::vector<const LabeledExample*> train;
  std::vector<const LabeledExample*> validation;
};

// Cartesian product of the candidate sets over `base` (learning rate
// outermost, dropout innermost). Fields not in the grid are taken from
// `base` / `base_config`.
std::vector<GridPoint> enumerate_grid(const GridSpec& grid,
                                      const Architecture& base,
                                      const TrainConfig& base_config);

// Index of the winning row: lowest mean_val_loss, ties broken by fewer
// parameters, then by position.
std::size_t select_best(const std::vector<GridResult>& results);

// Exhaustive search scored by mean best-validation-loss across folds; ties
// broken by fewer parameters, then enumeration order. Per-fold seeds are
// base seed + fold index; per-fold class weights come from the fold's
// train labels.
GridSearchOutcome grid_search(const GridSpec& grid, const Architecture& base,
                              const TrainConfig& base_config,
                              const std::vector<FoldSets>& folds);

// Flat weight vector in the documented serialization order.
std::vector<double> flatten_params(const ModelParams& params);
ModelParams unflatten_params(const Architecture& arch,
                             const std::vector<double>& flat);

struct Checkpoint {
  Architecture architecture;
  ModelParams params;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// JSON checkpoint, format tag "rmdx-ckpt-1": architecture descriptor, the
// flat weight array, the training seed, and the caller's config hash.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rmdx

#endif  // RMDX_NEURAL_HPP_
