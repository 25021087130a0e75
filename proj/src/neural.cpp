// rmdx/neural.cpp

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

#include "rmdx/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "rmdx/errors.hpp"

namespace rmdx {

const char* cell_type_name(CellType cell) {
  return cell == CellType::BILSTM ? "bilstm" : "bigru";
}

CellType cell_type_from_name(const std::string& name) {
  if (name == "bilstm") return CellType::BILSTM;
  if (name == "bigru") return CellType::BIGRU;
  throw ConfigError("unknown cell type '" + name + "'");
}

const char* optimizer_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::ADAM:
      return "adam";
    case OptimizerKind::RMSPROP:
      return "rmsprop";
    default:
      return "sgd";
  }
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::ADAM;
  if (name == "rmsprop") return OptimizerKind::RMSPROP;
  if (name == "sgd") return OptimizerKind::SGD;
  throw ConfigError("unknown optimizer '" + name + "'");
}

void Architecture::validate() const {
  if (input_channels < 1) throw ConfigError("architecture: input_channels < 1");
  if (recurrent_layers < 1 || recurrent_layers > 4) {
    throw ConfigError("architecture: recurrent_layers must be in 1..4");
  }
  if (hidden_size < 1) throw ConfigError("architecture: hidden_size < 1");
  if (dense_layers < 1 || dense_layers > 3) {
    throw ConfigError("architecture: dense_layers must be in 1..3");
  }
  if (dense_width < 1) throw ConfigError("architecture: dense_width < 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("architecture: dropout must be in [0, 1)");
  }
}

namespace {

int gate_count(CellType cell) { return cell == CellType::BILSTM ? 4 : 3; }

// Dense-layer sizes (in, out) for the whole stack.
std::vector<std::pair<int, int>> dense_shapes(const Architecture& arch) {
  std::vector<std::pair<int, int>> shapes;
  int in = 2 * arch.hidden_size;
  for (int i = 0; i < arch.dense_layers; ++i) {
    const int out = (i == arch.dense_layers - 1) ? 1 : arch.dense_width;
    shapes.emplace_back(in, out);
    in = out;
  }
  return shapes;
}

int layer_input_size(const Architecture& arch, int layer) {
  return layer == 0 ? arch.input_channels : 2 * arch.hidden_size;
}

}  // namespace

std::int64_t count_params(const Architecture& arch) {
  arch.validate();
  const std::int64_t g = gate_count(arch.cell);
  const std::int64_t h = arch.hidden_size;
  std::int64_t total = 0;
  for (int l = 0; l < arch.recurrent_layers; ++l) {
    const std::int64_t d = layer_input_size(arch, l);
    total += 2 * g * (h * (d + h) + h);
  }
  for (const auto& [in, out] : dense_shapes(arch)) {
    total += static_cast<std::int64_t>(in) * out + out;
  }
  return total;
}

namespace {

void fill_uniform(Eigen::MatrixXd& m, double bound, Rng& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = rng.uniform(-bound, bound);
    }
  }
}

}  // namespace

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  const int g = gate_count(arch.cell);
  const int h = arch.hidden_size;

  ModelParams params;
  for (int l = 0; l < arch.recurrent_layers; ++l) {
    const int d = layer_input_size(arch, l);
    const double input_bound = std::sqrt(6.0 / (d + h));
    const double recur_bound = std::sqrt(3.0 / h);
    RecurrentLayerParams layer;
    auto init_direction = [&](Eigen::MatrixXd& w, Eigen::MatrixXd& u,
                              Eigen::VectorXd& b) {
      w.resize(g * h, d);
      u.resize(g * h, h);
      fill_uniform(w, input_bound, rng);
      fill_uniform(u, recur_bound, rng);
      b = Eigen::VectorXd::Zero(g * h);
      if (arch.cell == CellType::BILSTM) b.segment(h, h).setOnes();
    };
    init_direction(layer.w_fwd, layer.u_fwd, layer.b_fwd);
    init_direction(layer.w_bwd, layer.u_bwd, layer.b_bwd);
    params.recurrent.push_back(std::move(layer));
  }
  for (const auto& [in, out] : dense_shapes(arch)) {
    DenseLayerParams layer;
    layer.w.resize(out, in);
    fill_uniform(layer.w, std::sqrt(6.0 / (in + out)), rng);
    layer.b = Eigen::VectorXd::Zero(out);
    params.dense.push_back(std::move(layer));
  }
  return params;
}

namespace {

// Runs one direction of one recurrent layer. On entry `gates` must hold
// w * x_all with the bias added (pre-activation input contribution); on
// exit it holds post-activation gate values and h/c hold the state
// sequences. Column block t*B..(t+1)*B of each matrix is timestep t.
void run_lstm_direction(const Eigen::MatrixXd& u, int h, int steps, int batch,
                        bool reverse, Eigen::MatrixXd& gates,
                        Eigen::MatrixXd& c_states, Eigen::MatrixXd& h_states) {
  c_states.resize(h, steps * batch);
  h_states.resize(h, steps * batch);
  for (int s = 0; s < steps; ++s) {
    const int t = reverse ? steps - 1 - s : s;
    const int prev = reverse ? t + 1 : t - 1;
    auto pre = gates.middleCols(t * batch, batch);
    if (s > 0) {
      pre.noalias() += u * h_states.middleCols(prev * batch, batch);
    }
    pre.topRows(h) = (1.0 / (1.0 + (-pre.topRows(h).array()).exp())).matrix();
    pre.middleRows(h, h) =
        (1.0 / (1.0 + (-pre.middleRows(h, h).array()).exp())).matrix();
    pre.middleRows(2 * h, h) = pre.middleRows(2 * h, h).array().tanh().matrix();
    pre.middleRows(3 * h, h) =
        (1.0 / (1.0 + (-pre.middleRows(3 * h, h).array()).exp())).matrix();

    auto i_gate = pre.topRows(h);
    auto f_gate = pre.middleRows(h, h);
    auto g_gate = pre.middleRows(2 * h, h);
    auto o_gate = pre.middleRows(3 * h, h);
    auto c_t = c_states.middleCols(t * batch, batch);
    c_t = i_gate.cwiseProduct(g_gate);
    if (s > 0) {
      c_t += f_gate.cwiseProduct(c_states.middleCols(prev * batch, batch));
    }
    h_states.middleCols(t * batch, batch) =
        o_gate.cwiseProduct(c_t.array().tanh().matrix());
  }
}

void run_gru_direction(const Eigen::MatrixXd& u, int h, int steps, int batch,
                       bool reverse, Eigen::MatrixXd& gates,
                       Eigen::MatrixXd& h_states) {
  h_states.resize(h, steps * batch);
  Eigen::MatrixXd rh(h, batch);
  for (int s = 0; s < steps; ++s) {
    const int t = reverse ? steps - 1 - s : s;
    const int prev = reverse ? t + 1 : t - 1;
    auto pre = gates.middleCols(t * batch, batch);
    if (s > 0) {
      pre.topRows(2 * h).noalias() +=
          u.topRows(2 * h) * h_states.middleCols(prev * batch, batch);
    }
    pre.topRows(h) = (1.0 / (1.0 + (-pre.topRows(h).array()).exp())).matrix();
    pre.middleRows(h, h) =
        (1.0 / (1.0 + (-pre.middleRows(h, h).array()).exp())).matrix();
    auto z_gate = pre.topRows(h);
    auto r_gate = pre.middleRows(h, h);
    auto n_pre = pre.middleRows(2 * h, h);
    if (s > 0) {
      rh = r_gate.cwiseProduct(h_states.middleCols(prev * batch, batch));
      n_pre.noalias() += u.bottomRows(h) * rh;
    }
    n_pre = n_pre.array().tanh().matrix();
    auto h_t = h_states.middleCols(t * batch, batch);
    h_t = (1.0 - z_gate.array()).matrix().cwiseProduct(n_pre);
    if (s > 0) {
      h_t += z_gate.cwiseProduct(h_states.middleCols(prev * batch, batch));
    }
  }
}

}  // namespace

Eigen::VectorXd forward(const Architecture& arch, const ModelParams& params,
                        const SequenceBatch& batch, bool train_mode,
                        Rng* dropout_rng, ForwardCache* cache) {
  arch.validate();
  if (batch.empty()) throw DataError("forward: empty batch");
  const int b = static_cast<int>(batch.size());
  const int t_steps = static_cast<int>(batch.front()->rows());
  for (const auto* seq : batch) {
    if (seq->rows() != t_steps || seq->cols() != arch.input_channels) {
      throw DataError("forward: shape mismatch");
    }
  }
  if (static_cast<int>(params.recurrent.size()) != arch.recurrent_layers ||
      static_cast<int>(params.dense.size()) != arch.dense_layers) {
    throw DataError("forward: parameter/architecture mismatch");
  }
  const bool needs_dropout = train_mode && arch.dropout > 0.0 &&
                             arch.dense_layers > 1;
  if (needs_dropout && dropout_rng == nullptr) {
    throw ConfigError("forward: train-mode dropout needs an rng");
  }

  const int g = gate_count(arch.cell);
  const int h = arch.hidden_size;
  const bool lstm = arch.cell == CellType::BILSTM;

  if (cache != nullptr) {
    cache->train_mode = train_mode;
    cache->batch = b;
    cache->steps = t_steps;
    cache->layers.assign(static_cast<std::size_t>(arch.recurrent_layers), {});
    cache->dense_in.clear();
    cache->dense_relu.clear();
    cache->dense_mask.clear();
  }

  // Layer 0 input: channels x (T*B), column block t holds all sequences.
  Eigen::MatrixXd x_all(arch.input_channels, t_steps * b);
  for (int t = 0; t < t_steps; ++t) {
    for (int s = 0; s < b; ++s) {
      for (int c = 0; c < arch.input_channels; ++c) {
        x_all(c, t * b + s) = (*batch[s])(t, c);
      }
    }
  }

  Eigen::MatrixXd h_fwd, h_bwd, c_fwd, c_bwd;
  for (int l = 0; l < arch.recurrent_layers; ++l) {
    const auto& layer = params.recurrent[static_cast<std::size_t>(l)];
    Eigen::MatrixXd gates_fwd = layer.w_fwd * x_all;
    gates_fwd.colwise() += layer.b_fwd;
    Eigen::MatrixXd gates_bwd = layer.w_bwd * x_all;
    gates_bwd.colwise() += layer.b_bwd;
    if (lstm) {
      run_lstm_direction(layer.u_fwd, h, t_steps, b, false, gates_fwd, c_fwd,
                         h_fwd);
      run_lstm_direction(layer.u_bwd, h, t_steps, b, true, gates_bwd, c_bwd,
                         h_bwd);
    } else {
      run_gru_direction(layer.u_fwd, h, t_steps, b, false, gates_fwd, h_fwd);
      run_gru_direction(layer.u_bwd, h, t_steps, b, true, gates_bwd, h_bwd);
    }

    if (cache != nullptr) {
      auto& lc = cache->layers[static_cast<std::size_t>(l)];
      lc.x_all = std::move(x_all);
      lc.gates_fwd = std::move(gates_fwd);
      lc.gates_bwd = std::move(gates_bwd);
      if (lstm) {
        lc.c_fwd = c_fwd;
        lc.c_bwd = c_bwd;
      }
      lc.h_fwd = h_fwd;
      lc.h_bwd = h_bwd;
    }

    if (l + 1 < arch.recurrent_layers) {
      x_all.resize(2 * h, t_steps * b);
      x_all.topRows(h) = h_fwd;
      x_all.bottomRows(h) = h_bwd;
    }
  }

  // Final states: forward at the last step, backward at the first.
  Eigen::MatrixXd act(2 * h, b);
  act.topRows(h) = h_fwd.middleCols((t_steps - 1) * b, b);
  act.bottomRows(h) = h_bwd.middleCols(0, b);

  const double keep = 1.0 - arch.dropout;
  for (int i = 0; i < arch.dense_layers; ++i) {
    const auto& layer = params.dense[static_cast<std::size_t>(i)];
    if (cache != nullptr) cache->dense_in.push_back(act);
    Eigen::MatrixXd z = layer.w * act;
    z.colwise() += layer.b;
    if (i + 1 < arch.dense_layers) {
      z = z.cwiseMax(0.0);
      if (cache != nullptr) cache->dense_relu.push_back(z);
      if (needs_dropout) {
        Eigen::MatrixXd mask(z.rows(), z.cols());
        for (Eigen::Index col = 0; col < z.cols(); ++col) {
          for (Eigen::Index row = 0; row < z.rows(); ++row) {
            mask(row, col) = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
          }
        }
        z = z.cwiseProduct(mask);
        if (cache != nullptr) cache->dense_mask.push_back(std::move(mask));
      } else if (cache != nullptr) {
        cache->dense_mask.emplace_back();
      }
      act = std::move(z);
    } else {
      act = std::move(z);  // 1 x B logits
    }
  }

  Eigen::VectorXd probs =
      (1.0 / (1.0 + (-act.row(0).transpose().array()).exp())).matrix();
  if (cache != nullptr) cache->probs = probs;
  return probs;
}

double weighted_ce_loss(const Eigen::VectorXd& probs,
                        const std::vector<int>& labels, double w0, double w1) {
  if (static_cast<std::size_t>(probs.size()) != labels.size() ||
      labels.empty()) {
    throw DataError("weighted_ce_loss: size mismatch");
  }
  constexpr double kEps = 1e-7;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p =
        std::clamp(probs(static_cast<Eigen::Index>(i)), kEps, 1.0 - kEps);
    if (labels[i] == 1) {
      total += -w1 * std::log(p);
    } else if (labels[i] == 0) {
      total += -w0 * std::log(1.0 - p);
    } else {
      throw DataError("weighted_ce_loss: labels must be 0 or 1");
    }
  }
  return total / static_cast<double>(labels.size());
}

namespace {

// Reverse pass of one direction. `dh_states` carries the loss gradient on
// every stored hidden state; the result is the gradient on the
// pre-activation gates, written into dz_all.
void lstm_backward_direction(const Eigen::MatrixXd& u,
                             const Eigen::MatrixXd& gates,
                             const Eigen::MatrixXd& c_states,
                             const Eigen::MatrixXd& dh_states, int h,
                             int steps, int batch, bool reverse,
                             Eigen::MatrixXd& dz_all) {
  dz_all.resize(4 * h, steps * batch);
  Eigen::MatrixXd dh_carry = Eigen::MatrixXd::Zero(h, batch);
  Eigen::MatrixXd dc_carry = Eigen::MatrixXd::Zero(h, batch);
  Eigen::MatrixXd dh(h, batch), dc(h, batch), tanh_c(h, batch);
  for (int s = steps - 1; s >= 0; --s) {
    const int t = reverse ? steps - 1 - s : s;
    const int prev = reverse ? t + 1 : t - 1;
    dh = dh_states.middleCols(t * batch, batch) + dh_carry;

    auto i_gate = gates.middleCols(t * batch, batch).topRows(h);
    auto f_gate = gates.middleCols(t * batch, batch).middleRows(h, h);
    auto g_gate = gates.middleCols(t * batch, batch).middleRows(2 * h, h);
    auto o_gate = gates.middleCols(t * batch, batch).middleRows(3 * h, h);
    tanh_c = c_states.middleCols(t * batch, batch).array().tanh().matrix();

    dc = dh.cwiseProduct(o_gate)
             .cwiseProduct((1.0 - tanh_c.array().square()).matrix()) +
         dc_carry;

    auto dz = dz_all.middleCols(t * batch, batch);
    // input gate
    dz.topRows(h) = dc.cwiseProduct(g_gate)
                        .cwiseProduct(i_gate)
                        .cwiseProduct((1.0 - i_gate.array()).matrix());
    // forget gate (c_prev is zero at the first recurrence step)
    if (s > 0) {
      dz.middleRows(h, h) =
          dc.cwiseProduct(c_states.middleCols(prev * batch, batch))
              .cwiseProduct(f_gate)
              .cwiseProduct((1.0 - f_gate.array()).matrix());
    } else {
      dz.middleRows(h, h).setZero();
    }
    // candidate
    dz.middleRows(2 * h, h) =
        dc.cwiseProduct(i_gate)
            .cwiseProduct((1.0 - g_gate.array().square()).matrix());
    // output gate
    dz.middleRows(3 * h, h) = dh.cwiseProduct(tanh_c)
                                  .cwiseProduct(o_gate)
                                  .cwiseProduct((1.0 - o_gate.array()).matrix());

    dh_carry.noalias() = u.transpose() * dz;
    dc_carry = dc.cwiseProduct(f_gate);
  }
}

void gru_backward_direction(const Eigen::MatrixXd& u,
                            const Eigen::MatrixXd& gates,
                            const Eigen::MatrixXd& h_states,
                            const Eigen::MatrixXd& dh_states, int h,
                            int steps, int batch, bool reverse,
                            Eigen::MatrixXd& dz_all) {
  dz_all.resize(3 * h, steps * batch);
  Eigen::MatrixXd dh_carry = Eigen::MatrixXd::Zero(h, batch);
  Eigen::MatrixXd dh(h, batch), drh(h, batch);
  for (int s = steps - 1; s >= 0; --s) {
    const int t = reverse ? steps - 1 - s : s;
    const int prev = reverse ? t + 1 : t - 1;
    dh = dh_states.middleCols(t * batch, batch) + dh_carry;

    auto z_gate = gates.middleCols(t * batch, batch).topRows(h);
    auto r_gate = gates.middleCols(t * batch, batch).middleRows(h, h);
    auto n_gate = gates.middleCols(t * batch, batch).middleRows(2 * h, h);

    auto dz = dz_all.middleCols(t * batch, batch);
    // candidate pre-activation
    dz.middleRows(2 * h, h) =
        dh.cwiseProduct((1.0 - z_gate.array()).matrix())
            .cwiseProduct((1.0 - n_gate.array().square()).matrix());
    drh.noalias() = u.bottomRows(h).transpose() * dz.middleRows(2 * h, h);

    if (s > 0) {
      auto h_prev = h_states.middleCols(prev * batch, batch);
      // update gate: dh * (h_prev - n)
      dz.topRows(h) = dh.cwiseProduct(h_prev - n_gate)
                          .cwiseProduct(z_gate)
                          .cwiseProduct((1.0 - z_gate.array()).matrix());
      // reset gate
      dz.middleRows(h, h) = drh.cwiseProduct(h_prev)
                                .cwiseProduct(r_gate)
                                .cwiseProduct((1.0 - r_gate.array()).matrix());
      dh_carry = dh.cwiseProduct(z_gate) + drh.cwiseProduct(r_gate);
    } else {
      // h_prev = 0: update-gate grad flows only through -n, reset grad
      // vanishes, and nothing is carried further back.
      dz.topRows(h) = dh.cwiseProduct(-n_gate)
                          .cwiseProduct(z_gate)
                          .cwiseProduct((1.0 - z_gate.array()).matrix());
      dz.middleRows(h, h).setZero();
      dh_carry.setZero();
    }
    if (s > 0) {
      dh_carry.noalias() += u.topRows(2 * h).transpose() * dz.topRows(2 * h);
    }
  }
}

// h_prev sequence as a contiguous matrix (zero block at the boundary).
Eigen::MatrixXd shifted_states(const Eigen::MatrixXd& h_states, int steps,
                               int batch, bool reverse) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(h_states.rows(),
                                              h_states.cols());
  if (steps < 2) return out;
  if (reverse) {
    out.leftCols((steps - 1) * batch) = h_states.rightCols((steps - 1) * batch);
  } else {
    out.rightCols((steps - 1) * batch) = h_states.leftCols((steps - 1) * batch);
  }
  return out;
}

}  // namespace

ModelGrads backward(const Architecture& arch, const ModelParams& params,
                    const ForwardCache& cache, const std::vector<int>& labels,
                    double w0, double w1) {
  arch.validate();
  if (!cache.train_mode) {
    throw DataError("backward: cache was not recorded in train mode");
  }
  if (static_cast<int>(labels.size()) != cache.batch ||
      static_cast<int>(cache.layers.size()) != arch.recurrent_layers) {
    throw DataError("backward: stale or mismatched cache");
  }
  const int b = cache.batch;
  const int t_steps = cache.steps;
  const int h = arch.hidden_size;
  const bool lstm = arch.cell == CellType::BILSTM;

  ModelGrads grads;
  grads.recurrent.resize(static_cast<std::size_t>(arch.recurrent_layers));
  grads.dense.resize(static_cast<std::size_t>(arch.dense_layers));

  // Loss gradient w.r.t. the output logit: w_y * (p - y) / B.
  Eigen::MatrixXd dz(1, b);
  for (int i = 0; i < b; ++i) {
    const double p = cache.probs(i);
    const double y = static_cast<double>(labels[static_cast<std::size_t>(i)]);
    const double w = labels[static_cast<std::size_t>(i)] == 1 ? w1 : w0;
    dz(0, i) = w * (p - y) / static_cast<double>(b);
  }

  // Dense stack, top down.
  Eigen::MatrixXd da;
  for (int i = arch.dense_layers - 1; i >= 0; --i) {
    auto& gd = grads.dense[static_cast<std::size_t>(i)];
    const auto& in = cache.dense_in[static_cast<std::size_t>(i)];
    gd.w.noalias() = dz * in.transpose();
    gd.b = dz.rowwise().sum();
    da.noalias() =
        params.dense[static_cast<std::size_t>(i)].w.transpose() * dz;
    if (i > 0) {
      const auto& mask = cache.dense_mask[static_cast<std::size_t>(i - 1)];
      if (mask.size() > 0) da = da.cwiseProduct(mask);
      const auto& relu = cache.dense_relu[static_cast<std::size_t>(i - 1)];
      dz = da.cwiseProduct(
          (relu.array() > 0.0).cast<double>().matrix());
    }
  }

  // Gradient on the concatenated final states.
  Eigen::MatrixXd dh_fwd = Eigen::MatrixXd::Zero(h, t_steps * b);
  Eigen::MatrixXd dh_bwd = Eigen::MatrixXd::Zero(h, t_steps * b);
  dh_fwd.middleCols((t_steps - 1) * b, b) = da.topRows(h);
  dh_bwd.middleCols(0, b) = da.bottomRows(h);

  Eigen::MatrixXd dz_fwd, dz_bwd;
  for (int l = arch.recurrent_layers - 1; l >= 0; --l) {
    const auto& layer = params.recurrent[static_cast<std::size_t>(l)];
    const auto& lc = cache.layers[static_cast<std::size_t>(l)];
    auto& gl = grads.recurrent[static_cast<std::size_t>(l)];

    if (lstm) {
      lstm_backward_direction(layer.u_fwd, lc.gates_fwd, lc.c_fwd, dh_fwd, h,
                              t_steps, b, false, dz_fwd);
      lstm_backward_direction(layer.u_bwd, lc.gates_bwd, lc.c_bwd, dh_bwd, h,
                              t_steps, b, true, dz_bwd);
    } else {
      gru_backward_direction(layer.u_fwd, lc.gates_fwd, lc.h_fwd, dh_fwd, h,
                             t_steps, b, false, dz_fwd);
      gru_backward_direction(layer.u_bwd, lc.gates_bwd, lc.h_bwd, dh_bwd, h,
                             t_steps, b, true, dz_bwd);
    }

    const Eigen::MatrixXd hprev_fwd = shifted_states(lc.h_fwd, t_steps, b,
                                                     false);
    const Eigen::MatrixXd hprev_bwd = shifted_states(lc.h_bwd, t_steps, b,
                                                     true);
    gl.w_fwd.noalias() = dz_fwd * lc.x_all.transpose();
    gl.w_bwd.noalias() = dz_bwd * lc.x_all.transpose();
    gl.b_fwd = dz_fwd.rowwise().sum();
    gl.b_bwd = dz_bwd.rowwise().sum();
    if (lstm) {
      gl.u_fwd.noalias() = dz_fwd * hprev_fwd.transpose();
      gl.u_bwd.noalias() = dz_bwd * hprev_bwd.transpose();
    } else {
      // The candidate block multiplies r (*) h_prev rather than h_prev.
      gl.u_fwd.resize(3 * h, h);
      gl.u_bwd.resize(3 * h, h);
      gl.u_fwd.topRows(2 * h).noalias() =
          dz_fwd.topRows(2 * h) * hprev_fwd.transpose();
      gl.u_bwd.topRows(2 * h).noalias() =
          dz_bwd.topRows(2 * h) * hprev_bwd.transpose();
      const Eigen::MatrixXd rh_fwd =
          lc.gates_fwd.middleRows(h, h).cwiseProduct(hprev_fwd);
      const Eigen::MatrixXd rh_bwd =
          lc.gates_bwd.middleRows(h, h).cwiseProduct(hprev_bwd);
      gl.u_fwd.bottomRows(h).noalias() =
          dz_fwd.bottomRows(h) * rh_fwd.transpose();
      gl.u_bwd.bottomRows(h).noalias() =
          dz_bwd.bottomRows(h) * rh_bwd.transpose();
    }

    if (l > 0) {
      // Propagate into the concatenated output of the layer below.
      Eigen::MatrixXd dx(2 * h, t_steps * b);
      dx.noalias() = layer.w_fwd.transpose() * dz_fwd;
      dx.noalias() += layer.w_bwd.transpose() * dz_bwd;
      dh_fwd = dx.topRows(h);
      dh_bwd = dx.bottomRows(h);
    }
  }
  return grads;
}

OptimizerState make_optimizer_state(const ModelParams& params) {
  auto zeros_like = [](const ModelParams& p) {
    ModelParams z = p;
    for (auto& layer : z.recurrent) {
      layer.w_fwd.setZero();
      layer.u_fwd.setZero();
      layer.b_fwd.setZero();
      layer.w_bwd.setZero();
      layer.u_bwd.setZero();
      layer.b_bwd.setZero();
    }
    for (auto& layer : z.dense) {
      layer.w.setZero();
      layer.b.setZero();
    }
    return z;
  };
  OptimizerState state;
  state.m = zeros_like(params);
  state.v = zeros_like(params);
  state.step = 0;
  return state;
}

namespace {

template <typename Fn>
void zip_params(ModelParams& p, const ModelGrads& g, ModelParams& m,
                ModelParams& v, Fn&& fn) {
  for (std::size_t l = 0; l < p.recurrent.size(); ++l) {
    fn(p.recurrent[l].w_fwd, g.recurrent[l].w_fwd, m.recurrent[l].w_fwd,
       v.recurrent[l].w_fwd);
    fn(p.recurrent[l].u_fwd, g.recurrent[l].u_fwd, m.recurrent[l].u_fwd,
       v.recurrent[l].u_fwd);
    fn(p.recurrent[l].b_fwd, g.recurrent[l].b_fwd, m.recurrent[l].b_fwd,
       v.recurrent[l].b_fwd);
    fn(p.recurrent[l].w_bwd, g.recurrent[l].w_bwd, m.recurrent[l].w_bwd,
       v.recurrent[l].w_bwd);
    fn(p.recurrent[l].u_bwd, g.recurrent[l].u_bwd, m.recurrent[l].u_bwd,
       v.recurrent[l].u_bwd);
    fn(p.recurrent[l].b_bwd, g.recurrent[l].b_bwd, m.recurrent[l].b_bwd,
       v.recurrent[l].b_bwd);
  }
  for (std::size_t l = 0; l < p.dense.size(); ++l) {
    fn(p.dense[l].w, g.dense[l].w, m.dense[l].w, v.dense[l].w);
    fn(p.dense[l].b, g.dense[l].b, m.dense[l].b, v.dense[l].b);
  }
}

}  // namespace

void optimizer_step(OptimizerState& state, ModelParams& params,
                    const ModelGrads& grads, const TrainConfig& config) {
  bool finite = true;
  zip_params(params, grads, state.m, state.v,
             [&](auto& p, const auto& g, auto& m, auto& v) {
               (void)p;
               (void)m;
               (void)v;
               if (!g.allFinite()) finite = false;
             });
  if (!finite) throw Error("optimizer_step: diverged (non-finite gradient)");

  const double lr = config.learning_rate;
  switch (config.optimizer) {
    case OptimizerKind::SGD:
      zip_params(params, grads, state.m, state.v,
                 [&](auto& p, const auto& g, auto& m, auto& v) {
                   (void)m;
                   (void)v;
                   p -= lr * g;
                 });
      break;
    case OptimizerKind::RMSPROP: {
      constexpr double kRho = 0.9, kEps = 1e-7;
      zip_params(params, grads, state.m, state.v,
                 [&](auto& p, const auto& g, auto& m, auto& v) {
                   (void)m;
                   v.array() =
                       kRho * v.array() + (1.0 - kRho) * g.array().square();
                   p.array() -= lr * g.array() / (v.array().sqrt() + kEps);
                 });
      break;
    }
    case OptimizerKind::ADAM: {
      constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
      ++state.step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
      zip_params(params, grads, state.m, state.v,
                 [&](auto& p, const auto& g, auto& m, auto& v) {
                   m.array() = kBeta1 * m.array() + (1.0 - kBeta1) * g.array();
                   v.array() =
                       kBeta2 * v.array() + (1.0 - kBeta2) * g.array().square();
                   p.array() -= lr * (m.array() / bc1) /
                                ((v.array() / bc2).sqrt() + kEps);
                 });
      break;
    }
  }
}

EarlyStopper::EarlyStopper(int patience, double min_delta)
    : patience_(patience),
      min_delta_(min_delta),
      best_loss_(std::numeric_limits<double>::infinity()) {
  if (patience_ < 1) throw ConfigError("EarlyStopper: patience < 1");
}

bool EarlyStopper::observe(double val_loss) {
  ++epoch_;
  if (val_loss < best_loss_ - min_delta_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch_;
    stale_ = 0;
    return false;
  }
  return ++stale_ >= patience_;
}

TrainedModel train(const Architecture& arch, const TrainConfig& config,
                   const std::vector<const LabeledExample*>& train_set,
                   const std::vector<const LabeledExample*>& val_set) {
  arch.validate();
  if (train_set.empty() || val_set.empty()) {
    throw DataError("train: empty train or validation set");
  }
  if (config.batch_size < 1) throw ConfigError("train: batch_size < 1");
  bool has0 = false, has1 = false;
  for (const auto* ex : train_set) {
    (ex->label == 1 ? has1 : has0) = true;
  }
  if (!has0 || !has1) throw DataError("train: train set has a single class");

  TrainedModel model;
  model.architecture = arch;
  ModelParams params = init_params(arch, config.seed);
  OptimizerState opt = make_optimizer_state(params);
  Rng shuffle_rng(config.seed + 1);
  Rng dropout_rng(config.seed + 2);

  auto batched_loss = [&](const std::vector<const LabeledExample*>& set) {
    double total = 0.0;
    for (std::size_t at = 0; at < set.size();
         at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t nb = std::min(
          static_cast<std::size_t>(config.batch_size), set.size() - at);
      SequenceBatch batch;
      std::vector<int> labels;
      for (std::size_t i = at; i < at + nb; ++i) {
        batch.push_back(&set[i]->features);
        labels.push_back(set[i]->label);
      }
      const Eigen::VectorXd probs =
          forward(arch, params, batch, false, nullptr, nullptr);
      total += weighted_ce_loss(probs, labels, config.weight0, config.weight1) *
               static_cast<double>(nb);
    }
    return total / static_cast<double>(set.size());
  };

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  ModelParams best_params = params;
  EarlyStopper stopper(config.patience);
  ForwardCache cache;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double train_total = 0.0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t nb = std::min(
          static_cast<std::size_t>(config.batch_size), order.size() - at);
      SequenceBatch batch;
      std::vector<int> labels;
      for (std::size_t i = at; i < at + nb; ++i) {
        batch.push_back(&train_set[order[i]]->features);
        labels.push_back(train_set[order[i]]->label);
      }
      const Eigen::VectorXd probs =
          forward(arch, params, batch, true, &dropout_rng, &cache);
      const double loss =
          weighted_ce_loss(probs, labels, config.weight0, config.weight1);
      if (!std::isfinite(loss)) throw Error("train: diverged");
      train_total += loss * static_cast<double>(nb);
      const ModelGrads grads =
          backward(arch, params, cache, labels, config.weight0, config.weight1);
      optimizer_step(opt, params, grads, config);
    }
    const double train_loss = train_total / static_cast<double>(order.size());
    const double val_loss = batched_loss(val_set);
    if (!std::isfinite(val_loss)) throw Error("train: diverged");
    model.curve.push_back({train_loss, val_loss});
    model.stopped_epoch = epoch;

    const bool stop = stopper.observe(val_loss);
    if (stopper.best_epoch() == epoch) best_params = params;
    if (stop) break;
  }

  model.params = std::move(best_params);
  model.best_epoch = stopper.best_epoch();
  model.best_val_loss = stopper.best_loss();
  return model;
}

std::vector<GridPoint> enumerate_grid(const GridSpec& grid,
                                      const Architecture& base,
                                      const TrainConfig& base_config) {
  if (grid.learning_rates.empty() || grid.batch_sizes.empty() ||
      grid.optimizers.empty() || grid.recurrent_layers.empty() ||
      grid.dense_layers.empty() || grid.dropouts.empty()) {
    throw ConfigError("enumerate_grid: empty candidate set");
  }
  std::vector<GridPoint> points;
  for (const double lr : grid.learning_rates) {
    for (const int bs : grid.batch_sizes) {
      for (const OptimizerKind opt : grid.optimizers) {
        for (const int rl : grid.recurrent_layers) {
          for (const int dl : grid.dense_layers) {
            for (const double drop : grid.dropouts) {
              GridPoint p;
              p.arch = base;
              p.arch.recurrent_layers = rl;
              p.arch.dense_layers = dl;
              p.arch.dropout = drop;
              p.config = base_config;
              p.config.learning_rate = lr;
              p.config.batch_size = bs;
              p.config.optimizer = opt;
              p.arch.validate();
              points.push_back(std::move(p));
            }
          }
        }
      }
    }
  }
  return points;
}

std::size_t select_best(const std::vector<GridResult>& results) {
  if (results.empty()) throw DataError("select_best: empty results");
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i) {
    const auto& cur = results[i];
    const auto& top = results[best];
    if (cur.mean_val_loss < top.mean_val_loss ||
        (cur.mean_val_loss == top.mean_val_loss &&
         cur.param_count < top.param_count)) {
      best = i;
    }
  }
  return best;
}

GridSearchOutcome grid_search(const GridSpec& grid, const Architecture& base,
                              const TrainConfig& base_config,
                              const std::vector<FoldSets>& folds) {
  if (folds.empty()) throw DataError("grid_search: no folds");
  const std::vector<GridPoint> points =
      enumerate_grid(grid, base, base_config);

  GridSearchOutcome out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& point = points[i];
    double total = 0.0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      TrainConfig cfg = point.config;
      cfg.seed = base_config.seed + f;
      std::vector<int> labels;
      for (const auto* ex : folds[f].train) labels.push_back(ex->label);
      const auto [w0, w1] = class_weights(labels);
      cfg.weight0 = w0;
      cfg.weight1 = w1;
      const TrainedModel model =
          train(point.arch, cfg, folds[f].train, folds[f].validation);
      total += model.best_val_loss;
    }
    GridResult result;
    result.point = point;
    result.mean_val_loss = total / static_cast<double>(folds.size());
    result.param_count = count_params(point.arch);
    out.table.push_back(std::move(result));
  }
  out.best = out.table[select_best(out.table)];
  return out;
}

namespace {

void append_matrix(std::vector<double>& flat, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
}

void take_matrix(const std::vector<double>& flat, std::size_t& at,
                 Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat[at++];
  }
}

void take_vector(const std::vector<double>& flat, std::size_t& at,
                 Eigen::VectorXd& v) {
  for (Eigen::Index r = 0; r < v.size(); ++r) v(r) = flat[at++];
}

}  // namespace

std::vector<double> flatten_params(const ModelParams& params) {
  std::vector<double> flat;
  for (const auto& layer : params.recurrent) {
    append_matrix(flat, layer.w_fwd);
    append_matrix(flat, layer.u_fwd);
    append_matrix(flat, layer.b_fwd);
    append_matrix(flat, layer.w_bwd);
    append_matrix(flat, layer.u_bwd);
    append_matrix(flat, layer.b_bwd);
  }
  for (const auto& layer : params.dense) {
    append_matrix(flat, layer.w);
    append_matrix(flat, layer.b);
  }
  return flat;
}

ModelParams unflatten_params(const Architecture& arch,
                             const std::vector<double>& flat) {
  arch.validate();
  if (static_cast<std::int64_t>(flat.size()) != count_params(arch)) {
    throw DataError("unflatten_params: weight count does not match");
  }
  const int g = gate_count(arch.cell);
  const int h = arch.hidden_size;
  ModelParams params;
  std::size_t at = 0;
  for (int l = 0; l < arch.recurrent_layers; ++l) {
    const int d = layer_input_size(arch, l);
    RecurrentLayerParams layer;
    layer.w_fwd.resize(g * h, d);
    layer.u_fwd.resize(g * h, h);
    layer.b_fwd.resize(g * h);
    layer.w_bwd.resize(g * h, d);
    layer.u_bwd.resize(g * h, h);
    layer.b_bwd.resize(g * h);
    take_matrix(flat, at, layer.w_fwd);
    take_matrix(flat, at, layer.u_fwd);
    take_vector(flat, at, layer.b_fwd);
    take_matrix(flat, at, layer.w_bwd);
    take_matrix(flat, at, layer.u_bwd);
    take_vector(flat, at, layer.b_bwd);
    params.recurrent.push_back(std::move(layer));
  }
  for (const auto& [in, out] : dense_shapes(arch)) {
    DenseLayerParams layer;
    layer.w.resize(out, in);
    layer.b.resize(out);
    take_matrix(flat, at, layer.w);
    take_vector(flat, at, layer.b);
    params.dense.push_back(std::move(layer));
  }
  return params;
}

namespace {

nlohmann::json architecture_to_json(const Architecture& arch) {
  return nlohmann::json{{"cell", cell_type_name(arch.cell)},
                        {"input_channels", arch.input_channels},
                        {"recurrent_layers", arch.recurrent_layers},
                        {"hidden_size", arch.hidden_size},
                        {"dense_layers", arch.dense_layers},
                        {"dense_width", arch.dense_width},
                        {"dropout", arch.dropout}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture arch;
  arch.cell = cell_type_from_name(j.at("cell").get<std::string>());
  arch.input_channels = j.at("input_channels").get<int>();
  arch.recurrent_layers = j.at("recurrent_layers").get<int>();
  arch.hidden_size = j.at("hidden_size").get<int>();
  arch.dense_layers = j.at("dense_layers").get<int>();
  arch.dense_width = j.at("dense_width").get<int>();
  arch.dropout = j.at("dropout").get<double>();
  arch.validate();
  return arch;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format"] = "rmdx-ckpt-1";
  j["architecture"] = architecture_to_json(ckpt.architecture);
  j["seed"] = ckpt.seed;
  j["config_hash"] = ckpt.config_hash;
  j["weights"] = flatten_params(ckpt.params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(1) << "\n";
  if (!out) throw DataError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid checkpoint JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "rmdx-ckpt-1") {
      throw DataError(path + ": unsupported checkpoint format");
    }
    Checkpoint ckpt;
    ckpt.architecture = architecture_from_json(j.at("architecture"));
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.config_hash = j.at("config_hash").get<std::string>();
    const auto flat = j.at("weights").get<std::vector<double>>();
    for (const double v : flat) {
      if (!std::isfinite(v)) {
        throw DataError(path + ": non-finite weight in checkpoint");
      }
    }
    ckpt.params = unflatten_params(ckpt.architecture, flat);
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint: " + e.what());
  }
}

}  // namespace rmdx
