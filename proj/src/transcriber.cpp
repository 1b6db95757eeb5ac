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


#include "pianoalign/transcriber.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <thread>

#include "json.hpp"

namespace pianoalign {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Matrix reversed_rows(const Matrix& m) { return m.colwise().reverse(); }

LstmWeights zero_direction(int input_dim, int units) {
  return {Matrix::Zero(4 * units, input_dim), Matrix::Zero(4 * units, units), Vector::Zero(4 * units)};
}

// Activations of one direction, in processing order.
struct DirectionCache {
  Matrix x;      // T x I
  Matrix gates;  // T x 4U: i, f, g, o after their nonlinearities
  Matrix cell;   // T x U
  Matrix cell_tanh;
  Matrix hidden;  // T x U
};

DirectionCache run_direction(Matrix x, const LstmWeights& w) {
  const Eigen::Index steps = x.rows();
  const int u = w.units();
  DirectionCache cache;
  cache.gates.resize(steps, 4 * u);
  cache.cell.resize(steps, u);
  cache.cell_tanh.resize(steps, u);
  cache.hidden.resize(steps, u);
  Matrix pre = x * w.input.transpose();
  pre.rowwise() += w.bias.transpose();
  Vector h = Vector::Zero(u);
  Vector c = Vector::Zero(u);
  for (Eigen::Index t = 0; t < steps; ++t) {
    Vector z = pre.row(t).transpose() + w.recurrent * h;
    for (int k = 0; k < u; ++k) {
      const double ig = sigmoid(z(k));
      const double fg = sigmoid(z(u + k));
      const double gg = std::tanh(z(2 * u + k));
      const double og = sigmoid(z(3 * u + k));
      c(k) = fg * c(k) + ig * gg;
      const double tc = std::tanh(c(k));
      h(k) = og * tc;
      cache.gates(t, k) = ig;
      cache.gates(t, u + k) = fg;
      cache.gates(t, 2 * u + k) = gg;
      cache.gates(t, 3 * u + k) = og;
      cache.cell_tanh(t, k) = tc;
    }
    cache.cell.row(t) = c.transpose();
    cache.hidden.row(t) = h.transpose();
  }
  cache.x = std::move(x);
  return cache;
}

// Backpropagates d(loss)/d(hidden) through one direction (processing order).
// Accumulates into `grad` and returns d(loss)/d(x).
Matrix backprop_direction(const DirectionCache& cache, const Matrix& d_hidden, const LstmWeights& w,
                          LstmWeights& grad) {
  const Eigen::Index steps = cache.x.rows();
  const int u = w.units();
  Matrix d_pre(steps, 4 * u);
  Vector dh_next = Vector::Zero(u);
  Vector dc_next = Vector::Zero(u);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    Vector dz(4 * u);
    for (int k = 0; k < u; ++k) {
      const double ig = cache.gates(t, k);
      const double fg = cache.gates(t, u + k);
      const double gg = cache.gates(t, 2 * u + k);
      const double og = cache.gates(t, 3 * u + k);
      const double tc = cache.cell_tanh(t, k);
      const double c_prev = t > 0 ? cache.cell(t - 1, k) : 0.0;
      const double dh = d_hidden(t, k) + dh_next(k);
      const double dc = dh * og * (1.0 - tc * tc) + dc_next(k);
      dz(k) = dc * gg * ig * (1.0 - ig);
      dz(u + k) = dc * c_prev * fg * (1.0 - fg);
      dz(2 * u + k) = dc * ig * (1.0 - gg * gg);
      dz(3 * u + k) = dh * tc * og * (1.0 - og);
      dc_next(k) = dc * fg;
    }
    d_pre.row(t) = dz.transpose();
    if (t > 0) grad.recurrent.noalias() += dz * cache.hidden.row(t - 1);
    dh_next.noalias() = w.recurrent.transpose() * dz;
  }
  grad.input.noalias() += d_pre.transpose() * cache.x;
  grad.bias += d_pre.colwise().sum().transpose();
  return d_pre * w.input;
}

void check_direction(const LstmWeights& w, int input_dim, const char* where) {
  const int u = w.units();
  if (w.input.rows() != 4 * u || w.input.cols() != input_dim || w.recurrent.rows() != 4 * u ||
      w.bias.size() != 4 * u)
    throw InputError(std::string("inconsistent LSTM tensor shapes in ") + where);
  if (!w.input.allFinite() || !w.recurrent.allFinite() || !w.bias.allFinite())
    throw InputError(std::string("non-finite LSTM weights in ") + where);
}

}  // namespace

// ---------------------------------------------------------------------------
// Network

std::vector<int> Network::layer_units() const {
  std::vector<int> units;
  for (const auto& l : layers) units.push_back(l.units());
  return units;
}

Network Network::zeros(int input_dim, const std::vector<int>& units, int output_dim) {
  if (units.empty()) throw InputError("network needs at least one LSTM layer");
  if (input_dim <= 0 || output_dim <= 0) throw InputError("network dimensions must be positive");
  Network net;
  int in = input_dim;
  for (int u : units) {
    if (u <= 0) throw InputError("LSTM layer sizes must be positive");
    net.layers.push_back({zero_direction(in, u), zero_direction(in, u)});
    in = 2 * u;
  }
  net.output.weights = Matrix::Zero(output_dim, in);
  net.output.bias = Vector::Zero(output_dim);
  return net;
}

Network Network::random(int input_dim, const std::vector<int>& units, int output_dim, std::uint64_t seed,
                        double scale) {
  Network net = zeros(input_dim, units, output_dim);
  std::mt19937_64 rng(seed);
  for (auto& t : net.tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = scale * (2.0 * unit_uniform(rng) - 1.0);
  return net;
}

std::vector<TensorView> Network::tensors() {
  std::vector<TensorView> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (int d = 0; d < 2; ++d) {
      LstmWeights& w = d == 0 ? layers[l].forward : layers[l].backward;
      const std::string prefix = "lstm" + std::to_string(l) + (d == 0 ? ".forward." : ".backward.");
      out.push_back({prefix + "input", w.input.data(), w.input.rows(), w.input.cols(), true});
      out.push_back({prefix + "recurrent", w.recurrent.data(), w.recurrent.rows(), w.recurrent.cols(), true});
      out.push_back({prefix + "bias", w.bias.data(), w.bias.size(), 1, false});
    }
  }
  out.push_back({"output.weights", output.weights.data(), output.weights.rows(), output.weights.cols(), false});
  out.push_back({"output.bias", output.bias.data(), output.bias.size(), 1, false});
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(output.weights.size() + output.bias.size());
  for (const auto& l : layers)
    for (const LstmWeights* w : {&l.forward, &l.backward})
      n += static_cast<std::size_t>(w->input.size() + w->recurrent.size() + w->bias.size());
  return n;
}

void Network::validate() const {
  if (layers.empty()) throw InputError("network has no LSTM layers");
  int in = input_dim();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string where = "layer " + std::to_string(l);
    check_direction(layers[l].forward, in, where.c_str());
    check_direction(layers[l].backward, in, where.c_str());
    if (layers[l].backward.units() != layers[l].forward.units())
      throw InputError("forward and backward unit counts differ in " + where);
    in = 2 * layers[l].units();
  }
  if (output.weights.cols() != in || output.weights.rows() != output.bias.size())
    throw InputError("inconsistent output layer shape");
  if (!output.weights.allFinite() || !output.bias.allFinite()) throw InputError("non-finite output weights");
}

bool operator==(const Network& a, const Network& b) {
  auto same = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0;
  };
  auto same_direction = [&](const LstmWeights& x, const LstmWeights& y) {
    return same(x.input, y.input) && same(x.recurrent, y.recurrent) && same(x.bias, y.bias);
  };
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    if (!same_direction(a.layers[l].forward, b.layers[l].forward) ||
        !same_direction(a.layers[l].backward, b.layers[l].backward))
      return false;
  return same(a.output.weights, b.output.weights) && same(a.output.bias, b.output.bias);
}

Matrix lstm_forward(const Matrix& x, const LstmWeights& weights, Direction direction) {
  if (x.cols() != weights.input_dim())
    throw InputError("LSTM input has " + std::to_string(x.cols()) + " columns, weights expect " +
                     std::to_string(weights.input_dim()));
  if (direction == Direction::kForward) return run_direction(x, weights).hidden;
  return reversed_rows(run_direction(reversed_rows(x), weights).hidden);
}

Matrix Network::forward(const Matrix& x) const {
  if (x.cols() != input_dim())
    throw InputError("network input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(input_dim()));
  Matrix current = x;
  for (const auto& layer : layers) {
    Matrix next(current.rows(), 2 * layer.units());
    next << lstm_forward(current, layer.forward, Direction::kForward),
        lstm_forward(current, layer.backward, Direction::kBackward);
    current = std::move(next);
  }
  Matrix logits = current * output.weights.transpose();
  logits.rowwise() += output.bias.transpose();
  return logits.unaryExpr([](double z) { return sigmoid(z); });
}

// ---------------------------------------------------------------------------
// Segmented inference

std::vector<SegmentSpan> segment_plan(int n_frames, int segment_len) {
  if (segment_len < 2) throw InputError("segment length must be at least 2");
  std::vector<SegmentSpan> plan;
  if (n_frames <= 0) return plan;
  if (n_frames <= segment_len) {
    plan.push_back({0, n_frames, 0, n_frames});
    return plan;
  }
  const int hop = segment_len / 2;
  const int lead = (segment_len - hop + 1) / 2;
  for (int start = 0;; start += hop) {
    const bool last = start + segment_len >= n_frames;
    SegmentSpan span;
    span.begin = start;
    span.end = std::min(start + segment_len, n_frames);
    span.keep_begin = start == 0 ? 0 : start + lead;
    span.keep_end = last ? n_frames : start + lead + hop;
    plan.push_back(span);
    if (last) break;
  }
  return plan;
}

Matrix predict_segmented(const Matrix& x, const Network& net, int threads, int segment_len) {
  const auto plan = segment_plan(static_cast<int>(x.rows()), segment_len);
  Matrix out(x.rows(), net.output_dim());
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t s = first; s < plan.size(); s += stride) {
      const auto& span = plan[s];
      const Matrix y = net.forward(x.middleRows(span.begin, span.end - span.begin));
      out.middleRows(span.keep_begin, span.keep_end - span.keep_begin) =
          y.middleRows(span.keep_begin - span.begin, span.keep_end - span.keep_begin);
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp<int>(threads, 1, std::max<int>(1, plan.size())));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model container

std::vector<int> ModelWeights::default_layers(Mode mode) {
  if (mode == Mode::kNote88) return {200, 200};
  return {100, 50};
}

ModelWeights ModelWeights::from_network(Mode mode, const Network& net, Standardization stats,
                                        std::string frontend_hash) {
  ModelWeights model{mode, net, std::move(stats), std::move(frontend_hash)};
  for (auto& t : model.network.tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<double>(static_cast<float>(t.data[i]));
  model.validate();
  return model;
}

void ModelWeights::validate() const {
  network.validate();
  if (network.output_dim() != mode_width(mode))
    throw InputError("model output width " + std::to_string(network.output_dim()) + " does not match mode " +
                     std::string(mode_name(mode)));
  if (standardization.mean.size() != standardization.std.size() ||
      (standardization.dims() != 0 && standardization.dims() != network.input_dim()))
    throw InputError("standardization stats do not match the network input width");
}

namespace {

const char* const kFormatTag = "pianoalign-model";
const char* const kGateOrder[] = {"input", "forget", "cell", "output"};

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelWeights& model) {
  model.validate();
  ModelWeights copy = model;
  auto tensors = copy.network.tensors();
  nlohmann::json manifest;
  manifest["format"] = kFormatTag;
  manifest["version"] = kModelFormatVersion;
  manifest["mode"] = std::string(mode_name(model.mode));
  manifest["input_dim"] = model.network.input_dim();
  manifest["output_dim"] = model.network.output_dim();
  manifest["layers"] = model.network.layer_units();
  manifest["gate_order"] = kGateOrder;
  manifest["gate_activation"] = "sigmoid";
  manifest["cell_activation"] = "tanh";
  manifest["output_activation"] = "sigmoid";
  manifest["dtype"] = "float32";
  manifest["byte_order"] = "little";
  manifest["frontend_hash"] = model.frontend_hash;
  manifest["standardization"] = {
      {"mean", std::vector<double>(model.standardization.mean.data(),
                                   model.standardization.mean.data() + model.standardization.mean.size())},
      {"std", std::vector<double>(model.standardization.std.data(),
                                  model.standardization.std.data() + model.standardization.std.size())}};
  std::size_t offset = 0;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& t : tensors) {
    const std::size_t bytes = sizeof(float) * static_cast<std::size_t>(t.size());
    entries.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  manifest["tensors"] = entries;
  manifest["payload_bytes"] = offset;

  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out;
  const std::size_t header = 8 + text.size();
  const std::size_t padded = (header + 7) / 8 * 8;
  out.reserve(padded + offset);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((len >> (8 * i)) & 0xff));
  out.insert(out.end(), text.begin(), text.end());
  out.resize(padded, 0);
  for (const auto& t : tensors) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const float v = static_cast<float>(t.data[i]);
      std::uint32_t raw;
      std::memcpy(&raw, &v, sizeof raw);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((raw >> (8 * b)) & 0xff));
    }
  }
  return out;
}

ModelWeights deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw InputError("model file truncated before the manifest length");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (len > bytes.size() - 8) throw InputError("model file truncated inside the manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model manifest is not valid JSON: ") + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != kFormatTag) throw InputError("not a pianoalign model file");
    const int version = manifest.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw InputError("unsupported model format version " + std::to_string(version));
    std::vector<std::string> gates = manifest.at("gate_order").get<std::vector<std::string>>();
    if (gates != std::vector<std::string>(std::begin(kGateOrder), std::end(kGateOrder)) ||
        manifest.at("gate_activation") != "sigmoid" || manifest.at("cell_activation") != "tanh" ||
        manifest.at("output_activation") != "sigmoid" || manifest.at("dtype") != "float32" ||
        manifest.at("byte_order") != "little")
      throw InputError("model manifest declares an unsupported layout");

    ModelWeights model;
    model.mode = parse_mode(manifest.at("mode").get<std::string>());
    model.frontend_hash = manifest.at("frontend_hash").get<std::string>();
    const auto mean = manifest.at("standardization").at("mean").get<std::vector<double>>();
    const auto std_dev = manifest.at("standardization").at("std").get<std::vector<double>>();
    model.standardization.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    model.standardization.std = Eigen::Map<const Vector>(std_dev.data(), static_cast<Eigen::Index>(std_dev.size()));
    model.network = Network::zeros(manifest.at("input_dim").get<int>(), manifest.at("layers").get<std::vector<int>>(),
                                   manifest.at("output_dim").get<int>());

    auto tensors = model.network.tensors();
    const auto& entries = manifest.at("tensors");
    if (entries.size() != tensors.size()) throw InputError("model manifest lists an unexpected number of tensors");
    const std::size_t payload_start = (8 + len + 7) / 8 * 8;
    const std::size_t payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    if (bytes.size() < payload_start + payload_bytes) throw InputError("model payload truncated");
    if (bytes.size() > payload_start + payload_bytes) throw InputError("trailing bytes after model payload");
    std::size_t expected_offset = 0;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const auto& e = entries[k];
      const auto& t = tensors[k];
      const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t nbytes = e.at("bytes").get<std::size_t>();
      if (e.at("name").get<std::string>() != t.name || shape != std::vector<Eigen::Index>{t.rows, t.cols} ||
          offset != expected_offset || nbytes != sizeof(float) * static_cast<std::size_t>(t.size()))
        throw InputError("model manifest entry for '" + t.name + "' does not match the declared architecture");
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        const std::size_t at = payload_start + offset + 4 * static_cast<std::size_t>(i);
        const std::uint32_t raw = bytes[at] | (bytes[at + 1] << 8) | (bytes[at + 2] << 16) |
                                  (static_cast<std::uint32_t>(bytes[at + 3]) << 24);
        float v;
        std::memcpy(&v, &raw, sizeof v);
        t.data[i] = v;
      }
      expected_offset += nbytes;
    }
    if (expected_offset != payload_bytes) throw InputError("model payload size disagrees with its tensors");
    model.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model manifest is missing or mistypes a field: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const ModelWeights& model) {
  write_binary_file(path, serialize_model(model));
}

ModelWeights load_model(const std::filesystem::path& path) { return deserialize_model(read_binary_file(path)); }

ActivationMatrix predict(const InputMatrix& input, const ModelWeights& model, int threads) {
  if (input.frontend_hash != model.frontend_hash)
    throw InputError("front-end configuration mismatch: features " + input.frontend_hash + ", model " +
                     model.frontend_hash);
  if (input.values.cols() != model.network.input_dim())
    throw InputError("input has " + std::to_string(input.values.cols()) + " columns, model expects " +
                     std::to_string(model.network.input_dim()));
  return {predict_segmented(input.values, model.network, threads), model.mode, kFramesPerSecond};
}

// ---------------------------------------------------------------------------
// Loss and gradients

double mean_bce(const Matrix& logits, const Matrix& targets) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i];
    const double y = targets.data()[i];
    sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return logits.size() > 0 ? sum / static_cast<double>(logits.size()) : 0.0;
}

double loss_and_gradient(const Network& net, const Matrix& x, const Matrix& y, double l2,
                         const DropoutMasks* masks, Network* gradient) {
  if (x.cols() != net.input_dim() || y.cols() != net.output_dim() || x.rows() != y.rows())
    throw InputError("training example shape does not match the network");
  if (masks != nullptr && masks->size() != net.layers.size()) throw InputError("one dropout mask per layer expected");

  std::vector<DirectionCache> fwd_caches, bwd_caches;
  std::vector<Matrix> layer_outputs;  // after dropout
  Matrix current = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    fwd_caches.push_back(run_direction(current, layer.forward));
    bwd_caches.push_back(run_direction(reversed_rows(current), layer.backward));
    Matrix h(current.rows(), 2 * layer.units());
    h << fwd_caches.back().hidden, reversed_rows(bwd_caches.back().hidden);
    if (masks != nullptr) h.array() *= (*masks)[l].array();
    layer_outputs.push_back(h);
    current = std::move(h);
  }
  Matrix logits = current * net.output.weights.transpose();
  logits.rowwise() += net.output.bias.transpose();

  double loss = mean_bce(logits, y);
  for (const auto& layer : net.layers)
    for (const LstmWeights* w : {&layer.forward, &layer.backward})
      loss += l2 * (w->input.squaredNorm() + w->recurrent.squaredNorm());
  Network* g = gradient;
  if (g == nullptr) return loss;

  *g = Network::zeros(net.input_dim(), net.layer_units(), net.output_dim());
  const double cells = static_cast<double>(y.size());
  const Matrix d_logits = (logits.unaryExpr([](double z) { return sigmoid(z); }) - y) / cells;
  g->output.weights = d_logits.transpose() * current;
  g->output.bias = d_logits.colwise().sum().transpose();
  Matrix d_current = d_logits * net.output.weights;

  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    if (masks != nullptr) d_current.array() *= (*masks)[l].array();
    const int u = layer.units();
    const Matrix d_fwd = d_current.leftCols(u);
    const Matrix d_bwd = reversed_rows(d_current.rightCols(u));
    Matrix dx = backprop_direction(fwd_caches[l], d_fwd, layer.forward, g->layers[l].forward);
    dx += reversed_rows(backprop_direction(bwd_caches[l], d_bwd, layer.backward, g->layers[l].backward));
    d_current = std::move(dx);
  }

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (int d = 0; d < 2; ++d) {
      const LstmWeights& w = d == 0 ? net.layers[l].forward : net.layers[l].backward;
      LstmWeights& gw = d == 0 ? g->layers[l].forward : g->layers[l].backward;
      gw.input += 2.0 * l2 * w.input;
      gw.recurrent += 2.0 * l2 * w.recurrent;
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training

void TrainingConfig::validate() const {
  if (segment_len < 2) throw InputError("segment_len must be at least 2");
  if (dropout < 0.0 || dropout >= 1.0) throw InputError("dropout must be in [0, 1)");
  if (l2 < 0.0 || !(lr0 > 0.0) || !(lr_decay_factor > 1.0)) throw InputError("invalid l2, lr0 or decay factor");
  if (patience < 1 || max_decays < 1 || batch_size < 1 || max_epochs < 1)
    throw InputError("patience, max_decays, batch_size and max_epochs must be positive");
  if (min_relative_improvement < 0.0) throw InputError("min_relative_improvement must be non-negative");
  for (int u : layers)
    if (u < 1) throw InputError("layer sizes must be positive");
}

TrainingPiece make_training_piece(const InputMatrix& input, const LabelSet& labels, Mode mode) {
  const Matrix& target = labels.targets(mode);
  if (target.cols() != mode_width(mode))
    throw InputError("labels have " + std::to_string(target.cols()) + " columns, mode " +
                     std::string(mode_name(mode)) + " needs " + std::to_string(mode_width(mode)));
  TrainingPiece piece{input.values, target};
  // Labels may be a frame shorter or longer than the audio; align to the audio.
  const Eigen::Index frames = piece.input.rows();
  Matrix aligned = Matrix::Zero(frames, target.cols());
  const Eigen::Index common = std::min(frames, target.rows());
  aligned.topRows(common) = target.topRows(common);
  piece.target = std::move(aligned);
  return piece;
}

Network initial_network(const TrainingConfig& config, Mode mode, int input_dim) {
  const auto layers = config.layers.empty() ? ModelWeights::default_layers(mode) : config.layers;
  return Network::random(input_dim, layers, mode_width(mode), config.seed, config.init_scale);
}

namespace {

struct SegmentRef {
  const TrainingPiece* piece;
  Eigen::Index begin;
  Eigen::Index length;

  Matrix input() const { return piece->input.middleRows(begin, length); }
  Matrix target() const { return piece->target.middleRows(begin, length); }
};

std::vector<SegmentRef> cut_segments(std::span<const TrainingPiece> pieces, int segment_len, int input_dim,
                                     int output_dim) {
  std::vector<SegmentRef> out;
  for (const auto& p : pieces) {
    if (p.input.rows() != p.target.rows()) throw InputError("piece inputs and targets differ in frame count");
    if (p.input.cols() != input_dim || p.target.cols() != output_dim)
      throw InputError("piece dimensions do not match the network");
    for (Eigen::Index b = 0; b < p.input.rows(); b += segment_len) {
      const Eigen::Index len = std::min<Eigen::Index>(segment_len, p.input.rows() - b);
      if (len >= 2 || p.input.rows() == 1) out.push_back({&p, b, len});
    }
  }
  return out;
}

double evaluate_bce(const Network& net, const std::vector<SegmentRef>& segments) {
  double sum = 0.0;
  double cells = 0.0;
  for (const auto& s : segments) {
    const Matrix x = s.input();
    const Matrix y = s.target();
    Matrix current = x;
    for (const auto& layer : net.layers) {
      Matrix next(current.rows(), 2 * layer.units());
      next << lstm_forward(current, layer.forward, Direction::kForward),
          lstm_forward(current, layer.backward, Direction::kBackward);
      current = std::move(next);
    }
    Matrix logits = current * net.output.weights.transpose();
    logits.rowwise() += net.output.bias.transpose();
    sum += mean_bce(logits, y) * static_cast<double>(y.size());
    cells += static_cast<double>(y.size());
  }
  return cells > 0.0 ? sum / cells : 0.0;
}

}  // namespace

TrainingResult train(std::span<const TrainingPiece> training, std::span<const TrainingPiece> validation,
                     const TrainingConfig& config, Network initial,
                     const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  initial.validate();
  const auto train_segments = cut_segments(training, config.segment_len, initial.input_dim(), initial.output_dim());
  if (train_segments.empty()) throw InputError("training set contains no segments");
  const auto val_segments = validation.empty()
                                ? train_segments
                                : cut_segments(validation, config.segment_len, initial.input_dim(),
                                               initial.output_dim());

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Network net = std::move(initial);
  TrainingResult result;
  result.best = net;
  double best = std::numeric_limits<double>::infinity();
  double lr = config.lr0;
  int since_improvement = 0;
  int decays = 0;
  const double keep = 1.0 - config.dropout;

  std::vector<std::size_t> order(train_segments.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    bool step_limit = false;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Network batch_grad;
      Network seg_grad;
      for (std::size_t k = start; k < stop; ++k) {
        const auto& seg = train_segments[order[k]];
        const Matrix x = seg.input();
        DropoutMasks masks;
        if (config.dropout > 0.0) {
          for (const auto& layer : net.layers) {
            Matrix m(x.rows(), 2 * layer.units());
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unit_uniform(rng) < keep ? 1.0 / keep : 0.0;
            masks.push_back(std::move(m));
          }
        }
        const double loss =
            loss_and_gradient(net, x, seg.target(), config.l2, config.dropout > 0.0 ? &masks : nullptr, &seg_grad);
        if (!std::isfinite(loss))
          throw TrainingDiverged("training loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(result.steps + 1));
        if (k == start) {
          batch_grad = std::move(seg_grad);
        } else {
          auto acc = batch_grad.tensors();
          auto add = seg_grad.tensors();
          for (std::size_t t = 0; t < acc.size(); ++t)
            for (Eigen::Index i = 0; i < acc[t].size(); ++i) acc[t].data[i] += add[t].data[i];
        }
      }
      const double scale = lr / static_cast<double>(stop - start);
      auto params = net.tensors();
      auto grads = batch_grad.tensors();
      for (std::size_t t = 0; t < params.size(); ++t)
        for (Eigen::Index i = 0; i < params[t].size(); ++i) params[t].data[i] -= scale * grads[t].data[i];
      ++result.steps;
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        step_limit = true;
        break;
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.steps = result.steps;
    entry.learning_rate = lr;
    entry.train_loss = evaluate_bce(net, train_segments);
    entry.validation_loss = validation.empty() ? entry.train_loss : evaluate_bce(net, val_segments);
    if (!std::isfinite(entry.train_loss) || !std::isfinite(entry.validation_loss))
      throw TrainingDiverged("loss became non-finite after epoch " + std::to_string(epoch));
    if (entry.validation_loss < best * (1.0 - config.min_relative_improvement) || !std::isfinite(best)) {
      best = entry.validation_loss;
      result.best = net;
      since_improvement = 0;
      entry.improved = true;
    } else if (++since_improvement >= config.patience) {
      lr /= config.lr_decay_factor;
      ++decays;
      since_improvement = 0;
      entry.decayed = true;
    }
    entry.best_validation = best;
    entry.decays = decays;
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (decays >= config.max_decays || step_limit) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Frame scores

FrameScore frame_f_score(const Matrix& pred, const Matrix& truth, double threshold) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw InputError("prediction and reference shapes differ");
  FrameScore s;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.data()[i] >= threshold;
    const bool t = truth.data()[i] >= 0.5;
    s.true_positives += p && t;
    s.false_positives += p && !t;
    s.false_negatives += !p && t;
  }
  if (s.true_positives + s.false_positives + s.false_negatives == 0) {
    s.precision = s.recall = s.f_score = 1.0;
    return s;
  }
  const double tp = static_cast<double>(s.true_positives);
  s.precision = s.true_positives + s.false_positives > 0 ? tp / (tp + s.false_positives) : 0.0;
  s.recall = s.true_positives + s.false_negatives > 0 ? tp / (tp + s.false_negatives) : 0.0;
  s.f_score = s.true_positives > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace pianoalign
