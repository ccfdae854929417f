#include "hmcam/models.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>

#include "hmcam/errors.hpp"
#include "hmcam/hashing.hpp"
#include "hmcam/rng.hpp"

namespace hmcam {

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw ConfigError("MlpSpec: need at least input and output widths");
  for (std::size_t w : layer_widths) {
    if (w == 0) throw ConfigError("MlpSpec: layer widths must be positive");
  }
}

Mlp::Mlp(MlpSpec spec, std::string name) : spec_(std::move(spec)), name_(std::move(name)) {
  spec_.validate();
  SeededRng rng(spec_.seed);
  for (std::size_t layer = 0; layer + 1 < spec_.layer_widths.size(); ++layer) {
    const std::size_t in = spec_.layer_widths[layer], out = spec_.layer_widths[layer + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out), b(out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    for (double& v : b) v = rng.uniform(-bound, bound);
    params_.push_back({"w" + std::to_string(layer), Tensor::matrix(in, out, std::move(w))});
    params_.push_back({"b" + std::to_string(layer), Tensor::vector(std::move(b))});
  }
}

Mlp::Mlp(MlpSpec spec, std::vector<NamedTensor> params, std::string name)
    : spec_(std::move(spec)), name_(std::move(name)) {
  spec_.validate();
  Mlp shape_ref = Mlp::zeros(spec_);
  if (params.size() != shape_ref.params_.size()) throw DimensionError("Mlp: wrong number of parameter tensors");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != shape_ref.params_[i].name || !params[i].value.same_shape(shape_ref.params_[i].value)) {
      throw DimensionError("Mlp: parameter " + params[i].name + " does not match the architecture");
    }
  }
  params_ = std::move(params);
}

Mlp Mlp::zeros(MlpSpec spec, std::string name) {
  spec.validate();
  std::vector<NamedTensor> params;
  for (std::size_t layer = 0; layer + 1 < spec.layer_widths.size(); ++layer) {
    const std::size_t in = spec.layer_widths[layer], out = spec.layer_widths[layer + 1];
    params.push_back({"w" + std::to_string(layer), Tensor::zeros({in, out})});
    params.push_back({"b" + std::to_string(layer), Tensor::zeros({out})});
  }
  Mlp m(spec, name);
  m.params_ = std::move(params);
  return m;
}

Tensor Mlp::logits(const Tensor& x) const {
  if (x.cols() != input_dim()) {
    throw DimensionError("Mlp::logits: expected input dim " + std::to_string(input_dim()) + ", got " +
                         shape_to_string(x.shape()));
  }
  Tensor h = x.as_matrix();
  const std::size_t layers = params_.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = add_row_vector(matmul(h, params_[2 * l].value), params_[2 * l + 1].value);
    if (l + 1 < layers) h = relu(h);
  }
  return x.rank() == 1 ? h.reshaped({num_classes()}) : h;
}

ag::Var Mlp::forward(const ag::Var& x, const std::vector<ag::Var>& params) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != input_dim()) {
    throw DimensionError("Mlp::build_logits: expected [m x " + std::to_string(input_dim()) + "] input, got " +
                         shape_to_string(xv.shape()));
  }
  ag::Var h = x;
  const std::size_t layers = params.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ag::add_row_vector(ag::matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers) h = ag::relu(h);
  }
  return h;
}

ag::Var Mlp::build_logits(ag::Graph& graph, const ag::Var& x) const {
  std::vector<ag::Var> params;
  for (const auto& p : params_) params.push_back(graph.constant(p.value));
  return forward(x, params);
}

Mlp::Trainable Mlp::build_trainable(ag::Graph& graph, const ag::Var& x) const {
  std::vector<ag::Var> params;
  for (const auto& p : params_) params.push_back(graph.leaf(p.value, true));
  ag::Var out = forward(x, params);
  return {out, std::move(params)};
}

void Mlp::set_params(std::vector<Tensor> values) {
  if (values.size() != params_.size()) throw DimensionError("Mlp::set_params: wrong number of tensors");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].same_shape(params_[i].value)) throw DimensionError("Mlp::set_params: shape change");
  }
  for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = std::move(values[i]);
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::string Mlp::checksum() const {
  std::vector<double> all;
  all.reserve(parameter_count());
  for (const auto& p : params_) all.insert(all.end(), p.value.data().begin(), p.value.data().end());
  return sha1_of_doubles(all);
}

Ensemble::Ensemble(std::vector<ModelPtr> members, std::string name) : members_(std::move(members)), name_(std::move(name)) {
  if (members_.empty()) throw ContractError("Ensemble: no members");
  for (const auto& m : members_) {
    if (!m) throw ContractError("Ensemble: null member");
    if (m->num_classes() != members_.front()->num_classes()) throw DimensionError("Ensemble: members disagree on C");
    if (m->input_dim() != members_.front()->input_dim()) throw DimensionError("Ensemble: members disagree on d");
  }
  weights_.assign(members_.size(), 1.0 / static_cast<double>(members_.size()));
}

// Members are summed first and the sum scaled once, so a duplicated member
// reproduces its own logits exactly.
Tensor Ensemble::logits(const Tensor& x) const {
  Tensor total = members_.front()->logits(x);
  for (std::size_t i = 1; i < members_.size(); ++i) total = add(total, members_[i]->logits(x));
  return scale(total, weights_.front());
}

ag::Var Ensemble::build_logits(ag::Graph& graph, const ag::Var& x) const {
  ag::Var total = members_.front()->build_logits(graph, x);
  for (std::size_t i = 1; i < members_.size(); ++i) total = ag::add(total, members_[i]->build_logits(graph, x));
  return ag::scale(total, weights_.front());
}

InputGradient loss_and_input_grad(const Model& model, const Tensor& x, std::span<const std::size_t> labels) {
  if (x.cols() != model.input_dim()) throw DimensionError("loss_and_input_grad: input dim mismatch");
  ag::Graph graph;
  ag::Var input = graph.leaf(x.as_matrix(), true);
  ag::Var z = model.build_logits(graph, input);
  ag::Var loss = ag::softmax_cross_entropy(z, one_hot(labels, model.num_classes()));
  ag::Gradients grads = graph.backward(loss);
  const Tensor& g = grads.of(input);
  return {cross_entropy_rows(z.value(), labels), x.rank() == 1 ? g.reshaped(x.shape()) : g};
}

std::pair<double, Tensor> loss_and_input_grad(const Model& model, const Tensor& x, const Tensor& onehot) {
  if (x.rank() != 1 || onehot.rank() != 1) throw DimensionError("loss_and_input_grad: expected a single example");
  ag::Graph graph;
  ag::Var input = graph.leaf(x.as_matrix(), true);
  ag::Var z = model.build_logits(graph, input);
  ag::Var loss = ag::softmax_cross_entropy(z, onehot.as_matrix());
  ag::Gradients grads = graph.backward(loss);
  return {loss.value().item(), grads.of(input).reshaped(x.shape())};
}

Tensor logit_input_vjp(const Model& model, const Tensor& x, const Tensor& signal) {
  ag::Graph graph;
  ag::Var input = graph.leaf(x.as_matrix(), true);
  ag::Var z = model.build_logits(graph, input);
  ag::Var s = graph.constant(signal.as_matrix());
  ag::Var surrogate = ag::sum(ag::mul(z, s));
  ag::Gradients grads = graph.backward(surrogate);
  const Tensor& g = grads.of(input);
  return x.rank() == 1 ? g.reshaped(x.shape()) : g;
}

std::vector<std::size_t> predict(const Model& model, const Tensor& x) { return argmax_rows(model.logits(x)); }

double accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) throw DataError("accuracy: empty dataset");
  constexpr std::size_t kChunk = 1024;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) idx.push_back(i);
    const auto pred = predict(model, data.batch(idx));
    for (std::size_t k = 0; k < idx.size(); ++k) correct += pred[k] == data.label(idx[k]);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("TrainConfig: lr must be non-negative");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("TrainConfig: momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("TrainConfig: weight decay must be non-negative");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double rate = lr;
  for (std::size_t e : lr_decay_epochs) {
    if (epoch > e) rate *= lr_decay_factor;
  }
  return rate;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"lr", lr},
          {"batch_size", batch_size},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"seed", seed},
          {"lr_decay_epochs", lr_decay_epochs},
          {"lr_decay_factor", lr_decay_factor}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.lr_decay_epochs = j.value("lr_decay_epochs", c.lr_decay_epochs);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  return c;
}

SgdOptimizer::SgdOptimizer(const Mlp& model, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : model.params()) velocity_.emplace_back(p.value.size(), 0.0);
}

void SgdOptimizer::step(Mlp& model, const std::vector<Tensor>& grads, double lr) {
  const auto& params = model.params();
  if (grads.size() != params.size()) throw DimensionError("SgdOptimizer: gradient count mismatch");
  std::vector<Tensor> updated;
  updated.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& w = params[i].value;
    const Tensor& g = grads[i];
    if (!g.same_shape(w)) throw DimensionError("SgdOptimizer: gradient shape mismatch");
    std::vector<double>& vel = velocity_[i];
    std::vector<double> next(w.size());
    for (std::size_t k = 0; k < w.size(); ++k) {
      vel[k] = momentum_ * vel[k] + (g[k] + weight_decay_ * w[k]);
      next[k] = w[k] - lr * vel[k];
    }
    updated.emplace_back(w.shape(), std::move(next));
  }
  model.set_params(std::move(updated));
}

BatchGradient parameter_gradients(const Mlp& model, const Tensor& x, std::span<const std::size_t> labels) {
  ag::Graph graph;
  ag::Var input = graph.constant(x.as_matrix());
  auto fwd = model.build_trainable(graph, input);
  const double m = static_cast<double>(labels.size());
  ag::Var loss = ag::scale(ag::softmax_cross_entropy(fwd.logits, one_hot(labels, model.num_classes())), 1.0 / m);
  ag::Gradients grads = graph.backward(loss);
  BatchGradient out;
  out.mean_loss = loss.value().item();
  const auto pred = argmax_rows(fwd.logits.value());
  for (std::size_t i = 0; i < labels.size(); ++i) out.correct += pred[i] == labels[i];
  for (const auto& p : fwd.params) out.grads.push_back(grads.of(p));
  return out;
}

TrainReport run_training(Mlp& model, const Dataset& data, const TrainConfig& cfg, const BatchTransform& transform,
                         const EpochHook& on_epoch) {
  cfg.validate();
  if (data.empty()) throw DataError("training: empty dataset");
  if (data.dim() != model.input_dim() || data.classes() != model.num_classes()) {
    throw DimensionError("training: dataset does not match the model");
  }
  SgdOptimizer opt(model, cfg.momentum, cfg.weight_decay);
  TrainReport report;
  std::vector<std::size_t> idx;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = seeded_permutation(data.size(), derive_seed(cfg.seed, epoch));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(b),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
      const auto labels = data.batch_labels(idx);
      Tensor x = data.batch(idx);
      if (transform) x = transform(model, x, labels, idx, epoch);
      BatchGradient g = parameter_gradients(model, x, labels);
      loss_sum += g.mean_loss * static_cast<double>(idx.size());
      correct += g.correct;
      opt.step(model, g.grads, cfg.lr_at(epoch));
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(data.size());
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back(stats);
    if (on_epoch) on_epoch(model, stats);
  }
  return report;
}

TrainReport sgd_train(Mlp& model, const Dataset& data, const TrainConfig& cfg) {
  return run_training(model, data, cfg, {});
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::ofstream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>(v >> (8 * i)));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& bytes, std::size_t offset, int width) {
  if (offset + static_cast<std::size_t>(width) > bytes.size()) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes[offset + i]} << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Mlp& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.params()) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  nlohmann::json manifest = {{"format", "ADVC"},
                             {"version", kCheckpointVersion},
                             {"name", model.name()},
                             {"architecture",
                              {{"kind", "mlp"}, {"layer_widths", model.spec().layer_widths}, {"activation", "relu"}}},
                             {"seed", model.spec().seed},
                             {"params", params},
                             {"extra", extra.is_null() ? nlohmann::json::object() : extra}};
  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write("ADVC", 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params()) {
    for (double v : p.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::string(bytes.begin(), bytes.begin() + 4) != "ADVC") {
    throw DataError("not an ADVC checkpoint: " + path.string());
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get_le(bytes, 8, 8);
  if (16 + len > bytes.size()) throw DataError("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  MlpSpec spec{manifest.at("architecture").at("layer_widths").get<std::vector<std::size_t>>(),
               manifest.at("seed").get<std::uint64_t>()};
  std::size_t offset = 16 + len;
  std::vector<NamedTensor> params;
  for (const auto& p : manifest.at("params")) {
    Tensor::Shape shape = p.at("shape").get<Tensor::Shape>();
    std::vector<double> values(shape_product(shape));
    for (double& v : values) {
      v = std::bit_cast<double>(get_le(bytes, offset, 8));
      offset += 8;
    }
    params.push_back({p.at("name").get<std::string>(), Tensor(shape, std::move(values))});
  }
  if (offset != bytes.size()) throw DataError("checkpoint: trailing bytes");
  Mlp model(spec, std::move(params), manifest.value("name", std::string("mlp")));
  return {std::move(model), std::move(manifest)};
}

}  // namespace hmcam
