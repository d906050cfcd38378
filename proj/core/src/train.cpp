#include "telto/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace telto {

template <typename T>
Adam<T>::Adam(const ParamSet<T>& params) {
  for (const Tensor<T>& p : params.values) {
    m_.push_back(Tensor<T>(p.shape, T(0)));
    v_.push_back(Tensor<T>(p.shape, T(0)));
  }
}

template <typename T>
void Adam<T>::step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, double learning_rate,
                   double grad_clip) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam: gradient count mismatch");
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  double scale = 1.0;
  if (grad_clip > 0.0) {
    double norm_sq = 0.0;
    for (const Tensor<T>& g : grads)
      for (T v : g.data) norm_sq += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(norm_sq);
    if (norm > grad_clip) scale = grad_clip / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params.values[i];
    const Tensor<T>& g = grads[i];
    if (g.shape != p.shape) throw std::invalid_argument("adam: gradient shape mismatch");
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double gj = static_cast<double>(g.data[j]) * scale;
      const double m = beta1 * static_cast<double>(m_[i].data[j]) + (1.0 - beta1) * gj;
      const double v = beta2 * static_cast<double>(v_[i].data[j]) + (1.0 - beta2) * gj * gj;
      m_[i].data[j] = static_cast<T>(m);
      v_[i].data[j] = static_cast<T>(v);
      p.data[j] -= static_cast<T>(learning_rate * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

template <typename T>
TrainLog run_training(SampleLossProblem<T>& problem, std::size_t train_samples,
                      const TrainConfig& config) {
  if (train_samples == 0) throw std::invalid_argument("train: no training samples");
  if (config.max_epochs == 0) throw std::invalid_argument("train: max_epochs must be positive");
  const std::size_t batch_size = std::max<std::size_t>(1, config.batch_size);

  Rng rng(config.seed);
  Adam<T> adam(problem.params());
  TrainLog log;
  std::vector<Tensor<T>> best = problem.params().values;
  std::vector<Tensor<T>> last_good = best;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_samples);
  for (std::size_t i = 0; i < train_samples; ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    bool nan_hit = false;

    for (std::size_t offset = 0; offset < train_samples && !nan_hit; offset += batch_size) {
      const std::size_t count = std::min(batch_size, train_samples - offset);
      ad::Tape<T> tape;
      const std::vector<ad::NodeId> param_ids = problem.params().bind_all(tape, true);
      std::vector<ad::NodeId> losses;
      losses.reserve(count);
      for (std::size_t k = 0; k < count; ++k)
        losses.push_back(problem.sample_loss(tape, param_ids, order[offset + k], &rng));
      const ad::NodeId loss = tape.mean_of(losses);
      const double loss_value = static_cast<double>(tape.value(loss).data[0]);
      if (!std::isfinite(loss_value)) {
        nan_hit = true;
        break;
      }
      tape.backward(loss);
      std::vector<Tensor<T>> grads;
      grads.reserve(param_ids.size());
      for (ad::NodeId id : param_ids) grads.push_back(tape.grad(id));
      adam.step(problem.params(), grads, config.learning_rate, config.grad_clip);
      loss_sum += loss_value;
      ++batches;
    }

    if (nan_hit) {
      problem.params().values = last_good;
      log.aborted_nan = true;
      break;
    }
    last_good = problem.params().values;

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_mae = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    entry.valid_mae = problem.valid_mae();
    log.epochs.push_back(entry);

    const double monitored = std::isnan(entry.valid_mae) ? entry.train_mae : entry.valid_mae;
    if (monitored < log.best_valid_mae) {
      log.best_valid_mae = monitored;
      log.best_epoch = epoch;
      best = problem.params().values;
      since_best = 0;
    } else {
      ++since_best;
      if (config.patience > 0 && since_best >= config.patience) {
        log.early_stopped = true;
        break;
      }
    }
  }

  if (!log.aborted_nan) problem.params().values = best;
  return log;
}

namespace {

double scalar_mean(const NormalizationStats& stats) { return stats.mean.at(0); }
double scalar_std(const NormalizationStats& stats) { return stats.std_dev.at(0); }

// Backbone trained to predict its own series; inputs normalized on the tape
// by constants, output denormalized so the loss is in raw units.
template <typename T>
class BackboneProblem final : public SampleLossProblem<T> {
 public:
  BackboneProblem(Backbone<T>& model, const GraphOps<T>& graph, const DatasetSplits& data,
                  const NormalizationStats& input_stats, const NormalizationStats& target_stats)
      : model_(model), graph_(graph), data_(data), input_stats_(input_stats),
        target_stats_(target_stats) {}

  ParamSet<T>& params() override { return model_.params(); }

  ad::NodeId sample_loss(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                         std::size_t sample, Rng* dropout_rng) override {
    ad::NodeId x = tape.leaf(sample_slice<T>(data_.train.inputs, sample));
    x = tape.scale(tape.shift(x, static_cast<T>(-scalar_mean(input_stats_))),
                   static_cast<T>(1.0 / scalar_std(input_stats_)));
    ad::NodeId pred = model_.predict_on_tape(tape, param_ids, x, graph_, dropout_rng);
    pred = tape.shift(tape.scale(pred, static_cast<T>(scalar_std(target_stats_))),
                      static_cast<T>(scalar_mean(target_stats_)));
    return tape.mean_abs_error(pred, sample_slice<T>(data_.train.targets, sample));
  }

  double valid_mae() override {
    if (data_.valid.sample_count() == 0) return std::numeric_limits<double>::quiet_NaN();
    const Tensor<double> pred =
        backbone_predict_all(model_, graph_, data_.valid.inputs, input_stats_, target_stats_);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i)
      sum += std::abs(pred.data[i] - data_.valid.targets.data[i]);
    return sum / static_cast<double>(pred.data.size());
  }

 private:
  Backbone<T>& model_;
  const GraphOps<T>& graph_;
  const DatasetSplits& data_;
  const NormalizationStats& input_stats_;
  const NormalizationStats& target_stats_;
};

}  // namespace

template <typename T>
Tensor<double> backbone_predict_all(const Backbone<T>& model, const GraphOps<T>& graph,
                                    const Tensor<double>& inputs,
                                    const NormalizationStats& input_stats,
                                    const NormalizationStats& target_stats) {
  if (inputs.shape.size() != 3) throw std::invalid_argument("predict: inputs must be [S,E,T]");
  const std::size_t S = inputs.shape[0];
  const double in_mean = scalar_mean(input_stats), in_std = scalar_std(input_stats);
  const double out_mean = scalar_mean(target_stats), out_std = scalar_std(target_stats);
  Tensor<double> out({S, model.nodes(), model.config().horizon}, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    Tensor<T> x = sample_slice<T>(inputs, s);
    for (T& v : x.data) v = static_cast<T>((static_cast<double>(v) - in_mean) / in_std);
    const Tensor<T> pred = model.forward_predict(x, graph);
    double* dst = &out.data[s * pred.data.size()];
    for (std::size_t i = 0; i < pred.data.size(); ++i)
      dst[i] = static_cast<double>(pred.data[i]) * out_std + out_mean;
  }
  return out;
}

template <typename T>
BackboneTrainResult<T> train_backbone(const DatasetSplits& data,
                                      const Tensor<double>& binary_adjacency,
                                      const BackboneConfig& config,
                                      const TrainConfig& train_config) {
  if (data.train.sample_count() == 0) throw std::invalid_argument("train: empty train split");
  const std::size_t entities = data.train.inputs.shape[1];
  if (binary_adjacency.shape != std::vector<std::size_t>{entities, entities})
    throw std::invalid_argument("train: adjacency does not match dataset entity count");
  if (config.input_channels != 1)
    throw std::invalid_argument("train: backbone training consumes single-channel flow inputs");

  BackboneConfig cfg = config;
  cfg.input_steps = data.train.t_in;
  cfg.horizon = data.train.t_out;
  cfg.with_head = true;

  BackboneTrainResult<T> result;
  result.input_stats = fit_normalizer(data.train.inputs, 1, false);
  result.target_stats = fit_normalizer(data.train.targets, 1, false);
  result.backbone = Backbone<T>(cfg, entities, train_config.seed);

  const GraphOps<T> graph = make_graph_ops<T>(binary_adjacency);
  BackboneProblem<T> problem(result.backbone, graph, data, result.input_stats,
                             result.target_stats);
  result.log = run_training(problem, data.train.sample_count(), train_config);
  return result;
}

template <typename T>
Stage1Model<T> pretrain_stage1(const DatasetSplits& data, const RoadTopology& topology,
                               const BackboneConfig& config, const TrainConfig& train_config) {
  if (data.train.sample_count() == 0) throw std::invalid_argument("pretrain: empty train split");
  if (data.train.inputs.shape[1] != topology.segment_count())
    throw std::invalid_argument("pretrain: dataset entity count does not match topology");

  BackboneTrainResult<T> trained =
      train_backbone<T>(data, topology.segment_adjacency, config, train_config);

  Stage1Model<T> model;
  model.backbone = std::move(trained.backbone);
  model.input_stats = std::move(trained.input_stats);
  model.target_stats = std::move(trained.target_stats);
  model.topology_hash = topology_hash(topology);
  model.log = std::move(trained.log);
  return model;
}

template class Adam<float>;
template class Adam<double>;
template TrainLog run_training<float>(SampleLossProblem<float>&, std::size_t, const TrainConfig&);
template TrainLog run_training<double>(SampleLossProblem<double>&, std::size_t, const TrainConfig&);
template BackboneTrainResult<float> train_backbone<float>(const DatasetSplits&,
                                                          const Tensor<double>&,
                                                          const BackboneConfig&,
                                                          const TrainConfig&);
template BackboneTrainResult<double> train_backbone<double>(const DatasetSplits&,
                                                            const Tensor<double>&,
                                                            const BackboneConfig&,
                                                            const TrainConfig&);
template Stage1Model<float> pretrain_stage1<float>(const DatasetSplits&, const RoadTopology&,
                                                   const BackboneConfig&, const TrainConfig&);
template Stage1Model<double> pretrain_stage1<double>(const DatasetSplits&, const RoadTopology&,
                                                     const BackboneConfig&, const TrainConfig&);
template Tensor<double> backbone_predict_all<float>(const Backbone<float>&, const GraphOps<float>&,
                                                    const Tensor<double>&,
                                                    const NormalizationStats&,
                                                    const NormalizationStats&);
template Tensor<double> backbone_predict_all<double>(const Backbone<double>&,
                                                     const GraphOps<double>&,
                                                     const Tensor<double>&,
                                                     const NormalizationStats&,
                                                     const NormalizationStats&);

}  // namespace telto
