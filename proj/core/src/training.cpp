#include "histlayer/training.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "histlayer/error.hpp"
#include "histlayer/optim.hpp"
#include "histlayer/rng.hpp"

namespace histlayer {

double Schedule::lr_at(double initial, std::size_t epoch) const {
  if (lr_step == 0) return initial;
  return initial * std::pow(lr_decay, static_cast<double>(epoch / lr_step));
}

void Schedule::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(base_lr > 0.0) || !(lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
}

std::string log_csv(std::span<const LogRow> rows) {
  std::ostringstream os;
  os << "phase,epoch,split,loss,per_pixel,per_class\n";
  char buf[128];
  for (const LogRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", r.loss, r.per_pixel, r.per_class);
    os << r.phase << ',' << r.epoch << ',' << r.split << ',' << buf << '\n';
  }
  return os.str();
}

std::vector<LogRow> train_phase(HistNet& net, Phase phase, const ContextDataset& train, const ContextDataset& val,
                                std::size_t epochs, double lr, const Schedule& schedule, std::uint64_t seed,
                                const TrainOptions& options) {
  schedule.validate();
  if (train.images() == 0) throw ArgumentError("train_phase: empty training set");
  net.set_phase(phase);
  const auto params = net.parameters();
  const std::size_t K = net.config().classes;
  std::vector<LogRow> rows;
  auto emit = [&](LogRow row) {
    if (options.on_row) options.on_row(row);
    rows.push_back(std::move(row));
  };

  std::vector<std::size_t> order(train.images());
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed ^ splitmix64((static_cast<std::uint64_t>(phase) << 32) | e));
    rng.shuffle(order);
    const double epoch_lr = schedule.lr_at(lr, e);

    ConfusionMatrix confusion(K);
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += schedule.batch_size) {
      const std::size_t count = std::min(schedule.batch_size, order.size() - first);
      const std::span<const std::size_t> ids(order.data() + first, count);
      const auto labels = train.label_batch(ids);
      zero_grads(params);
      Graph g;
      g.set_skip_frozen(true);
      StageOutputs out = net.forward(g, train.feature_batch(ids), labels);
      g.backward(*out.loss);
      sgd_step(params, epoch_lr, schedule.momentum);
      net.after_step();
      loss_sum += g.value(*out.loss)[0] * static_cast<double>(count);
      accumulate_predictions(g.value(out.final_probs), labels, confusion);
    }
    const Metrics tm = metrics_from_confusion(confusion);
    emit(LogRow{std::string(phase_name(phase)), e, "train", loss_sum / static_cast<double>(train.images()),
                tm.per_pixel, tm.per_class});
    const Metrics vm = evaluate(net, val, options.eval);
    emit(LogRow{std::string(phase_name(phase)), e, "val", vm.loss, vm.per_pixel, vm.per_class});
  }
  return rows;
}

std::vector<LogRow> two_phase_train(HistNet& net, std::span<const Parameter> base_checkpoint,
                                    const ContextDataset& train, const ContextDataset& val, const Schedule& schedule,
                                    std::uint64_t seed, const TrainOptions& options) {
  if (base_checkpoint.empty()) throw ArgumentError("two_phase_train: no pretrained base checkpoint");
  net.load(base_checkpoint, true);
  auto rows = train_phase(net, Phase::kContext, train, val, schedule.phase1_epochs, schedule.lr, schedule, seed,
                          options);
  auto joint = train_phase(net, Phase::kJoint, train, val, schedule.phase2_epochs, schedule.lr, schedule, seed,
                           options);
  rows.insert(rows.end(), joint.begin(), joint.end());
  return rows;
}

}  // namespace histlayer
