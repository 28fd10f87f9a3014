#include "repcl/trainer.hpp"

#include "repcl/errors.hpp"
#include "repcl/generative.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace repcl {

void TrainConfig::validate() const {
  if (lambda_con < 0.0 || lambda_xmlm < 0.0) throw ConfigError("loss weights must be non-negative");
  if (queue_size < 0) throw ConfigError("queue size must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (momentum < 0.0 || momentum > 1.0) throw ConfigError("momentum must be in [0, 1]");
  if (mask_prob < 0.0 || mask_prob > 1.0) throw ConfigError("mask proportion must be in [0, 1]");
  adv.validate();
  if (memory_budget < 1) throw ConfigError("memory budget must be >= 1");
  if (epochs_initial < 1 || epochs_replay < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr_encoder > 0.0) || !(lr_head > 0.0)) throw ConfigError("learning rates must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"lambda_con", lambda_con},
      {"lambda_xmlm", lambda_xmlm},
      {"queue_size", queue_size},
      {"temperature", temperature},
      {"momentum", momentum},
      {"mask_prob", mask_prob},
      {"queue_reset_per_task", queue_reset_per_task},
      {"adv_steps", adv.steps},
      {"adv_step_size", adv.step_size},
      {"adv_epsilon", adv.epsilon},
      {"adv_init", adv.init == DeltaInit::Zero ? "zero" : "uniform_scaled"},
      {"adv_norm", adv.norm == NormScope::Batch ? "batch" : "per_example"},
      {"memory_budget", memory_budget},
      {"epochs_initial", epochs_initial},
      {"epochs_replay", epochs_replay},
      {"batch_size", batch_size},
      {"lr_encoder", lr_encoder},
      {"lr_head", lr_head},
      {"adam_beta1", adam.beta1},
      {"adam_beta2", adam.beta2},
      {"adam_eps", adam.eps},
      {"weight_decay", adam.weight_decay},
      {"no_con", no_con},
      {"no_xmlm", no_xmlm},
      {"no_adv", no_adv},
      {"mlm_instead_of_xmlm", mlm_instead_of_xmlm},
      {"no_replay", no_replay},
      {"infomax_variant", infomax_variant},
  };
}

RunRngs::RunRngs(std::uint64_t seed)
    : head(make_rng(seed, 0x4EAD)),
      shuffle(make_rng(seed, 0x5A0F)),
      dropout(make_rng(seed, 0xD20B)),
      partner(make_rng(seed, 0xBA27)),
      mask(make_rng(seed, 0x3A5C)),
      kmeans(make_rng(seed, 0x63A9)),
      replay_shuffle(make_rng(seed, 0x2E91)),
      adversarial(make_rng(seed, 0xADF0)) {}

ContinualRunState::ContinualRunState(const EncoderConfig& enc, const TrainConfig& cfg, std::uint64_t seed)
    : model(enc, seed),
      queue(static_cast<std::size_t>(cfg.queue_size), enc.proj_dim),
      bank(cfg.memory_budget),
      rngs(seed) {}

int ContinualRunState::predict(const Instance& x) {
  if (class_order.empty()) throw std::logic_error("predict before any task was trained");
  return class_order[static_cast<std::size_t>(argmax(model.logits(x)))];
}

Predictor ContinualRunState::predictor() {
  return [this](const Instance& x) { return predict(x); };
}

void expand_head(ContinualRunState& state, const TaskSpec& task) {
  for (int c : task.label_set) {
    if (state.class_to_row.count(c)) throw ValidationError("class " + std::to_string(c) + " appears in two tasks");
  }
  state.model.expand_classes(static_cast<int>(task.label_set.size()), state.rngs.head);
  for (int c : task.label_set) {
    state.class_to_row[c] = static_cast<int>(state.class_order.size());
    state.class_order.push_back(c);
  }
}

namespace {

TaskLog& log_for(ContinualRunState& state, const TaskSpec& task) {
  if (state.logs.empty() || state.logs.back().task != task.index) state.logs.push_back(TaskLog{task.index, {}, {}, 0, 0.0, 0.0});
  return state.logs.back();
}

Mat momentum_features(Model& momentum, std::span<const Instance* const> xs) {
  Tape tape(false);
  std::vector<Var> zs;
  zs.reserve(xs.size());
  for (const Instance* x : xs) zs.push_back(momentum.encode(tape, *x));
  return momentum.project(tape, vconcat(zs)).value();
}

}  // namespace

void train_initial_stage(ContinualRunState& state, const TaskSpec& task, const TrainConfig& cfg) {
  cfg.validate();
  if (task.train.empty()) throw InputError("task has no training data");
  Model& model = state.model;
  const bool con = cfg.use_con();
  const bool xm = cfg.use_xmlm();
  const bool im = cfg.use_infomax();

  if (con) {
    if (state.momentum)
      state.momentum->reset(model);
    else
      state.momentum.emplace(model, cfg.momentum);
    if (cfg.queue_reset_per_task) state.queue.clear();
  }

  Adam adam(cfg.adam);
  adam.add_group(model.encoder_params(), cfg.lr_encoder);
  adam.add_group(model.classifier_params(), cfg.lr_head);
  if (con || im) adam.add_group(model.projection_params(), cfg.lr_head);
  if (xm) adam.add_group(model.xmlm_params(), cfg.lr_head);

  const PartnerIndex partners(task.train);
  TaskLog& log = log_for(state, task);
  state.steps.clear();

  for (int epoch = 0; epoch < cfg.epochs_initial; ++epoch) {
    double epoch_total = 0.0;
    const auto batches = make_batches(task.train.size(), cfg.batch_size, state.rngs.shuffle);
    for (const auto& b : batches) {
      std::vector<const Instance*> xs;
      std::vector<int> rows_idx, labels;
      for (int i : b) {
        const Instance& x = task.train[static_cast<std::size_t>(i)];
        xs.push_back(&x);
        labels.push_back(x.label);
        rows_idx.push_back(state.class_to_row.at(x.label));
      }

      adam.zero_grad();
      Tape tape;
      const PassOptions opts{&state.rngs.dropout, nullptr};
      std::vector<Var> zs;
      for (const Instance* x : xs) zs.push_back(model.encode(tape, *x, opts));
      const Var z = vconcat(zs);
      const Var ce = cross_entropy(model.classify(tape, z), rows_idx);
      Var total = ce;
      StepLog step;
      step.ce = ce.scalar();

      Mat mom;
      if (con) {
        mom = momentum_features(state.momentum->model(), xs);
        const Mat queued = state.queue.features();
        Mat cand(mom.rows() + queued.rows(), mom.cols());
        cand << mom, queued;
        std::vector<int> cand_labels = labels;
        const auto ql = state.queue.labels();
        cand_labels.insert(cand_labels.end(), ql.begin(), ql.end());
        const Var lc = supinfonce_loss(model.project(tape, z), labels, tape.constant(std::move(cand)), cand_labels,
                                       cfg.temperature);
        step.con = lc.scalar();
        total = add(total, scale(lc, cfg.lambda_con));
      }
      if (im) {
        // Second stochastic view of the same batch, used as a detached target.
        Tape view_tape(false);
        std::vector<Var> vz;
        for (const Instance* x : xs) vz.push_back(model.encode(view_tape, *x, opts));
        Mat view = model.project(view_tape, vconcat(vz)).value();
        std::vector<int> ids(xs.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
        const Var li = supinfonce_loss(model.project(tape, z), ids, tape.constant(std::move(view)), ids, cfg.temperature);
        step.con = li.scalar();
        total = add(total, scale(li, cfg.lambda_con));
      }
      if (xm) {
        std::vector<Var> parts;
        for (std::size_t i = 0; i < xs.size(); ++i) {
          const std::size_t partner = partners.sample(static_cast<std::size_t>(b[i]), state.rngs.partner);
          const MaskedSample masked = mask_tokens(task.train[partner], cfg.mask_prob, state.rngs.mask);
          parts.push_back(xmlm_loss(model, tape, rows(z, static_cast<Eigen::Index>(i), 1), masked,
                                    !cfg.mlm_instead_of_xmlm, opts));
        }
        const Var lx = mean_all(vconcat(parts));
        step.xmlm = lx.scalar();
        total = add(total, scale(lx, cfg.lambda_xmlm));
      }

      step.total = total.scalar();
      if (!std::isfinite(step.total)) throw std::runtime_error("non-finite loss in task " + std::to_string(task.index));
      tape.backward(total);
      adam.step();
      if (con) {
        state.momentum->update(model);
        state.queue.enqueue(mom, labels);
      }
      state.steps.push_back(step);
      epoch_total += step.total;
    }
    log.initial_epoch_loss.push_back(epoch_total / static_cast<double>(batches.size()));
  }
}

void update_memory(ContinualRunState& state, const TaskSpec& task, const TrainConfig& cfg) {
  std::map<int, std::vector<Instance>> by_class;
  for (const Instance& x : task.train) by_class[x.label].push_back(x);
  for (int c : task.label_set) {
    auto it = by_class.find(c);
    if (it == by_class.end()) continue;
    const Mat reps = state.model.representations(it->second);
    state.bank.store(c, select_exemplars(it->second, reps, cfg.memory_budget, state.rngs.kmeans));
  }
  log_for(state, task).bank_size = state.bank.size();
}

void train_replay_stage(ContinualRunState& state, const TrainConfig& cfg) {
  ReplayOptions opts;
  opts.epochs = cfg.epochs_replay;
  opts.batch_size = cfg.batch_size;
  opts.lr_encoder = cfg.lr_encoder;
  opts.lr_head = cfg.lr_head;
  opts.adam = cfg.adam;
  opts.adversarial = !cfg.no_adv;
  opts.adv = cfg.adv;
  const ReplayLog r = replay_stage(state.model, state.bank, state.class_to_row, opts, state.rngs.replay_shuffle,
                                   state.rngs.adversarial, &state.rngs.dropout);
  if (!state.logs.empty()) state.logs.back().replay_epoch_loss = r.epoch_loss;
}

void evaluate_stage(ContinualRunState& state, const TaskStream& stream, int j) {
  const Predictor p = state.predictor();
  for (int i = 1; i <= j; ++i) state.accuracy.set(j, i, accuracy(p, stream.tasks[static_cast<std::size_t>(i - 1)].test));
  if (!state.logs.empty()) {
    state.logs.back().acc_micro = accuracy_all_seen(p, stream, j, Averaging::Micro);
    state.logs.back().acc_macro = accuracy_all_seen(p, stream, j, Averaging::Macro);
  }
}

ContinualRunState run_continual(const TaskStream& stream, const EncoderConfig& enc, const TrainConfig& cfg,
                                std::uint64_t seed, const TaskObserver& observer) {
  cfg.validate();
  if (stream.tasks.empty()) throw InputError("empty task stream");
  ContinualRunState state(enc, cfg, seed);
  state.accuracy = AccuracyMatrix(static_cast<int>(stream.tasks.size()));
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const TaskSpec& task = stream.tasks[t];
    const int j = static_cast<int>(t) + 1;
    expand_head(state, task);
    train_initial_stage(state, task, cfg);
    if (!cfg.no_replay) {
      update_memory(state, task, cfg);
      train_replay_stage(state, cfg);
    }
    evaluate_stage(state, stream, j);
    if (observer) observer(j, state);
  }
  return state;
}

nlohmann::json run_report(const ContinualRunState& state, std::uint64_t seed) {
  const AccuracyMatrix& a = state.accuracy;
  const int n = a.rows_filled();
  nlohmann::json micro = nlohmann::json::array();
  nlohmann::json macro = nlohmann::json::array();
  nlohmann::json fr_stage = nlohmann::json::array();
  nlohmann::json logs = nlohmann::json::array();
  for (const TaskLog& l : state.logs) {
    micro.push_back(l.acc_micro);
    macro.push_back(l.acc_macro);
    logs.push_back({{"task", l.task},
                    {"initial_epoch_loss", l.initial_epoch_loss},
                    {"replay_epoch_loss", l.replay_epoch_loss},
                    {"bank_size", l.bank_size}});
  }
  for (int k = 1; k <= n; ++k) {
    const auto fr = forgetting_rate(a, k);
    fr_stage.push_back(fr ? nlohmann::json(*fr) : nlohmann::json(nullptr));
  }
  const auto fr = n >= 1 ? forgetting_rate(a, n) : std::nullopt;
  return {
      {"accuracy_matrix", a.to_json()},
      {"acc_per_stage", micro},
      {"acc_per_stage_macro", macro},
      {"final_acc", micro.empty() ? nlohmann::json(nullptr) : micro.back()},
      {"fr", fr ? nlohmann::json(*fr) : nlohmann::json(nullptr)},
      {"fr_per_stage", fr_stage},
      {"class_order", state.class_order},
      {"seed", seed},
      {"task_logs", logs},
  };
}

}  // namespace repcl
