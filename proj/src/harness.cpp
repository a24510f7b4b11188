#include "aio2/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "aio2/errors.hpp"
#include "aio2/parallel.hpp"
#include "aio2/rng.hpp"

namespace aio2 {

Arm arm_from_string(const std::string& s) {
  if (s == "gt") return Arm::Gt;
  if (s == "noisy") return Arm::Noisy;
  if (s == "aio2") return Arm::Aio2;
  if (s == "pixelwise") return Arm::Pixelwise;
  if (s == "bootstrap") return Arm::Bootstrap;
  throw ConfigError("unknown arm: " + s);
}

std::string arm_name(Arm arm) {
  switch (arm) {
    case Arm::Gt: return "gt";
    case Arm::Noisy: return "noisy";
    case Arm::Aio2: return "aio2";
    case Arm::Pixelwise: return "pixelwise";
    case Arm::Bootstrap: return "bootstrap";
  }
  throw ContractError("arm_name: bad enum value");
}

void RunConfig::validate() const {
  trainer.validate();
  act.validate();
  o2c.validate();
  baseline.validate();
  if (!(width_mult > 0.0)) throw ConfigError("run: width_mult must be > 0");
  if (eval_every < 1) throw ConfigError("run: eval_every must be >= 1");
  if (replays < 1) throw ConfigError("run: replays must be >= 1");
  if (diag_depth < 1) throw ConfigError("run: diag_depth must be >= 1");
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("dataset")) cfg.dataset = j.at("dataset").get<std::string>();
  if (j.contains("arm")) cfg.arm = arm_from_string(j.at("arm").get<std::string>());
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("width_mult")) cfg.width_mult = m.at("width_mult").get<double>();
  }
  if (j.contains("trainer")) {
    const auto& t = j.at("trainer");
    if (t.contains("lr")) cfg.trainer.adam.lr = t.at("lr").get<double>();
    if (t.contains("ema_alpha")) cfg.trainer.ema_alpha = t.at("ema_alpha").get<double>();
    if (t.contains("batch_size")) cfg.trainer.batch_size = t.at("batch_size").get<int>();
    if (t.contains("epochs")) cfg.trainer.epochs = t.at("epochs").get<int>();
    if (t.contains("seed")) cfg.trainer.seed = t.at("seed").get<std::uint64_t>();
  }
  if (j.contains("act")) cfg.act = act_config_from_json(j.at("act"));
  if (j.contains("o2c")) {
    const auto& o = j.at("o2c");
    if (o.contains("filter_size")) cfg.o2c.filter_size = o.at("filter_size").get<int>();
    if (o.contains("prediction_threshold")) {
      cfg.o2c.prediction_threshold = o.at("prediction_threshold").get<double>();
    }
    if (o.contains("min_overlap_fraction")) {
      cfg.o2c.min_overlap_fraction = o.at("min_overlap_fraction").get<double>();
    }
  }
  if (j.contains("baseline")) {
    const auto& b = j.at("baseline");
    if (b.contains("pixelwise_k")) cfg.baseline.pixelwise_k = b.at("pixelwise_k").get<double>();
    if (b.contains("bootstrap_floor")) {
      cfg.baseline.bootstrap_floor = b.at("bootstrap_floor").get<double>();
    }
    if (b.contains("bootstrap_epochs")) {
      cfg.baseline.bootstrap_epochs = b.at("bootstrap_epochs").get<int>();
    }
  }
  if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<int>();
  if (j.contains("replays")) cfg.replays = j.at("replays").get<int>();
  if (j.contains("diag_depth")) cfg.diag_depth = j.at("diag_depth").get<int>();
  cfg.validate();
  return cfg;
}

nlohmann::json scores_to_json(const SegScores& s) {
  const auto field = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"iou", field(s.iou)},       {"oa", field(s.oa)},
          {"precision", field(s.precision)}, {"recall", field(s.recall)},
          {"f1", field(s.f1)}};
}

std::uint64_t checkpoint_checksum(const Checkpoint& c) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  mix(&c.epoch, sizeof(c.epoch));
  mix(&c.adam_t, sizeof(c.adam_t));
  for (const auto* v : {&c.student, &c.teacher, &c.adam_m, &c.adam_v}) {
    mix(v->data(), v->size() * sizeof(float));
  }
  return h;
}

void inject_dataset(const std::filesystem::path& root,
                    const NoiseConfig& noise, const std::string& split) {
  const auto ids = read_manifest(root / (split + ".txt"));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto dir = patch_dir(root, ids[i]);
    NoiseConfig per_patch = noise;
    per_patch.seed = mix_seed(noise.seed, static_cast<std::uint64_t>(i));
    write_patch(dir, inject_noise(read_patch(dir), per_patch));
  }
}

namespace {

struct LoadedPatch {
  Raster image;
  BinaryMask gt;
  BinaryMask noisy;
  ObjectSet tagged;  // gt objects tagged against the noisy mask
};

struct Dataset {
  std::vector<LoadedPatch> train;
  std::vector<LoadedPatch> test;
  int channels = 0;
};

std::vector<LoadedPatch> load_split(const std::filesystem::path& root,
                                    const std::string& split, bool want_tags) {
  std::vector<LoadedPatch> out;
  for (const std::string& id : read_manifest(root / (split + ".txt"))) {
    DatasetPatch p = read_patch(patch_dir(root, id));
    LoadedPatch lp;
    lp.image = std::move(p.image);
    lp.gt = std::move(p.gt_mask);
    lp.noisy = std::move(p.noisy_mask);
    if (want_tags) {
      lp.tagged = tag_objects(extract_objects(connected_components(lp.gt)),
                              lp.noisy);
    }
    out.push_back(std::move(lp));
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.train = load_split(root, "train", true);
  ds.test = load_split(root, "test", false);
  if (ds.train.empty()) {
    throw ContractError("dataset has no training patches: " + root.string());
  }
  ds.channels = ds.train.front().image.channels;
  for (const auto& split : {&ds.train, &ds.test}) {
    for (const LoadedPatch& p : *split) {
      if (p.image.channels != ds.channels) {
        throw ContractError("dataset mixes channel counts");
      }
    }
  }
  return ds;
}

BinaryMask hard_pred(const SoftMask& prob) {
  BinaryMask out = Raster::zeros(prob.width, prob.height);
  for (std::size_t i = 0; i < prob.values.size(); ++i) {
    out.values[i] = prob.values[i] >= 0.5f ? 1.0f : 0.0f;
  }
  return out;
}

struct TrainEval {
  SegCounts vs_noisy;
  SegCounts vs_gt;
  DiagAccumulator diag;
};

TrainEval eval_train(const Model<float>& model,
                     const std::vector<LoadedPatch>& patches, int diag_depth) {
  std::vector<TrainEval> parts(patches.size());
  parallel_for(static_cast<int>(patches.size()), [&](int i) {
    const LoadedPatch& p = patches[static_cast<std::size_t>(i)];
    const BinaryMask pred = hard_pred(model.forward_prob(p.image));
    TrainEval& e = parts[static_cast<std::size_t>(i)];
    e.vs_noisy += seg_counts(pred, p.noisy);
    e.vs_gt += seg_counts(pred, p.gt);
    e.diag.add(p.tagged, pred, p.noisy, diag_depth);
  });
  TrainEval total;
  for (const TrainEval& e : parts) {
    total.vs_noisy += e.vs_noisy;
    total.vs_gt += e.vs_gt;
    total.diag += e.diag;
  }
  return total;
}

SegScores eval_test(const Model<float>& model,
                    const std::vector<LoadedPatch>& patches) {
  std::vector<SegCounts> parts(patches.size());
  parallel_for(static_cast<int>(patches.size()), [&](int i) {
    const LoadedPatch& p = patches[static_cast<std::size_t>(i)];
    parts[static_cast<std::size_t>(i)] =
        seg_counts(hard_pred(model.forward_prob(p.image)), p.gt);
  });
  SegCounts total;
  for (const SegCounts& c : parts) total += c;
  return seg_scores(total);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

constexpr std::uint64_t kInitTag = 0x696e6974;     // model init stream
constexpr std::uint64_t kShuffleTag = 0x73686664;  // per-epoch batch order

std::filesystem::path ckpt_path(const std::filesystem::path& out, int epoch) {
  return out / "ckpt" / ("epoch_" + std::to_string(epoch) + ".bin");
}

void save_state(const std::filesystem::path& path, int epoch,
                const Model<float>& student, const Model<float>& teacher,
                const AdamState<float>& adam) {
  Checkpoint c;
  c.epoch = epoch;
  c.adam_t = adam.t;
  c.layout = student.layout();
  c.student = student.params();
  c.teacher = teacher.params();
  c.adam_m = adam.m;
  c.adam_v = adam.v;
  write_checkpoint(path, c);
}

}  // namespace

RunResult run(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const Dataset ds = load_dataset(cfg.dataset);
  std::filesystem::create_directories(out_dir / "ckpt");

  ModelConfig mc;
  mc.in_channels = ds.channels;
  mc.width_mult = cfg.width_mult;
  mc.init_seed = mix_seed(cfg.trainer.seed, kInitTag);
  Model<float> student(mc);
  Model<float> teacher(mc);
  ema_update(teacher.params(), student.params(), cfg.trainer.ema_alpha, 0);
  AdamState<float> adam;
  adam.reset(student.layout().total);

  const bool trigger_arm = cfg.arm == Arm::Aio2 || cfg.arm == Arm::Pixelwise;
  ActState act(cfg.act);
  AccuracySeries series;
  RunResult result;
  bool corrected = false;

  if (trigger_arm) save_state(ckpt_path(out_dir, 0), 0, student, teacher, adam);

  std::ofstream curve(out_dir / "curve.csv", std::ios::trunc);
  std::ofstream diag(out_dir / "diag.csv", std::ios::trunc);
  if (!curve || !diag) {
    throw IoError("run: cannot open logs under " + out_dir.string());
  }
  curve << "step,epoch,phase,train_iou_noisy,train_iou_gt,"
           "test_iou,test_oa,test_precision,test_recall,test_f1\n";
  diag << "step,epoch,detect_marked,detect_omitted,oa_ma,oa_mu,oa_ta,oa_tu,"
          "oa_ta_noisy,oa_tu_noisy\n";

  const int n_train = static_cast<int>(ds.train.size());
  const int bs = cfg.trainer.batch_size;
  std::vector<float> grad;
  std::vector<SoftMask> scratch(static_cast<std::size_t>(bs));
  int step = 0;

  for (int epoch = 1; epoch <= cfg.trainer.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(mix_seed(cfg.trainer.seed, kShuffleTag),
                             static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (int start = 0; start < n_train; start += bs) {
      const int nb = std::min(bs, n_train - start);
      std::vector<BatchSample> batch(static_cast<std::size_t>(nb));
      if (cfg.arm == Arm::Gt) {
        for (int i = 0; i < nb; ++i) {
          const LoadedPatch& p = ds.train[static_cast<std::size_t>(order[start + i])];
          batch[i] = {&p.image, &p.gt};
        }
      } else if (cfg.arm == Arm::Noisy || (trigger_arm && !corrected)) {
        for (int i = 0; i < nb; ++i) {
          const LoadedPatch& p = ds.train[static_cast<std::size_t>(order[start + i])];
          batch[i] = {&p.image, &p.noisy};
        }
      } else if (cfg.arm == Arm::Aio2) {
        // Targets from the pre-update teacher, rebuilt fresh every batch.
        parallel_for(nb, [&](int i) {
          const LoadedPatch& p = ds.train[static_cast<std::size_t>(order[start + i])];
          scratch[i] = correct(p.noisy, teacher.forward_prob(p.image), cfg.o2c)
                           .soft_mask;
        });
        result.n_o2c_calls += nb;
        for (int i = 0; i < nb; ++i) {
          const LoadedPatch& p = ds.train[static_cast<std::size_t>(order[start + i])];
          batch[i] = {&p.image, &scratch[i]};
        }
      } else if (cfg.arm == Arm::Pixelwise) {
        parallel_for(nb, [&](int i) {
          const LoadedPatch& p = ds.train[static_cast<std::size_t>(order[start + i])];
          scratch[i] = pixelwise_correct(p.noisy, teacher.forward_prob(p.image),
                                         cfg.baseline.pixelwise_k);
        });
        result.n_pixelwise_calls += nb;
        for (int i = 0; i < nb; ++i) {
          const LoadedPatch& p = ds.train[static_cast<std::size_t>(order[start + i])];
          batch[i] = {&p.image, &scratch[i]};
        }
      } else {  // bootstrap, from the first epoch, pre-update student output
        const double beta = bootstrap_beta(epoch - 1, cfg.baseline);
        parallel_for(nb, [&](int i) {
          const LoadedPatch& p = ds.train[static_cast<std::size_t>(order[start + i])];
          scratch[i] =
              bootstrap_targets(p.noisy, student.forward_prob(p.image), beta);
        });
        result.n_bootstrap_calls += nb;
        for (int i = 0; i < nb; ++i) {
          const LoadedPatch& p = ds.train[static_cast<std::size_t>(order[start + i])];
          batch[i] = {&p.image, &scratch[i]};
        }
      }

      loss_and_grad(student, batch, grad);
      adam_step(student.params(), grad, adam, cfg.trainer.adam);
      ema_update(teacher.params(), student.params(), cfg.trainer.ema_alpha,
                 adam.t);
    }

    const TrainEval te = eval_train(teacher, ds.train, cfg.diag_depth);
    EpochRow row;
    row.step = step++;
    row.epoch = epoch;
    row.phase = corrected ? "corrected" : "warmup";
    row.train_iou_noisy = seg_scores(te.vs_noisy).iou.value_or(0.0);
    row.train_iou_gt = seg_scores(te.vs_gt).iou.value_or(0.0);
    row.diag = te.diag.finish();
    if (!ds.test.empty() &&
        (epoch % cfg.eval_every == 0 || epoch == cfg.trainer.epochs)) {
      row.test = eval_test(teacher, ds.test);
      if (row.test->iou) {
        result.max_test_iou = std::max(result.max_test_iou, *row.test->iou);
      }
    }

    curve << row.step << ',' << row.epoch << ',' << row.phase << ','
          << fmt_double(row.train_iou_noisy) << ','
          << fmt_double(row.train_iou_gt) << ',';
    if (row.test) {
      curve << fmt_opt(row.test->iou) << ',' << fmt_opt(row.test->oa) << ','
            << fmt_opt(row.test->precision) << ',' << fmt_opt(row.test->recall)
            << ',' << fmt_opt(row.test->f1);
    } else {
      curve << ",,,,";
    }
    curve << '\n' << std::flush;
    diag << row.step << ',' << row.epoch << ','
         << fmt_opt(row.diag.detect_rate_marked) << ','
         << fmt_opt(row.diag.detect_rate_omitted) << ','
         << fmt_opt(row.diag.oa_MA) << ',' << fmt_opt(row.diag.oa_MU) << ','
         << fmt_opt(row.diag.oa_TA) << ',' << fmt_opt(row.diag.oa_TU) << ','
         << fmt_opt(row.diag.oa_TA_noisy) << ','
         << fmt_opt(row.diag.oa_TU_noisy) << '\n'
         << std::flush;
    result.rows.push_back(std::move(row));

    if (trigger_arm && !corrected) {
      series.push_back(result.rows.back().train_iou_noisy);
      if (epoch % cfg.act.checkpoint_stride == 0) {
        save_state(ckpt_path(out_dir, epoch), epoch, student, teacher, adam);
      }
      ++result.n_act_observations;
      if (const auto d = act.observe_epoch(series)) {
        result.decision = d;
        result.trigger_step = result.rows.back().step;
        const Checkpoint c = read_checkpoint(ckpt_path(out_dir, d->checkpoint_epoch));
        student.params() = c.student;
        teacher.params() = c.teacher;
        adam.m = c.adam_m;
        adam.v = c.adam_v;
        adam.t = c.adam_t;
        result.resume_from = c.epoch;
        result.resume_checksum = checkpoint_checksum(c);
        corrected = true;
        nlohmann::json dj = {{"decision", decision_to_json(*d)},
                             {"trigger_step", result.trigger_step},
                             {"no_trigger", false}};
        std::ofstream(out_dir / "decision.json") << dj.dump(2) << '\n';
        if (cfg.prune_checkpoints) {
          std::filesystem::remove_all(out_dir / "ckpt");
          std::filesystem::create_directories(out_dir / "ckpt");
        }
        epoch = c.epoch;  // loop increment resumes at the checkpoint's successor
      }
    }
  }

  if (trigger_arm && !result.decision) {
    result.no_trigger = true;
    std::ofstream(out_dir / "decision.json")
        << nlohmann::json{{"no_trigger", true}}.dump(2) << '\n';
  }

  save_state(out_dir / "ckpt" / "final.bin", cfg.trainer.epochs, student,
             teacher, adam);
  result.final_test_teacher =
      ds.test.empty() ? SegScores{} : eval_test(teacher, ds.test);
  result.final_test_student =
      ds.test.empty() ? SegScores{} : eval_test(student, ds.test);

  nlohmann::json trigger = nullptr;
  if (trigger_arm) {
    trigger = {{"triggered", result.decision.has_value()},
               {"no_trigger", result.no_trigger}};
    if (result.decision) {
      trigger["transition_epoch"] = result.decision->transition_epoch;
      trigger["checkpoint_epoch"] = result.decision->checkpoint_epoch;
      trigger["trigger_step"] = result.trigger_step;
    }
  }
  const EpochRow& last = result.rows.back();
  const nlohmann::json metrics = {
      {"arm", arm_name(cfg.arm)},
      {"seed", cfg.trainer.seed},
      {"epochs", cfg.trainer.epochs},
      {"eval_every", cfg.eval_every},
      {"final_test",
       {{"teacher", scores_to_json(result.final_test_teacher)},
        {"student", scores_to_json(result.final_test_student)}}},
      {"max_test_iou", result.max_test_iou},
      {"final_train_iou_noisy", last.train_iou_noisy},
      {"final_train_iou_gt", last.train_iou_gt},
      {"trigger", trigger},
      {"counters",
       {{"o2c", result.n_o2c_calls},
        {"act_observations", result.n_act_observations},
        {"pixelwise", result.n_pixelwise_calls},
        {"bootstrap", result.n_bootstrap_calls}}}};
  std::ofstream(out_dir / "metrics.json") << metrics.dump(2) << '\n';
  return result;
}

namespace {

ReplayStats stats_of(const std::vector<double>& values) {
  ReplayStats s;
  s.values = values;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
  if (values.size() > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(values.size() - 1));
  }
  return s;
}

nlohmann::json stats_to_json(const ReplayStats& s) {
  return {{"mean", s.mean}, {"std", s.stddev}, {"values", s.values}};
}

}  // namespace

ReplaySummary replay_suite(const RunConfig& cfg, int n_replays,
                           const std::filesystem::path& out_dir) {
  if (n_replays < 1) throw ContractError("replay_suite: need at least one replay");
  std::filesystem::create_directories(out_dir);
  ReplaySummary summary;
  std::vector<double> finals;
  std::vector<double> maxima;
  for (int i = 0; i < n_replays; ++i) {
    RunConfig rc = cfg;
    rc.trainer.seed = cfg.trainer.seed + static_cast<std::uint64_t>(i);
    const auto replay_dir = out_dir / ("replay_" + std::to_string(i));
    try {
      const RunResult r = run(rc, replay_dir);
      finals.push_back(r.final_test_teacher.iou.value_or(0.0));
      maxima.push_back(r.max_test_iou);
      ++summary.n_ok;
    } catch (const std::exception& e) {
      summary.failures.push_back("replay_" + std::to_string(i) + ": " + e.what());
    }
  }
  if (summary.n_ok == 0) {
    throw ContractError("replay_suite: every replay failed; first error: " +
                        summary.failures.front());
  }
  summary.final_iou = stats_of(finals);
  summary.max_iou = stats_of(maxima);
  const nlohmann::json js = {{"arm", arm_name(cfg.arm)},
                             {"replays", n_replays},
                             {"final_iou", stats_to_json(summary.final_iou)},
                             {"max_iou", stats_to_json(summary.max_iou)},
                             {"failures", summary.failures}};
  std::ofstream(out_dir / "replay_summary.json") << js.dump(2) << '\n';
  return summary;
}

AccuracySeries accuracy_series_from_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw IoError("empty file: " + path.string());
  while (!header.empty() && (header.back() == '\r' || header.back() == '\n')) {
    header.pop_back();
  }
  if (header == "epoch,acc") return read_accuracy_csv(path);

  std::vector<std::string> cols;
  std::stringstream hs(header);
  for (std::string c; std::getline(hs, c, ',');) cols.push_back(c);
  const auto col = [&cols, &path](const std::string& name) {
    const auto it = std::find(cols.begin(), cols.end(), name);
    if (it == cols.end()) {
      throw IoError(path.string() + ": missing column " + name);
    }
    return static_cast<std::size_t>(it - cols.begin());
  };
  const std::size_t epoch_col = col("epoch");
  const std::size_t phase_col = col("phase");
  const std::size_t value_col = col("train_iou_noisy");

  AccuracySeries series;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
      line.pop_back();
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
    if (fields.size() <= std::max({epoch_col, phase_col, value_col})) {
      throw IoError(path.string() + ": short row: " + line);
    }
    if (fields[phase_col] != "warmup") continue;
    const int epoch = std::stoi(fields[epoch_col]);
    if (epoch != static_cast<int>(series.size()) + 1) {
      throw IoError(path.string() + ": warm-up epochs not consecutive");
    }
    series.push_back(std::stod(fields[value_col]));
  }
  if (series.empty()) throw IoError(path.string() + ": no warm-up rows");
  return series;
}

}  // namespace aio2
