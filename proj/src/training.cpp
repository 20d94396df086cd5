#include "tge/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>

#include "tge/rng.hpp"

namespace tge {

using ad::Tensor;
using nlohmann::json;

namespace {

Tensor as_column(const Tensor& t) { return t.cols() == 1 ? t : ad::reshape(t, {t.numel(), 1}); }

Tensor label_column(std::span<const double> label) {
  return Tensor::constant({label.size(), 1}, std::vector<double>(label.begin(), label.end()));
}

void check_lengths(const Tensor& pred, std::span<const double> label, const char* what, std::size_t min_n) {
  if (pred.numel() != label.size()) throw std::invalid_argument(std::string(what) + ": length mismatch");
  if (label.size() < min_n) {
    throw std::invalid_argument(std::string(what) + ": need at least " + std::to_string(min_n) + " samples");
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> soft_rank_values(std::span<const double> v, double temperature) {
  std::vector<double> r(v.size(), 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (j != i) r[i] += sigmoid((v[i] - v[j]) / temperature);
    }
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------- losses

Tensor smooth_l1(const Tensor& pred, std::span<const double> label) {
  check_lengths(pred, label, "smooth_l1", 1);
  return ad::mean(ad::smooth_l1_terms(ad::sub(as_column(pred), label_column(label))));
}

Tensor plcc_loss(const Tensor& pred, std::span<const double> label) {
  check_lengths(pred, label, "plcc_loss", 3);
  const std::size_t n = label.size();
  const double nd = static_cast<double>(n);
  const auto p = pred.values();
  double mp = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += p[i];
    ml += label[i];
  }
  mp /= nd;
  ml /= nd;
  std::vector<double> a(n), b(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = p[i] - mp;
    b[i] = label[i] - ml;
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
    sab += a[i] * b[i];
  }
  if (sbb == 0.0) throw std::domain_error("plcc_loss: constant labels");
  if (saa / nd < 1e-12) saa += nd * 1e-12;  // near-constant predictions
  const double denom = std::sqrt(saa * sbb);
  const double r = sab / denom;
  return ad::record({1, 1}, {1.0 - r}, {pred},
                    [a = std::move(a), b = std::move(b), saa, denom, r](
                        std::span<const double>, std::span<const double> g, std::span<std::span<double>> gi) {
                      if (gi[0].empty()) return;
                      for (std::size_t i = 0; i < a.size(); ++i) gi[0][i] -= g[0] * (b[i] / denom - r * a[i] / saa);
                    });
}

Tensor soft_rank(const Tensor& values, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("soft_rank: temperature must be > 0");
  const std::size_t n = values.numel();
  if (n < 2) throw std::invalid_argument("soft_rank: need at least 2 values");
  const auto v = values.values();
  auto ranks = soft_rank_values(v, temperature);
  std::vector<double> vcopy(v.begin(), v.end());
  return ad::record({n, 1}, std::move(ranks), {values},
                    [vcopy = std::move(vcopy), temperature](std::span<const double>, std::span<const double> g,
                                                            std::span<std::span<double>> gi) {
                      if (gi[0].empty()) return;
                      const std::size_t n = vcopy.size();
                      for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = i + 1; j < n; ++j) {
                          const double s = sigmoid((vcopy[i] - vcopy[j]) / temperature);
                          const double ds = s * (1.0 - s) / temperature;  // even in (v_i - v_j)
                          gi[0][i] += ds * (g[i] - g[j]);
                          gi[0][j] += ds * (g[j] - g[i]);
                        }
                      }
                    });
}

Tensor srocc_loss(const Tensor& pred, std::span<const double> label, double temperature) {
  check_lengths(pred, label, "srocc_loss", 3);
  const double n = static_cast<double>(label.size());
  const auto label_ranks = soft_rank_values(label, temperature);
  const Tensor target = Tensor::constant({label.size(), 1}, label_ranks);
  const Tensor d = ad::sub(soft_rank(as_column(pred), temperature), target);
  return ad::scale(ad::sum(ad::square(d)), 6.0 / (n * (n * n - 1.0)));
}

HybridLoss hybrid_loss(const Tensor& pred, std::span<const double> label, const LossWeights& weights,
                       double temperature) {
  if (weights.smooth < 0.0 || weights.plcc < 0.0 || weights.srocc < 0.0) {
    throw std::invalid_argument("hybrid_loss: weights must be nonnegative");
  }
  HybridLoss out;
  std::vector<Tensor> terms;
  if (weights.smooth > 0.0) {
    const Tensor t = smooth_l1(pred, label);
    out.smooth = t.item();
    terms.push_back(ad::scale(t, weights.smooth));
  }
  if (weights.plcc > 0.0) {
    try {
      const Tensor t = plcc_loss(pred, label);
      out.plcc = t.item();
      terms.push_back(ad::scale(t, weights.plcc));
    } catch (const std::domain_error&) {
      out.plcc_skipped = true;
    }
  }
  if (weights.srocc > 0.0) {
    const Tensor t = srocc_loss(pred, label, temperature);
    out.srocc = t.item();
    terms.push_back(ad::scale(t, weights.srocc));
  }
  if (terms.empty()) {
    out.total = ad::scale(ad::sum(pred), 0.0);
  } else {
    out.total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
  }
  return out;
}

// ---------------------------------------------------------------- config / logs

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if ((weights.plcc > 0.0 || weights.srocc > 0.0) && batch_size < 3) {
    throw std::invalid_argument("TrainConfig: batch_size must be >= 3 when correlation losses are active");
  }
  if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("TrainConfig: temperature must be > 0");
  if (accumulation_window < 1) throw std::invalid_argument("TrainConfig: accumulation_window must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
}

json TrainConfig::to_json() const {
  json j = {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"weights", {{"smooth", weights.smooth}, {"plcc", weights.plcc}, {"srocc", weights.srocc}}},
            {"temperature", temperature},
            {"temperature_halving_epochs", temperature_halving_epochs},
            {"accumulation_window", accumulation_window},
            {"seed", seed},
            {"checkpoint_every", checkpoint_every},
            {"plateau_patience", plateau_patience},
            {"eval_every", eval_every}};
  j["target_srocc"] = target_srocc ? json(*target_srocc) : json(nullptr);
  return j;
}

json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"loss", loss},
          {"smooth", smooth},
          {"plcc", plcc},
          {"srocc", srocc},
          {"temperature", temperature},
          {"train_plcc", train_plcc ? json(*train_plcc) : json(nullptr)},
          {"train_srocc", train_srocc ? json(*train_srocc) : json(nullptr)},
          {"wall_seconds", wall_seconds}};
}

// ---------------------------------------------------------------- data

namespace {

std::vector<TrainPair> group_pairs(const ObjectGroup& group, const TgeConfig& model) {
  std::vector<TrainPair> out;
  const ColoredMesh reference = load_mesh(group.reference);
  const auto transform = normalization_of(reference);
  const ColoredMesh ref_n = apply_transform(reference, transform);
  const auto seed = derive_seed(model.seed, 0x5a4d);
  ColoredPointCloud ref_cloud = sample_points(ref_n, model.n_points, seed);
  ref_cloud.source = group.reference.string();
  for (const auto& d : group.distorted) {
    if (!d.score) continue;
    TrainPair p;
    p.id = d.id;
    p.object = group.id;
    p.input = sample_points(apply_transform(load_mesh(d.path), transform), model.n_points, seed);
    p.input.source = d.path.string();
    p.reference = ref_cloud;
    p.label = *d.score;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<TrainPair> prepare_pairs(const Manifest& manifest, const TgeConfig& model,
                                     const std::vector<std::string>& objects) {
  std::vector<TrainPair> out;
  for (const auto& g : manifest.objects) {
    if (!objects.empty() && std::find(objects.begin(), objects.end(), g.id) == objects.end()) continue;
    auto pairs = group_pairs(g, model);
    std::move(pairs.begin(), pairs.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<double> predict_pairs(const std::vector<TrainPair>& pairs, const TgeParams& params) {
  ad::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(score_clouds(p.input, p.reference, params).item());
  return out;
}

// ---------------------------------------------------------------- loop

TrainResult train(const std::vector<TrainPair>& pairs, const TrainConfig& config, const TgeConfig& model,
                  const EpochCallback& on_epoch) {
  config.validate();
  model.validate();
  if (pairs.empty()) throw std::invalid_argument("train: empty dataset");
  if (pairs.size() < config.batch_size) {
    throw std::invalid_argument("train: dataset has fewer scored pairs than batch_size");
  }

  TrainResult result;
  result.params = init_params(model, config.seed);
  TgeParams& params = result.params;
  ad::AdamWConfig opt;
  opt.lr = config.lr;
  opt.weight_decay = config.weight_decay;

  std::vector<double> labels;
  for (const auto& p : pairs) labels.push_back(p.label);

  const auto start = std::chrono::steady_clock::now();
  long step = 0;
  double best_srocc = -2.0;
  std::size_t best_epoch = 0;
  result.stop_reason = "epochs";
  std::deque<std::pair<std::vector<double>, std::vector<double>>> history;  // (pred, label) of past batches

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double temperature = config.temperature;
    if (config.temperature_halving_epochs > 0) {
      temperature *= std::pow(0.5, static_cast<double>(epoch / config.temperature_halving_epochs));
    }

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, 0x7000 + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    // Batches of batch_size; a short tail joins the previous batch.
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      batches.push_back({b, std::min(order.size(), b + config.batch_size)});
    }
    if (batches.size() > 1 && batches.back().second - batches.back().first < config.batch_size) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    EpochLog log;
    log.epoch = epoch + 1;
    log.temperature = temperature;
    for (const auto& [lo, hi] : batches) {
      std::vector<std::string> ids;
      std::vector<double> batch_labels;
      for (auto k = lo; k < hi; ++k) {
        ids.push_back(pairs[order[k]].id);
        batch_labels.push_back(pairs[order[k]].label);
      }
      auto batch_error = [&ids](const std::string& what) {
        std::string msg = "non-finite loss (" + what + ") in batch [";
        for (std::size_t i = 0; i < ids.size(); ++i) msg += (i ? ", " : "") + ids[i];
        return NonFiniteLossError(msg + "]");
      };

      ad::Tape tape;
      HybridLoss loss;
      try {
        std::vector<Tensor> preds;
        for (auto k = lo; k < hi; ++k) preds.push_back(score_clouds(pairs[order[k]].input, pairs[order[k]].reference, params));
        const Tensor pred = ad::concat_rows(preds);
        if (config.accumulation_window > 1 && !history.empty()) {
          // Correlation terms see earlier batches of the window as constants.
          std::vector<double> past_pred, past_label;
          for (const auto& [hp, hl] : history) {
            past_pred.insert(past_pred.end(), hp.begin(), hp.end());
            past_label.insert(past_label.end(), hl.begin(), hl.end());
          }
          const Tensor all_pred = ad::concat_rows(
              std::vector<Tensor>{Tensor::constant({past_pred.size(), 1}, past_pred), pred});
          std::vector<double> all_label = past_label;
          all_label.insert(all_label.end(), batch_labels.begin(), batch_labels.end());
          const HybridLoss smooth = hybrid_loss(pred, batch_labels, {config.weights.smooth, 0.0, 0.0}, temperature);
          const HybridLoss corr = hybrid_loss(all_pred, all_label, {0.0, config.weights.plcc, config.weights.srocc},
                                              temperature);
          loss = corr;
          loss.smooth = smooth.smooth;
          loss.total = ad::add(smooth.total, corr.total);
        } else {
          loss = hybrid_loss(pred, batch_labels, config.weights, temperature);
        }
        if (config.accumulation_window > 1) {
          history.emplace_back(std::vector<double>(pred.values().begin(), pred.values().end()), batch_labels);
          while (history.size() >= config.accumulation_window) history.pop_front();
        }
      } catch (const NonFiniteLossError&) {
        throw;
      } catch (const Error& e) {
        throw batch_error(e.what());
      }
      if (!std::isfinite(loss.total.item())) throw batch_error("loss");

      tape.backward(loss.total);
      const auto grads = params.set.gradients();
      for (const auto& g : grads) {
        for (double v : g) {
          if (!std::isfinite(v)) throw batch_error("gradient");
        }
      }
      ad::adamw_step(params.set, grads, opt, ++step);
      params.set.zero_grad();

      const double w = static_cast<double>(hi - lo) / static_cast<double>(pairs.size());
      log.loss += w * loss.total.item();
      log.smooth += w * loss.smooth;
      log.plcc += w * loss.plcc;
      log.srocc += w * loss.srocc;
    }

    const bool last = epoch + 1 == config.epochs;
    if ((epoch + 1) % config.eval_every == 0 || last) {
      const auto preds = predict_pairs(pairs, params);
      try {
        log.train_plcc = tge::plcc(preds, labels);
      } catch (const std::exception&) {
      }
      try {
        log.train_srocc = tge::srocc(preds, labels);
      } catch (const std::exception&) {
      }
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      std::filesystem::create_directories(config.checkpoint_dir);
      save_model(config.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"), params);
    }

    if (log.train_srocc) {
      if (config.target_srocc && *log.train_srocc >= *config.target_srocc) {
        result.stop_reason = "target_srocc";
        break;
      }
      if (*log.train_srocc > best_srocc + 1e-12) {
        best_srocc = *log.train_srocc;
        best_epoch = epoch;
      } else if (config.plateau_patience > 0 && epoch - best_epoch >= config.plateau_patience) {
        result.stop_reason = "plateau";
        break;
      }
    }
  }
  return result;
}

Scorer training_scorer(const TrainConfig& config, const TgeConfig& model) {
  return [config, model](const ObjectGroup& held, const std::vector<const ObjectGroup*>& training) {
    std::vector<TrainPair> pairs;
    for (const ObjectGroup* g : training) {
      auto gp = group_pairs(*g, model);
      std::move(gp.begin(), gp.end(), std::back_inserter(pairs));
    }
    const TrainResult trained = train(pairs, config, model);
    return predict_pairs(group_pairs(held, model), trained.params);
  };
}

// ---------------------------------------------------------------- synthetic data

ColoredMesh distort_mesh(const ColoredMesh& mesh, double level, std::uint64_t seed, const DistortionSpec& spec) {
  mesh.validate();
  if (!(level >= 0.0)) throw std::invalid_argument("distort_mesh: level must be >= 0");
  ColoredMesh out = mesh;
  if (level == 0.0) return out;
  const double diag = bounding_box(mesh.vertices).diagonal();
  Rng rng(seed);
  const double sigma_v = level * spec.max_vertex_jitter * diag;
  for (auto& v : out.vertices) {
    const double nx = rng.normal(), ny = rng.normal(), nz = rng.normal();
    v = v + Vec3{nx, ny, nz} * sigma_v;
  }
  const double sigma_c = level * spec.max_color_jitter;
  for (auto& c : out.colors) {
    const double r = rng.normal(), g = rng.normal(), b = rng.normal();
    c = {std::clamp(c.x + r * sigma_c, 0.0, 1.0), std::clamp(c.y + g * sigma_c, 0.0, 1.0),
         std::clamp(c.z + b * sigma_c, 0.0, 1.0)};
  }
  const double drop = std::min(1.0, level * spec.max_face_drop);
  std::vector<Face> kept;
  for (const auto& f : out.faces) {
    if (rng.uniform() >= drop) kept.push_back(f);
  }
  if (kept.empty()) kept.push_back(out.faces.front());
  out.faces = std::move(kept);
  return out;
}

Manifest make_synthetic_dataset(const std::vector<ColoredMesh>& references, const std::vector<double>& levels,
                                std::uint64_t seed, const std::filesystem::path& out_dir, const DistortionSpec& spec) {
  if (references.empty()) throw std::invalid_argument("make_synthetic_dataset: need at least one reference");
  for (double l : levels) {
    if (!(l >= 0.0)) throw std::invalid_argument("make_synthetic_dataset: levels must be >= 0");
  }
  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  manifest.root = out_dir;
  std::map<std::string, int> seen;
  for (std::size_t r = 0; r < references.size(); ++r) {
    std::string id = references[r].name.empty() ? "object_" + std::to_string(r) : references[r].name;
    if (seen[id]++ > 0) id += "_" + std::to_string(r);
    const auto dir = out_dir / id;
    std::filesystem::create_directories(dir);
    ObjectGroup group;
    group.id = id;
    group.reference = dir / "reference.ply";
    save_mesh(references[r], group.reference);
    for (std::size_t k = 0; k < levels.size(); ++k) {
      DistortedEntry e;
      e.id = id + "_d" + std::to_string(k);
      e.path = dir / (e.id + ".ply");
      e.method = "synthetic";
      e.level = levels[k];
      e.score = std::clamp(1.0 - levels[k], 0.0, 1.0);
      save_mesh(distort_mesh(references[r], levels[k], derive_seed(seed, r * 1000 + k), spec), e.path);
      group.distorted.push_back(std::move(e));
    }
    manifest.objects.push_back(std::move(group));
  }
  manifest.save(out_dir / "manifest.json");
  return manifest;
}

}  // namespace tge
