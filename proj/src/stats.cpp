#include "tge/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "tge/error.hpp"

namespace tge {

using nlohmann::json;

namespace {

void require_pair(std::span<const double> x, std::span<const double> y, const char* what) {
  if (x.size() != y.size()) throw std::invalid_argument(std::string(what) + ": length mismatch");
  if (x.size() < 3) throw std::invalid_argument(std::string(what) + ": need at least 3 samples");
}

double clamp_unit(double r) { return std::clamp(r, -1.0, 1.0); }

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double pick(const Correlations& c, const std::string& which) {
  if (which == "plcc") return c.plcc;
  if (which == "srocc") return c.srocc;
  if (which == "krocc") return c.krocc;
  throw std::invalid_argument("unknown correlation '" + which + "'");
}

json corr_json(const Correlations& c) { return {{"plcc", c.plcc}, {"srocc", c.srocc}, {"krocc", c.krocc}}; }

Correlations corr_from_json(const json& j) {
  return {j.at("plcc").get<double>(), j.at("srocc").get<double>(), j.at("krocc").get<double>()};
}

}  // namespace

double plcc(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, "plcc");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i] - mx;
    const double b = y[i] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::domain_error("plcc: zero variance");
  return clamp_unit(sxy / std::sqrt(sxx * syy));
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

double srocc(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, "srocc");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return plcc(rx, ry);
}

double krocc(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, "krocc");
  const std::size_t n = x.size();
  long long s = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0) ++ties_x;
      if (dy == 0.0) ++ties_y;
      if (dx != 0.0 && dy != 0.0) s += ((dx > 0.0) == (dy > 0.0)) ? 1 : -1;
    }
  }
  const long long n0 = static_cast<long long>(n * (n - 1) / 2);
  const double denom = std::sqrt(static_cast<double>(n0 - ties_x) * static_cast<double>(n0 - ties_y));
  if (denom == 0.0) throw std::domain_error("krocc: all values tied");
  return clamp_unit(static_cast<double>(s) / denom);
}

// ---------------------------------------------------------------- reports

void EvalReport::aggregate() {
  mean = {};
  std = {};
  if (folds.empty()) return;
  const double n = static_cast<double>(folds.size());
  for (const auto& f : folds) {
    mean.plcc += f.corr.plcc;
    mean.srocc += f.corr.srocc;
    mean.krocc += f.corr.krocc;
  }
  mean.plcc /= n;
  mean.srocc /= n;
  mean.krocc /= n;
  for (const auto& f : folds) {
    std.plcc += (f.corr.plcc - mean.plcc) * (f.corr.plcc - mean.plcc);
    std.srocc += (f.corr.srocc - mean.srocc) * (f.corr.srocc - mean.srocc);
    std.krocc += (f.corr.krocc - mean.krocc) * (f.corr.krocc - mean.krocc);
  }
  std.plcc = std::sqrt(std.plcc / n);
  std.srocc = std::sqrt(std.srocc / n);
  std.krocc = std::sqrt(std.krocc / n);
}

json EvalReport::to_json() const {
  json j;
  j["metric"] = metric;
  j["folds"] = json::array();
  for (const auto& f : folds) {
    j["folds"].push_back(
        {{"object", f.object}, {"plcc", f.corr.plcc}, {"srocc", f.corr.srocc}, {"krocc", f.corr.krocc}, {"n", f.n}});
  }
  j["mean"] = corr_json(mean);
  j["std"] = corr_json(std);
  j["skipped"] = json::array();
  for (const auto& s : skipped) j["skipped"].push_back({{"object", s.object}, {"n", s.n}, {"reason", s.reason}});
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.metric = j.at("metric").get<std::string>();
  for (const auto& f : j.at("folds")) {
    r.folds.push_back({f.at("object").get<std::string>(),
                       {f.at("plcc").get<double>(), f.at("srocc").get<double>(), f.at("krocc").get<double>()},
                       f.at("n").get<std::size_t>()});
  }
  r.mean = corr_from_json(j.at("mean"));
  r.std = corr_from_json(j.at("std"));
  if (j.contains("skipped")) {
    for (const auto& s : j.at("skipped")) {
      r.skipped.push_back({s.at("object").get<std::string>(), s.at("n").get<std::size_t>(),
                           s.at("reason").get<std::string>()});
    }
  }
  return r;
}

std::string correlation_table(std::span<const EvalReport> reports, const std::string& which) {
  std::set<std::string> objects;
  for (const auto& r : reports) {
    for (const auto& f : r.folds) objects.insert(f.object);
  }
  std::string out = "metric";
  for (const auto& o : objects) out += "," + o;
  out += ",Average,Std\n";
  for (const auto& r : reports) {
    std::map<std::string, double> by_object;
    for (const auto& f : r.folds) by_object[f.object] = pick(f.corr, which);
    out += r.metric;
    for (const auto& o : objects) {
      out += ",";
      if (auto it = by_object.find(o); it != by_object.end()) out += fmt(it->second);
    }
    out += "," + fmt(pick(r.mean, which)) + "," + fmt(pick(r.std, which)) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- cross-validation

EvalReport cross_validate(const Manifest& manifest, const std::string& metric_name, const Scorer& scorer,
                          const CrossValidationOptions& options) {
  if (manifest.objects.size() < 2) throw std::invalid_argument("cross_validate: need at least 2 objects");
  std::vector<const ObjectGroup*> groups;
  for (const auto& g : manifest.objects) groups.push_back(&g);
  std::stable_sort(groups.begin(), groups.end(), [](auto* a, auto* b) { return a->id < b->id; });

  EvalReport report;
  report.metric = metric_name;
  const bool negate = options.negate_lower_better && options.orientation == Orientation::kLowerBetter;
  for (const ObjectGroup* held : groups) {
    std::vector<double> labels;
    for (const auto& d : held->distorted) {
      if (d.score) labels.push_back(*d.score);
    }
    if (labels.size() < 3) {
      report.skipped.push_back({held->id, labels.size(), "fewer than 3 scored samples"});
      continue;
    }
    std::vector<const ObjectGroup*> training;
    for (const ObjectGroup* g : groups) {
      if (g != held) training.push_back(g);
    }
    auto preds = scorer(*held, training);
    if (preds.size() != labels.size()) throw std::runtime_error("cross_validate: scorer returned wrong count");
    if (negate) {
      for (auto& p : preds) p = -p;
    }
    try {
      report.folds.push_back({held->id, {plcc(preds, labels), srocc(preds, labels), krocc(preds, labels)},
                              labels.size()});
    } catch (const std::domain_error& e) {
      report.skipped.push_back({held->id, labels.size(), e.what()});
    }
  }
  report.aggregate();
  return report;
}

Scorer metric_scorer(const std::string& metric, const MetricConfig& config) {
  MetricConfig cfg = config;
  cfg.metrics = {metric};
  metric_orientation(metric);  // validates the name
  return [cfg](const ObjectGroup& held, const std::vector<const ObjectGroup*>&) {
    const ColoredMesh reference = load_mesh(held.reference);
    std::vector<double> out;
    for (const auto& d : held.distorted) {
      if (!d.score) continue;
      const auto results = run_all(load_mesh(d.path), reference, cfg);
      out.push_back(results.at(0).value);
    }
    return out;
  };
}

Scorer model_scorer(const TgeParams& params) {
  return [&params](const ObjectGroup& held, const std::vector<const ObjectGroup*>&) {
    const ColoredMesh reference = load_mesh(held.reference);
    std::vector<double> out;
    for (const auto& d : held.distorted) {
      if (d.score) out.push_back(predict(load_mesh(d.path), reference, params));
    }
    return out;
  };
}

// ---------------------------------------------------------------- FLOPs

json FlopBreakdown::to_json() const {
  return {{"grouped", grouped}, {"level", level},    {"attention", attention},
          {"final_sa", final_sa}, {"head", head}, {"total", total()}, {"gflops", total() / 1e9}};
}

FlopBreakdown estimate_flops(const TgeConfig& config, std::size_t n_points) {
  config.validate();
  if (n_points < 1) throw std::invalid_argument("estimate_flops: n_points must be >= 1");
  const double ratio = static_cast<double>(n_points) / static_cast<double>(config.n_points);
  auto mlp_macs = [](std::size_t in, const std::vector<std::size_t>& dims) {
    double macs = 0.0;
    for (auto d : dims) {
      macs += static_cast<double>(in) * static_cast<double>(d);
      in = d;
    }
    return macs;
  };

  FlopBreakdown per_cloud;
  double prev_points = static_cast<double>(n_points);
  std::size_t final_rows = 0;
  for (int level = 1; level <= 2; ++level) {
    const LgsaConfig& c = level == 1 ? config.level1 : config.level2;
    const double m = std::min(prev_points, std::max(1.0, std::round(static_cast<double>(c.centroids) * ratio)));
    const double d = static_cast<double>(c.d_emb);
    for (std::size_t s = 0; s < c.scales(); ++s) {
      const double members = m * static_cast<double>(std::min<double>(c.max_samples[s], prev_points));
      if (config.variant == Variant::kNoAttentionNoLatent) {
        per_cloud.grouped += members * mlp_macs(3 + c.latent_width, c.geom_mlp_dims[s]);
        per_cloud.level += m * mlp_macs(c.geom_mlp_dims[s].back(), c.out_mlp_dims[s]);
        continue;
      }
      per_cloud.grouped += members * (mlp_macs(3, c.geom_mlp_dims[s]) + mlp_macs(c.latent_width, c.latent_mlp_dims[s]));
      per_cloud.level += m * d * static_cast<double>(c.geom_mlp_dims[s].back() + c.latent_mlp_dims[s].back());
      int attentions = 0;
      if (config.variant == Variant::kFull || config.variant == Variant::kNoGeometryFeature) attentions += 2;
      if (config.variant != Variant::kNoAttention) attentions += 1;
      // Q/K/V/O projections plus score and weighted-sum products.
      per_cloud.attention += attentions * (4.0 * m * d * d + 2.0 * m * m * d);
      per_cloud.level += m * 8.0 * d * d;  // FFN d -> 4d -> d
      const std::size_t fused = config.variant == Variant::kNoGeometryFeature ? c.d_emb : 2 * c.d_emb;
      per_cloud.level += m * mlp_macs(fused, c.out_mlp_dims[s]);
    }
    prev_points = m;
    final_rows = static_cast<std::size_t>(m);
  }
  per_cloud.final_sa = static_cast<double>(final_rows) * mlp_macs(3 + config.level2.d_out(), config.final_mlp_dims);

  FlopBreakdown out;
  // Two encodes (input and reference) and one head evaluation; FLOPs = 2 x MACs.
  out.grouped = 2.0 * 2.0 * per_cloud.grouped;
  out.level = 2.0 * 2.0 * per_cloud.level;
  out.attention = 2.0 * 2.0 * per_cloud.attention;
  out.final_sa = 2.0 * 2.0 * per_cloud.final_sa;
  std::size_t comb = 3 * config.final_dim();
  if (config.comparison_mode == ComparisonMode::kConcat) comb = 2 * config.final_dim();
  if (config.comparison_mode == ComparisonMode::kDiff) comb = config.final_dim();
  std::vector<std::size_t> head = config.head_dims;
  head.push_back(1);
  out.head = 2.0 * mlp_macs(comb, head);
  return out;
}

}  // namespace tge
