#include "tge/model.hpp"

#include <algorithm>
#include <cmath>

#include "tge/checkpoint.hpp"
#include "tge/error.hpp"
#include "tge/geometry.hpp"
#include "tge/rng.hpp"

namespace tge {

using ad::Tensor;
using nlohmann::json;

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool uses_self_attention(Variant v) { return v == Variant::kFull || v == Variant::kNoGeometryFeature; }
bool uses_cross_attention(Variant v) { return v != Variant::kNoAttention && v != Variant::kNoAttentionNoLatent; }
bool uses_geometry_feature(Variant v) { return v != Variant::kNoGeometryFeature; }

std::string level_prefix(int level, std::size_t scale) {
  return "l" + std::to_string(level) + ".s" + std::to_string(scale);
}

// Parameter layout shared by init_params and the forward pass.
struct LayoutBuilder {
  std::vector<std::pair<std::string, ad::Shape>> entries;

  void layer(const std::string& name, std::size_t in, std::size_t out) {
    entries.push_back({name + ".w", {in, out}});
    entries.push_back({name + ".b", {1, out}});
  }
  std::size_t mlp(const std::string& name, std::size_t in, const std::vector<std::size_t>& dims) {
    for (std::size_t i = 0; i < dims.size(); ++i) {
      layer(name + "." + std::to_string(i), in, dims[i]);
      in = dims[i];
    }
    return in;
  }
  void attention(const std::string& name, std::size_t d) {
    for (const char* p : {"q", "k", "v", "o"}) layer(name + "." + p, d, d);
  }
};

void build_level(LayoutBuilder& b, const LgsaConfig& c, int level, Variant variant) {
  for (std::size_t s = 0; s < c.scales(); ++s) {
    const auto pre = level_prefix(level, s);
    if (variant == Variant::kNoAttentionNoLatent) {
      const auto w = b.mlp(pre + ".pn", 3 + c.latent_width, c.geom_mlp_dims[s]);
      b.mlp(pre + ".out", w, c.out_mlp_dims[s]);
      continue;
    }
    const auto gw = b.mlp(pre + ".geom", 3, c.geom_mlp_dims[s]);
    const auto lw = b.mlp(pre + ".lat", c.latent_width, c.latent_mlp_dims[s]);
    b.layer(pre + ".gproj", gw, c.d_emb);
    b.layer(pre + ".lproj", lw, c.d_emb);
    if (uses_self_attention(variant)) {
      b.attention(pre + ".gsa", c.d_emb);
      b.attention(pre + ".lsa", c.d_emb);
    }
    if (uses_cross_attention(variant)) b.attention(pre + ".xa", c.d_emb);
    b.layer(pre + ".ffn.0", c.d_emb, 4 * c.d_emb);
    b.layer(pre + ".ffn.1", 4 * c.d_emb, c.d_emb);
    b.mlp(pre + ".out", uses_geometry_feature(variant) ? 2 * c.d_emb : c.d_emb, c.out_mlp_dims[s]);
  }
}

std::size_t combined_width(const TgeConfig& c) {
  switch (c.comparison_mode) {
    case ComparisonMode::kConcatDiff: return 3 * c.final_dim();
    case ComparisonMode::kConcat: return 2 * c.final_dim();
    case ComparisonMode::kDiff: return c.final_dim();
  }
  return 0;
}

LayoutBuilder layout_of(const TgeConfig& c) {
  LayoutBuilder b;
  build_level(b, c.level1, 1, c.variant);
  build_level(b, c.level2, 2, c.variant);
  b.mlp("final", 3 + c.level2.d_out(), c.final_mlp_dims);
  const auto w = b.mlp("head", combined_width(c), c.head_dims);
  b.layer("head." + std::to_string(c.head_dims.size()), w, 1);
  return b;
}

// ---------------------------------------------------------------- forward helpers

Tensor dense(const TgeParams& p, const std::string& name, const Tensor& x) {
  return ad::linear(x, p.get(name + ".w"), p.get(name + ".b"));
}

Tensor mlp(const TgeParams& p, const std::string& name, Tensor x, std::size_t layers) {
  for (std::size_t i = 0; i < layers; ++i) x = ad::relu(dense(p, name + "." + std::to_string(i), x));
  return x;
}

Tensor attend(const TgeParams& p, const std::string& name, const Tensor& q_in, const Tensor& kv_in, std::size_t heads) {
  const Tensor q = dense(p, name + ".q", q_in);
  const Tensor k = dense(p, name + ".k", kv_in);
  const Tensor v = dense(p, name + ".v", kv_in);
  return dense(p, name + ".o", ad::scaled_dot_attention(q, k, v, heads));
}

Tensor ffn(const TgeParams& p, const std::string& name, const Tensor& x) {
  return dense(p, name + ".1", ad::relu(dense(p, name + ".0", x)));
}

json dims_json(const std::vector<std::vector<std::size_t>>& d) { return json(d); }

json lgsa_to_json(const LgsaConfig& c) {
  return {{"centroids", c.centroids},
          {"radii", c.radii},
          {"max_samples", c.max_samples},
          {"geom_mlp_dims", dims_json(c.geom_mlp_dims)},
          {"latent_mlp_dims", dims_json(c.latent_mlp_dims)},
          {"out_mlp_dims", dims_json(c.out_mlp_dims)},
          {"d_emb", c.d_emb},
          {"heads", c.heads},
          {"latent_width", c.latent_width}};
}

LgsaConfig lgsa_from_json(const json& j) {
  LgsaConfig c;
  c.centroids = j.at("centroids").get<std::size_t>();
  c.radii = j.at("radii").get<std::vector<double>>();
  c.max_samples = j.at("max_samples").get<std::vector<std::size_t>>();
  c.geom_mlp_dims = j.at("geom_mlp_dims").get<std::vector<std::vector<std::size_t>>>();
  c.latent_mlp_dims = j.at("latent_mlp_dims").get<std::vector<std::vector<std::size_t>>>();
  c.out_mlp_dims = j.at("out_mlp_dims").get<std::vector<std::vector<std::size_t>>>();
  c.d_emb = j.at("d_emb").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.latent_width = j.at("latent_width").get<std::size_t>();
  return c;
}

}  // namespace

// ---------------------------------------------------------------- config

std::size_t LgsaConfig::d_out() const {
  std::size_t d = 0;
  for (const auto& dims : out_mlp_dims) d += dims.empty() ? 0 : dims.back();
  return d;
}

void LgsaConfig::validate() const {
  check(centroids >= 1, "LgsaConfig: centroids must be >= 1");
  check(!radii.empty(), "LgsaConfig: need at least one scale");
  const auto s = radii.size();
  check(max_samples.size() == s && geom_mlp_dims.size() == s && latent_mlp_dims.size() == s &&
            out_mlp_dims.size() == s,
        "LgsaConfig: per-scale lists must have equal length");
  for (double r : radii) check(r > 0.0, "LgsaConfig: radii must be > 0");
  for (auto k : max_samples) check(k >= 1, "LgsaConfig: max_samples must be >= 1");
  for (const auto* group : {&geom_mlp_dims, &latent_mlp_dims, &out_mlp_dims}) {
    for (const auto& dims : *group) {
      check(!dims.empty(), "LgsaConfig: MLP dims must be non-empty");
      for (auto d : dims) check(d >= 1, "LgsaConfig: all dims must be >= 1");
    }
  }
  check(d_emb >= 1 && heads >= 1, "LgsaConfig: d_emb and heads must be >= 1");
  check(d_emb % heads == 0, "LgsaConfig: d_emb must be divisible by heads");
  check(latent_width >= 1, "LgsaConfig: latent_width must be >= 1");
}

void TgeConfig::validate() const {
  check(n_points >= 1, "TgeConfig: n_points must be >= 1");
  level1.validate();
  level2.validate();
  check(level1.latent_width == kLevel1LatentWidth, "TgeConfig: level1 latent width must be 3 (RGB)");
  check(level2.latent_width == kLevel2LatentWidth, "TgeConfig: level2 latent width must be 256");
  check(level1.d_out() == level2.latent_width, "TgeConfig: level1 output width must equal level2 latent width");
  check(level1.centroids <= n_points, "TgeConfig: level1 centroids exceed n_points");
  check(level2.centroids <= level1.centroids, "TgeConfig: level2 centroids exceed level1 centroids");
  check(!final_mlp_dims.empty(), "TgeConfig: final_mlp_dims must be non-empty");
  for (auto d : final_mlp_dims) check(d >= 1, "TgeConfig: final dims must be >= 1");
  check(head_dims == std::vector<std::size_t>({1024, 512, 256}), "TgeConfig: head_dims must be [1024, 512, 256]");
}

json TgeConfig::to_json() const {
  return {{"n_points", n_points},
          {"level1", lgsa_to_json(level1)},
          {"level2", lgsa_to_json(level2)},
          {"final_mlp_dims", final_mlp_dims},
          {"head_dims", head_dims},
          {"comparison_mode", comparison_mode_name(comparison_mode)},
          {"variant", variant_name(variant)},
          {"presort", presort},
          {"seed", seed}};
}

TgeConfig TgeConfig::from_json(const json& j) {
  TgeConfig c;
  try {
    c.n_points = j.at("n_points").get<std::size_t>();
    c.level1 = lgsa_from_json(j.at("level1"));
    c.level2 = lgsa_from_json(j.at("level2"));
    c.final_mlp_dims = j.at("final_mlp_dims").get<std::vector<std::size_t>>();
    c.head_dims = j.value("head_dims", c.head_dims);
    c.comparison_mode = comparison_mode_from_name(j.value("comparison_mode", std::string("concat_diff")));
    c.variant = variant_from_name(j.value("variant", std::string("full")));
    c.presort = j.value("presort", true);
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid model config: ") + e.what());
  }
  c.validate();
  return c;
}

TgeConfig TgeConfig::default_config() {
  TgeConfig c;
  c.n_points = 1024;
  c.level1.centroids = 512;
  c.level1.radii = {0.1, 0.2, 0.4};
  c.level1.max_samples = {16, 32, 128};
  c.level1.geom_mlp_dims = {{32, 32, 64}, {64, 64, 128}, {64, 96, 128}};
  c.level1.latent_mlp_dims = c.level1.geom_mlp_dims;
  c.level1.out_mlp_dims = {{64}, {96}, {96}};
  c.level1.d_emb = 128;
  c.level1.heads = 4;
  c.level1.latent_width = kLevel1LatentWidth;

  c.level2.centroids = 128;
  c.level2.radii = {0.2, 0.4, 0.8};
  c.level2.max_samples = {32, 64, 128};
  c.level2.geom_mlp_dims = {{64, 64, 128}, {128, 128, 256}, {128, 128, 256}};
  c.level2.latent_mlp_dims = c.level2.geom_mlp_dims;
  c.level2.out_mlp_dims = {{128}, {192}, {192}};
  c.level2.d_emb = 256;
  c.level2.heads = 4;
  c.level2.latent_width = kLevel2LatentWidth;

  c.final_mlp_dims = {256, 512, 1024};
  return c;
}

TgeConfig TgeConfig::toy_config(std::size_t n_points) {
  check(n_points >= 32, "toy_config: n_points must be >= 32");
  TgeConfig c;
  c.n_points = n_points;
  c.level1.centroids = n_points / 4;
  c.level1.radii = {0.2, 0.4};
  c.level1.max_samples = {8, 16};
  c.level1.geom_mlp_dims = {{16, 32}, {16, 32}};
  c.level1.latent_mlp_dims = c.level1.geom_mlp_dims;
  c.level1.out_mlp_dims = {{128}, {128}};
  c.level1.d_emb = 16;
  c.level1.heads = 4;
  c.level1.latent_width = kLevel1LatentWidth;

  c.level2.centroids = n_points / 16;
  c.level2.radii = {0.4, 0.8};
  c.level2.max_samples = {8, 16};
  c.level2.geom_mlp_dims = {{32}, {32}};
  c.level2.latent_mlp_dims = c.level2.geom_mlp_dims;
  c.level2.out_mlp_dims = {{64}, {64}};
  c.level2.d_emb = 16;
  c.level2.heads = 4;
  c.level2.latent_width = kLevel2LatentWidth;

  c.final_mlp_dims = {64, 128};
  return c;
}

std::string comparison_mode_name(ComparisonMode mode) {
  switch (mode) {
    case ComparisonMode::kConcatDiff: return "concat_diff";
    case ComparisonMode::kConcat: return "concat";
    case ComparisonMode::kDiff: return "diff";
  }
  return "concat_diff";
}

ComparisonMode comparison_mode_from_name(const std::string& name) {
  if (name == "concat_diff") return ComparisonMode::kConcatDiff;
  if (name == "concat") return ComparisonMode::kConcat;
  if (name == "diff") return ComparisonMode::kDiff;
  throw std::invalid_argument("unknown comparison mode '" + name + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoAttentionNoLatent: return "no_attention_no_latent";
    case Variant::kNoAttention: return "no_attention";
    case Variant::kNoSelfAttention: return "no_self_attention";
    case Variant::kNoGeometryFeature: return "no_geometry_feature";
  }
  return "full";
}

Variant variant_from_name(const std::string& name) {
  for (auto v : {Variant::kFull, Variant::kNoAttentionNoLatent, Variant::kNoAttention, Variant::kNoSelfAttention,
                 Variant::kNoGeometryFeature}) {
    if (variant_name(v) == name) return v;
  }
  throw std::invalid_argument("unknown model variant '" + name + "'");
}

std::string architecture_fingerprint(const TgeConfig& config) {
  json arch = config.to_json();
  arch.erase("seed");  // sampling seed does not change the parameter layout
  std::string text = arch.dump();
  for (const auto& [name, shape] : layout_of(config).entries) {
    text += "|" + name + ":" + std::to_string(shape[0]) + "x" + std::to_string(shape[1]);
  }
  return fnv1a_hex(text);
}

// ---------------------------------------------------------------- params

const Tensor& TgeParams::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw NotFoundError("model parameter '" + name + "' not found");
  return set.tensor(it->second);
}

void TgeParams::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < set.size(); ++i) index_[set[i].name] = i;
}

TgeParams init_params(const TgeConfig& config, std::uint64_t seed) {
  config.validate();
  TgeParams p;
  p.config = config;
  p.init_seed = seed;
  Rng rng(seed);
  for (const auto& [name, shape] : layout_of(config).entries) {
    const auto idx = p.set.add(name, shape);
    if (name.ends_with(".b")) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
    for (auto& w : p.set[idx].value.mutable_values()) w = rng.uniform(-bound, bound);
  }
  p.reindex();
  return p;
}

// ---------------------------------------------------------------- forward

LevelOutput lgsa_forward(std::span<const Vec3> points, const Tensor& latent, const TgeParams& params, int level) {
  if (level != 1 && level != 2) throw std::invalid_argument("lgsa_forward: level must be 1 or 2");
  const TgeConfig& cfg = params.config;
  const LgsaConfig& c = level == 1 ? cfg.level1 : cfg.level2;
  if (points.size() < c.centroids) {
    throw ShapeError("lgsa_forward: " + std::to_string(points.size()) + " points < " + std::to_string(c.centroids) +
                     " centroids");
  }
  if (latent.rows() != points.size() || latent.cols() != c.latent_width) {
    throw ShapeError("lgsa_forward: latent must be " + std::to_string(points.size()) + " x " +
                     std::to_string(c.latent_width));
  }

  LevelOutput out;
  const auto picks = farthest_point_sample(points, c.centroids, derive_seed(cfg.seed, static_cast<std::uint64_t>(level)));
  out.centroids.reserve(picks.size());
  for (auto i : picks) out.centroids.push_back(points[i]);
  const KdTree tree(points);

  std::vector<Tensor> scale_outputs;
  for (std::size_t s = 0; s < c.scales(); ++s) {
    const auto pre = level_prefix(level, s);
    const Grouping grp = group_points(tree, out.centroids, c.radii[s], c.max_samples[s]);
    std::vector<double> rel(grp.indices.size() * 3);
    for (std::size_t g = 0; g < grp.groups(); ++g) {
      for (auto k = grp.offsets[g]; k < grp.offsets[g + 1]; ++k) {
        const Vec3 d = (points[grp.indices[k]] - out.centroids[g]) * (1.0 / c.radii[s]);
        rel[3 * k] = d.x;
        rel[3 * k + 1] = d.y;
        rel[3 * k + 2] = d.z;
      }
    }
    const Tensor rel_t = Tensor::constant({grp.indices.size(), 3}, std::move(rel));
    const Tensor grouped_latent = ad::gather_rows(latent, grp.indices);

    if (cfg.variant == Variant::kNoAttentionNoLatent) {
      const Tensor in = ad::concat_cols(std::vector<Tensor>{rel_t, grouped_latent});
      const Tensor pooled = ad::group_max_pool(mlp(params, pre + ".pn", in, c.geom_mlp_dims[s].size()), grp.offsets);
      scale_outputs.push_back(mlp(params, pre + ".out", pooled, c.out_mlp_dims[s].size()));
      continue;
    }

    const Tensor g = ad::group_max_pool(mlp(params, pre + ".geom", rel_t, c.geom_mlp_dims[s].size()), grp.offsets);
    const Tensor l =
        ad::group_max_pool(mlp(params, pre + ".lat", grouped_latent, c.latent_mlp_dims[s].size()), grp.offsets);
    Tensor gp = dense(params, pre + ".gproj", g);
    Tensor lp = dense(params, pre + ".lproj", l);
    if (uses_self_attention(cfg.variant)) {
      gp = attend(params, pre + ".gsa", gp, gp, c.heads);
      lp = attend(params, pre + ".lsa", lp, lp, c.heads);
    }
    const Tensor mixed = uses_cross_attention(cfg.variant) ? attend(params, pre + ".xa", gp, lp, c.heads) : lp;
    const Tensor f = ad::add(mixed, ffn(params, pre + ".ffn", lp));
    const Tensor fused = uses_geometry_feature(cfg.variant) ? ad::concat_cols(std::vector<Tensor>{f, gp}) : f;
    scale_outputs.push_back(mlp(params, pre + ".out", fused, c.out_mlp_dims[s].size()));
  }
  out.features = scale_outputs.size() == 1 ? scale_outputs[0] : ad::concat_cols(scale_outputs);
  return out;
}

Tensor encode(const ColoredPointCloud& cloud, const TgeParams& params) {
  cloud.validate();
  const TgeConfig& cfg = params.config;
  std::vector<Vec3> pts = cloud.points;
  std::vector<Vec3> cols = cloud.colors;
  if (cfg.presort) {
    const auto order = lexicographic_order(cloud.points, cloud.colors);
    for (std::size_t i = 0; i < order.size(); ++i) {
      pts[i] = cloud.points[order[i]];
      cols[i] = cloud.colors[order[i]];
    }
  }
  std::vector<double> rgb;
  rgb.reserve(cols.size() * 3);
  for (const auto& c : cols) rgb.insert(rgb.end(), {c.x, c.y, c.z});
  const Tensor color_t = Tensor::constant({cols.size(), 3}, std::move(rgb));

  const LevelOutput l1 = lgsa_forward(pts, color_t, params, 1);
  const LevelOutput l2 = lgsa_forward(l1.centroids, l1.features, params, 2);

  std::vector<double> xyz;
  xyz.reserve(l2.centroids.size() * 3);
  for (const auto& p : l2.centroids) xyz.insert(xyz.end(), {p.x, p.y, p.z});
  const Tensor xyz_t = Tensor::constant({l2.centroids.size(), 3}, std::move(xyz));
  const Tensor in = ad::concat_cols(std::vector<Tensor>{xyz_t, l2.features});
  return ad::max_pool_rows(mlp(params, "final", in, cfg.final_mlp_dims.size()));
}

Tensor combine_features(const Tensor& f_input, const Tensor& f_ref, ComparisonMode mode) {
  if (f_input.shape() != f_ref.shape() || f_input.rows() != 1) {
    throw ShapeError("compare: feature vectors must both be 1 x d");
  }
  switch (mode) {
    case ComparisonMode::kConcatDiff:
      return ad::concat_cols(std::vector<Tensor>{f_input, f_ref, ad::abs(ad::sub(f_input, f_ref))});
    case ComparisonMode::kConcat:
      return ad::concat_cols(std::vector<Tensor>{f_input, f_ref});
    case ComparisonMode::kDiff:
      return ad::abs(ad::sub(f_input, f_ref));
  }
  throw std::invalid_argument("compare: unknown comparison mode");
}

Tensor compare(const Tensor& f_input, const Tensor& f_ref, const TgeParams& params) {
  const TgeConfig& cfg = params.config;
  if (f_input.cols() != cfg.final_dim()) throw ShapeError("compare: feature width does not match final_dim");
  Tensor x = mlp(params, "head", combine_features(f_input, f_ref, cfg.comparison_mode), cfg.head_dims.size());
  return ad::sigmoid(dense(params, "head." + std::to_string(cfg.head_dims.size()), x));
}

std::pair<ColoredPointCloud, ColoredPointCloud> prepare_pair(const ColoredMesh& input, const ColoredMesh& reference,
                                                             const TgeConfig& config) {
  const auto transform = normalization_of(reference);
  const auto seed = derive_seed(config.seed, 0x5a4d);
  auto in = sample_points(apply_transform(input, transform), config.n_points, seed);
  auto ref = sample_points(apply_transform(reference, transform), config.n_points, seed);
  in.source = input.name;
  ref.source = reference.name;
  return {std::move(in), std::move(ref)};
}

Tensor score_clouds(const ColoredPointCloud& input, const ColoredPointCloud& reference, const TgeParams& params) {
  return compare(encode(input, params), encode(reference, params), params);
}

double predict(const ColoredMesh& input, const ColoredMesh& reference, const TgeParams& params) {
  ad::NoGradGuard no_grad;
  const auto [in, ref] = prepare_pair(input, reference, params.config);
  return score_clouds(in, ref, params).item();
}

// ---------------------------------------------------------------- persistence

void save_model(const std::filesystem::path& path, const TgeParams& params) {
  write_checkpoint(path, params.config.to_json(), params.init_seed, params.fingerprint(), params.set);
}

TgeParams load_model(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  TgeParams p;
  p.config = TgeConfig::from_json(ck.config);
  p.init_seed = ck.seed;
  if (ck.fingerprint != p.fingerprint()) {
    throw FingerprintError("checkpoint fingerprint " + ck.fingerprint + " does not match its config (" +
                           p.fingerprint() + ")");
  }
  const auto layout = layout_of(p.config);
  if (layout.entries.size() != ck.params.size()) throw FingerprintError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < layout.entries.size(); ++i) {
    if (layout.entries[i].first != ck.params[i].name || layout.entries[i].second != ck.params[i].value.shape()) {
      throw FingerprintError("checkpoint parameter layout mismatch at '" + ck.params[i].name + "'");
    }
  }
  p.set = std::move(ck.params);
  p.reindex();
  return p;
}

TgeParams load_model(const std::filesystem::path& path, const TgeConfig& expected) {
  TgeParams p = load_model(path);
  const auto want = architecture_fingerprint(expected);
  if (p.fingerprint() != want) {
    throw FingerprintError("checkpoint architecture " + p.fingerprint() + " does not match the requested config " +
                           want);
  }
  return p;
}

}  // namespace tge
