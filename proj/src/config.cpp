#include "fruitlet/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "fruitlet/error.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN

using nlohmann::json;

namespace {

// Field lists shared by serialization and strict parsing.
template <class V> void visit(SynthConfig& c, V& v) {
  v("fruitlets_min", c.fruitlets_min);
  v("fruitlets_max", c.fruitlets_max);
  v("diameter_min", c.diameter_min);
  v("diameter_max", c.diameter_max);
  v("growth_min", c.growth_min);
  v("growth_max", c.growth_max);
  v("eccentricity_min", c.eccentricity_min);
  v("eccentricity_max", c.eccentricity_max);
  v("drop_probability", c.drop_probability);
  v("crop_min", c.crop_min);
  v("crop_max", c.crop_max);
  v("day_gaps", c.day_gaps);
  v("day_gap_weights", c.day_gap_weights);
  v("cluster_radius", c.cluster_radius);
  v("camera_distance", c.camera_distance);
  v("max_pose_rotation_deg", c.max_pose_rotation_deg);
  v("daily_displacement", c.daily_displacement);
  v("spread_per_growth", c.spread_per_growth);
  v("points_min", c.points_min);
  v("points_max", c.points_max);
  v("depth_flatten_min", c.depth_flatten_min);
  v("depth_flatten_max", c.depth_flatten_max);
  v("jitter", c.jitter);
  v("outlier_fraction", c.outlier_fraction);
}

template <class V> void visit(SplitConfig& c, V& v) {
  v("train", c.train);
  v("val", c.val);
  v("test", c.test);
}

template <class V> void visit(FilterParams& c, V& v) {
  v("sigma_space", c.sigma_space);
  v("sigma_range", c.sigma_range);
  v("max_jump", c.max_jump);
  v("outlier_radius", c.outlier_radius);
  v("min_neighbors", c.min_neighbors);
  v("median_k_sigma", c.median_k_sigma);
}

template <class V> void visit(ShapeCodecConfig& c, V& v) {
  v("resolution", c.resolution);
  v("channels", c.channels);
  v("descriptor_dim", c.descriptor_dim);
}

template <class V> void visit(MatcherConfig& c, V& v) {
  v("layers", c.layers);
  v("heads", c.heads);
  v("feature_dim", c.feature_dim);
  v("ffn_dim", c.ffn_dim);
  v("dropout", c.dropout);
  v("match_threshold", c.match_threshold);
}

template <class V> void visit(ModelConfig& c, V& v) {
  v("codec", c.codec);
  v("matcher", c.matcher);
  v("positional_mode", c.positional_mode);
  v("positional_input_scale", c.positional_input_scale);
  v("ablation", c.ablation);
}

template <class V> void visit(ShapeAugmentConfig& c, V& v) {
  v("rotate", c.rotate);
  v("flip_probability", c.flip_probability);
  v("elastic_magnitude", c.elastic_magnitude);
  v("elastic_grid", c.elastic_grid);
  v("jitter", c.jitter);
}

template <class V> void visit(CodecPretrainOptions& c, V& v) {
  v("epochs", c.schedule.epochs);
  v("batch_size", c.schedule.batch_size);
  v("base_lr", c.schedule.base_lr);
  v("decay_every_epochs", c.schedule.decay_every_epochs);
  v("decay_factor", c.schedule.decay_factor);
  v("max_train_clouds", c.max_train_clouds);
  v("max_val_clouds", c.max_val_clouds);
  v("augment", c.augment);
}

template <class V> void visit(ClusterAugmentConfig& c, V& v) {
  v("cluster_scale", c.cluster_scale);
  v("cluster_rotation_deg", c.cluster_rotation_deg);
  v("fruit_scale", c.fruit_scale);
  v("fruit_rotation_deg", c.fruit_rotation_deg);
  v("shift", c.shift);
  v("jitter", c.jitter);
  v("dropout_min", c.dropout_min);
  v("dropout_max", c.dropout_max);
}

template <class V> void visit(TrainConfig& c, V& v) {
  v("epochs", c.epochs);
  v("batch_size", c.batch_size);
  v("base_lr", c.base_lr);
  v("warmup_epochs", c.warmup_epochs);
  v("augment", c.augment);
  v("augmentation", c.augmentation);
  v("tau_lo", c.tau_lo);
  v("tau_hi", c.tau_hi);
  v("tau_step", c.tau_step);
}

template <class V> void visit(IcpConfig& c, V& v) {
  v("max_iter", c.max_iter);
  v("tol", c.tol);
  v("reject_factor", c.reject_factor);
}

template <class V> void visit(IcpAssocConfig& c, V& v) {
  v("icp", c.icp);
  v("dist_threshold", c.dist_threshold);
}

template <class V> void visit(HistogramConfig& c, V& v) {
  v("distance_bins", c.distance_bins);
  v("max_distance", c.max_distance);
  v("azimuth_bins", c.azimuth_bins);
  v("elevation_bins", c.elevation_bins);
}

template <class V> void visit(DescAssocConfig& c, V& v) {
  v("icp", c.icp);
  v("histogram", c.histogram);
  v("local_radius", c.local_radius);
  v("w_hist", c.w_hist);
  v("w_dist", c.w_dist);
  v("dist_threshold", c.dist_threshold);
}

template <class V> void visit(BaselineConfig& c, V& v) {
  v("icp_assoc", c.icp_assoc);
  v("desc_assoc", c.desc_assoc);
}

template <class V> void visit(RunConfig& c, V& v) {
  v("seed", c.seed);
  v("synth", c.synth);
  v("split", c.split);
  v("filters", c.filters);
  v("model", c.model);
  v("pretrain", c.pretrain);
  v("train", c.train);
  v("baselines", c.baselines);
}

struct Writer;
struct Reader;

template <class T>
concept Section = requires(T& t, Writer& w) { visit(t, w); };

struct Writer {
  json& out;
  template <class T> void operator()(const char* key, T& value) {
    if constexpr (Section<T>) {
      Writer child{out[key] = json::object()};
      visit(value, child);
    } else if constexpr (std::is_enum_v<T>) {
      out[key] = std::string(to_string(value));
    } else {
      out[key] = value;
    }
  }
};

struct Reader {
  const json& in;
  std::string path;
  std::set<std::string> seen{};

  template <class T> void operator()(const char* key, T& value) {
    seen.insert(key);
    if (!in.contains(key)) return;
    const json& node = in.at(key);
    const std::string where = path.empty() ? key : path + "." + key;
    if constexpr (Section<T>) {
      read_section(node, where, value);
    } else {
      try {
        if constexpr (std::is_same_v<T, PositionalMode>)
          value = parse_positional_mode(node.get<std::string>());
        else if constexpr (std::is_same_v<T, Ablation>)
          value = parse_ablation(node.get<std::string>());
        else
          value = node.get<T>();
      } catch (const json::exception& e) {
        throw UsageError("config key " + where + ": " + e.what());
      } catch (const std::exception& e) {
        throw UsageError("config key " + where + ": " + e.what());
      }
    }
  }

  template <class T> static void read_section(const json& node, const std::string& where, T& value) {
    if (!node.is_object()) throw UsageError("config key " + (where.empty() ? "<root>" : where) + ": expected an object");
    Reader child{node, where};
    visit(value, child);
    for (const auto& item : node.items())
      if (!child.seen.count(item.key()))
        throw UsageError("unknown config key " + (where.empty() ? item.key() : where + "." + item.key()));
  }
};

uint64_t parse_seed(std::string_view text) {
  uint64_t value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty())
    throw UsageError(std::string(kSeedEnvVar) + " must be a non-negative integer, got '" + std::string(text) + "'");
  return value;
}

}  // namespace

json RunConfig::to_json() const {
  json out = json::object();
  Writer w{out};
  RunConfig copy = *this;
  visit(copy, w);
  return out;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Reader::read_section(j, "", c);
  c.synth.validate();
  c.model.codec.validate();
  c.model.matcher.validate();
  if (c.split.train == 0) throw UsageError("config key split.train must be positive");
  c.model.init_seed = c.seed;
  c.train.seed = c.seed;
  c.pretrain.schedule.seed = c.seed;
  return c;
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json* node = &tree;
  std::stringstream parts(key);
  for (std::string part; std::getline(parts, part, '.');) {
    if (!node->is_object() || !node->contains(part)) throw UsageError("unknown config key " + key);
    node = &(*node)[part];
  }
  json value = json::parse(text, nullptr, false);
  *node = value.is_discarded() ? json(text) : std::move(value);
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, std::span<const std::string> overrides,
                         const char* env_seed) {
  json tree = RunConfig{}.to_json();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw DataError("cannot open config file " + file->string());
    json loaded = json::parse(in, nullptr, false);
    if (loaded.is_discarded() || !loaded.is_object()) throw DataError(file->string() + ": not a JSON object");
    tree.merge_patch(loaded);
  }
  for (const auto& o : overrides) apply_override(tree, o);
  if (env_seed && *env_seed) tree["seed"] = parse_seed(env_seed);
  return RunConfig::from_json(tree);
}

FRUITLET_PRECISION_END
}  // namespace fruitlet
