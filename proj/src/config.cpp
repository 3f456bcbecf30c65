#include "csdpaint/config.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "csdpaint/errors.hpp"
#include "csdpaint/png_io.hpp"

namespace csdpaint {

namespace {

std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

std::optional<std::size_t> as_index(const std::string& segment) {
  std::size_t v = 0;
  const char* end = segment.data() + segment.size();
  const auto [ptr, ec] = std::from_chars(segment.data(), end, v);
  if (segment.empty() || ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::vector<std::string> split_dots(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string item;
  while (std::getline(ss, item, '.')) parts.push_back(item);
  return parts;
}

template <typename T>
T convert(const YAML::Node& node, const std::string& key, const char* expected) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(key, std::string("expected ") + expected);
  }
}

std::vector<double> numbers(const YAML::Node& node, const std::string& key, std::size_t n) {
  if (!node.IsSequence() || node.size() != n) {
    throw ConfigError(key, "expected a list of " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(convert<double>(node[i], key, "a number"));
  return out;
}

Rgb to_rgb(const YAML::Node& node, const std::string& key) {
  const auto v = numbers(node, key, 3);
  return {v[0], v[1], v[2]};
}

Vec3 to_vec3(const YAML::Node& node, const std::string& key) {
  const auto v = numbers(node, key, 3);
  return {v[0], v[1], v[2]};
}

Range to_range(const YAML::Node& node, const std::string& key) {
  if (node.IsScalar()) {
    const double v = convert<double>(node, key, "a number or [min, max]");
    return {v, v};
  }
  const auto v = numbers(node, key, 2);
  return {v[0], v[1]};
}

Resolution to_resolution(const YAML::Node& node, const std::string& key) {
  if (node.IsSequence()) {
    if (node.size() != 2) throw ConfigError(key, "expected [height, width]");
    return {convert<int>(node[0], key, "an integer"), convert<int>(node[1], key, "an integer")};
  }
  const std::string text = convert<std::string>(node, key, "a resolution");
  const std::size_t x = text.find('x');
  try {
    if (x == std::string::npos) {
      const int n = std::stoi(text);
      return {n, n};
    }
    return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError(key, "expected N, HxW or [H, W]");
  }
}

// A YAML mapping whose keys are checked against what the parser consumed.
class Section {
 public:
  Section(YAML::Node node, std::string prefix) : node_(std::move(node)), prefix_(std::move(prefix)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(prefix_, "expected a mapping");
  }

  std::string key(const std::string& k) const { return join_key(prefix_, k); }

  // Undefined (false) when absent or null.
  YAML::Node child(const std::string& k) {
    seen_.insert(k);
    const YAML::Node absent(YAML::NodeType::Undefined);
    if (!node_ || node_.IsNull()) return absent;
    const YAML::Node& map = node_;
    const YAML::Node c = map[k];
    return c && !c.IsNull() ? c : absent;
  }

  bool has(const std::string& k) {
    return static_cast<bool>(child(k));
  }

  template <typename T>
  T get(const std::string& k, T fallback, const char* expected) {
    const YAML::Node c = child(k);
    return c ? convert<T>(c, key(k), expected) : fallback;
  }
  double number(const std::string& k, double fallback) { return get<double>(k, fallback, "a number"); }
  int integer(const std::string& k, int fallback) { return get<int>(k, fallback, "an integer"); }
  bool flag(const std::string& k, bool fallback) { return get<bool>(k, fallback, "true or false"); }
  std::string text(const std::string& k, const std::string& fallback) {
    return get<std::string>(k, fallback, "a string");
  }
  Rgb rgb(const std::string& k, const Rgb& fallback) {
    const YAML::Node c = child(k);
    return c ? to_rgb(c, key(k)) : fallback;
  }
  Vec3 vec3(const std::string& k, const Vec3& fallback) {
    const YAML::Node c = child(k);
    return c ? to_vec3(c, key(k)) : fallback;
  }
  Range range(const std::string& k, const Range& fallback) {
    const YAML::Node c = child(k);
    return c ? to_range(c, key(k)) : fallback;
  }
  Resolution resolution(const std::string& k, const Resolution& fallback) {
    const YAML::Node c = child(k);
    return c ? to_resolution(c, key(k)) : fallback;
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string k = kv.first.as<std::string>();
      if (!seen_.contains(k)) throw ConfigError(key(k), "unknown key");
    }
  }

 private:
  YAML::Node node_;
  std::string prefix_;
  std::set<std::string> seen_;
};

YAML::Node flow(YAML::Node n) {
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

YAML::Node seq(std::initializer_list<double> values) {
  YAML::Node n;
  for (double v : values) n.push_back(v);
  return flow(n);
}

YAML::Node seq(const Rgb& c) { return seq({c[0], c[1], c[2]}); }
YAML::Node seq(const Vec3& v) { return seq({v.x(), v.y(), v.z()}); }
YAML::Node seq(const Range& r) { return seq({r.min, r.max}); }
YAML::Node seq(const Resolution& r) {
  YAML::Node n;
  n.push_back(r.height);
  n.push_back(r.width);
  return flow(n);
}

HalfSpace parse_halfspace(Section& s, const HalfSpace& fallback) {
  HalfSpace h;
  h.axis = s.vec3("axis", fallback.axis);
  h.offset = s.number("offset", fallback.offset);
  if (h.axis.norm() == 0.0) throw ConfigError(s.key("axis"), "must be nonzero");
  return h;
}

TeacherRecipe parse_teacher(const YAML::Node& node, const std::string& prefix) {
  TeacherRecipe r;
  Section s(node, prefix);
  {
    Section region(s.child("region"), s.key("region"));
    r.region = parse_halfspace(region, r.region);
    region.finish();
  }
  {
    Section style(s.child("style"), s.key("style"));
    const std::string kind = style.text("kind", "stripes");
    if (kind == "solid") {
      r.style.kind = StyleRecipe::Kind::solid;
    } else if (kind == "stripes") {
      r.style.kind = StyleRecipe::Kind::stripes;
    } else {
      throw ConfigError(style.key("kind"), "expected solid or stripes");
    }
    r.style.color_a = style.rgb("color_a", r.style.color_a);
    r.style.color_b = style.rgb("color_b", r.style.color_b);
    r.style.axis = style.vec3("axis", r.style.axis);
    r.style.frequency = style.number("frequency", r.style.frequency);
    style.finish();
  }
  if (s.has("distractor")) {
    Section d(s.child("distractor"), s.key("distractor"));
    r.distractor = parse_halfspace(d, HalfSpace{Vec3(0.0, 0.0, -1.0), 0.3});
    r.distractor_color = d.rgb("color", r.distractor_color);
    d.finish();
  }
  s.finish();
  return r;
}

YAML::Node teacher_yaml(const TeacherRecipe& r) {
  YAML::Node n;
  n["region"]["axis"] = seq(r.region.axis);
  n["region"]["offset"] = r.region.offset;
  n["style"]["kind"] = r.style.kind == StyleRecipe::Kind::solid ? "solid" : "stripes";
  n["style"]["color_a"] = seq(r.style.color_a);
  n["style"]["color_b"] = seq(r.style.color_b);
  n["style"]["axis"] = seq(r.style.axis);
  n["style"]["frequency"] = r.style.frequency;
  if (r.distractor) {
    n["distractor"]["axis"] = seq(r.distractor->axis);
    n["distractor"]["offset"] = r.distractor->offset;
    n["distractor"]["color"] = seq(r.distractor_color);
  }
  return n;
}

Image parse_target(const YAML::Node& node, const std::string& prefix, Resolution res,
                   const std::filesystem::path& base_dir) {
  Section s(node, prefix);
  Image img;
  if (s.has("path")) {
    std::filesystem::path p = s.text("path", "");
    if (p.is_relative()) p = base_dir / p;
    try {
      img = read_png(p);
    } catch (const InputError& e) {
      throw ConfigError(s.key("path"), e.what());
    }
    if (img.resolution() != res) {
      throw ConfigError(s.key("path"), "image is " + to_string(img.resolution()) + ", stage needs " + to_string(res));
    }
  } else {
    const std::string recipe = s.text("recipe", "");
    if (recipe == "solid") {
      img = solid_image(res, s.rgb("color", {0.5, 0.5, 0.5}));
    } else if (recipe == "checker") {
      const YAML::Node colors = s.child("colors");
      Rgb a{0.0, 0.0, 0.0};
      Rgb b{1.0, 1.0, 1.0};
      if (colors) {
        if (!colors.IsSequence() || colors.size() != 2) throw ConfigError(s.key("colors"), "expected two colours");
        a = to_rgb(colors[0], s.key("colors.0"));
        b = to_rgb(colors[1], s.key("colors.1"));
      }
      img = checkerboard_image(res, s.integer("cells", 8), a, b);
    } else if (recipe == "blob") {
      const Range c = s.range("center", {0.5, 0.5});
      img = blob_image(res, c.min, c.max, s.number("radius", 0.25), s.rgb("color", {1.0, 0.0, 0.0}),
                       s.rgb("backdrop", {0.5, 0.5, 0.5}));
    } else {
      throw ConfigError(s.key("recipe"), "expected path or recipe (solid, checker, blob)");
    }
  }
  s.finish();
  return img;
}

std::vector<Image> parse_targets(const YAML::Node& node, const std::string& key, const std::vector<StageSpec>& stages,
                                 const std::filesystem::path& base_dir) {
  if (!node || !node.IsSequence()) throw ConfigError(key, "expected a list with one target per stage");
  if (node.size() != stages.size()) {
    throw ConfigError(key, "expected " + std::to_string(stages.size()) + " targets, got " +
                               std::to_string(node.size()));
  }
  std::vector<Image> out;
  for (std::size_t i = 0; i < node.size(); ++i) {
    out.push_back(parse_target(node[i], key + "." + std::to_string(i), stages[i].resolution, base_dir));
  }
  return out;
}

}  // namespace

void apply_override(YAML::Node& root, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("", "override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw ConfigError(path, std::string("cannot parse override value: ") + e.what());
  }
  const auto parts = split_dots(path);
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  YAML::Node node = root;
  std::string walked;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string& seg = parts[i];
    if (seg.empty()) throw ConfigError(path, "empty segment in override key");
    walked = join_key(walked, seg);
    const bool last = i + 1 == parts.size();
    if (node.IsSequence()) {
      const auto idx = as_index(seg);
      if (!idx || *idx > node.size()) throw ConfigError(walked, "index out of range");
      if (*idx == node.size()) node.push_back(YAML::Node(YAML::NodeType::Map));
      if (last) {
        node[*idx] = value;
      } else {
        node.reset(node[*idx]);
      }
    } else {
      if (!node.IsMap() && !node.IsNull()) throw ConfigError(walked, "cannot descend into a scalar");
      if (last) {
        node[seg] = value;
      } else {
        YAML::Node next = node[seg];
        if (!next || next.IsNull()) {
          next = YAML::Node(YAML::NodeType::Map);
          node[seg] = next;
        }
        node.reset(node[seg]);
      }
    }
  }
}

LoadedConfig parse_config(const YAML::Node& root, const std::filesystem::path& base_dir) {
  TrainConfig c;
  Section top(root, "");

  const std::string mesh = top.text("mesh", "");
  if (mesh.empty()) throw ConfigError("mesh", "a mesh path is required");
  c.mesh = mesh;
  if (c.mesh.is_relative()) c.mesh = base_dir / c.mesh;
  c.normalize_mesh = top.flag("normalize_mesh", c.normalize_mesh);
  c.texture = top.resolution("texture", c.texture);
  c.iterations = top.integer("iterations", c.iterations);
  c.seed = top.get<std::uint64_t>("seed", c.seed, "a non-negative integer");
  c.mode = parse_train_mode(top.text("mode", to_string(c.mode)));
  c.series_split = top.number("series_split", c.series_split);
  c.background_mode = parse_background_mode(top.text("background_mode", to_string(c.background_mode)));
  c.background_routes_to_localization =
      top.flag("background_routes_to_localization", c.background_routes_to_localization);

  {
    Section w(top.child("weights"), "weights");
    c.weights.localization = w.number("localization", c.weights.localization);
    c.weights.texture = w.number("texture", c.weights.texture);
    c.weights.background = w.number("background", c.weights.background);
    w.finish();
  }

  if (const YAML::Node stages = top.child("stages")) {
    if (!stages.IsSequence()) throw ConfigError("stages", "expected a list of stages");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      Section s(stages[i], "stages." + std::to_string(i));
      StageSpec spec;
      spec.index = static_cast<int>(i);
      if (!s.has("resolution")) throw ConfigError(s.key("resolution"), "required");
      spec.resolution = s.resolution("resolution", {});
      spec.lambda = s.number("lambda", 1.0);
      s.finish();
      c.stages.push_back(spec);
    }
  } else {
    c.stages = default_stages();
  }
  const std::string pyramid = top.text("pyramid", "direct");
  if (pyramid == "direct") {
    c.pyramid = PyramidMode::direct;
  } else if (pyramid == "downsample") {
    c.pyramid = PyramidMode::downsample;
  } else {
    throw ConfigError("pyramid", "expected direct or downsample");
  }

  {
    Section s(top.child("schedule"), "schedule");
    c.schedule = parse_schedule_kind(s.text("kind", to_string(c.schedule)));
    c.timesteps = s.integer("T", c.timesteps);
    c.policy.t_min = s.number("t_min", c.policy.t_min);
    c.policy.t_max = s.number("t_max", c.policy.t_max);
    const std::string anneal = s.text("anneal", "none");
    if (anneal == "none") {
      c.policy.anneal = AnnealKind::none;
    } else if (anneal == "linear") {
      c.policy.anneal = AnnealKind::linear;
    } else {
      throw ConfigError("schedule.anneal", "expected none or linear");
    }
    c.policy.anneal_iterations = s.integer("anneal_iterations", c.iterations);
    c.weighting = parse_weight_kind(s.text("weighting", to_string(c.weighting)));
    c.s_max = s.number("s_max", c.s_max);
    s.finish();
  }

  {
    Section f(top.child("field"), "field");
    c.field.width = f.integer("width", c.field.width);
    const std::string hidden = f.text("hidden", "relu");
    if (hidden == "relu") {
      c.field.hidden = HiddenActivation::relu;
    } else if (hidden == "tanh") {
      c.field.hidden = HiddenActivation::tanh;
    } else {
      throw ConfigError("field.hidden", "expected relu or tanh");
    }
    c.field.head_scale = f.number("head_scale", c.field.head_scale);
    Section e(f.child("encoding"), "field.encoding");
    const std::string kind = e.text("kind", "log_linear");
    if (kind == "log_linear") {
      c.field.encoding.kind = EncodingKind::log_linear;
    } else if (kind == "gaussian") {
      c.field.encoding.kind = EncodingKind::gaussian;
    } else {
      throw ConfigError("field.encoding.kind", "expected log_linear or gaussian");
    }
    c.field.encoding.bands = e.integer("bands", c.field.encoding.bands);
    c.field.encoding.include_input = e.flag("include_input", c.field.encoding.include_input);
    c.field.encoding.gaussian_scale = e.number("gaussian_scale", c.field.encoding.gaussian_scale);
    e.finish();
    f.finish();
  }

  {
    Section o(top.child("optimizer"), "optimizer");
    c.optimizer.lr = o.number("lr", c.optimizer.lr);
    c.optimizer.beta1 = o.number("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.number("beta2", c.optimizer.beta2);
    c.optimizer.eps = o.number("eps", c.optimizer.eps);
    o.finish();
  }

  {
    Section cam(top.child("camera"), "camera");
    c.camera.azimuth = cam.range("azimuth", c.camera.azimuth);
    c.camera.elevation = cam.range("elevation", c.camera.elevation);
    c.camera.radius = cam.range("radius", c.camera.radius);
    c.camera.fov_y = cam.number("fov_y", c.camera.fov_y);
    c.camera.look_at = cam.vec3("look_at", c.camera.look_at);
    cam.finish();
  }
  c.background_gray = top.range("background_gray", c.background_gray);
  {
    Section r(top.child("raster"), "raster");
    c.raster.ambient_floor = r.number("ambient_floor", c.raster.ambient_floor);
    r.finish();
  }
  {
    Section col(top.child("colors"), "colors");
    c.colors.highlight = col.rgb("highlight", c.colors.highlight);
    c.colors.neutral_base = col.rgb("neutral_base", c.colors.neutral_base);
    col.finish();
  }

  {
    Section p(top.child("prompt"), "prompt");
    c.object_class = p.text("object_class", c.object_class);
    c.region = p.text("region", c.region);
    c.style = p.text("style", c.style);
    Section t(p.child("templates"), "prompt.templates");
    c.templates.edit = t.text("edit", c.templates.edit);
    c.templates.texture = t.text("texture", c.templates.texture);
    c.templates.localization = t.text("localization", c.templates.localization);
    c.templates.background = t.text("background", c.templates.background);
    t.finish();
    p.finish();
  }

  YAML::Node provider_node = top.child("provider");
  {
    Section p(provider_node, "provider");
    c.provider.kind = parse_provider_kind(p.text("kind", "teacher"));
    c.provider.teacher = parse_teacher(p.child("teacher"), "provider.teacher");
    c.provider.address = p.text("address", "");
    const YAML::Node targets = p.child("targets");
    const YAML::Node components = p.child("components");
    if (c.provider.kind == ProviderKind::single_target) {
      c.provider.targets = parse_targets(targets, "provider.targets", c.stages, base_dir);
    }
    if (c.provider.kind == ProviderKind::mixture) {
      if (!components || !components.IsSequence() || components.size() == 0) {
        throw ConfigError("provider.components", "mixture needs a list of components");
      }
      for (std::size_t k = 0; k < components.size(); ++k) {
        const std::string key = "provider.components." + std::to_string(k);
        Section comp(components[k], key);
        MixtureComponent mc;
        mc.weight = comp.number("weight", 1.0);
        mc.targets = parse_targets(comp.child("targets"), key + ".targets", c.stages, base_dir);
        comp.finish();
        c.provider.mixture.components.push_back(std::move(mc));
      }
    }
    p.finish();
  }

  {
    Section e(top.child("export"), "export");
    c.output.super_sample = e.integer("super_sample", c.output.super_sample);
    c.output.png_bits = e.integer("png_bits", c.output.png_bits);
    c.output.preview_resolution = e.resolution("preview_resolution", c.output.preview_resolution);
    c.output.preview_views = e.integer("preview_views", c.output.preview_views);
    e.finish();
  }
  top.finish();
  validate_config(c);

  // Effective document: every knob with its resolved value.
  YAML::Node out;
  out["mesh"] = c.mesh.string();
  out["normalize_mesh"] = c.normalize_mesh;
  out["texture"] = seq(c.texture);
  out["iterations"] = c.iterations;
  out["seed"] = c.seed;
  out["mode"] = to_string(c.mode);
  out["series_split"] = c.series_split;
  out["background_mode"] = to_string(c.background_mode);
  out["background_routes_to_localization"] = c.background_routes_to_localization;
  out["weights"]["localization"] = c.weights.localization;
  out["weights"]["texture"] = c.weights.texture;
  out["weights"]["background"] = c.weights.background;
  for (const auto& s : c.stages) {
    YAML::Node n;
    n["resolution"] = seq(s.resolution);
    n["lambda"] = s.lambda;
    out["stages"].push_back(n);
  }
  out["pyramid"] = c.pyramid == PyramidMode::direct ? "direct" : "downsample";
  out["schedule"]["kind"] = to_string(c.schedule);
  out["schedule"]["T"] = c.timesteps;
  out["schedule"]["t_min"] = c.policy.t_min;
  out["schedule"]["t_max"] = c.policy.t_max;
  out["schedule"]["anneal"] = c.policy.anneal == AnnealKind::none ? "none" : "linear";
  out["schedule"]["anneal_iterations"] = c.policy.anneal_iterations;
  out["schedule"]["weighting"] = to_string(c.weighting);
  out["schedule"]["s_max"] = c.s_max;
  out["field"]["width"] = c.field.width;
  out["field"]["hidden"] = c.field.hidden == HiddenActivation::relu ? "relu" : "tanh";
  out["field"]["head_scale"] = c.field.head_scale;
  out["field"]["encoding"]["kind"] = c.field.encoding.kind == EncodingKind::log_linear ? "log_linear" : "gaussian";
  out["field"]["encoding"]["bands"] = c.field.encoding.bands;
  out["field"]["encoding"]["include_input"] = c.field.encoding.include_input;
  out["field"]["encoding"]["gaussian_scale"] = c.field.encoding.gaussian_scale;
  out["optimizer"]["lr"] = c.optimizer.lr;
  out["optimizer"]["beta1"] = c.optimizer.beta1;
  out["optimizer"]["beta2"] = c.optimizer.beta2;
  out["optimizer"]["eps"] = c.optimizer.eps;
  out["camera"]["azimuth"] = seq(c.camera.azimuth);
  out["camera"]["elevation"] = seq(c.camera.elevation);
  out["camera"]["radius"] = seq(c.camera.radius);
  out["camera"]["fov_y"] = c.camera.fov_y;
  out["camera"]["look_at"] = seq(c.camera.look_at);
  out["background_gray"] = seq(c.background_gray);
  out["raster"]["ambient_floor"] = c.raster.ambient_floor;
  out["colors"]["highlight"] = seq(c.colors.highlight);
  out["colors"]["neutral_base"] = seq(c.colors.neutral_base);
  out["prompt"]["object_class"] = c.object_class;
  out["prompt"]["region"] = c.region;
  out["prompt"]["style"] = c.style;
  out["prompt"]["templates"]["edit"] = c.templates.edit;
  out["prompt"]["templates"]["texture"] = c.templates.texture;
  out["prompt"]["templates"]["localization"] = c.templates.localization;
  out["prompt"]["templates"]["background"] = c.templates.background;
  out["provider"]["kind"] = to_string(c.provider.kind);
  out["provider"]["teacher"] = teacher_yaml(c.provider.teacher);
  if (provider_node) {
    for (const char* k : {"targets", "components", "address"}) {
      if (provider_node[k]) out["provider"][k] = YAML::Clone(provider_node[k]);
    }
  }
  out["export"]["super_sample"] = c.output.super_sample;
  out["export"]["png_bits"] = c.output.png_bits;
  out["export"]["preview_resolution"] = seq(c.output.preview_resolution);
  out["export"]["preview_views"] = c.output.preview_views;
  return {std::move(c), out};
}

LoadedConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  YAML::Node root;
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read config file '" + path.string() + "'");
  try {
    root = YAML::Load(in);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config", "cannot parse '" + path.string() + "': " + e.what());
  }
  for (const auto& o : overrides) apply_override(root, o);
  return parse_config(root, path.parent_path());
}

std::string emit_yaml(const YAML::Node& node) {
  YAML::Emitter em;
  em.SetDoublePrecision(17);
  em << node;
  return std::string(em.c_str()) + "\n";
}

}  // namespace csdpaint
