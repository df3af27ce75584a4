#include "flowtrack/io.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include <openssl/evp.h>
#include <unistd.h>

#include "flowtrack/errors.hpp"

namespace flowtrack {
namespace {

std::string join_path(const std::string& where, std::string_view key) {
  return where.empty() ? std::string(key) : where + "." + std::string(key);
}

template <class T>
T convert(const Json& v, const std::string& path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(path + ": expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
    throw ConfigError(path + ": expected a non-negative integer");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
    return v.get<T>();
  } else {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
    return v.get<T>();
  }
}

// Reads the fields of one JSON object and rejects the ones nobody asked for.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError((where_.empty() ? "config" : where_) + ": expected an object");
  }

  const Json* find(std::string_view key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(std::string(key));
    return &*it;
  }

  template <class T>
  void opt(std::string_view key, T& out) {
    if (const Json* v = find(key); v && !v->is_null()) out = convert<T>(*v, path(key));
  }

  template <class T>
  void opt(std::string_view key, std::optional<T>& out) {
    if (const Json* v = find(key); v && !v->is_null()) out = convert<T>(*v, path(key));
  }

  template <class T>
  T req(std::string_view key) {
    const Json* v = find(key);
    if (!v) throw ConfigError(path(key) + ": missing");
    return convert<T>(*v, path(key));
  }

  std::string path(std::string_view key) const { return join_path(where_, key); }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(path(it.key()) + ": unknown field");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> used_;
};

Json vec2(const Eigen::Vector2d& v) { return Json::array({v.x(), v.y()}); }

Eigen::Vector2d read_vec2(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(path + ": expected [x, y]");
  return {convert<double>(j[0], path), convert<double>(j[1], path)};
}

Json vecx(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd read_vecx(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = convert<double>(j[k], path);
  return v;
}

double reid_strength_from(const Json& v, const std::string& path) {
  if (v.is_string()) {
    static const std::map<std::string, double> named{{"very_weak", reid_strength::kVeryWeak},
                                                     {"weak", reid_strength::kWeak},
                                                     {"moderate", reid_strength::kModerate},
                                                     {"strong", reid_strength::kStrong}};
    auto it = named.find(v.get<std::string>());
    if (it == named.end()) {
      throw ConfigError(path + ": expected a number or one of very_weak, weak, moderate, strong");
    }
    return it->second;
  }
  return convert<double>(v, path);
}

std::string to_string(OutputActivation a) { return a == OutputActivation::Identity ? "identity" : "logistic"; }

OutputActivation activation_from(const std::string& s, const std::string& path) {
  if (s == "identity") return OutputActivation::Identity;
  if (s == "logistic") return OutputActivation::Logistic;
  throw ConfigError(path + ": unknown output activation '" + s + "'");
}

Json params_to_json(const ParamStore& p) {
  Json segs = Json::array();
  for (const auto& s : p.segments()) {
    segs.push_back({{"name", s.name}, {"widths", s.spec.widths}, {"output", to_string(s.spec.output)}});
  }
  return {{"segments", segs},
          {"theta", vecx(p.theta)},
          {"adam_m", vecx(p.adam_m)},
          {"adam_v", vecx(p.adam_v)},
          {"step", p.step}};
}

ParamStore params_from_json(const Json& j) {
  Fields f(j, "params");
  ParamStore p;
  const Json* segs = f.find("segments");
  if (!segs || !segs->is_array()) throw ConfigError("params.segments: expected an array");
  for (const auto& s : *segs) {
    Fields sf(s, "params.segments[]");
    MlpSpec spec;
    const std::string name = sf.req<std::string>("name");
    const Json* widths = sf.find("widths");
    if (!widths || !widths->is_array()) throw ConfigError("params.segments[].widths: expected an array");
    for (const auto& w : *widths) spec.widths.push_back(convert<int>(w, "params.segments[].widths"));
    spec.output = activation_from(sf.req<std::string>("output"), "params.segments[].output");
    sf.done();
    try {
      spec.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("params.segments[].widths: ") + e.what());
    }
    p.add_segment(name, spec);
  }
  const Json* theta = f.find("theta");
  const Json* m = f.find("adam_m");
  const Json* v = f.find("adam_v");
  if (!theta || !m || !v) throw ConfigError("params: theta, adam_m and adam_v are required");
  p.theta = read_vecx(*theta, "params.theta");
  p.adam_m = read_vecx(*m, "params.adam_m");
  p.adam_v = read_vecx(*v, "params.adam_v");
  f.opt("step", p.step);
  f.done();
  std::size_t expected = 0;
  for (const auto& s : p.segments()) expected += s.size();
  if (static_cast<std::size_t>(p.theta.size()) != expected ||
      static_cast<std::size_t>(p.adam_m.size()) != expected ||
      static_cast<std::size_t>(p.adam_v.size()) != expected) {
    throw IncompatibleError("checkpoint: parameter vectors do not match the segment layout");
  }
  return p;
}

void require_version(const Json& j, int expected, const char* what) {
  auto it = j.find("format_version");
  if (it == j.end() || !it->is_number_integer()) {
    throw IncompatibleError(std::string(what) + ": missing format_version");
  }
  if (it->get<int>() != expected) {
    throw IncompatibleError(std::string(what) + ": format_version " + std::to_string(it->get<int>()) +
                            " is not supported (expected " + std::to_string(expected) + ")");
  }
}

}  // namespace

DetectionGraph build_graph_for(const Scenario& scenario, const GraphOptions& opts) {
  return build_detection_graph(scenario.detections, opts.max_gap.value_or(default_max_gap(scenario.config)),
                               opts.gate_speed.value_or(default_gate_speed(scenario.config)));
}

Json to_json(const ScenarioConfig& c) {
  Json motion;
  if (const auto* cv = std::get_if<ConstantVelocity>(&c.motion)) {
    motion = {{"model", "constant_velocity"},
              {"process_noise_psd", cv->process_noise_psd},
              {"initial_speed_sigma", cv->initial_speed_sigma}};
  } else {
    const auto& ou = std::get<OrnsteinUhlenbeck>(c.motion);
    motion = {{"model", "ornstein_uhlenbeck"},
              {"reversion_rate", ou.reversion_rate},
              {"diffusion", ou.diffusion}};
  }
  return {{"num_frames", c.num_frames},
          {"frame_dt", c.frame_dt},
          {"bounds", {{"min", vec2(c.bounds.min)}, {"max", vec2(c.bounds.max)}}},
          {"num_targets", c.num_targets},
          {"motion", motion},
          {"lifespan",
           {{"kind", c.lifespan.kind == LifespanPolicy::Kind::Random ? "random" : "full_window"},
            {"birth_window", c.lifespan.birth_window},
            {"death_window", c.lifespan.death_window},
            {"min_lifespan", c.lifespan.min_lifespan}}},
          {"detect_prob", c.detect_prob},
          {"meas_sigma", c.meas_sigma},
          {"fa_rate", c.fa_rate},
          {"reid",
           {{"dim", c.reid.dim},
            {"strength_kl_nats", c.reid.strength_kl_nats},
            {"feature_sigma", c.reid.feature_sigma},
            {"noisy_extra_dims", c.reid.noisy_extra_dims},
            {"mixture_seed", c.reid.mixture_seed}}},
          {"seed", c.seed}};
}

ScenarioConfig scenario_config_from_json(const Json& j) {
  ScenarioConfig c;
  Fields f(j, "scenario");
  f.opt("num_frames", c.num_frames);
  f.opt("frame_dt", c.frame_dt);
  f.opt("num_targets", c.num_targets);
  f.opt("detect_prob", c.detect_prob);
  f.opt("meas_sigma", c.meas_sigma);
  f.opt("fa_rate", c.fa_rate);
  f.opt("seed", c.seed);
  if (const Json* b = f.find("bounds")) {
    Fields bf(*b, "scenario.bounds");
    if (const Json* v = bf.find("min")) c.bounds.min = read_vec2(*v, "scenario.bounds.min");
    if (const Json* v = bf.find("max")) c.bounds.max = read_vec2(*v, "scenario.bounds.max");
    bf.done();
  }
  if (const Json* m = f.find("motion")) {
    Fields mf(*m, "scenario.motion");
    const std::string model = mf.req<std::string>("model");
    if (model == "constant_velocity") {
      ConstantVelocity cv;
      mf.opt("process_noise_psd", cv.process_noise_psd);
      mf.opt("initial_speed_sigma", cv.initial_speed_sigma);
      c.motion = cv;
    } else if (model == "ornstein_uhlenbeck") {
      OrnsteinUhlenbeck ou;
      mf.opt("reversion_rate", ou.reversion_rate);
      mf.opt("diffusion", ou.diffusion);
      c.motion = ou;
    } else {
      throw ConfigError("scenario.motion.model: expected constant_velocity or ornstein_uhlenbeck");
    }
    mf.done();
  }
  if (const Json* l = f.find("lifespan")) {
    Fields lf(*l, "scenario.lifespan");
    std::string kind = c.lifespan.kind == LifespanPolicy::Kind::Random ? "random" : "full_window";
    lf.opt("kind", kind);
    if (kind == "random") {
      c.lifespan.kind = LifespanPolicy::Kind::Random;
    } else if (kind == "full_window") {
      c.lifespan.kind = LifespanPolicy::Kind::FullWindow;
    } else {
      throw ConfigError("scenario.lifespan.kind: expected random or full_window");
    }
    lf.opt("birth_window", c.lifespan.birth_window);
    lf.opt("death_window", c.lifespan.death_window);
    lf.opt("min_lifespan", c.lifespan.min_lifespan);
    lf.done();
  }
  if (const Json* r = f.find("reid")) {
    Fields rf(*r, "scenario.reid");
    rf.opt("dim", c.reid.dim);
    if (const Json* s = rf.find("strength_kl_nats")) {
      c.reid.strength_kl_nats = reid_strength_from(*s, "scenario.reid.strength_kl_nats");
    }
    rf.opt("feature_sigma", c.reid.feature_sigma);
    rf.opt("noisy_extra_dims", c.reid.noisy_extra_dims);
    rf.opt("mixture_seed", c.reid.mixture_seed);
    rf.done();
  }
  f.done();
  validate(c);
  return c;
}

Json to_json(const MpnConfig& c) {
  return {{"num_layers", c.num_layers},
          {"hidden_dim", c.hidden_dim},
          {"mlp_hidden_layers", c.mlp_hidden_layers},
          {"zero_readout_output", c.zero_readout_output}};
}

MpnConfig mpn_config_from_json(const Json& j, const std::string& where) {
  MpnConfig c;
  Fields f(j, where);
  f.opt("num_layers", c.num_layers);
  f.opt("hidden_dim", c.hidden_dim);
  f.opt("mlp_hidden_layers", c.mlp_hidden_layers);
  f.opt("zero_readout_output", c.zero_readout_output);
  f.done();
  c.validate();
  return c;
}

Json to_json(const TrainingSetup& s) {
  const TrainConfig& t = s.train;
  Json graph = Json::object();
  if (s.graph.max_gap) graph["max_gap"] = *s.graph.max_gap;
  if (s.graph.gate_speed) graph["gate_speed"] = *s.graph.gate_speed;
  return {{"margin", t.margin},
          {"num_negatives", t.num_negatives},
          {"stage1_max_iters", t.stage1_max_iters},
          {"stage2_epsilon", t.stage2_epsilon},
          {"stage2_max_epochs", t.stage2_max_epochs},
          {"learning_rate", t.learning_rate},
          {"c_en", t.c_en},
          {"c_ex", t.c_ex},
          {"seed", t.seed},
          {"mpn", to_json(t.mpn)},
          {"graph", graph},
          {"edge_belief",
           {{"min_track_length", s.min_track_length}, {"reweight_positives", s.reweight_positives}}},
          {"checkpoint_every", s.checkpoint_every}};
}

TrainingSetup training_setup_from_json(const Json& j) {
  TrainingSetup s;
  TrainConfig& t = s.train;
  Fields f(j, "train");
  f.opt("margin", t.margin);
  f.opt("num_negatives", t.num_negatives);
  f.opt("stage1_max_iters", t.stage1_max_iters);
  f.opt("stage2_epsilon", t.stage2_epsilon);
  f.opt("stage2_max_epochs", t.stage2_max_epochs);
  f.opt("learning_rate", t.learning_rate);
  f.opt("c_en", t.c_en);
  f.opt("c_ex", t.c_ex);
  f.opt("seed", t.seed);
  f.opt("checkpoint_every", s.checkpoint_every);
  if (const Json* m = f.find("mpn")) t.mpn = mpn_config_from_json(*m, "train.mpn");
  if (const Json* g = f.find("graph")) {
    Fields gf(*g, "train.graph");
    gf.opt("max_gap", s.graph.max_gap);
    gf.opt("gate_speed", s.graph.gate_speed);
    gf.done();
    if (s.graph.max_gap && *s.graph.max_gap < 1) throw ConfigError("train.graph.max_gap: must be >= 1");
    if (s.graph.gate_speed && !(*s.graph.gate_speed > 0.0)) {
      throw ConfigError("train.graph.gate_speed: must be > 0");
    }
  }
  if (const Json* e = f.find("edge_belief")) {
    Fields ef(*e, "train.edge_belief");
    ef.opt("min_track_length", s.min_track_length);
    ef.opt("reweight_positives", s.reweight_positives);
    ef.done();
    if (s.min_track_length < 1) throw ConfigError("train.edge_belief.min_track_length: must be >= 1");
  }
  f.done();
  if (s.checkpoint_every < 0) throw ConfigError("train.checkpoint_every: must be >= 0");
  t.validate();
  return s;
}

Json to_json(const Scenario& s) {
  Json tracks = Json::array();
  for (const auto& t : s.truth.tracks) {
    Json points = Json::array();
    for (const auto& p : t.points) {
      points.push_back({{"frame", p.frame},
                        {"position", vec2(p.position)},
                        {"velocity", vec2(p.velocity)},
                        {"det_id", p.det_id ? Json(*p.det_id) : Json(nullptr)}});
    }
    tracks.push_back({{"target_id", t.target_id}, {"points", points}});
  }
  Json dets = Json::array();
  for (const auto& d : s.detections) {
    Json source = d.source.is_target() ? Json{{"kind", "target"}, {"target_id", d.source.target_id}}
                                       : Json{{"kind", "clutter"}};
    dets.push_back({{"det_id", d.det_id},
                    {"frame", d.frame},
                    {"position", vec2(d.position)},
                    {"reid", vecx(d.reid)},
                    {"source", source}});
  }
  return {{"format_version", kScenarioFormatVersion},
          {"config", to_json(s.config)},
          {"ground_truth", {{"tracks", tracks}, {"targets_per_frame", s.truth.targets_per_frame}}},
          {"detections", dets}};
}

Scenario scenario_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("scenario document: expected an object");
  require_version(j, kScenarioFormatVersion, "scenario document");
  Scenario s;
  Fields f(j, "");
  f.find("format_version");
  const Json* config = f.find("config");
  if (!config) throw ConfigError("config: missing");
  s.config = scenario_config_from_json(*config);

  const Json* gt = f.find("ground_truth");
  if (!gt) throw ConfigError("ground_truth: missing");
  Fields gf(*gt, "ground_truth");
  if (const Json* tracks = gf.find("tracks")) {
    if (!tracks->is_array()) throw ConfigError("ground_truth.tracks: expected an array");
    for (const auto& tj : *tracks) {
      Fields tf(tj, "ground_truth.tracks[]");
      TargetTrack t;
      t.target_id = tf.req<int>("target_id");
      const Json* points = tf.find("points");
      if (!points || !points->is_array()) throw ConfigError("ground_truth.tracks[].points: expected an array");
      for (const auto& pj : *points) {
        Fields pf(pj, "ground_truth.tracks[].points[]");
        TrackPoint p;
        p.frame = pf.req<int>("frame");
        const Json* pos = pf.find("position");
        const Json* vel = pf.find("velocity");
        if (!pos || !vel) throw ConfigError("ground_truth.tracks[].points[]: position and velocity are required");
        p.position = read_vec2(*pos, pf.path("position"));
        p.velocity = read_vec2(*vel, pf.path("velocity"));
        pf.opt("det_id", p.det_id);
        pf.done();
        t.points.push_back(std::move(p));
      }
      tf.done();
      s.truth.tracks.push_back(std::move(t));
    }
  }
  if (const Json* tpf = gf.find("targets_per_frame")) {
    if (!tpf->is_array()) throw ConfigError("ground_truth.targets_per_frame: expected an array");
    for (const auto& v : *tpf) s.truth.targets_per_frame.push_back(convert<int>(v, "ground_truth.targets_per_frame"));
  }
  gf.done();

  const Json* dets = f.find("detections");
  if (!dets || !dets->is_array()) throw ConfigError("detections: expected an array");
  s.detections.reserve(dets->size());
  const int reid_dim = s.config.reid.total_dim();
  std::set<DetId> seen;
  for (const auto& dj : *dets) {
    Fields df(dj, "detections[]");
    Detection d;
    d.det_id = df.req<DetId>("det_id");
    d.frame = df.req<int>("frame");
    const Json* pos = df.find("position");
    const Json* reid = df.find("reid");
    const Json* src = df.find("source");
    if (!pos || !reid || !src) throw ConfigError("detections[]: position, reid and source are required");
    d.position = read_vec2(*pos, "detections[].position");
    d.reid = read_vecx(*reid, "detections[].reid");
    Fields sf(*src, "detections[].source");
    const std::string kind = sf.req<std::string>("kind");
    if (kind == "target") {
      d.source = Source::target(sf.req<int>("target_id"));
    } else if (kind != "clutter") {
      throw ConfigError("detections[].source.kind: expected target or clutter");
    }
    sf.done();
    df.done();
    if (d.reid.size() != reid_dim) {
      throw IncompatibleError("detection " + std::to_string(d.det_id) + " has ReID width " +
                              std::to_string(d.reid.size()) + ", config says " + std::to_string(reid_dim));
    }
    if (d.frame < 1 || d.frame > s.config.num_frames) {
      throw ConfigError("detection " + std::to_string(d.det_id) + " lies outside the frame range");
    }
    if (!seen.insert(d.det_id).second) {
      throw ConfigError("detection id " + std::to_string(d.det_id) + " appears twice");
    }
    s.detections.push_back(std::move(d));
  }
  f.done();
  const bool sorted = std::is_sorted(s.detections.begin(), s.detections.end(), [](const auto& a, const auto& b) {
    return std::pair(a.frame, a.det_id) < std::pair(b.frame, b.det_id);
  });
  if (!sorted) throw ConfigError("detections: must be sorted by (frame, det_id)");
  return s;
}

Json to_json(const Checkpoint& c) {
  return {{"format_version", kCheckpointFormatVersion},
          {"tracker", c.tracker},
          {"readout", c.tracker == "edge-belief" ? "belief" : "cost"},
          {"reid_dim", c.reid_dim},
          {"setup", to_json(c.setup)},
          {"config_hash", c.config_hash},
          {"params", params_to_json(c.params)}};
}

Checkpoint checkpoint_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("checkpoint: expected an object");
  require_version(j, kCheckpointFormatVersion, "checkpoint");
  Checkpoint c;
  Fields f(j, "");
  f.find("format_version");
  c.tracker = f.req<std::string>("tracker");
  if (c.tracker != "ssp-gnn" && c.tracker != "edge-belief") {
    throw ConfigError("tracker: expected ssp-gnn or edge-belief");
  }
  const std::string readout = f.req<std::string>("readout");
  if (readout != (c.tracker == "edge-belief" ? "belief" : "cost")) {
    throw IncompatibleError("checkpoint: readout '" + readout + "' does not match tracker " + c.tracker);
  }
  c.reid_dim = f.req<int>("reid_dim");
  const Json* setup = f.find("setup");
  if (!setup) throw ConfigError("setup: missing");
  c.setup = training_setup_from_json(*setup);
  c.config_hash = f.req<std::string>("config_hash");
  const Json* params = f.find("params");
  if (!params) throw ConfigError("params: missing");
  c.params = params_from_json(*params);
  f.done();
  if (c.reid_dim < 1) throw ConfigError("reid_dim: must be >= 1");
  MpnConfig mpn = c.setup.train.mpn;
  mpn.readout = c.tracker == "edge-belief" ? ReadoutMode::Belief : ReadoutMode::Cost;
  const ParamStore layout = make_mpn_params(mpn, c.reid_dim, 0);
  bool same = layout.segments().size() == c.params.segments().size();
  for (std::size_t k = 0; same && k < layout.segments().size(); ++k) {
    same = layout.segments()[k].name == c.params.segments()[k].name &&
           layout.segments()[k].spec == c.params.segments()[k].spec;
  }
  if (!same) throw IncompatibleError("checkpoint: parameter layout does not match its MPN config");
  return c;
}

Json to_json(const TracksDocument& t) {
  Json tracks = Json::array();
  for (const auto& p : t.paths.paths) tracks.push_back(p.det_ids);
  return {{"format_version", kTracksFormatVersion},
          {"tracker", t.tracker},
          {"scenario_sha256", t.scenario_sha256},
          {"tracks", tracks}};
}

TracksDocument tracks_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("tracks document: expected an object");
  require_version(j, kTracksFormatVersion, "tracks document");
  TracksDocument t;
  Fields f(j, "");
  f.find("format_version");
  t.tracker = f.req<std::string>("tracker");
  f.opt("scenario_sha256", t.scenario_sha256);
  const Json* tracks = f.find("tracks");
  if (!tracks || !tracks->is_array()) throw ConfigError("tracks: expected an array");
  for (const auto& pj : *tracks) {
    if (!pj.is_array() || pj.empty()) throw ConfigError("tracks[]: expected a nonempty array of det_ids");
    Path p;
    for (const auto& id : pj) p.det_ids.push_back(convert<DetId>(id, "tracks[]"));
    t.paths.paths.push_back(std::move(p));
  }
  f.done();
  return t;
}

void check_keys(const Json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError(join_path(where, it.key()) + ": unknown field");
    }
  }
}

void set_dotted(Json& j, std::string_view dotted, const Json& value) {
  if (dotted.empty()) throw ConfigError("empty field path");
  Json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? dotted.npos : dot - start));
    if (key.empty()) throw ConfigError("malformed field path '" + std::string(dotted) + "'");
    if (cur->is_null()) *cur = Json::object();
    if (!cur->is_object()) {
      throw ConfigError("field path '" + std::string(dotted) + "' crosses a non-object value");
    }
    if (dot == std::string_view::npos) {
      (*cur)[key] = value;
      return;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int k = 0; k < len; ++k) {
    out.push_back(kHex[md[k] >> 4]);
    out.push_back(kHex[md[k] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

void write_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
  }
}

}  // namespace flowtrack
