#include "exprb/scene_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace exprb {

namespace {

using json = nlohmann::json;

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& where, const std::string& what) const {
    throw InvalidScene(source_ + ": " + (where.empty() ? "/" : where) + ": " + what);
  }

  void only_keys(const json& obj, const std::string& where, std::set<std::string> allowed) const {
    if (!obj.is_object()) fail(where, "expected an object");
    for (const auto& [key, _] : obj.items()) {
      if (!allowed.count(key)) fail(where + "/" + key, "unknown field");
    }
  }

  const json& field(const json& obj, const std::string& where, const std::string& key) const {
    if (!obj.contains(key)) fail(where + "/" + key, "missing required field");
    return obj.at(key);
  }

  double number(const json& v, const std::string& where) const {
    if (!v.is_number()) fail(where, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(where, "expected a finite number");
    return d;
  }

  double number_or(const json& obj, const std::string& where, const std::string& key,
                   double fallback) const {
    return obj.contains(key) ? number(obj.at(key), where + "/" + key) : fallback;
  }

  int integer(const json& v, const std::string& where) const {
    if (!v.is_number_integer()) fail(where, "expected an integer");
    return v.get<int>();
  }

  bool boolean(const json& v, const std::string& where) const {
    if (!v.is_boolean()) fail(where, "expected true or false");
    return v.get<bool>();
  }

  Vec3 vec3(const json& v, const std::string& where) const {
    if (!v.is_array() || v.size() != 3) fail(where, "expected an array of 3 numbers");
    return Vec3(number(v[0], where + "/0"), number(v[1], where + "/1"), number(v[2], where + "/2"));
  }

 private:
  std::string source_;
};

std::pair<int, int> line_and_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

ParticleSystem generate(const Reader& r, const json& g) {
  const std::string w = "/generator";
  if (!g.is_object()) r.fail(w, "expected an object");
  const json& type = r.field(g, w, "type");
  if (!type.is_string()) r.fail(w + "/type", "expected a string");

  if (type == "chain") {
    r.only_keys(g, w, {"type", "n", "k", "rest_length", "mass", "ends", "axis", "spacing"});
    ChainOptions o;
    o.n = r.integer(r.field(g, w, "n"), w + "/n");
    o.k = r.number(r.field(g, w, "k"), w + "/k");
    o.rest = r.number(r.field(g, w, "rest_length"), w + "/rest_length");
    o.mass = r.number(r.field(g, w, "mass"), w + "/mass");
    o.spacing = r.number_or(g, w, "spacing", -1.0);
    if (g.contains("axis")) o.axis = r.vec3(g.at("axis"), w + "/axis");
    if (g.contains("ends")) {
      const json& e = g.at("ends");
      if (e == "none") o.ends = ChainEnds::None;
      else if (e == "first") o.ends = ChainEnds::First;
      else if (e == "both") o.ends = ChainEnds::Both;
      else r.fail(w + "/ends", "expected \"none\", \"first\" or \"both\"");
    }
    try {
      return scene_chain(o);
    } catch (const InvalidScene& e) {
      r.fail(w, e.what());
    }
  }
  if (type == "lattice") {
    r.only_keys(g, w, {"type", "nx", "ny", "nz", "spacing", "k_struct", "k_diag", "mass",
                       "fix_x0_face"});
    LatticeOptions o;
    o.nx = r.integer(r.field(g, w, "nx"), w + "/nx");
    o.ny = r.integer(r.field(g, w, "ny"), w + "/ny");
    o.nz = r.integer(r.field(g, w, "nz"), w + "/nz");
    o.spacing = r.number_or(g, w, "spacing", o.spacing);
    o.k_struct = r.number(r.field(g, w, "k_struct"), w + "/k_struct");
    o.k_diag = r.number(r.field(g, w, "k_diag"), w + "/k_diag");
    o.mass = r.number(r.field(g, w, "mass"), w + "/mass");
    if (g.contains("fix_x0_face")) o.fix_x0_face = r.boolean(g.at("fix_x0_face"), w + "/fix_x0_face");
    try {
      return scene_lattice(o);
    } catch (const InvalidScene& e) {
      r.fail(w, e.what());
    }
  }
  r.fail(w + "/type", "expected \"chain\" or \"lattice\"");
}

}  // namespace

Scene parse_scene(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_and_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw InvalidScene(source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                       ": JSON syntax error: " + e.what());
  }

  const Reader r(source);
  r.only_keys(doc, "", {"name", "generator", "stretch", "overrides", "particles", "springs",
                        "external"});
  Scene scene;
  if (doc.contains("name")) {
    if (!doc["name"].is_string()) r.fail("/name", "expected a string");
    scene.name = doc["name"].get<std::string>();
  }
  ParticleSystem& sys = scene.system;

  if (doc.contains("generator")) {
    if (doc.contains("particles") || doc.contains("springs")) {
      r.fail("/generator", "cannot be combined with explicit particles or springs");
    }
    sys = generate(r, doc["generator"]);
  } else {
    if (doc.contains("stretch") || doc.contains("overrides")) {
      r.fail(doc.contains("stretch") ? "/stretch" : "/overrides", "only valid with a generator");
    }
    const json& ps = r.field(doc, "", "particles");
    if (!ps.is_array() || ps.empty()) r.fail("/particles", "expected a non-empty array");
    for (std::size_t p = 0; p < ps.size(); ++p) {
      const std::string w = "/particles/" + std::to_string(p);
      r.only_keys(ps[p], w, {"mass", "position", "velocity", "fixed"});
      const double m = r.number(r.field(ps[p], w, "mass"), w + "/mass");
      if (!(m > 0.0)) r.fail(w + "/mass", "must be positive");
      const Vec3 x = r.vec3(r.field(ps[p], w, "position"), w + "/position");
      const Vec3 v = ps[p].contains("velocity") ? r.vec3(ps[p]["velocity"], w + "/velocity") : Vec3::Zero();
      const bool fixed = ps[p].contains("fixed") ? r.boolean(ps[p]["fixed"], w + "/fixed") : false;
      sys.add_particle(m, x, v, fixed);
    }
    const json& ss = r.field(doc, "", "springs");
    if (!ss.is_array()) r.fail("/springs", "expected an array");
    for (std::size_t s = 0; s < ss.size(); ++s) {
      const std::string w = "/springs/" + std::to_string(s);
      r.only_keys(ss[s], w, {"i", "j", "k", "rest_length"});
      const int i = r.integer(r.field(ss[s], w, "i"), w + "/i");
      const int j = r.integer(r.field(ss[s], w, "j"), w + "/j");
      if (i < 0 || i >= sys.size()) r.fail(w + "/i", "particle index out of range");
      if (j < 0 || j >= sys.size()) r.fail(w + "/j", "particle index out of range");
      if (i == j) r.fail(w + "/j", "spring joins a particle to itself");
      const double k = r.number(r.field(ss[s], w, "k"), w + "/k");
      if (!(k > 0.0)) r.fail(w + "/k", "must be positive");
      const double rest = r.number(r.field(ss[s], w, "rest_length"), w + "/rest_length");
      if (rest < 0.0) r.fail(w + "/rest_length", "must be non-negative");
      sys.add_spring(i, j, k, rest);
    }
  }

  if (doc.contains("stretch")) {
    const Vec3 s = r.vec3(doc["stretch"], "/stretch");
    for (auto& x : sys.position) x = x.cwiseProduct(s);
  }
  if (doc.contains("overrides")) {
    const json& os = doc["overrides"];
    if (!os.is_array()) r.fail("/overrides", "expected an array");
    for (std::size_t o = 0; o < os.size(); ++o) {
      const std::string w = "/overrides/" + std::to_string(o);
      r.only_keys(os[o], w, {"index", "position", "velocity", "fixed", "mass"});
      const int p = r.integer(r.field(os[o], w, "index"), w + "/index");
      if (p < 0 || p >= sys.size()) r.fail(w + "/index", "particle index out of range");
      if (os[o].contains("position")) sys.position[p] = r.vec3(os[o]["position"], w + "/position");
      if (os[o].contains("velocity")) sys.velocity[p] = r.vec3(os[o]["velocity"], w + "/velocity");
      if (os[o].contains("fixed")) sys.fixed[p] = r.boolean(os[o]["fixed"], w + "/fixed");
      if (os[o].contains("mass")) {
        sys.mass[p] = r.number(os[o]["mass"], w + "/mass");
        if (!(sys.mass[p] > 0.0)) r.fail(w + "/mass", "must be positive");
      }
    }
  }

  if (doc.contains("external")) {
    const json& e = doc["external"];
    r.only_keys(e, "/external", {"gravity", "drag"});
    if (e.contains("gravity")) sys.external.gravity = r.vec3(e["gravity"], "/external/gravity");
    if (e.contains("drag")) {
      sys.external.drag = r.number(e["drag"], "/external/drag");
      if (sys.external.drag < 0.0) r.fail("/external/drag", "must be non-negative");
    }
  }

  try {
    sys.validate();
  } catch (const InvalidScene& e) {
    throw InvalidScene(source + ": " + e.what());
  }
  return scene;
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidScene(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str(), path.string());
}

std::string scene_to_json(const Scene& scene) {
  const ParticleSystem& sys = scene.system;
  auto arr = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  json doc;
  if (!scene.name.empty()) doc["name"] = scene.name;
  doc["particles"] = json::array();
  for (int p = 0; p < sys.size(); ++p) {
    doc["particles"].push_back({{"mass", sys.mass[p]},
                                {"position", arr(sys.position[p])},
                                {"velocity", arr(sys.velocity[p])},
                                {"fixed", static_cast<bool>(sys.fixed[p])}});
  }
  doc["springs"] = json::array();
  for (const Spring& s : sys.springs) {
    doc["springs"].push_back({{"i", s.i}, {"j", s.j}, {"k", s.k}, {"rest_length", s.rest}});
  }
  doc["external"] = {{"gravity", arr(sys.external.gravity)}, {"drag", sys.external.drag}};
  return doc.dump(2) + "\n";
}

}  // namespace exprb
