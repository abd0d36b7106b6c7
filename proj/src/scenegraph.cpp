#include "graphdiff/scenegraph.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace graphdiff {

namespace {

void check_unique_nonempty(const std::vector<std::string>& names, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw std::invalid_argument(std::string(what) + ": empty name");
    if (!seen.insert(n).second)
      throw std::invalid_argument(std::string(what) + ": duplicate name '" + n + "'");
  }
}

}  // namespace

Vocab::Vocab(std::vector<std::string> object_names, std::vector<std::string> relation_names)
    : object_names_(std::move(object_names)), relation_names_(std::move(relation_names)) {
  check_unique_nonempty(object_names_, "object vocab");
  check_unique_nonempty(relation_names_, "relation vocab");
}

int Vocab::object_index(const std::string& name) const {
  for (std::size_t i = 0; i < object_names_.size(); ++i)
    if (object_names_[i] == name) return static_cast<int>(i);
  return -1;
}

int Vocab::relation_index(const std::string& name) const {
  for (std::size_t i = 0; i < relation_names_.size(); ++i)
    if (relation_names_[i] == name) return static_cast<int>(i);
  return -1;
}

void save_vocab(const std::string& path, const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["objects"] = vocab.objects();
  j["relations"] = vocab.relations();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write vocab: " + path);
  f << j.dump(2) << "\n";
}

Vocab load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read vocab: " + path);
  nlohmann::json j;
  f >> j;
  return Vocab(j.at("objects").get<std::vector<std::string>>(),
               j.at("relations").get<std::vector<std::string>>());
}

std::vector<int> out_edges(const SceneGraph& g, int obj) {
  std::vector<int> e;
  for (int t = 0; t < g.num_triplets(); ++t)
    if (g.triplets[t].subject == obj) e.push_back(t);
  return e;
}

std::vector<int> in_edges(const SceneGraph& g, int obj) {
  std::vector<int> e;
  for (int t = 0; t < g.num_triplets(); ++t)
    if (g.triplets[t].object == obj) e.push_back(t);
  return e;
}

ValidationReport validate(const SceneGraph& g, const Vocab& vocab) {
  ValidationReport rep;
  auto fail = [&rep](std::string msg) {
    rep.ok = false;
    rep.violations.push_back(std::move(msg));
  };
  for (int i = 0; i < g.num_objects(); ++i) {
    if (g.objects[i] < 0 || g.objects[i] >= vocab.num_objects())
      fail("object " + std::to_string(i) + ": unknown category index " +
           std::to_string(g.objects[i]));
  }
  std::set<std::tuple<int, int, int>> seen;
  for (int t = 0; t < g.num_triplets(); ++t) {
    const Triplet& tr = g.triplets[t];
    if (tr.subject < 0 || tr.subject >= g.num_objects() || tr.object < 0 ||
        tr.object >= g.num_objects()) {
      fail("triplet " + std::to_string(t) + ": dangling index");
      continue;
    }
    if (tr.subject == tr.object)
      fail("triplet " + std::to_string(t) + ": self-loop i==j");
    if (tr.relation < 0 || tr.relation >= vocab.num_relations())
      fail("triplet " + std::to_string(t) + ": unknown relation index " +
           std::to_string(tr.relation));
    if (!seen.insert({tr.subject, tr.relation, tr.object}).second)
      fail("triplet " + std::to_string(t) + ": duplicate (i, r, j)");
  }
  return rep;
}

SceneGraph replace_object(const SceneGraph& g, int position, int new_category,
                          const Vocab& vocab) {
  if (position < 0 || position >= g.num_objects())
    throw std::out_of_range("replace_object: position " + std::to_string(position) +
                            " out of range");
  if (new_category < 0 || new_category >= vocab.num_objects())
    throw std::invalid_argument("replace_object: unknown category");
  SceneGraph out = g;
  out.objects[position] = new_category;
  return out;
}

SceneGraph replace_relation(const SceneGraph& g, int triplet_position, int new_relation,
                            const Vocab& vocab) {
  if (triplet_position < 0 || triplet_position >= g.num_triplets())
    throw std::out_of_range("replace_relation: triplet position out of range");
  if (new_relation < 0 || new_relation >= vocab.num_relations())
    throw std::invalid_argument("replace_relation: unknown category");
  SceneGraph out = g;
  out.triplets[triplet_position].relation = new_relation;
  // Changing the label may collide with an existing parallel edge.
  const Triplet& tr = out.triplets[triplet_position];
  for (int t = 0; t < out.num_triplets(); ++t) {
    if (t != triplet_position && out.triplets[t] == tr)
      throw std::invalid_argument("replace_relation: duplicate triplet");
  }
  return out;
}

SceneGraph add_triplet(const SceneGraph& g, int subject, int relation, int object,
                       const Vocab& vocab) {
  if (subject < 0 || subject >= g.num_objects() || object < 0 || object >= g.num_objects())
    throw std::out_of_range("add_triplet: dangling index");
  if (subject == object) throw std::invalid_argument("add_triplet: self-loop i==j");
  if (relation < 0 || relation >= vocab.num_relations())
    throw std::invalid_argument("add_triplet: unknown category");
  Triplet tr{subject, relation, object};
  for (const Triplet& t : g.triplets)
    if (t == tr) throw std::invalid_argument("add_triplet: duplicate triplet");
  SceneGraph out = g;
  out.triplets.push_back(tr);
  return out;
}

SceneGraph remove_triplet(const SceneGraph& g, int position) {
  if (position < 0 || position >= g.num_triplets())
    throw std::out_of_range("remove_triplet: position out of range");
  SceneGraph out = g;
  out.triplets.erase(out.triplets.begin() + position);
  return out;
}

// ---------------------------------------------------------------------------
// interchange document

SceneDoc doc_from_graph(const SceneGraph& g, const Vocab& vocab) {
  ValidationReport rep = validate(g, vocab);
  if (!rep.ok)
    throw std::invalid_argument("doc_from_graph: invalid graph: " + rep.violations.front());
  SceneDoc doc;
  for (int c : g.objects) doc.objects.push_back(vocab.objects()[c]);
  for (const Triplet& t : g.triplets)
    doc.triplets.emplace_back(t.subject, vocab.relations()[t.relation], t.object);
  return doc;
}

SceneGraph graph_from_doc(const SceneDoc& doc, const Vocab& vocab) {
  SceneGraph g;
  for (const auto& name : doc.objects) {
    const int c = vocab.object_index(name);
    if (c < 0) throw std::invalid_argument("unknown object category '" + name + "'");
    g.objects.push_back(c);
  }
  for (const auto& [s, rel, o] : doc.triplets) {
    const int r = vocab.relation_index(rel);
    if (r < 0) throw std::invalid_argument("unknown relation category '" + rel + "'");
    g.triplets.push_back({s, r, o});
  }
  ValidationReport rep = validate(g, vocab);
  if (!rep.ok) throw std::invalid_argument("invalid scene graph: " + rep.violations.front());
  return g;
}

namespace {

std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string write_canonical_json(const SceneDoc& doc) {
  // Keys in sorted order: boxes, image, objects, triplets, vocab.
  std::ostringstream os;
  os << "{";
  bool first = true;
  auto key = [&](const char* k) {
    if (!first) os << ",";
    first = false;
    os << "\"" << k << "\":";
  };
  if (doc.boxes) {
    key("boxes");
    os << "[";
    for (std::size_t i = 0; i < doc.boxes->size(); ++i) {
      const Box& b = (*doc.boxes)[i];
      if (i) os << ",";
      os << "[" << fmt6(b.x0) << "," << fmt6(b.y0) << "," << fmt6(b.x1) << ","
         << fmt6(b.y1) << "]";
    }
    os << "]";
  }
  if (doc.image_path) {
    key("image");
    os << "\"" << json_escape(*doc.image_path) << "\"";
  }
  key("objects");
  os << "[";
  for (std::size_t i = 0; i < doc.objects.size(); ++i) {
    if (i) os << ",";
    os << "\"" << json_escape(doc.objects[i]) << "\"";
  }
  os << "]";
  key("triplets");
  os << "[";
  for (std::size_t i = 0; i < doc.triplets.size(); ++i) {
    const auto& [s, rel, o] = doc.triplets[i];
    if (i) os << ",";
    os << "[" << s << ",\"" << json_escape(rel) << "\"," << o << "]";
  }
  os << "]";
  if (doc.vocab_path) {
    key("vocab");
    os << "\"" << json_escape(*doc.vocab_path) << "\"";
  }
  os << "}";
  return os.str();
}

SceneDoc parse_scene_doc(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed scene document: ") + e.what());
  }
  SceneDoc doc;
  if (!j.is_object() || !j.contains("objects") || !j.contains("triplets"))
    throw std::invalid_argument("scene document missing objects/triplets");
  doc.objects = j.at("objects").get<std::vector<std::string>>();
  for (const auto& t : j.at("triplets")) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_number_integer() || !t[1].is_string() ||
        !t[2].is_number_integer())
      throw std::invalid_argument("triplet must be [subject_idx, relation, object_idx]");
    doc.triplets.emplace_back(t[0].get<int>(), t[1].get<std::string>(), t[2].get<int>());
  }
  if (j.contains("boxes")) {
    std::vector<Box> boxes;
    for (const auto& b : j.at("boxes")) {
      if (!b.is_array() || b.size() != 4)
        throw std::invalid_argument("box must be [x0,y0,x1,y1]");
      boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                       b[3].get<double>()});
    }
    doc.boxes = std::move(boxes);
  }
  if (j.contains("image")) doc.image_path = j.at("image").get<std::string>();
  if (j.contains("vocab")) doc.vocab_path = j.at("vocab").get<std::string>();
  return doc;
}

void save_scene_doc(const std::string& path, const SceneDoc& doc) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write scene document: " + path);
  f << write_canonical_json(doc) << "\n";
  if (!f) throw std::runtime_error("short write on scene document: " + path);
}

SceneDoc load_scene_doc(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read scene document: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_scene_doc(ss.str());
}

}  // namespace graphdiff
