#pragma once

#include <optional>
#include <string>
#include <vector>

#include "graphdiff/image.hpp"

namespace graphdiff {

// Fixed category vocabularies for objects and relations.  Names are unique,
// non-empty, and index-stable under serialization.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> object_names, std::vector<std::string> relation_names);

  const std::vector<std::string>& objects() const { return object_names_; }
  const std::vector<std::string>& relations() const { return relation_names_; }
  int num_objects() const { return static_cast<int>(object_names_.size()); }
  int num_relations() const { return static_cast<int>(relation_names_.size()); }

  // -1 when unknown.
  int object_index(const std::string& name) const;
  int relation_index(const std::string& name) const;

  bool operator==(const Vocab&) const = default;

 private:
  std::vector<std::string> object_names_;
  std::vector<std::string> relation_names_;
};

void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

// One directed labeled edge (subject, predicate, object) over instance
// positions in the object list.
struct Triplet {
  int subject = 0;
  int relation = 0;
  int object = 0;
  bool operator==(const Triplet&) const = default;
};

// Object instances are indexed by position, so repeated categories are
// allowed; parallel edges between a pair are allowed iff labels differ.
struct SceneGraph {
  std::vector<int> objects;    // category index per instance
  std::vector<Triplet> triplets;
  bool operator==(const SceneGraph&) const = default;

  int num_objects() const { return static_cast<int>(objects.size()); }
  int num_triplets() const { return static_cast<int>(triplets.size()); }
};

// Triplet positions leaving / entering an object instance.
std::vector<int> out_edges(const SceneGraph& g, int obj);
std::vector<int> in_edges(const SceneGraph& g, int obj);

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;
};

ValidationReport validate(const SceneGraph& g, const Vocab& vocab);

// Pure edit operations; the input graph is never modified.
SceneGraph replace_object(const SceneGraph& g, int position, int new_category,
                          const Vocab& vocab);
SceneGraph replace_relation(const SceneGraph& g, int triplet_position, int new_relation,
                            const Vocab& vocab);
SceneGraph add_triplet(const SceneGraph& g, int subject, int relation, int object,
                       const Vocab& vocab);
SceneGraph remove_triplet(const SceneGraph& g, int position);

// Axis-aligned rectangle in normalized [0,1]^2 image coordinates.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  double area() const { return (x1 - x0) * (y1 - y0); }
  bool operator==(const Box&) const = default;
};

struct GroundedScene {
  SceneGraph graph;
  std::vector<Box> boxes;  // empty when the scene is graph-only
  Image image;
  bool has_boxes() const { return !boxes.empty(); }
};

// ---------------------------------------------------------------------------
// Interchange document.  Serialized as JSON with object/relation *names*;
// canonical form is sorted keys and fixed 6-decimal float formatting.

struct SceneDoc {
  std::vector<std::string> objects;
  std::vector<std::tuple<int, std::string, int>> triplets;
  std::optional<std::vector<Box>> boxes;
  std::optional<std::string> image_path;
  std::optional<std::string> vocab_path;
  bool operator==(const SceneDoc&) const = default;
};

SceneDoc doc_from_graph(const SceneGraph& g, const Vocab& vocab);
// Throws std::invalid_argument on unknown categories; the graph is validated.
SceneGraph graph_from_doc(const SceneDoc& doc, const Vocab& vocab);

std::string write_canonical_json(const SceneDoc& doc);
SceneDoc parse_scene_doc(const std::string& json_text);

void save_scene_doc(const std::string& path, const SceneDoc& doc);
SceneDoc load_scene_doc(const std::string& path);

}  // namespace graphdiff
