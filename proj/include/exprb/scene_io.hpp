#pragma once

// Scene files (JSON). Either an explicit particle/spring list:
//
//   {
//     "name": "two-springs",
//     "particles": [ {"mass": 1.0, "position": [0,0,0], "velocity": [0,0,0], "fixed": true}, ... ],
//     "springs":   [ {"i": 0, "j": 1, "k": 100.0, "rest_length": 1.0}, ... ],
//     "external":  {"gravity": [0, 0, -9.81], "drag": 0.0}
//   }
//
// or a generated chain / lattice with optional per-particle overrides:
//
//   {
//     "generator": {"type": "chain", "n": 100, "k": 1e6, "rest_length": 0.01, "mass": 0.01,
//                   "ends": "first", "axis": [1,0,0], "spacing": 0.01},
//     "stretch": [1.0, 1.0, 1.0],
//     "overrides": [ {"index": 5, "velocity": [0, 0, 1]} ],
//     "external": {"gravity": [0, 0, -9.81]}
//   }
//
// Lattice generators take nx, ny, nz, spacing, k_struct, k_diag, mass, fix_x0_face.
// Unknown keys are errors. Diagnostics name the line (syntax errors) or the
// JSON pointer of the offending field.

#include <filesystem>
#include <string>

#include "exprb/oscillators.hpp"

namespace exprb {

struct Scene {
  std::string name;
  ParticleSystem system;
};

Scene parse_scene(const std::string& text, const std::string& source = "<scene>");
Scene load_scene(const std::filesystem::path& path);
std::string scene_to_json(const Scene& scene);

}  // namespace exprb
