#pragma once

#include <string>
#include <vector>

#include "drivefix/synthworld/scene.hpp"

namespace drivefix {

enum class Provenance : uint8_t { GT = 0, DG = 1 };

// One training sample: hybrid history (oldest slot first), the corrupted
// current frames over all K views, and their ground truth. combo_id encodes
// the provenance pattern bijectively: bit j set = history slot j (oldest
// first) is ground truth. For h=2 this enumerates
//   0 = {DG,DG}, 1 = {DG,GT}, 2 = {GT,DG}, 3 = {GT,GT}
// where the second element is the immediate past frame.
struct TrainingTriplet {
  std::string scene_id;
  int t = 0;  // current timestep
  int combo_id = 0;
  std::vector<Provenance> history;  // size h, oldest first; history[i] is frame t-h+i

  static int combo_of(const std::vector<Provenance>& hist) {
    int id = 0;
    for (size_t j = 0; j < hist.size(); ++j)
      if (hist[j] == Provenance::GT) id |= 1 << (hist.size() - 1 - j);
    return id;
  }
};

// Expands every eligible timestep into 2^h samples covering all provenance
// patterns. For the default h=2 that is the 4-way hybrid-history expansion.
inline std::vector<TrainingTriplet> build_triplets(const std::string& scene_id, int T, int h) {
  std::vector<TrainingTriplet> out;
  if (h < 0) throw ConfigError("build_triplets: h must be >= 0");
  if (T <= h) return out;
  int combos = 1 << h;
  for (int t = h; t < T; ++t)
    for (int c = 0; c < combos; ++c) {
      TrainingTriplet tr;
      tr.scene_id = scene_id;
      tr.t = t;
      tr.combo_id = c;
      tr.history.resize(h);
      for (int j = 0; j < h; ++j)
        tr.history[j] = (c >> (h - 1 - j)) & 1 ? Provenance::GT : Provenance::DG;
      out.push_back(std::move(tr));
    }
  return out;
}

inline json to_json(const TrainingTriplet& tr) {
  json hist = json::array();
  for (size_t j = 0; j < tr.history.size(); ++j)
    hist.push_back({{"t", tr.t - static_cast<int>(tr.history.size()) + static_cast<int>(j)},
                    {"provenance", tr.history[j] == Provenance::GT ? "GT" : "DG"}});
  return json{{"scene_id", tr.scene_id}, {"t", tr.t}, {"combo_id", tr.combo_id},
              {"history", hist}};
}

inline TrainingTriplet triplet_from_json(const json& j) {
  TrainingTriplet tr;
  tr.scene_id = j["scene_id"];
  tr.t = j["t"];
  tr.combo_id = j["combo_id"];
  for (const auto& jh : j["history"])
    tr.history.push_back(jh["provenance"] == "GT" ? Provenance::GT : Provenance::DG);
  return tr;
}

}  // namespace drivefix
