#include "clonemap/model_io.hpp"

#include <fstream>
#include <sstream>

#include "clonemap/errors.hpp"

namespace clonemap {

using nlohmann::json;

nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

json model_to_json(const CloneHmm& model) {
  const std::size_t s = model.n_states();
  json trans = json::array();
  for (std::size_t a = 0; a < model.n_actions(); ++a) {
    json per_action = json::array();
    for (std::size_t i = 0; i < s; ++i) {
      const auto r = model.row(a, i);
      per_action.push_back(std::vector<double>(r.begin(), r.end()));
    }
    trans.push_back(std::move(per_action));
  }
  std::vector<std::size_t> state_to_obs;
  for (ObsId o : model.state_to_obs()) state_to_obs.push_back(index(o));
  std::vector<bool> mask;
  for (auto m : model.active_mask()) mask.push_back(m != 0);
  return json{{"version", kModelFormatVersion},
              {"n_obs", model.n_obs()},
              {"clones_per_obs", std::vector<std::uint32_t>(model.clones_per_obs().begin(),
                                                            model.clones_per_obs().end())},
              {"state_to_obs", state_to_obs},
              {"active_mask", mask},
              {"trans", std::move(trans)}};
}

CloneHmm model_from_json(const json& doc) {
  try {
    if (doc.at("version").get<int>() != kModelFormatVersion) {
      throw ValidationError("unsupported model format version");
    }
    const auto n_obs = doc.at("n_obs").get<std::size_t>();
    auto clones = doc.at("clones_per_obs").get<std::vector<std::uint32_t>>();
    if (clones.size() != n_obs) throw ValidationError("clones_per_obs length differs from n_obs");
    const auto& trans = doc.at("trans");
    if (!trans.is_array() || trans.empty()) throw ValidationError("trans must be a non-empty array");
    CloneHmm model(std::move(clones), trans.size());
    const std::size_t s = model.n_states();

    const auto state_to_obs = doc.at("state_to_obs").get<std::vector<std::size_t>>();
    if (state_to_obs.size() != s) throw ValidationError("state_to_obs length differs from state count");
    for (std::size_t i = 0; i < s; ++i) {
      if (state_to_obs[i] != index(model.obs_of(i))) {
        throw ValidationError("state_to_obs entry " + std::to_string(i) +
                              " does not follow the clone block layout");
      }
    }
    const auto mask = doc.at("active_mask").get<std::vector<bool>>();
    if (mask.size() != s) throw ValidationError("active_mask length differs from state count");
    for (std::size_t i = 0; i < s; ++i) model.set_active(i, mask[i]);

    for (std::size_t a = 0; a < trans.size(); ++a) {
      const auto& per_action = trans[a];
      if (per_action.size() != s) {
        throw ValidationError("trans[" + std::to_string(a) + "] has wrong row count");
      }
      for (std::size_t i = 0; i < s; ++i) {
        const auto& r = per_action[i];
        if (r.size() != s) {
          throw ValidationError("trans[" + std::to_string(a) + "][" + std::to_string(i) +
                                "] has wrong length");
        }
        auto dst = model.row(a, i);
        for (std::size_t j = 0; j < s; ++j) dst[j] = r[j].get<double>();
      }
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model document: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ValidationError(std::string("malformed model document: ") + e.what());
  }
}

void save_model(const CloneHmm& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << model_to_json(model).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

CloneHmm load_model(const std::filesystem::path& path) {
  return model_from_json(parse_json_file(path));
}

void write_trajectory(const TrajectoryData& data, std::ostream& out) {
  data.validate();
  std::size_t next_boundary = 0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    bool starts = t == 0;
    while (next_boundary < data.episode_boundaries.size() &&
           data.episode_boundaries[next_boundary] <= t) {
      starts = starts || data.episode_boundaries[next_boundary] == t;
      ++next_boundary;
    }
    json line{{"obs", index(data.observations[t])}};
    line["action"] = starts ? json(nullptr) : json(index(data.actions[t - 1]));
    out << line.dump() << '\n';
  }
}

TrajectoryData read_trajectory(std::istream& in) {
  TrajectoryData data;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("trajectory line: ") + e.what(), line_start + e.byte - 1);
    }
    if (!doc.is_object() || !doc.contains("obs") || !doc["obs"].is_number_unsigned()) {
      throw ParseError("trajectory line needs a non-negative integer \"obs\"", line_start);
    }
    const auto& act = doc.contains("action") ? doc["action"] : json(nullptr);
    const bool starts = act.is_null();
    if (!starts && !act.is_number_unsigned()) {
      throw ParseError("trajectory \"action\" must be a non-negative integer or null", line_start);
    }
    if (data.observations.empty()) {
      if (!starts) throw ParseError("first trajectory line must have a null action", line_start);
    } else {
      data.actions.push_back(action_id(starts ? 0 : act.get<std::size_t>()));
      if (starts) data.episode_boundaries.push_back(data.observations.size());
    }
    data.observations.push_back(obs_id(doc["obs"].get<std::size_t>()));
  }
  // Episodic files list every episode start, including the first.
  if (!data.episode_boundaries.empty()) {
    data.episode_boundaries.insert(data.episode_boundaries.begin(), 0);
  }
  return data;
}

void save_trajectory(const TrajectoryData& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_trajectory(data, out);
}

TrajectoryData load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_trajectory(in);
}

}  // namespace clonemap
