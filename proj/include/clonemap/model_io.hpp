#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "clonemap/clone_hmm.hpp"
#include "clonemap/types.hpp"

namespace clonemap {

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const CloneHmm& model);
/// Validates the document; throws ValidationError for invariant violations.
CloneHmm model_from_json(const nlohmann::json& doc);

void save_model(const CloneHmm& model, const std::filesystem::path& path);
/// Throws IoError, ParseError (with byte offset) or ValidationError.
CloneHmm load_model(const std::filesystem::path& path);

/// JSON lines, one `{"obs": int, "action": int|null}` per observation; a null
/// action starts a new episode.
void write_trajectory(const TrajectoryData& data, std::ostream& out);
TrajectoryData read_trajectory(std::istream& in);
void save_trajectory(const TrajectoryData& data, const std::filesystem::path& path);
TrajectoryData load_trajectory(const std::filesystem::path& path);

/// Parse helper that maps nlohmann parse failures onto ParseError.
nlohmann::json parse_json_file(const std::filesystem::path& path);

}  // namespace clonemap
