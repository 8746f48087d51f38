#pragma once

// Line-delimited JSON persistence of session logs: a header document on the
// first line, then one TrialRecord document per line.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "experiment.hpp"
#include "json.hpp"

namespace tactwin {

nlohmann::json stimulus_to_json(const Stimulus& s);
// Throws Parse when the value does not fit the protocol's domain shape.
Stimulus stimulus_from_json(const nlohmann::json& j, Protocol p);

nlohmann::json session_header_json(const SessionLog& log);
nlohmann::json trial_record_json(const TrialRecord& r);

std::string session_log_to_jsonl(const SessionLog& log);
SessionLog parse_session_log(std::istream& in);

void save_session_log(const SessionLog& log, const std::filesystem::path& path);
SessionLog load_session_log(const std::filesystem::path& path);

inline constexpr const char* kSessionIndexFile = "sessions.index";
inline constexpr const char* kSessionLogExtension = ".jsonl";

// Writes <dir>/<session_id>.jsonl and appends a line to <dir>/sessions.index.
std::filesystem::path persist_session(const SessionLog& log, const std::filesystem::path& dir);

}  // namespace tactwin
