#pragma once
// Versioned JSON documents and CSV tables exchanged between CLI runs.

#include <filesystem>
#include <ostream>
#include <string>

#include "json.hpp"

#include "mvpower/copula.hpp"
#include "mvpower/power.hpp"

namespace mvpower {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kModelSchema = "mvpower.model/1";
inline constexpr const char* kPowerSchema = "mvpower.power/1";

/// Everything needed to reuse a fitted pilot model: the pilot counts and
/// design (for null refits and design extension), the marginal fits and
/// the copula.
nlohmann::json model_to_json(const CopulaModel& model);
CopulaModel model_from_json(const nlohmann::json& doc);

CopulaModel load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const CopulaModel& model);

nlohmann::json power_to_json(const PowerResult& result, const std::string& term, double effect_size);

/// index,statistic[,p_value]
void write_null_stats(std::ostream& out, const PowerResult& result);
void write_alt_stats(std::ostream& out, const PowerResult& result);

/// Writes `text` to `path`, throwing io_error on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mvpower
