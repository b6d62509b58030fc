#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "ldalign/guide.hpp"
#include "ldalign/lm.hpp"

namespace ldalign {

void to_json(nlohmann::json& j, const LMConfig& c);
void from_json(const nlohmann::json& j, LMConfig& c);
void to_json(nlohmann::json& j, const GuideConfig& c);
void from_json(const nlohmann::json& j, GuideConfig& c);

void save_lm(const std::string& dir, const LMParams<float>& params);
LMParams<float> load_lm(const std::string& dir);

void save_guide(const std::string& dir, const GuideParams<float>& guide);
GuideParams<float> load_guide(const std::string& dir);

}  // namespace ldalign
