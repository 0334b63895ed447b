#pragma once

#include "rtqp/episode.hpp"
#include "rtqp/harness.hpp"

#include <json.hpp>

#include <string>

namespace rtqp {

nlohmann::json to_json(const Matrix& m);
nlohmann::json to_json(const Vector& v);
Matrix matrix_from_json(const nlohmann::json& j);
Vector vector_from_json(const nlohmann::json& j);

nlohmann::json to_json(const QPInstance& p);
nlohmann::json to_json(const TransformKey& k);
nlohmann::json to_json(const Ciphertext& c);
nlohmann::json to_json(const Guess& g);
nlohmann::json to_json(const ScenarioConfig& c);
nlohmann::json to_json(const EpisodeLog& log);
nlohmann::json to_json(const SpecReport& r);
nlohmann::json to_json(const AttackMetrics& m);

QPInstance qp_from_json(const nlohmann::json& j);
TransformKey key_from_json(const nlohmann::json& j);
Ciphertext ciphertext_from_json(const nlohmann::json& j);
Guess guess_from_json(const nlohmann::json& j);
ScenarioConfig scenario_config_from_json(const nlohmann::json& j);
EpisodeLog episode_from_json(const nlohmann::json& j);

void save_episode(const EpisodeLog& log, const std::string& path);
EpisodeLog load_episode(const std::string& path);
void save_metrics(const AttackMetrics& m, const std::string& path);

void write_trajectory_csv(const EpisodeLog& log, const std::string& path);
void write_ciphertext_norms_csv(const EpisodeLog& log, const std::string& path);
void write_reconstructed_inputs_csv(const AttackMetrics& m, const std::string& path);

}  // namespace rtqp
