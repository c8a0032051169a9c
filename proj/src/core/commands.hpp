#pragma once

#include <string>

#include "json.hpp"

namespace fbind {

// JSON command layer shared by the C API, the CLI and the test suites. Each
// command resolves defaults into a full config, validates it, runs, writes a
// run.json echoing the resolved config next to its outputs, and returns a
// small result summary.
nlohmann::json cmd_toygen(const nlohmann::json& config);
nlohmann::json cmd_blend(const nlohmann::json& config);
nlohmann::json cmd_cooc(const nlohmann::json& config);
nlohmann::json cmd_train(const nlohmann::json& config);
nlohmann::json cmd_eval(const nlohmann::json& config);
nlohmann::json cmd_report(const nlohmann::json& config);

nlohmann::json run_command(const std::string& name,
                           const nlohmann::json& config);

}  // namespace fbind
