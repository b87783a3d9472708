#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"
#include "vbmis/scenarios.hpp"

namespace vbmis::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kResultsSchema = 1;

/// Entry point of the vbmis tool; returns the process exit code (0 success,
/// 1 runtime failure, 2 configuration or usage error).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

void write_results_csv(std::ostream& out, const ExperimentTable& table);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
/// Resolved config followed by the manifest.* lines.
void write_manifest(std::ostream& out, const RunConfig& cfg, const std::string& command);

}  // namespace vbmis::cli
