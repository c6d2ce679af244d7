#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "bnnfi/campaign.hpp"

namespace bnnfi {

inline constexpr const char* kVersion = "0.1.0";

// Flat key = value configuration text; '#' starts a comment, blank lines are
// ignored, later assignments override earlier ones.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> parse_config_file(const std::string& path);

// Builds a CampaignConfig from config keys (names match the struct fields).
// Missing required keys are reported together by name.
CampaignConfig campaign_config_from(const std::map<std::string, std::string>& kv);

DatasetSource load_dataset(DatasetKind kind, const std::vector<std::string>& paths);
DatasetKind parse_dataset_kind(const std::string& text);

// Per-trial rows: scenario,trial,fault_count,faulty_correct,baseline_correct,delta,effective
void write_trial_csv(std::ostream& out, const CampaignResult& result);
// One row per scenario with mean/relative reduction, effective-fault %, and
// distribution statistics.
void write_summary_csv(std::ostream& out, const CampaignResult& result);
// Scenario records including the per-trial delta arrays for box plots.
void write_summary_json(std::ostream& out, const CampaignResult& result);
// Per-layer matrix rows (layer, storage, fault count, stats).
void write_layer_matrix_csv(std::ostream& out, const CampaignResult& result);
// Reproduction manifest: version, master seed, config snapshot, scenario keys.
// Contains no timestamps, so reruns emit identical bytes.
void write_manifest_json(std::ostream& out, const std::string& command,
                         const std::map<std::string, std::string>& config_snapshot,
                         uint64_t master_seed, const std::vector<std::string>& scenario_keys);

std::string sanitize_slug(const std::string& text);

// Writes trial CSV, per-scenario fault-site CSVs, summary CSV/JSON and the
// manifest under out_dir; returns the written paths (sorted).
std::vector<std::string> emit_reports(const CampaignResult& result, const std::string& out_dir,
                                      const std::string& command,
                                      const std::map<std::string, std::string>& config_snapshot,
                                      uint64_t master_seed, bool layer_matrix);

}  // namespace bnnfi
