#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "latentdrag/drag/engine.hpp"

namespace latentdrag::drag {

using nlohmann::json;

json to_json(const StepRecord& s);
StepRecord step_from_json(const json& j);

json config_to_json(const DragConfig& c);
DragConfig config_from_json(const json& j, DragConfig base = {});

// Run totals without the per-step trace.
json summary_json(const RunRecord& r);
RunRecord summary_from_json(const json& j);

// One StepRecord per line, then {"summary": {...}}.
std::string trace_jsonl(const RunRecord& r);
void write_trace_jsonl(const std::filesystem::path& path, const RunRecord& r);
void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

// Feature-grid coordinate to image pixel coordinate along one axis.
double feature_to_image(double u, std::size_t feature_res, std::size_t image_size);

// Copy of `img` with blue dots on handles and red dots on targets.
Image annotate(const Image& img, std::span<const PointPair> pairs, std::size_t feature_res, double radius = 3.0);
std::vector<PointPair> current_points(const DragState& state);

}  // namespace latentdrag::drag
