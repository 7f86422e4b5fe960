#include "latentdrag/drag/records.hpp"

#include <fstream>
#include <sstream>

#include "latentdrag/error.hpp"
#include "latentdrag/generator/raster_io.hpp"

namespace latentdrag::drag {

json to_json(const StepRecord& s) {
  return {{"iteration", s.iteration},         {"motion_loss", s.motion_loss}, {"grad_magnitude", s.grad_magnitude},
          {"t_opt", s.t_opt},                 {"t_track", s.t_track},         {"mean_distance", s.mean_distance},
          {"max_distance", s.max_distance}};
}

StepRecord step_from_json(const json& j) {
  StepRecord s;
  s.iteration = j.at("iteration").get<std::size_t>();
  s.motion_loss = j.at("motion_loss").get<double>();
  s.grad_magnitude = j.at("grad_magnitude").get<double>();
  s.t_opt = j.at("t_opt").get<double>();
  s.t_track = j.at("t_track").get<double>();
  s.mean_distance = j.at("mean_distance").get<double>();
  s.max_distance = j.at("max_distance").get<double>();
  return s;
}

json config_to_json(const DragConfig& c) {
  json j = {{"learning_rate", c.learning_rate},
            {"n_pca", c.n_pca ? json(*c.n_pca) : json("Regular")},
            {"w_plus_layers", c.w_plus_layers},
            {"stopping_distance", c.stopping_distance},
            {"max_iterations", c.max_iterations},
            {"r1", c.r1},
            {"r2", c.r2},
            {"seed", c.seed},
            {"weight_decay", c.weight_decay},
            {"pca_samples", c.pca_samples}};
  return j;
}

DragConfig config_from_json(const json& j, DragConfig c) {
  try {
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("n_pca")) {
      const auto& n = j["n_pca"];
      if (n.is_null() || (n.is_string() && n.get<std::string>() == "Regular")) {
        c.n_pca.reset();
      } else if (n.is_number_unsigned() || (n.is_number_integer() && n.get<long long>() > 0)) {
        c.n_pca = n.get<std::size_t>();
      } else {
        throw Error(ErrorCode::BadConfig, "n_pca must be a positive integer or \"Regular\"");
      }
    }
    if (j.contains("w_plus_layers")) c.w_plus_layers = j["w_plus_layers"].get<std::size_t>();
    if (j.contains("stopping_distance")) c.stopping_distance = j["stopping_distance"].get<double>();
    if (j.contains("max_iterations")) c.max_iterations = j["max_iterations"].get<std::size_t>();
    if (j.contains("r1")) c.r1 = j["r1"].get<int>();
    if (j.contains("r2")) c.r2 = j["r2"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("pca_samples")) c.pca_samples = j["pca_samples"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, e.what());
  }
  return c;
}

json summary_json(const RunRecord& r) {
  json j = {{"config", config_to_json(r.config)},
            {"iterations", r.iterations},
            {"t_opt_total", r.t_opt_total},
            {"t_track_total", r.t_track_total},
            {"t_total", r.t_total},
            {"ssim", r.ssim},
            {"ssim_per_time", r.ssim_per_time},
            {"converged", r.converged},
            {"final_mean_distance", r.final_mean_distance},
            {"final_max_distance", r.final_max_distance}};
  if (r.failure) j["failure"] = *r.failure;
  return j;
}

RunRecord summary_from_json(const json& j) {
  RunRecord r;
  r.config = config_from_json(j.at("config"));
  r.iterations = j.at("iterations").get<std::size_t>();
  r.t_opt_total = j.value("t_opt_total", 0.0);
  r.t_track_total = j.value("t_track_total", 0.0);
  r.t_total = j.at("t_total").get<double>();
  r.ssim = j.at("ssim").get<double>();
  r.ssim_per_time = j.value("ssim_per_time", 0.0);
  r.converged = j.at("converged").get<bool>();
  r.final_mean_distance = j.value("final_mean_distance", 0.0);
  r.final_max_distance = j.value("final_max_distance", 0.0);
  if (j.contains("failure")) r.failure = j["failure"].get<std::string>();
  return r;
}

std::string trace_jsonl(const RunRecord& r) {
  std::ostringstream os;
  for (const auto& s : r.trace) os << to_json(s).dump() << '\n';
  os << json{{"summary", summary_json(r)}}.dump() << '\n';
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::OutputUnwritable, "cannot write " + path.string());
}

}  // namespace

void write_trace_jsonl(const std::filesystem::path& path, const RunRecord& r) { write_text(path, trace_jsonl(r)); }

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
  }
}

double feature_to_image(double u, std::size_t feature_res, std::size_t image_size) {
  return (u + 0.5) * static_cast<double>(image_size) / static_cast<double>(feature_res) - 0.5;
}

Image annotate(const Image& img, std::span<const PointPair> pairs, std::size_t feature_res, double radius) {
  Image out = img;
  for (const auto& p : pairs) {
    generator::draw_dot(out, feature_to_image(p.target.x, feature_res, img.width),
                        feature_to_image(p.target.y, feature_res, img.height), radius, generator::kTargetRed);
    generator::draw_dot(out, feature_to_image(p.handle.x, feature_res, img.width),
                        feature_to_image(p.handle.y, feature_res, img.height), radius, generator::kHandleBlue);
  }
  return out;
}

std::vector<PointPair> current_points(const DragState& state) {
  std::vector<PointPair> out;
  for (const auto& p : state.pairs) out.push_back({p.handle, p.target});
  return out;
}

}  // namespace latentdrag::drag
