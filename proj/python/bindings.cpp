// mvp._core: the pure pipeline pieces for Python. Structured results cross
// the boundary as JSON text; the package decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mvp/audio/analysis.hpp"
#include "mvp/audio/wav.hpp"
#include "mvp/charcha/charcha.hpp"
#include "mvp/emotion/emotion.hpp"
#include "mvp/error.hpp"
#include "mvp/eval/eval.hpp"
#include "mvp/interp/interp.hpp"
#include "mvp/render/render.hpp"
#include "mvp/util/files.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace mvp;

namespace {

std::string analyze_wav(const fs::path& path) {
  py::gil_scoped_release release;
  return audio::to_json(audio::analyze(audio::load_for_analysis(path))).dump();
}

std::vector<double> slerp(const std::vector<double>& v0, const std::vector<double>& v1, double t) {
  return interp::slerp({v0}, {v1}, t).values;
}

std::vector<double> onset_weights(const std::vector<double>& envelope, std::size_t n_frames,
                                  std::optional<double> floor) {
  return floor ? interp::onset_weights(envelope, n_frames, *floor) : interp::onset_weights(envelope, n_frames);
}

std::string quadrant(double valence, double arousal) {
  return std::string(emotion::to_string(emotion::quadrant(valence, arousal)));
}

std::vector<std::string> select_actions(std::uint64_t seed) {
  std::vector<std::string> out;
  for (auto a : charcha::select_actions(seed)) out.emplace_back(charcha::to_string(a));
  return out;
}

std::string replay_trace(const std::string& path, std::optional<std::uint64_t> seed) {
  py::gil_scoped_release release;
  return charcha::replay_trace(charcha::load_trace(path), seed).report().dump();
}

std::string face_frame_metrics(const std::vector<std::pair<bool, bool>>& frames) {
  std::vector<eval::FrameVerification> v;
  for (std::size_t i = 0; i < frames.size(); ++i) v.push_back({i, frames[i].first, frames[i].second});
  return eval::face_frame_metrics(v).to_json().dump();
}

double character_similarity(const std::vector<double>& frame, const std::vector<std::vector<double>>& refs) {
  return eval::character_similarity(frame, refs);
}

// Mock generator and LLM only. Configs that reference a CHARCHA session are
// refused: there is no consent checker on this path.
std::string render_mock(const fs::path& job_config, const fs::path& jobs_dir, std::optional<std::string> job_id,
                        int workers) {
  py::gil_scoped_release release;
  const fs::path cfg_path = fs::absolute(job_config);
  const auto jc = render::JobConfig::from_json(util::read_json(cfg_path), cfg_path.parent_path());
  render::JobStore store(jobs_dir);
  std::string id;
  if (job_id && store.exists(*job_id)) {
    id = *job_id;
  } else {
    id = render::submit_job(store, jc, render::ModelRegistry::defaults(), {}, job_id).id;
  }
  render::MockGenerator gen;
  timeline::MockLlmClient llm;
  render::RunOptions opts;
  opts.workers = workers;
  return render::run_job(store, id, {gen, llm, nullptr}, opts).to_json().dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the mvp music video pipeline";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error.ptr())(e.what());
      exc.attr("kind") = py::str(std::string(to_string(e.kind())));
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def("analyze_wav", &analyze_wav, py::arg("path"));
  m.def("slerp", &slerp, py::arg("v0"), py::arg("v1"), py::arg("t"));
  m.def("onset_weights", &onset_weights, py::arg("envelope"), py::arg("n_frames"), py::arg("floor") = py::none());
  m.def("quadrant", &quadrant, py::arg("valence"), py::arg("arousal"));
  m.def("select_actions", &select_actions, py::arg("seed"));
  m.def("replay_trace", &replay_trace, py::arg("path"), py::arg("seed") = py::none());
  m.def("face_frame_metrics", &face_frame_metrics, py::arg("frames"));
  m.def("character_similarity", &character_similarity, py::arg("frame"), py::arg("refs"));
  m.def("render_mock", &render_mock, py::arg("job_config"), py::arg("jobs_dir"), py::arg("job_id") = py::none(),
        py::arg("workers") = 2);
}
