#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fmt/format.h>

#include <sstream>

#include "tilepress/bench.hpp"
#include "tilepress/log.hpp"

namespace py = pybind11;
using namespace tilepress;

namespace {

py::bytes to_py(const Bytes& b) { return py::bytes(reinterpret_cast<const char*>(b.data()), b.size()); }

ByteView view(const py::bytes& b) {
  const std::string_view s = b;
  return ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

py::dict instance_dict(const DicomInstance& d) {
  py::dict out;
  out["sop_class_uid"] = d.sop_class_uid;
  out["sop_instance_uid"] = d.sop_instance_uid;
  out["study_instance_uid"] = d.study_instance_uid;
  out["series_instance_uid"] = d.series_instance_uid;
  out["modality"] = d.modality;
  out["level_index"] = d.level_index;
  out["total_pixel_matrix_columns"] = d.total_pixel_matrix_columns;
  out["total_pixel_matrix_rows"] = d.total_pixel_matrix_rows;
  out["rows"] = d.rows;
  out["columns"] = d.columns;
  out["number_of_frames"] = d.number_of_frames;
  out["samples_per_pixel"] = d.samples_per_pixel;
  out["photometric_interpretation"] = d.photometric_interpretation;
  out["pixel_data"] = to_py(d.pixel_data);
  return out;
}

py::dict report_dict(const WorkflowReport& r) {
  py::dict out;
  out["workflow"] = std::string(to_string(r.workflow));
  out["mode"] = std::string(to_string(r.mode));
  out["images"] = r.images;
  out["converted"] = r.converted;
  out["failures"] = r.failures;
  out["checkpoints"] = r.checkpoints;
  out["total_seconds"] = r.total_seconds;
  out["wall_seconds"] = r.wall_seconds;
  out["store_root"] = r.store_root;
  out["metered_cost"] = r.metered_cost;
  out["peak_instances"] = r.peak_instances;
  out["published"] = r.published;
  out["acked"] = r.delivery.acked;
  out["dead_lettered"] = r.delivery.dead_lettered;
  py::list series;
  for (const auto& s : r.series) series.append(py::make_tuple(s.t_seconds, s.active, s.busy, s.queued));
  out["series"] = series;
  return out;
}

}  // namespace

PYBIND11_MODULE(_tilepress, m) {
  m.doc() = "Slide pyramid to DICOM conversion and workflow benchmarks";
  m.attr("__version__") = std::string(kVersion);

  py::register_exception<WsiError>(m, "WsiError", PyExc_ValueError);
  py::register_exception<DicomError>(m, "DicomError", PyExc_ValueError);
  py::register_exception<DicomStoreError>(m, "DicomStoreError", PyExc_RuntimeError);

  m.def("set_log_level", &set_log_level, py::arg("level"));

  m.def(
      "generate_slide",
      [](const std::string& slide_id, std::uint32_t width, std::uint32_t height, std::uint32_t tile,
         std::uint64_t seed, bool base_only) {
        return to_py(generate_slide(slide_id, width, height == 0 ? width : height, tile, seed,
                                    base_only ? SlideLayout::kBaseOnly : SlideLayout::kFullPyramid));
      },
      py::arg("slide_id"), py::arg("width"), py::arg("height") = 0, py::arg("tile") = 256, py::arg("seed") = 1,
      py::arg("base_only") = false);

  m.def(
      "read_spyr",
      [](const py::bytes& data) {
        const WsiPyramid p = read_spyr(view(data));
        py::list levels;
        for (const auto& l : p.levels) levels.append(py::make_tuple(l.width, l.height));
        py::dict out;
        out["tile_size"] = p.tile_size;
        out["levels"] = levels;
        return out;
      },
      py::arg("data"));

  m.def(
      "make_uids",
      [](const std::string& slide_id, std::uint32_t level, const std::string& root) {
        const UidTriple u = make_uids(slide_id, level, root);
        return py::make_tuple(u.study, u.series, u.sop);
      },
      py::arg("slide_id"), py::arg("level") = 0, py::arg("root") = std::string(kDefaultUidRoot));

  m.def(
      "convert",
      [](const py::bytes& spyr, const std::string& slide_id, std::uint32_t tile_size, const std::string& uid_root) {
        ConversionConfig c;
        c.tile_size = tile_size;
        c.uid_root = uid_root;
        validate(c);
        std::vector<Bytes> out;
        {
          py::gil_scoped_release nogil;
          out = encode_slide(view(spyr), slide_id, c);
        }
        py::list result;
        for (const auto& b : out) result.append(to_py(b));
        return result;
      },
      py::arg("spyr"), py::arg("slide_id"), py::arg("tile_size") = 0,
      py::arg("uid_root") = std::string(kDefaultUidRoot),
      "One DICOM Part 10 instance per pyramid level.");

  m.def(
      "convert_to_store",
      [](const std::string& path, const std::string& dicom_root, std::string slide_id) {
        if (slide_id.empty()) slide_id = slide_id_from_key(path);
        py::gil_scoped_release nogil;
        SystemClock clock;
        DicomStore store(dicom_root, clock);
        return convert_and_store(read_file(path), slide_id, store, ConversionConfig{});
      },
      py::arg("path"), py::arg("dicom_root"), py::arg("slide_id") = "");

  m.def(
      "decode_instance", [](const py::bytes& data) { return instance_dict(decode_instance(view(data))); },
      py::arg("data"));

  m.def("checkpoints_for", &checkpoints_for, py::arg("batch"));

  m.def(
      "bench",
      [](const std::vector<std::string>& workflows, std::size_t batch, std::uint32_t width, const std::string& mode,
         double work_cost, double cold_start, double idle_timeout, std::uint32_t max_instances,
         std::uint32_t min_instances, std::uint32_t workers, double fault_rate, const std::string& out) {
        BenchConfig c;
        c.batch = batch;
        c.width = width;
        c.mode = parse_work_mode(mode);
        c.work_cost = from_seconds(work_cost);
        c.scaler.cold_start = from_seconds(cold_start);
        c.scaler.idle_timeout = from_seconds(idle_timeout);
        c.scaler.max_instances = max_instances;
        c.scaler.min_instances = min_instances;
        c.workers = workers;
        c.fault_rate = fault_rate;
        c.out_dir = out;
        validate(c);
        std::vector<WorkflowReport> reports;
        {
          py::gil_scoped_release nogil;
          const auto files = prepare_batch(c);
          for (const auto& w : workflows) reports.push_back(run_workflow(parse_workflow(w), c, files));
          std::ostringstream table;
          emit_report(reports, out, table);
        }
        py::list result;
        for (const auto& r : reports) result.append(report_dict(r));
        return result;
      },
      py::arg("workflows") = std::vector<std::string>{"serial", "parallel", "event"}, py::arg("batch") = 50,
      py::arg("width") = 256, py::arg("mode") = "simwork", py::arg("work_cost") = 10.0,
      py::arg("cold_start") = 2.0, py::arg("idle_timeout") = 60.0, py::arg("max_instances") = 16,
      py::arg("min_instances") = 0, py::arg("workers") = 4, py::arg("fault_rate") = 0.0, py::arg("out") = "out",
      "Runs the workflows and writes timings.csv, instances.csv and report.txt into `out`.");
}
