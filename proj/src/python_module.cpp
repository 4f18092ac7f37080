#include <pybind11/pybind11.h>
#include <pybind11/operators.h>
#include <pybind11/stl.h>

#include "elastic_group/bench.hpp"
#include "elastic_group/collectives.hpp"
#include "elastic_group/digest.hpp"
#include "elastic_group/errors.hpp"
#include "elastic_group/group.hpp"
#include "elastic_group/scaling.hpp"

namespace py = pybind11;

namespace {

eg::Bytes as_bytes(const py::bytes& b) {
  std::string s = b;
  return eg::Bytes(s.begin(), s.end());
}

py::bytes to_py(const eg::Bytes& b) { return py::bytes(reinterpret_cast<const char*>(b.data()), b.size()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Elastic process groups: scaling decisions, split ordering and the benchmark harness";
  m.attr("__version__") = "0.1.0";

  static py::exception<eg::Error> error(m, "Error");
  static py::exception<eg::ArgumentError> argument_error(m, "ArgumentError", error.ptr());
  static py::exception<eg::ConfigError> config_error(m, "ConfigError", error.ptr());
  static py::exception<eg::IoError> io_error(m, "IoError", error.ptr());
  static py::exception<eg::SpawnError> spawn_error(m, "SpawnError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const eg::ArgumentError& e) {
      py::set_error(argument_error, e.what());
    } catch (const eg::ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const eg::IoError& e) {
      py::set_error(io_error, e.what());
    } catch (const eg::SpawnError& e) {
      py::set_error(spawn_error, e.what());
    } catch (const eg::Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.attr("HOST_BLOCK_WIDTH") = eg::HostOccupancy::kWidth;
  m.def("validate_host_label", [](const std::string& label) { eg::validate_host_label(label); }, py::arg("label"));
  m.def("host_block", [](const std::string& label) { return to_py(eg::host_block(label)); }, py::arg("label"));
  m.def("sentinel_block", [] { return to_py(eg::sentinel_block()); });
  m.def(
      "host_can_terminate",
      [](const py::bytes& blocks, const std::string& my_host) {
        return eg::host_can_terminate(eg::HostOccupancy{as_bytes(blocks)}, my_host);
      },
      py::arg("occupancy"), py::arg("my_host"),
      "True iff no non-sentinel 64-byte block equals the zero-padded host label.");
  m.def(
      "split_ranks",
      [](const std::vector<std::pair<int, int>>& color_key) {
        std::vector<eg::SplitKey> keys;
        for (auto [c, k] : color_key) keys.push_back(eg::SplitKey{c, k});
        return eg::split_ranks(keys);
      },
      py::arg("color_key"), "New rank of each old rank for (color, key) pairs.");
  m.def("sha256_hex", [](const py::bytes& data) { return eg::sha256_hex(as_bytes(data)); }, py::arg("data"));

  py::enum_<eg::Scenario>(m, "Scenario")
      .value("scale_out", eg::Scenario::scale_out)
      .value("scale_in", eg::Scenario::scale_in);

  py::class_<eg::BenchRecord>(m, "BenchRecord")
      .def(py::init<>())
      .def(py::init([](eg::Scenario s, int initial, int delta, int trial, double total, double spawn, double other,
                       int hosts) { return eg::BenchRecord{s, initial, delta, trial, total, spawn, other, hosts}; }),
           py::arg("scenario"), py::arg("initial"), py::arg("delta"), py::arg("trial"), py::arg("total_seconds"),
           py::arg("spawn_seconds"), py::arg("other_seconds"), py::arg("hosts_used"))
      .def_readwrite("scenario", &eg::BenchRecord::scenario)
      .def_readwrite("initial", &eg::BenchRecord::initial)
      .def_readwrite("delta", &eg::BenchRecord::delta)
      .def_readwrite("trial", &eg::BenchRecord::trial)
      .def_readwrite("total_seconds", &eg::BenchRecord::total_seconds)
      .def_readwrite("spawn_seconds", &eg::BenchRecord::spawn_seconds)
      .def_readwrite("other_seconds", &eg::BenchRecord::other_seconds)
      .def_readwrite("hosts_used", &eg::BenchRecord::hosts_used)
      .def_property_readonly("failed", &eg::BenchRecord::failed)
      .def(py::self == py::self)
      .def("__repr__", [](const eg::BenchRecord& r) {
        return "BenchRecord(" + std::string(eg::scenario_name(r.scenario)) + ", delta=" + std::to_string(r.delta) +
               ", trial=" + std::to_string(r.trial) + ", total=" + std::to_string(r.total_seconds) + ")";
      });

  py::class_<eg::BenchConfig>(m, "BenchConfig")
      .def(py::init<>())
      .def_readwrite("initial", &eg::BenchConfig::initial)
      .def_readwrite("deltas", &eg::BenchConfig::deltas)
      .def_readwrite("trials", &eg::BenchConfig::trials)
      .def_readwrite("slots_per_host", &eg::BenchConfig::slots_per_host)
      .def_readwrite("child_program", &eg::BenchConfig::child_program)
      .def_readwrite("output_path", &eg::BenchConfig::output_path)
      .def("validate", &eg::BenchConfig::validate, py::arg("scenario"));

  py::class_<eg::DeltaSummary>(m, "DeltaSummary")
      .def_readonly("scenario", &eg::DeltaSummary::scenario)
      .def_readonly("delta", &eg::DeltaSummary::delta)
      .def_readonly("completed", &eg::DeltaSummary::completed)
      .def_readonly("failed", &eg::DeltaSummary::failed)
      .def_readonly("mean_total", &eg::DeltaSummary::mean_total)
      .def_readonly("mean_spawn", &eg::DeltaSummary::mean_spawn)
      .def_readonly("mean_other", &eg::DeltaSummary::mean_other)
      .def_readonly("hosts_used", &eg::DeltaSummary::hosts_used);

  m.def("run_scale_out_bench", &eg::run_scale_out_bench, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_scale_in_bench", &eg::run_scale_in_bench, py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def("format_csv", &eg::format_csv, py::arg("records"));
  m.def("parse_csv", &eg::parse_csv, py::arg("text"));
  m.def("emit_csv", &eg::emit_csv, py::arg("records"), py::arg("path"));
  m.def("read_csv", &eg::read_csv, py::arg("path"));
  m.def("summarize", &eg::summarize, py::arg("records"));
  m.def("packed_host_label", &eg::packed_host_label, py::arg("index"), py::arg("slots_per_host"));
  m.def("hosts_needed", &eg::hosts_needed, py::arg("members"), py::arg("slots_per_host"));
}
