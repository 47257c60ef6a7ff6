#include <optional>
#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "uwvo/config.hpp"
#include "uwvo/error.hpp"
#include "uwvo/evaluation.hpp"
#include "uwvo/geometry.hpp"
#include "uwvo/p3p.hpp"
#include "uwvo/pipeline.hpp"
#include "uwvo/synthetic.hpp"
#include "uwvo/trackereval.hpp"

namespace py = pybind11;
using namespace uwvo;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using IdVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

GrayImage to_image(const U8Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D uint8 array");
  GrayImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

U8Array to_array(const GrayImage& img) {
  U8Array out({img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Quat quat_xyzw(const Eigen::Vector4d& v) { return Quat(v(3), v(0), v(1), v(2)).normalized(); }
Eigen::Vector4d xyzw(const Quat& q) { return {q.x(), q.y(), q.z(), q.w()}; }

// N x 8 rows of `t x y z qx qy qz qw`.
Eigen::MatrixXd trajectory_array(const Trajectory& t) {
  Eigen::MatrixXd m(t.samples.size(), 8);
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    const auto& s = t.samples[i];
    m.row(i) << s.timestamp, s.position.transpose(), xyzw(s.orientation).transpose();
  }
  return m;
}

Trajectory trajectory_from(const Eigen::MatrixXd& m) {
  if (m.cols() != 8) throw py::value_error("trajectory arrays have 8 columns");
  Trajectory t;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    TrajectorySample s;
    s.timestamp = m(i, 0);
    s.position = m.row(i).segment<3>(1).transpose();
    s.orientation = quat_xyzw(m.row(i).segment<4>(4).transpose());
    t.samples.push_back(s);
  }
  t.validate();
  return t;
}

std::vector<FeatureObservation> observations_from(const IdVector& ids,
                                                  const Eigen::MatrixX2d& pixels) {
  if (ids.size() != pixels.rows()) throw py::value_error("ids and pixels differ in length");
  std::vector<FeatureObservation> out(ids.size());
  for (Eigen::Index i = 0; i < ids.size(); ++i) out[i] = {ids(i), pixels.row(i).transpose()};
  return out;
}

VoConfig config_from(const py::dict& values) {
  VoConfig c;
  for (const auto& [k, v] : values) {
    set_config_value(c, py::str(k), py::str(v));
  }
  c.validate();
  return c;
}

py::dict config_dict(const VoConfig& c) {
  py::dict d;
  for (const auto& [k, v] : config_entries(c)) d[py::str(k)] = v;
  return d;
}

}  // namespace

PYBIND11_MODULE(_uwvo, m) {
  m.doc() = "Monocular keyframe visual odometry";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::exception<Error>(m, "Error", PyExc_RuntimeError); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error_type.get_stored(),
                    (std::string(to_string(e.code())) + ": " + e.what()).c_str());
    }
  });

  // geometry ----------------------------------------------------------------
  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init([](const Eigen::Vector4d& q, const Vec3& t) { return Pose(quat_xyzw(q), t); }),
           py::arg("quat_xyzw"), py::arg("translation"))
      .def_static("from_camera_in_world",
                  [](const Eigen::Vector4d& q, const Vec3& c) {
                    return Pose::from_camera_in_world(quat_xyzw(q), c);
                  },
                  py::arg("quat_xyzw"), py::arg("center"))
      .def_property_readonly("rotation", [](const Pose& p) { return xyzw(p.rotation()); })
      .def_property_readonly("rotation_matrix", &Pose::rotation_matrix)
      .def_property_readonly("translation", &Pose::translation)
      .def_property_readonly("center", &Pose::center)
      .def("matrix", &Pose::matrix)
      .def("transform", &Pose::transform)
      .def("inverse", [](const Pose& p) { return inverse(p); })
      .def("__mul__", [](const Pose& a, const Pose& b) { return compose(a, b); })
      .def("__repr__", [](const Pose& p) {
        std::ostringstream s;
        s << "Pose(t=[" << p.translation().transpose() << "], q=[" << xyzw(p.rotation()).transpose()
          << "])";
        return s.str();
      });

  py::class_<CameraModel>(m, "CameraModel")
      .def(py::init([](double fx, double fy, double cx, double cy, int width, int height,
                       double k1, double k2, double p1, double p2) {
             CameraModel c{fx, fy, cx, cy, k1, k2, p1, p2, width, height};
             c.validate();
             return c;
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"),
           py::arg("height"), py::arg("k1") = 0.0, py::arg("k2") = 0.0, py::arg("p1") = 0.0,
           py::arg("p2") = 0.0)
      .def_readonly("fx", &CameraModel::fx)
      .def_readonly("fy", &CameraModel::fy)
      .def_readonly("cx", &CameraModel::cx)
      .def_readonly("cy", &CameraModel::cy)
      .def_readonly("k1", &CameraModel::k1)
      .def_readonly("k2", &CameraModel::k2)
      .def_readonly("p1", &CameraModel::p1)
      .def_readonly("p2", &CameraModel::p2)
      .def_readonly("width", &CameraModel::width)
      .def_readonly("height", &CameraModel::height)
      .def("distort", &CameraModel::distort)
      .def("undistort", [](const CameraModel& c, const Vec2& px) { return undistort_pixel(c, px); });

  m.def("read_calibration", &read_calibration, py::arg("path"));
  m.def("project", &project, py::arg("pose"), py::arg("camera"), py::arg("point"));
  m.def("triangulate", &triangulate, py::arg("pose_a"), py::arg("pose_b"), py::arg("camera"),
        py::arg("pixel_a"), py::arg("pixel_b"));
  m.def("p3p",
        [](const std::vector<Vec3>& bearings, const std::vector<Vec3>& points) {
          return p3p(bearings, points);
        },
        py::arg("bearings"), py::arg("points"));

  // configuration -------------------------------------------------------------
  m.def("default_config", [] { return config_dict(VoConfig{}); });

  // synthetic -----------------------------------------------------------------
  py::class_<SyntheticScene>(m, "SyntheticScene")
      .def_property_readonly("kind", [](const SyntheticScene& s) { return std::string(to_string(s.kind)); })
      .def_property_readonly("landmarks",
                             [](const SyntheticScene& s) {
                               Eigen::MatrixX3d out(s.landmarks.size(), 3);
                               for (std::size_t i = 0; i < s.landmarks.size(); ++i) out.row(i) = s.landmarks[i];
                               return out;
                             })
      .def_readonly("trajectory", &SyntheticScene::trajectory)
      .def_readonly("timestamps", &SyntheticScene::timestamps)
      .def_readonly("camera", &SyntheticScene::cam)
      .def_readonly("plane_z", &SyntheticScene::plane_z)
      .def_property_readonly("num_frames", &SyntheticScene::num_frames)
      .def("ground_truth", [](const SyntheticScene& s) { return trajectory_array(s.ground_truth()); });

  m.def("generate_scene",
        [](const std::string& kind, int landmarks, int frames, std::uint64_t seed) {
          return generate_scene(parse_scene_kind(kind), landmarks, frames, seed);
        },
        py::arg("kind"), py::arg("landmarks"), py::arg("frames"), py::arg("seed") = 0);

  m.def("observe",
        [](const SyntheticScene& s, int frame, double noise, double dropout, std::uint64_t seed) {
          ObserveOptions o;
          o.pixel_noise_sigma = noise;
          o.dropout = dropout;
          o.seed = seed;
          const auto obs = observe(s, frame, o);
          IdVector ids(obs.size());
          Eigen::MatrixX2d px(obs.size(), 2);
          for (std::size_t i = 0; i < obs.size(); ++i) {
            ids(i) = obs[i].track_id;
            px.row(i) = obs[i].pixel.transpose();
          }
          return py::make_tuple(ids, px);
        },
        py::arg("scene"), py::arg("frame"), py::arg("noise") = 0.0, py::arg("dropout") = 0.0,
        py::arg("seed") = 0);

  m.def("render_plane_sequence",
        [](const SyntheticScene& s, std::uint64_t texture_seed) {
          std::vector<U8Array> out;
          for (const GrayImage& img : render_plane_sequence(s, texture_seed)) out.push_back(to_array(img));
          return out;
        },
        py::arg("scene"), py::arg("texture_seed") = 0);

  // pipeline ------------------------------------------------------------------
  py::class_<FrameResult>(m, "FrameResult")
      .def_property_readonly("status", [](const FrameResult& r) { return std::string(to_string(r.status)); })
      .def_readonly("frame_id", &FrameResult::frame_id)
      .def_readonly("timestamp", &FrameResult::timestamp)
      .def_readonly("pose", &FrameResult::pose)
      .def_readonly("keyframe", &FrameResult::keyframe)
      .def_readonly("tracked", &FrameResult::tracked)
      .def_readonly("mapped", &FrameResult::mapped)
      .def_readonly("inliers", &FrameResult::inliers)
      .def_readonly("recovered", &FrameResult::recovered)
      .def_readonly("message", &FrameResult::message);

  py::class_<Odometry>(m, "Odometry")
      .def(py::init([](const CameraModel& cam, const py::dict& config) {
             return std::make_unique<Odometry>(cam, config_from(config));
           }),
           py::arg("camera"), py::arg("config") = py::dict())
      .def("process_frame",
           [](Odometry& vo, const U8Array& image, double t) { return vo.process_frame(to_image(image), t); },
           py::arg("image"), py::arg("timestamp"))
      .def("process_observations",
           [](Odometry& vo, const IdVector& ids, const Eigen::MatrixX2d& px, double t) {
             return vo.process_observations(observations_from(ids, px), t);
           },
           py::arg("ids"), py::arg("pixels"), py::arg("timestamp"))
      .def("finish", &Odometry::finish)
      .def("reset", &Odometry::reset)
      .def_property_readonly("mode", [](const Odometry& vo) { return std::string(to_string(vo.mode())); })
      .def_property_readonly("num_keyframes", [](const Odometry& vo) { return vo.keyframes().size(); })
      .def_property_readonly("num_landmarks", &Odometry::active_landmarks)
      .def_property_readonly("config", [](const Odometry& vo) { return config_dict(vo.config()); })
      .def("trajectory", [](const Odometry& vo) { return trajectory_array(vo.trajectory()); })
      .def("check_invariants", &Odometry::check_invariants);

  // evaluation ----------------------------------------------------------------
  m.def("read_trajectory",
        [](const std::filesystem::path& p) { return trajectory_array(read_trajectory(p)); },
        py::arg("path"));
  m.def("write_trajectory",
        [](const Eigen::MatrixXd& t, const std::filesystem::path& p) {
          write_trajectory(trajectory_from(t), p);
        },
        py::arg("trajectory"), py::arg("path"));
  m.def("umeyama_align",
        [](const Eigen::MatrixX3d& src, const Eigen::MatrixX3d& dst) {
          std::vector<Vec3> a, b;
          for (Eigen::Index i = 0; i < src.rows(); ++i) a.push_back(src.row(i).transpose());
          for (Eigen::Index i = 0; i < dst.rows(); ++i) b.push_back(dst.row(i).transpose());
          const Similarity s = umeyama_align(a, b);
          return py::make_tuple(s.scale, s.rotation, s.translation);
        },
        py::arg("source"), py::arg("target"));
  m.def("ate_rmse",
        [](const Eigen::MatrixXd& est, const Eigen::MatrixXd& gt, double max_dt) {
          const AteResult r = ate_rmse(trajectory_from(est), trajectory_from(gt), max_dt);
          py::dict d;
          d["rmse"] = r.rmse;
          d["rmse_pct"] = r.rmse_pct;
          d["pairs"] = r.pairs.size();
          d["errors"] = r.errors;
          return d;
        },
        py::arg("estimate"), py::arg("ground_truth"), py::arg("max_dt") = 0.02);
  m.def("final_drift_pct",
        [](const Eigen::MatrixXd& est, const Eigen::MatrixXd& gt, double max_dt) {
          return final_drift_pct(trajectory_from(est), trajectory_from(gt), max_dt);
        },
        py::arg("estimate"), py::arg("ground_truth"), py::arg("max_dt") = 0.02);

  // tracker evaluation ----------------------------------------------------------
  m.def("run_survival",
        [](const std::vector<U8Array>& images, std::optional<CameraModel> cam, int grid_cells,
           double fb_threshold_px) {
          std::vector<GrayImage> imgs;
          for (const auto& a : images) imgs.push_back(to_image(a));
          SurvivalOptions o;
          o.grid_cells = grid_cells;
          o.fb_threshold_px = fb_threshold_px;
          std::vector<std::tuple<int, int, int>> rows;
          for (const SurvivalRow& r : run_survival(imgs, cam, o)) {
            rows.emplace_back(r.image_index, r.detected, r.tracked);
          }
          return rows;
        },
        py::arg("images"), py::arg("camera") = py::none(), py::arg("grid_cells") = 500,
        py::arg("fb_threshold_px") = 2.0);
}
