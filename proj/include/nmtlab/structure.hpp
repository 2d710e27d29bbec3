#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace nmtlab {

// One friction contact of the rig: a Jenkins element between a beam node's
// translational DOF and ground. The slip limit is mu * preload.
struct ContactConfig {
  int node = 5;
  double kt = 0.0;        // tangential stiffness, N/m
  double preload = 0.0;   // normal load, N
  double mu = 0.0;        // friction coefficient
};

// Geometry, material and instrumentation of the virtual cantilever rig.
// Nodes are numbered 0 (clamped root) to n_elements (tip).
struct RigConfig {
  double length = 0.71;
  int n_elements = 14;
  double youngs_modulus = 210e9;
  double density = 7850.0;
  // Cross-section: `thickness` is the dimension along the bending direction.
  double thickness = 0.0;
  double height = 0.06;
  // Optional per-element thickness; empty means uniform `thickness`.
  std::vector<double> element_thickness;
  std::vector<ContactConfig> contacts;
  std::vector<int> sensor_nodes;
  int drive_node = 14;
  // Modal damping ratios of the stuck-linear system; higher modes undamped.
  std::vector<double> modal_damping;
  // Number of linear modes kept in a LinearModeSet.
  int n_modes = 3;
};

// Factory for the tuned default rig.
RigConfig default_rig_config();

struct JenkinsElement {
  int dof = 0;
  double kt = 0.0;
  double fc = 0.0;
  double slider = 0.0;  // slider displacement w, m
};

struct JenkinsResponse {
  double force = 0.0;
  double slider = 0.0;
  bool sticking = true;
};

// Elastic predictor / Coulomb return mapping. Total function; `elem` is not
// modified, the updated slider position is returned.
JenkinsResponse jenkins_update(const JenkinsElement& elem, double u_new);

// Mass, stiffness and viscous damping of the linear part plus the friction
// elements acting on it. Immutable once built; simulations copy the friction
// states they need.
struct StructuralModel {
  int n_dof = 0;
  Eigen::MatrixXd mass;
  Eigen::MatrixXd stiffness;
  Eigen::MatrixXd damping;
  std::vector<JenkinsElement> friction;
  std::vector<int> sensor_dofs;
  int drive_dof = 0;
  // Position along the beam of each free node (1..n_elements), m.
  std::vector<double> node_positions;

  int drive_sensor() const;  // index of drive_dof in sensor_dofs, -1 if absent
  void validate() const;
};

enum class ContactCondition { stuck, free };

const char* to_string(ContactCondition c);

struct LinearModeSet {
  ContactCondition condition = ContactCondition::stuck;
  Eigen::VectorXd frequencies;     // rad/s, ascending
  Eigen::VectorXd damping_ratios;
  Eigen::MatrixXd shapes;          // sensor rows x mode columns, mass-normalized
  Eigen::MatrixXd full_shapes;     // n_dof x modes
};

// Translational DOF index of a free node (node >= 1).
int translational_dof(int node);

StructuralModel build_beam_model(const RigConfig& config);

// Linear part of the model with friction elements replaced by springs kt
// (stuck) or removed (free).
Eigen::MatrixXd linearized_stiffness(const StructuralModel& model,
                                     ContactCondition contact);

LinearModeSet linear_modes(const StructuralModel& model, ContactCondition contact,
                           int n_modes = 3);

// A copy of the model in which friction elements are replaced by linear
// springs to ground with the same kt.
StructuralModel stuck_linear_model(const StructuralModel& model);

}  // namespace nmtlab
