#include "nmtlab/structure.hpp"

#include "nmtlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nmtlab {

RigConfig default_rig_config() {
  RigConfig c;
  c.length = 0.71;
  c.n_elements = 14;
  c.youngs_modulus = 210e9;
  c.density = 7850.0;
  // Chosen so the contact-free first bending mode sits at 67.4 Hz.
  c.thickness = 0.040665;
  c.height = 0.06;
  // Iwan-type contact at node 5 (x = 0.254 m): parallel Jenkins elements
  // sharing a total stiffness tuned for a stuck first mode of 111.3 Hz, with
  // slip displacements graded geometrically from 0.4 to 5 micrometres.
  const int n_sliders = 8;
  const double kt_total = 7.734e7;
  const double mu = 0.6;
  for (int i = 0; i < n_sliders; ++i) {
    const double slip = 4e-7 * std::pow(5e-6 / 4e-7, static_cast<double>(i) / (n_sliders - 1));
    const double kt = kt_total / n_sliders;
    c.contacts.push_back(ContactConfig{5, kt, kt * slip / mu, mu});
  }
  c.sensor_nodes = {2, 4, 6, 8, 10, 12, 14};
  c.drive_node = 14;
  c.modal_damping = {0.0012, 0.0041, 0.0046};
  c.n_modes = 3;
  return c;
}

JenkinsResponse jenkins_update(const JenkinsElement& elem, double u_new) {
  const double trial = elem.kt * (u_new - elem.slider);
  if (std::abs(trial) <= elem.fc) return {trial, elem.slider, true};
  const double s = trial > 0.0 ? 1.0 : -1.0;
  return {s * elem.fc, u_new - s * elem.fc / elem.kt, false};
}

int StructuralModel::drive_sensor() const {
  auto it = std::find(sensor_dofs.begin(), sensor_dofs.end(), drive_dof);
  return it == sensor_dofs.end() ? -1 : static_cast<int>(it - sensor_dofs.begin());
}

void StructuralModel::validate() const {
  auto bad = [](const std::string& m) { throw ModelError(m); };
  if (n_dof <= 0) bad("model has no DOFs");
  if (mass.rows() != n_dof || mass.cols() != n_dof) bad("mass matrix size mismatch");
  if (stiffness.rows() != n_dof || stiffness.cols() != n_dof) bad("stiffness size mismatch");
  if (damping.rows() != n_dof || damping.cols() != n_dof) bad("damping size mismatch");
  if (!mass.isApprox(mass.transpose(), 1e-12)) bad("mass matrix not symmetric");
  if (!stiffness.isApprox(stiffness.transpose(), 1e-12)) bad("stiffness matrix not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(mass);
  if (llt.info() != Eigen::Success) bad("mass matrix not positive definite");
  auto in_range = [&](int d) { return d >= 0 && d < n_dof; };
  for (int d : sensor_dofs)
    if (!in_range(d)) bad("sensor DOF out of range");
  if (!in_range(drive_dof)) bad("drive DOF out of range");
  for (const auto& e : friction) {
    if (!in_range(e.dof)) bad("friction DOF out of range");
    if (!(e.kt > 0.0) || !(e.fc > 0.0)) bad("friction element needs kt > 0 and fc > 0");
  }
}

const char* to_string(ContactCondition c) {
  return c == ContactCondition::stuck ? "stuck" : "free";
}

int translational_dof(int node) { return 2 * (node - 1); }

namespace {

void check_config(const RigConfig& c) {
  auto bad = [](const std::string& m) { throw ModelError(m); };
  if (!(c.length > 0.0)) bad("beam length must be positive");
  if (c.n_elements < 8) bad("at least 8 beam elements required");
  if (!(c.youngs_modulus > 0.0) || !(c.density > 0.0)) bad("material constants must be positive");
  if (!(c.height > 0.0)) bad("section height must be positive");
  if (c.element_thickness.empty()) {
    if (!(c.thickness > 0.0)) bad("section thickness must be positive");
  } else {
    if (static_cast<int>(c.element_thickness.size()) != c.n_elements)
      bad("element_thickness must list one value per element");
    for (double t : c.element_thickness)
      if (!(t > 0.0)) bad("section thickness must be positive");
  }
  auto free_node = [&](int n) { return n >= 1 && n <= c.n_elements; };
  for (const auto& k : c.contacts) {
    if (!free_node(k.node)) {
      std::ostringstream os;
      os << "contact node " << k.node << " is not a free beam node (1.." << c.n_elements << ")";
      bad(os.str());
    }
    if (!(k.kt > 0.0) || !(k.preload > 0.0) || !(k.mu > 0.0))
      bad("contact kt, preload and mu must be positive");
  }
  if (c.sensor_nodes.empty()) bad("at least one sensor required");
  std::vector<int> s = c.sensor_nodes;
  for (int n : s)
    if (!free_node(n)) bad("sensor node outside beam");
  std::sort(s.begin(), s.end());
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] - s[i - 1] < 2) bad("sensors must be at least 2 elements apart");
  if (!free_node(c.drive_node)) bad("drive node outside beam");
  for (double z : c.modal_damping)
    if (!(z >= 0.0)) bad("modal damping ratios must be non-negative");
  if (c.n_modes < 1) bad("n_modes must be >= 1");
}

}  // namespace

StructuralModel build_beam_model(const RigConfig& config) {
  check_config(config);
  const int ne = config.n_elements;
  const int n = 2 * ne;  // root node clamped
  const double le = config.length / ne;

  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (int e = 0; e < ne; ++e) {
    const double t = config.element_thickness.empty() ? config.thickness
                                                      : config.element_thickness[e];
    const double area = t * config.height;
    const double inertia = config.height * t * t * t / 12.0;
    const double ei = config.youngs_modulus * inertia;
    const double l = le, l2 = le * le;

    Eigen::Matrix4d ke;
    ke << 12, 6 * l, -12, 6 * l,
          6 * l, 4 * l2, -6 * l, 2 * l2,
          -12, -6 * l, 12, -6 * l,
          6 * l, 2 * l2, -6 * l, 4 * l2;
    ke *= ei / (l2 * l);
    Eigen::Matrix4d me;
    me << 156, 22 * l, 54, -13 * l,
          22 * l, 4 * l2, 13 * l, -3 * l2,
          54, 13 * l, 156, -22 * l,
          -13 * l, -3 * l2, -22 * l, 4 * l2;
    me *= config.density * area * l / 420.0;

    // Element DOFs in global numbering; -1 marks the clamped root.
    const int first = 2 * (e - 1);
    const int map[4] = {e == 0 ? -1 : first, e == 0 ? -1 : first + 1, first + 2, first + 3};
    for (int i = 0; i < 4; ++i) {
      if (map[i] < 0) continue;
      for (int j = 0; j < 4; ++j) {
        if (map[j] < 0) continue;
        K(map[i], map[j]) += ke(i, j);
        M(map[i], map[j]) += me(i, j);
      }
    }
  }

  StructuralModel model;
  model.n_dof = n;
  model.mass = M;
  model.stiffness = K;
  model.damping = Eigen::MatrixXd::Zero(n, n);
  for (const auto& c : config.contacts)
    model.friction.push_back({translational_dof(c.node), c.kt, c.mu * c.preload, 0.0});
  for (int s : config.sensor_nodes) model.sensor_dofs.push_back(translational_dof(s));
  model.drive_dof = translational_dof(config.drive_node);
  for (int i = 1; i <= ne; ++i) model.node_positions.push_back(i * le);
  model.validate();

  // Modal viscous damping: C = M Phi diag(2 zeta w) Phi^T M over the stuck modes
  // that carry a prescribed ratio.
  const int nd = static_cast<int>(config.modal_damping.size());
  if (nd > 0) {
    if (nd > n) throw ModelError("more damping ratios than DOFs");
    LinearModeSet stuck = linear_modes(model, ContactCondition::stuck, nd);
    Eigen::VectorXd c(nd);
    for (int i = 0; i < nd; ++i) c(i) = 2.0 * config.modal_damping[i] * stuck.frequencies(i);
    const Eigen::MatrixXd mp = M * stuck.full_shapes;
    model.damping = mp * c.asDiagonal() * mp.transpose();
    model.damping = 0.5 * (model.damping + model.damping.transpose());
  }
  return model;
}

Eigen::MatrixXd linearized_stiffness(const StructuralModel& model, ContactCondition contact) {
  Eigen::MatrixXd k = model.stiffness;
  if (contact == ContactCondition::stuck)
    for (const auto& e : model.friction) k(e.dof, e.dof) += e.kt;
  return k;
}

LinearModeSet linear_modes(const StructuralModel& model, ContactCondition contact,
                           int n_modes) {
  if (n_modes < 1 || n_modes > model.n_dof) throw ConfigError("invalid mode count");
  const Eigen::MatrixXd k = linearized_stiffness(model, contact);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(k, model.mass);
  if (es.info() != Eigen::Success)
    throw ModelError("generalized eigenproblem failed (mass matrix not SPD?)");

  LinearModeSet set;
  set.condition = contact;
  set.frequencies.resize(n_modes);
  set.damping_ratios.resize(n_modes);
  set.full_shapes.resize(model.n_dof, n_modes);
  set.shapes.resize(static_cast<Eigen::Index>(model.sensor_dofs.size()), n_modes);
  for (int j = 0; j < n_modes; ++j) {
    const double lambda = es.eigenvalues()(j);
    if (!(lambda > 0.0)) throw ModelError("non-positive eigenvalue; structure not restrained");
    Eigen::VectorXd phi = es.eigenvectors().col(j);
    phi /= std::sqrt(phi.dot(model.mass * phi));
    // Largest-magnitude sensor entry positive.
    int imax = 0;
    for (int s = 0; s < static_cast<int>(model.sensor_dofs.size()); ++s)
      if (std::abs(phi(model.sensor_dofs[s])) > std::abs(phi(model.sensor_dofs[imax]))) imax = s;
    if (!model.sensor_dofs.empty() && phi(model.sensor_dofs[imax]) < 0.0) phi = -phi;

    set.frequencies(j) = std::sqrt(lambda);
    set.full_shapes.col(j) = phi;
    set.damping_ratios(j) = phi.dot(model.damping * phi) / (2.0 * set.frequencies(j));
    for (int s = 0; s < static_cast<int>(model.sensor_dofs.size()); ++s)
      set.shapes(s, j) = phi(model.sensor_dofs[s]);
  }
  for (int j = 1; j < n_modes; ++j)
    if (!(set.frequencies(j) > set.frequencies(j - 1)))
      throw ModelError("repeated eigenfrequencies");
  return set;
}

StructuralModel stuck_linear_model(const StructuralModel& model) {
  StructuralModel lin = model;
  lin.stiffness = linearized_stiffness(model, ContactCondition::stuck);
  lin.friction.clear();
  return lin;
}

}  // namespace nmtlab
