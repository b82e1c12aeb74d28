#pragma once

// Complex linear algebra over composite labeled Hilbert spaces.
//
// Basis ordering is row-major over subsystems: the LAST subsystem varies
// fastest. For the standard two-node space that means the index of
// |atom1, atomb, atom2, atoma, cav1, cav2> is
//   ((((i1*3 + ib)*3 + i2)*3 + ia)*(n+1) + n1)*(n+1) + n2.

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace qlink {

using cplx = std::complex<double>;
using Vector = Eigen::VectorXcd;
using DenseMatrix = Eigen::MatrixXcd;
using SparseMatrix = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

inline constexpr cplx kI{0.0, 1.0};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Subsystem {
  std::string label;
  std::vector<std::string> levels;  // level names; size() is the dimension

  [[nodiscard]] std::size_t dim() const { return levels.size(); }
};

class HilbertSpace {
 public:
  explicit HilbertSpace(std::vector<Subsystem> subsystems);

  [[nodiscard]] std::size_t total_dim() const { return total_dim_; }
  [[nodiscard]] std::size_t num_subsystems() const { return subsystems_.size(); }
  [[nodiscard]] const Subsystem& subsystem(std::size_t k) const { return subsystems_.at(k); }
  [[nodiscard]] const std::vector<Subsystem>& subsystems() const { return subsystems_; }

  [[nodiscard]] std::optional<std::size_t> find(std::string_view label) const;
  /// Throws LabelError for unknown labels.
  [[nodiscard]] std::size_t position(std::string_view label) const;
  [[nodiscard]] bool contains(std::string_view label) const { return find(label).has_value(); }
  [[nodiscard]] std::size_t level_index(std::string_view label, std::string_view level) const;

  [[nodiscard]] std::size_t stride(std::size_t k) const { return strides_[k]; }
  [[nodiscard]] std::size_t digit(std::size_t index, std::size_t k) const {
    return (index / strides_[k]) % subsystems_[k].dim();
  }
  [[nodiscard]] std::vector<std::size_t> digits(std::size_t index) const;
  [[nodiscard]] std::size_t index(std::span<const std::size_t> digits) const;

  /// Comma separated level names, e.g. "g,e,R,R,0,0".
  [[nodiscard]] std::string basis_label(std::size_t index) const;

  friend bool operator==(const HilbertSpace& a, const HilbertSpace& b);

 private:
  std::vector<Subsystem> subsystems_;
  std::vector<std::size_t> strides_;
  std::size_t total_dim_ = 1;
};

using SpacePtr = std::shared_ptr<const HilbertSpace>;

SpacePtr make_space(std::vector<Subsystem> subsystems);

/// True when both pointers denote equal spaces (identity or structural).
bool same_space(const SpacePtr& a, const SpacePtr& b);

class StateVector {
 public:
  StateVector() = default;
  StateVector(SpacePtr space, Vector amplitudes, bool is_normalized = false);

  static StateVector zero(SpacePtr space);
  /// Product basis state; `levels` maps label -> level name, unlisted
  /// subsystems take their first level.
  static StateVector basis(SpacePtr space, const std::map<std::string, std::string>& levels);

  [[nodiscard]] const SpacePtr& space() const { return space_; }
  [[nodiscard]] const Vector& amplitudes() const { return amplitudes_; }
  [[nodiscard]] Vector& amplitudes() {
    is_normalized_ = false;
    return amplitudes_;
  }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(amplitudes_.size()); }
  [[nodiscard]] bool is_normalized() const { return is_normalized_; }

  [[nodiscard]] double norm2() const { return amplitudes_.squaredNorm(); }
  [[nodiscard]] double norm() const { return amplitudes_.norm(); }
  /// Throws std::domain_error on zero norm.
  [[nodiscard]] StateVector normalized() const;
  void normalize();

  StateVector& operator+=(const StateVector& other);
  StateVector& operator*=(cplx s);

  /// CSV with header basis_index,basis_label,re,im.
  void write_csv(std::ostream& os) const;

 private:
  SpacePtr space_;
  Vector amplitudes_;
  bool is_normalized_ = false;
};

StateVector operator+(StateVector a, const StateVector& b);
StateVector operator*(cplx s, StateVector a);

class LinearOperator {
 public:
  LinearOperator() = default;
  LinearOperator(SpacePtr space, SparseMatrix matrix, bool hermitian_hint = false);

  static LinearOperator identity(SpacePtr space);
  static LinearOperator zero(SpacePtr space);
  /// Builds a sparse operator from a dense matrix, dropping exact zeros.
  static LinearOperator from_dense(SpacePtr space, const DenseMatrix& m, bool hermitian_hint = false);

  [[nodiscard]] const SpacePtr& space() const { return space_; }
  [[nodiscard]] const SparseMatrix& matrix() const { return matrix_; }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(matrix_.rows()); }
  [[nodiscard]] bool hermitian_hint() const { return hermitian_hint_; }
  [[nodiscard]] DenseMatrix dense() const { return DenseMatrix(matrix_); }

  [[nodiscard]] LinearOperator adjoint() const;
  LinearOperator& operator+=(const LinearOperator& other);
  LinearOperator& operator*=(cplx s);

 private:
  SpacePtr space_;
  SparseMatrix matrix_;
  bool hermitian_hint_ = false;
};

LinearOperator operator+(LinearOperator a, const LinearOperator& b);
LinearOperator operator-(LinearOperator a, const LinearOperator& b);
LinearOperator operator*(cplx s, LinearOperator a);
LinearOperator operator*(const LinearOperator& a, const LinearOperator& b);

/// op_local (on a space whose labels are a subset of `target`) tensored with
/// the identity on the remaining factors, in target's subsystem ordering.
LinearOperator embed(const LinearOperator& op_local, const SpacePtr& target);

/// op * psi, unnormalized.
StateVector apply(const LinearOperator& op, const StateVector& psi);

/// <phi|psi>, conjugate-linear in phi.
cplx inner(const StateVector& phi, const StateVector& psi);

/// <psi|op|psi>
cplx expectation(const LinearOperator& op, const StateVector& psi);

/// |<target|psi>|^2 / (|psi|^2 |target|^2).
double overlap(const StateVector& target, const StateVector& psi);

/// Largest absolute entry of a - b.
double max_abs_diff(const LinearOperator& a, const LinearOperator& b);

/// Reduced density matrix of one subsystem of the normalized state psi/|psi|.
DenseMatrix reduced_density(const StateVector& psi, const std::string& label);

/// The pure state of `label` if psi factorizes as (rest) x phi up to
/// 1 - Tr rho^2 <= tol; phi is fixed up to a global phase.
std::optional<Vector> pure_factor(const StateVector& psi, const std::string& label, double tol = 1e-10);

/// <target|rho|target> for the reduced state of `label`; target normalized
/// internally.
double subsystem_fidelity(const StateVector& psi, const std::string& label, const Vector& target);

struct MeasurementResult {
  std::size_t outcome = 0;
  StateVector collapsed;
  double probability = 0.0;
};

struct MeasurementBranch {
  double probability = 0.0;
  StateVector collapsed;  // normalized; empty amplitudes when probability == 0
};

/// A complete set of orthogonal projectors, validated once on construction.
class ProjectiveMeasurement {
 public:
  ProjectiveMeasurement(std::vector<LinearOperator> projectors, double tol = 1e-10);

  [[nodiscard]] std::size_t size() const { return projectors_.size(); }
  [[nodiscard]] const LinearOperator& projector(std::size_t k) const { return projectors_.at(k); }

  /// Outcome chosen by cumulative probabilities against u in [0,1).
  [[nodiscard]] MeasurementResult measure(const StateVector& psi, double u) const;
  /// Every outcome with its probability and collapsed state.
  [[nodiscard]] std::vector<MeasurementBranch> branches(const StateVector& psi) const;

 private:
  std::vector<LinearOperator> projectors_;
};

MeasurementResult measure_projective(const StateVector& psi,
                                     const std::vector<LinearOperator>& projectors,
                                     double u);

// ---- local operator builders -------------------------------------------

/// Single-subsystem space with the given label and level names.
SpacePtr local_space(const std::string& label, std::vector<std::string> levels);
/// Multi-subsystem local space built from subsystems of `parent`.
SpacePtr local_space(const SpacePtr& parent, const std::vector<std::string>& labels);

/// |to><from| on a single subsystem of `space`, embedded.
LinearOperator transition(const SpacePtr& space, const std::string& label,
                          const std::string& to, const std::string& from);
/// |level><level| on one subsystem, embedded.
LinearOperator projector(const SpacePtr& space, const std::string& label, const std::string& level);
/// Annihilation operator on a photon-number subsystem, embedded.
LinearOperator annihilation(const SpacePtr& space, const std::string& label);
/// Number operator on a photon-number subsystem, embedded.
LinearOperator number(const SpacePtr& space, const std::string& label);
/// Dense matrix on one subsystem, embedded.
LinearOperator local_operator(const SpacePtr& space, const std::string& label, const DenseMatrix& m);

}  // namespace qlink
