#include "qlink/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_set>

#include <fmt/format.h>

namespace qlink {

// ---- HilbertSpace --------------------------------------------------------

HilbertSpace::HilbertSpace(std::vector<Subsystem> subsystems) : subsystems_(std::move(subsystems)) {
  if (subsystems_.empty()) {
    throw DimensionError("HilbertSpace needs at least one subsystem");
  }
  std::unordered_set<std::string> seen;
  for (const auto& s : subsystems_) {
    if (s.dim() < 1) {
      throw DimensionError(fmt::format("subsystem '{}' has no levels", s.label));
    }
    if (!seen.insert(s.label).second) {
      throw LabelError(fmt::format("duplicate subsystem label '{}'", s.label));
    }
  }
  strides_.assign(subsystems_.size(), 1);
  for (std::size_t k = subsystems_.size(); k-- > 0;) {
    strides_[k] = total_dim_;
    total_dim_ *= subsystems_[k].dim();
  }
}

std::optional<std::size_t> HilbertSpace::find(std::string_view label) const {
  for (std::size_t k = 0; k < subsystems_.size(); ++k) {
    if (subsystems_[k].label == label) return k;
  }
  return std::nullopt;
}

std::size_t HilbertSpace::position(std::string_view label) const {
  if (auto k = find(label)) return *k;
  throw LabelError(fmt::format("unknown subsystem label '{}'", label));
}

std::size_t HilbertSpace::level_index(std::string_view label, std::string_view level) const {
  const auto& levels = subsystems_[position(label)].levels;
  auto it = std::find(levels.begin(), levels.end(), level);
  if (it == levels.end()) {
    throw LabelError(fmt::format("subsystem '{}' has no level '{}'", label, level));
  }
  return static_cast<std::size_t>(it - levels.begin());
}

std::vector<std::size_t> HilbertSpace::digits(std::size_t index) const {
  std::vector<std::size_t> d(subsystems_.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = digit(index, k);
  return d;
}

std::size_t HilbertSpace::index(std::span<const std::size_t> digits) const {
  if (digits.size() != subsystems_.size()) {
    throw DimensionError("digit count does not match subsystem count");
  }
  std::size_t idx = 0;
  for (std::size_t k = 0; k < digits.size(); ++k) {
    if (digits[k] >= subsystems_[k].dim()) throw DimensionError("digit out of range");
    idx += digits[k] * strides_[k];
  }
  return idx;
}

std::string HilbertSpace::basis_label(std::size_t index) const {
  std::string out;
  for (std::size_t k = 0; k < subsystems_.size(); ++k) {
    if (k) out += ',';
    out += subsystems_[k].levels[digit(index, k)];
  }
  return out;
}

bool operator==(const HilbertSpace& a, const HilbertSpace& b) {
  if (a.subsystems_.size() != b.subsystems_.size()) return false;
  for (std::size_t k = 0; k < a.subsystems_.size(); ++k) {
    if (a.subsystems_[k].label != b.subsystems_[k].label ||
        a.subsystems_[k].levels != b.subsystems_[k].levels) {
      return false;
    }
  }
  return true;
}

SpacePtr make_space(std::vector<Subsystem> subsystems) {
  return std::make_shared<const HilbertSpace>(std::move(subsystems));
}

bool same_space(const SpacePtr& a, const SpacePtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return *a == *b;
}

namespace {

void require_same(const SpacePtr& a, const SpacePtr& b, const char* what) {
  if (!same_space(a, b)) {
    throw DimensionError(fmt::format("{}: Hilbert spaces do not match", what));
  }
}

}  // namespace

// ---- StateVector ---------------------------------------------------------

StateVector::StateVector(SpacePtr space, Vector amplitudes, bool is_normalized)
    : space_(std::move(space)), amplitudes_(std::move(amplitudes)), is_normalized_(is_normalized) {
  if (!space_) throw DimensionError("StateVector without a space");
  if (static_cast<std::size_t>(amplitudes_.size()) != space_->total_dim()) {
    throw DimensionError(fmt::format("state has {} amplitudes, space dimension is {}",
                                     amplitudes_.size(), space_->total_dim()));
  }
  if (!amplitudes_.allFinite()) throw std::domain_error("state has non-finite amplitudes");
  if (is_normalized_ && std::abs(amplitudes_.norm() - 1.0) >= 1e-10) {
    throw std::domain_error("state flagged normalized but |psi| != 1");
  }
}

StateVector StateVector::zero(SpacePtr space) {
  const auto n = static_cast<Eigen::Index>(space->total_dim());
  return StateVector(std::move(space), Vector::Zero(n));
}

StateVector StateVector::basis(SpacePtr space, const std::map<std::string, std::string>& levels) {
  std::vector<std::size_t> d(space->num_subsystems(), 0);
  for (const auto& [label, level] : levels) {
    d[space->position(label)] = space->level_index(label, level);
  }
  auto psi = zero(space);
  psi.amplitudes_[static_cast<Eigen::Index>(space->index(d))] = 1.0;
  psi.is_normalized_ = true;
  return psi;
}

StateVector StateVector::normalized() const {
  StateVector out = *this;
  out.normalize();
  return out;
}

void StateVector::normalize() {
  const double n = amplitudes_.norm();
  if (!(n > 0.0)) throw std::domain_error("cannot normalize a zero-norm state");
  amplitudes_ /= n;
  is_normalized_ = true;
}

StateVector& StateVector::operator+=(const StateVector& other) {
  require_same(space_, other.space_, "state addition");
  amplitudes_ += other.amplitudes_;
  is_normalized_ = false;
  return *this;
}

StateVector& StateVector::operator*=(cplx s) {
  amplitudes_ *= s;
  is_normalized_ = is_normalized_ && std::abs(std::abs(s) - 1.0) < 1e-14;
  return *this;
}

StateVector operator+(StateVector a, const StateVector& b) { return a += b; }
StateVector operator*(cplx s, StateVector a) { return a *= s; }

void StateVector::write_csv(std::ostream& os) const {
  os << "basis_index,basis_label,re,im\n";
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto a = amplitudes_[static_cast<Eigen::Index>(i)];
    os << fmt::format("{},\"{}\",{:.17g},{:.17g}\n", i, space_->basis_label(i), a.real(), a.imag());
  }
}

// ---- LinearOperator ------------------------------------------------------

LinearOperator::LinearOperator(SpacePtr space, SparseMatrix matrix, bool hermitian_hint)
    : space_(std::move(space)), matrix_(std::move(matrix)), hermitian_hint_(hermitian_hint) {
  if (!space_) throw DimensionError("LinearOperator without a space");
  const auto n = static_cast<Eigen::Index>(space_->total_dim());
  if (matrix_.rows() != n || matrix_.cols() != n) {
    throw DimensionError(fmt::format("operator is {}x{}, space dimension is {}", matrix_.rows(),
                                     matrix_.cols(), n));
  }
  matrix_.makeCompressed();
  for (Eigen::Index k = 0; k < matrix_.nonZeros(); ++k) {
    const auto v = matrix_.valuePtr()[k];
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
      throw std::domain_error("operator has non-finite entries");
    }
  }
}

LinearOperator LinearOperator::identity(SpacePtr space) {
  const auto n = static_cast<Eigen::Index>(space->total_dim());
  SparseMatrix m(n, n);
  m.setIdentity();
  return LinearOperator(std::move(space), std::move(m), true);
}

LinearOperator LinearOperator::zero(SpacePtr space) {
  const auto n = static_cast<Eigen::Index>(space->total_dim());
  return LinearOperator(std::move(space), SparseMatrix(n, n), true);
}

LinearOperator LinearOperator::from_dense(SpacePtr space, const DenseMatrix& m, bool hermitian_hint) {
  std::vector<Eigen::Triplet<cplx>> trips;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) != cplx{}) trips.emplace_back(r, c, m(r, c));
    }
  }
  SparseMatrix s(m.rows(), m.cols());
  s.setFromTriplets(trips.begin(), trips.end());
  return LinearOperator(std::move(space), std::move(s), hermitian_hint);
}

LinearOperator LinearOperator::adjoint() const {
  SparseMatrix a = matrix_.adjoint();
  return LinearOperator(space_, std::move(a), hermitian_hint_);
}

LinearOperator& LinearOperator::operator+=(const LinearOperator& other) {
  require_same(space_, other.space_, "operator addition");
  matrix_ += other.matrix_;
  hermitian_hint_ = hermitian_hint_ && other.hermitian_hint_;
  return *this;
}

LinearOperator& LinearOperator::operator*=(cplx s) {
  matrix_ *= s;
  hermitian_hint_ = hermitian_hint_ && s.imag() == 0.0;
  return *this;
}

LinearOperator operator+(LinearOperator a, const LinearOperator& b) { return a += b; }
LinearOperator operator-(LinearOperator a, const LinearOperator& b) { return a += cplx{-1.0} * b; }
LinearOperator operator*(cplx s, LinearOperator a) { return a *= s; }

LinearOperator operator*(const LinearOperator& a, const LinearOperator& b) {
  require_same(a.space(), b.space(), "operator product");
  SparseMatrix p = a.matrix() * b.matrix();
  return LinearOperator(a.space(), std::move(p), false);
}

LinearOperator embed(const LinearOperator& op_local, const SpacePtr& target) {
  const HilbertSpace& loc = *op_local.space();
  const std::size_t nloc = loc.num_subsystems();
  std::vector<std::size_t> pos(nloc);
  for (std::size_t k = 0; k < nloc; ++k) {
    const auto& sub = loc.subsystem(k);
    auto p = target->find(sub.label);
    if (!p) throw LabelError(fmt::format("embed: label '{}' not in target space", sub.label));
    if (target->subsystem(*p).dim() != sub.dim()) {
      throw DimensionError(fmt::format("embed: '{}' has dimension {} locally but {} in target",
                                       sub.label, sub.dim(), target->subsystem(*p).dim()));
    }
    pos[k] = *p;
  }

  // Offset in the target index contributed by a local basis index.
  std::vector<std::size_t> local_offset(loc.total_dim());
  for (std::size_t li = 0; li < loc.total_dim(); ++li) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nloc; ++k) off += loc.digit(li, k) * target->stride(pos[k]);
    local_offset[li] = off;
  }

  const SparseMatrix& lm = op_local.matrix();
  const std::size_t n = target->total_dim();
  std::vector<Eigen::Triplet<cplx>> trips;
  trips.reserve(static_cast<std::size_t>(lm.nonZeros()) * (n / loc.total_dim()));
  for (std::size_t row = 0; row < n; ++row) {
    std::size_t lrow = 0;
    for (std::size_t k = 0; k < nloc; ++k) lrow += target->digit(row, pos[k]) * loc.stride(k);
    const std::size_t rest = row - local_offset[lrow];
    for (SparseMatrix::InnerIterator it(lm, static_cast<Eigen::Index>(lrow)); it; ++it) {
      const std::size_t col = rest + local_offset[static_cast<std::size_t>(it.col())];
      trips.emplace_back(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col), it.value());
    }
  }
  SparseMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  m.setFromTriplets(trips.begin(), trips.end());
  return LinearOperator(target, std::move(m), op_local.hermitian_hint());
}

StateVector apply(const LinearOperator& op, const StateVector& psi) {
  require_same(op.space(), psi.space(), "apply");
  Vector out = op.matrix() * psi.amplitudes();
  return StateVector(psi.space(), std::move(out), false);
}

cplx inner(const StateVector& phi, const StateVector& psi) {
  require_same(phi.space(), psi.space(), "inner");
  return phi.amplitudes().dot(psi.amplitudes());
}

cplx expectation(const LinearOperator& op, const StateVector& psi) {
  require_same(op.space(), psi.space(), "expectation");
  return psi.amplitudes().dot(op.matrix() * psi.amplitudes());
}

double overlap(const StateVector& target, const StateVector& psi) {
  const double n = target.norm2() * psi.norm2();
  if (!(n > 0.0)) throw std::domain_error("overlap with a zero-norm state");
  return std::norm(inner(target, psi)) / n;
}

double max_abs_diff(const LinearOperator& a, const LinearOperator& b) {
  require_same(a.space(), b.space(), "max_abs_diff");
  SparseMatrix d = a.matrix() - b.matrix();
  double m = 0.0;
  for (Eigen::Index k = 0; k < d.nonZeros(); ++k) m = std::max(m, std::abs(d.valuePtr()[k]));
  return m;
}

// ---- measurement ---------------------------------------------------------

ProjectiveMeasurement::ProjectiveMeasurement(std::vector<LinearOperator> projectors, double tol)
    : projectors_(std::move(projectors)) {
  if (projectors_.empty()) throw std::invalid_argument("measurement needs at least one projector");
  const auto& space = projectors_.front().space();
  auto sum = LinearOperator::zero(space);
  for (std::size_t i = 0; i < projectors_.size(); ++i) {
    require_same(space, projectors_[i].space(), "measurement");
    sum += projectors_[i];
    for (std::size_t j = i + 1; j < projectors_.size(); ++j) {
      const auto prod = projectors_[i] * projectors_[j];
      if (max_abs_diff(prod, LinearOperator::zero(space)) > tol) {
        throw std::invalid_argument(fmt::format("projectors {} and {} are not orthogonal", i, j));
      }
    }
  }
  if (max_abs_diff(sum, LinearOperator::identity(space)) > tol) {
    throw std::invalid_argument("projectors do not sum to the identity");
  }
}

std::vector<MeasurementBranch> ProjectiveMeasurement::branches(const StateVector& psi) const {
  const double total = psi.norm2();
  if (!(total > 0.0)) throw std::domain_error("measurement of a zero-norm state");
  std::vector<MeasurementBranch> out;
  out.reserve(projectors_.size());
  for (const auto& p : projectors_) {
    StateVector proj = apply(p, psi);
    const double prob = proj.norm2() / total;
    MeasurementBranch b;
    b.probability = prob;
    if (prob > 0.0) {
      proj.normalize();
      b.collapsed = std::move(proj);
    }
    out.push_back(std::move(b));
  }
  return out;
}

MeasurementResult ProjectiveMeasurement::measure(const StateVector& psi, double u) const {
  const double total = psi.norm2();
  if (!(total > 0.0)) throw std::domain_error("measurement of a zero-norm state");
  double cumulative = 0.0;
  std::size_t last_nonzero = 0;
  std::vector<StateVector> projected;
  projected.reserve(projectors_.size());
  std::vector<double> probs;
  for (std::size_t k = 0; k < projectors_.size(); ++k) {
    projected.push_back(apply(projectors_[k], psi));
    probs.push_back(projected.back().norm2() / total);
    if (probs.back() > 0.0) last_nonzero = k;
  }
  std::size_t chosen = last_nonzero;
  for (std::size_t k = 0; k < projectors_.size(); ++k) {
    cumulative += probs[k];
    if (probs[k] > 0.0 && u < cumulative) {
      chosen = k;
      break;
    }
  }
  MeasurementResult r;
  r.outcome = chosen;
  r.probability = probs[chosen];
  r.collapsed = std::move(projected[chosen]);
  r.collapsed.normalize();
  return r;
}

MeasurementResult measure_projective(const StateVector& psi,
                                     const std::vector<LinearOperator>& projectors, double u) {
  return ProjectiveMeasurement(projectors).measure(psi, u);
}

// ---- local builders ------------------------------------------------------

SpacePtr local_space(const std::string& label, std::vector<std::string> levels) {
  return make_space({Subsystem{label, std::move(levels)}});
}

SpacePtr local_space(const SpacePtr& parent, const std::vector<std::string>& labels) {
  std::vector<Subsystem> subs;
  for (const auto& l : labels) subs.push_back(parent->subsystem(parent->position(l)));
  return make_space(std::move(subs));
}

LinearOperator local_operator(const SpacePtr& space, const std::string& label, const DenseMatrix& m) {
  const auto& sub = space->subsystem(space->position(label));
  if (static_cast<std::size_t>(m.rows()) != sub.dim() || m.rows() != m.cols()) {
    throw DimensionError(fmt::format("local operator on '{}' must be {}x{}", label, sub.dim(), sub.dim()));
  }
  auto loc = make_space({sub});
  return embed(LinearOperator::from_dense(loc, m), space);
}

LinearOperator transition(const SpacePtr& space, const std::string& label, const std::string& to,
                          const std::string& from) {
  const auto d = static_cast<Eigen::Index>(space->subsystem(space->position(label)).dim());
  DenseMatrix m = DenseMatrix::Zero(d, d);
  m(static_cast<Eigen::Index>(space->level_index(label, to)),
    static_cast<Eigen::Index>(space->level_index(label, from))) = 1.0;
  return local_operator(space, label, m);
}

LinearOperator projector(const SpacePtr& space, const std::string& label, const std::string& level) {
  auto p = transition(space, label, level, level);
  return LinearOperator(p.space(), p.matrix(), true);
}

LinearOperator annihilation(const SpacePtr& space, const std::string& label) {
  const auto d = static_cast<Eigen::Index>(space->subsystem(space->position(label)).dim());
  DenseMatrix m = DenseMatrix::Zero(d, d);
  for (Eigen::Index n = 1; n < d; ++n) m(n - 1, n) = std::sqrt(static_cast<double>(n));
  return local_operator(space, label, m);
}

LinearOperator number(const SpacePtr& space, const std::string& label) {
  const auto d = static_cast<Eigen::Index>(space->subsystem(space->position(label)).dim());
  DenseMatrix m = DenseMatrix::Zero(d, d);
  for (Eigen::Index n = 0; n < d; ++n) m(n, n) = static_cast<double>(n);
  auto op = local_operator(space, label, m);
  return LinearOperator(op.space(), op.matrix(), true);
}

}  // namespace qlink

namespace qlink {

DenseMatrix reduced_density(const StateVector& psi, const std::string& label) {
  const HilbertSpace& space = *psi.space();
  const std::size_t k = space.position(label);
  const std::size_t d = space.subsystem(k).dim();
  const std::size_t stride = space.stride(k);
  const double n2 = psi.norm2();
  if (!(n2 > 0.0)) throw std::domain_error("reduced_density: zero-norm state");
  DenseMatrix rho = DenseMatrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  const auto& a = psi.amplitudes();
  const std::size_t n = space.total_dim();
  // Enumerate indices with digit k == 0; the other digits label the rest.
  for (std::size_t base = 0; base < n; ++base) {
    if (space.digit(base, k) != 0) continue;
    for (std::size_t i = 0; i < d; ++i) {
      const cplx ai = a[static_cast<Eigen::Index>(base + i * stride)];
      if (ai == cplx{}) continue;
      for (std::size_t j = 0; j < d; ++j) {
        rho(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +=
            ai * std::conj(a[static_cast<Eigen::Index>(base + j * stride)]);
      }
    }
  }
  return rho / n2;
}

std::optional<Vector> pure_factor(const StateVector& psi, const std::string& label, double tol) {
  const DenseMatrix rho = reduced_density(psi, label);
  const double purity = (rho * rho).trace().real();
  if (1.0 - purity > tol) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(rho);
  const Eigen::Index top = rho.rows() - 1;  // eigenvalues ascending
  return Vector(es.eigenvectors().col(top));
}

double subsystem_fidelity(const StateVector& psi, const std::string& label, const Vector& target) {
  const DenseMatrix rho = reduced_density(psi, label);
  if (target.size() != rho.rows()) throw DimensionError("subsystem_fidelity: target dimension mismatch");
  const double tn2 = target.squaredNorm();
  return (target.adjoint() * rho * target)(0, 0).real() / tn2;
}

}  // namespace qlink
