#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rtqp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Solver failures.
struct ShapeMismatch final : Error { using Error::Error; };
struct Infeasible final : Error { using Error::Error; };
struct NotPositiveDefinite final : Error { using Error::Error; };
struct MaxIterations final : Error { using Error::Error; };
struct ConvergenceFailure final : Error { using Error::Error; };

// Cipher failures.
struct ResampleLimitExceeded final : Error { using Error::Error; };
struct SingularComposer final : Error { using Error::Error; };
struct SingularHTilde final : Error { using Error::Error; };

// Attack failures.
struct RankDeficientInvariant final : Error { using Error::Error; };
struct StructureMismatch final : Error { using Error::Error; };
struct SingularRHat final : Error { using Error::Error; };
struct UnderdeterminedAfterAnchor final : Error { using Error::Error; };
struct AttackAbort final : Error { using Error::Error; };

// Row permutation. Convention: apply(v)[i] = v[map[i]], i.e. as a matrix P
// with P(i, map[i]) = 1, so apply_rows(G) = P * G and P * P^T = I.
struct Permutation {
  std::vector<Index> map;

  Permutation() = default;
  explicit Permutation(std::vector<Index> m) : map(std::move(m)) {}

  static Permutation identity(Index n) {
    std::vector<Index> m(static_cast<std::size_t>(n));
    std::iota(m.begin(), m.end(), Index{0});
    return Permutation{std::move(m)};
  }

  Index size() const { return static_cast<Index>(map.size()); }

  bool is_identity() const {
    for (std::size_t i = 0; i < map.size(); ++i)
      if (map[i] != static_cast<Index>(i)) return false;
    return true;
  }

  Vector apply(const Vector& v) const {
    if (v.size() != size()) throw ShapeMismatch("permutation/vector size mismatch");
    Vector out(v.size());
    for (Index i = 0; i < size(); ++i) out[i] = v[map[static_cast<std::size_t>(i)]];
    return out;
  }

  Matrix apply_rows(const Matrix& A) const {
    if (A.rows() != size()) throw ShapeMismatch("permutation/matrix row mismatch");
    Matrix out(A.rows(), A.cols());
    for (Index i = 0; i < size(); ++i) out.row(i) = A.row(map[static_cast<std::size_t>(i)]);
    return out;
  }

  Permutation inverse() const {
    std::vector<Index> inv(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) inv[static_cast<std::size_t>(map[i])] = static_cast<Index>(i);
    return Permutation{std::move(inv)};
  }

  // Matrix composition this * other: (P_a P_b) v indexed via b(a(i)).
  Permutation compose(const Permutation& other) const {
    if (size() != other.size()) throw ShapeMismatch("permutation size mismatch in compose");
    std::vector<Index> m(map.size());
    for (std::size_t i = 0; i < map.size(); ++i)
      m[i] = other.map[static_cast<std::size_t>(map[i])];
    return Permutation{std::move(m)};
  }

  Matrix to_matrix() const {
    Matrix P = Matrix::Zero(size(), size());
    for (Index i = 0; i < size(); ++i) P(i, map[static_cast<std::size_t>(i)]) = 1.0;
    return P;
  }

  bool operator==(const Permutation& other) const { return map == other.map; }
};

}  // namespace rtqp
